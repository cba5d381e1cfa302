import numpy as np
import pytest

from tvbridge import autoencoder as ae
from tvbridge.errors import ShapeMismatch
from tvbridge.tokenization import TokenSequence


def _recon_closure(params, x, keys):
    def closure(theta):
        p = ae.unflatten(theta, params, keys)
        e, ec = ae.encoder_forward(p, x)
        out, dc = ae.decoder_forward(p, e)
        r = out - x
        dg, de = ae.decoder_backward(p, 2 * r, dc)
        eg, _ = ae.encoder_backward(p, de, ec)
        return float(np.sum(r * r)), ae.flatten({**eg, **dg}, keys)
    return closure


@pytest.mark.parametrize("depth", [0, 1, 3])
def test_autoencoder_gradients_match_central_differences(depth):
    rng = np.random.default_rng(depth)
    params = ae.init_params(5, 3, 4, depth, rng)
    x = rng.normal(size=(2, 5, 3))
    keys = sorted(params)
    err = ae.gradient_check(_recon_closure(params, x, keys), ae.flatten(params, keys))
    assert err < 1e-6


def test_gradient_check_flags_a_wrong_gradient():
    closure = lambda t: (float(np.sum(t ** 3)), 2 * t ** 2)  # true gradient is 3 t^2
    # relative gap |2t^2 - 3t^2| / 3t^2
    assert ae.gradient_check(closure, np.array([1.0, 2.0])) == pytest.approx(1 / 3, rel=1e-6)


def test_gradient_check_rejects_bad_step():
    with pytest.raises(ValueError):
        ae.gradient_check(lambda t: (0.0, t), np.zeros(2), step=0.0)


def test_identity_params_reproduce_tokens():
    params = ae.identity_params(6, 4, depth=2)
    x = np.random.default_rng(0).normal(size=(1, 6, 4))
    e, _ = ae.encoder_forward(params, x)
    out, _ = ae.decoder_forward(params, e)
    assert np.array_equal(out, x)


def test_residual_block_uses_token_mixing():
    rng = np.random.default_rng(3)
    params = ae.init_params(4, 2, 3, 1, rng)
    x = rng.normal(size=(1, 4, 2))
    base, _ = ae.encoder_forward(params, x)
    x2 = x.copy()
    x2[0, 3] += 1.0
    moved, _ = ae.encoder_forward(params, x2)
    # perturbing token 3 reaches token 0 through the mixing matrix
    assert not np.allclose(base[0, 0], moved[0, 0])


def test_encode_decode_shapes_and_checks():
    rng = np.random.default_rng(4)
    params = ae.init_params(4, 3, 8, 1, rng)
    tok = TokenSequence(rng.normal(size=(4, 3)), "temporal", (12, 3))
    grid = ae.encode("temporal", tok, params)
    assert grid.shape == (4, 8)
    back = ae.decode("temporal", grid, params, (12, 3))
    assert back.tokens.shape == (4, 3) and back.geometry == (12, 3)
    with pytest.raises(ShapeMismatch):
        ae.encode("visual", tok, params)
    with pytest.raises(ShapeMismatch):
        ae.encode("temporal", TokenSequence(np.zeros((5, 3)), "temporal", (15, 3)), params)
    with pytest.raises(ShapeMismatch):
        ae.decode("temporal", np.zeros((4, 7)), params)


def test_init_is_seeded_and_bounded():
    a = ae.init_params(4, 3, 5, 2, np.random.default_rng(9))
    b = ae.init_params(4, 3, 5, 2, np.random.default_rng(9))
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert np.abs(a["enc_in_w"]).max() <= 1 / np.sqrt(3)


def test_flatten_round_trip():
    params = ae.init_params(3, 2, 4, 1, np.random.default_rng(0))
    back = ae.unflatten(ae.flatten(params), params)
    assert all(np.array_equal(params[k], back[k]) for k in params)
