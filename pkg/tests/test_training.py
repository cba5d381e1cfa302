import numpy as np
import pytest

from tvbridge import autoencoder as ae
from tvbridge.acceptance import _surrogate
from tvbridge.errors import EmptyCorpus, FrozenBundle, MixedModalityBatch
from tvbridge.quantizer import gather_codes
from tvbridge.synthetic import image_corpus, series_corpus
from tvbridge.tokenization import TimeSeries
from tvbridge.training import (BundleConfig, WarmupConfig, WarmupState, compute_losses, corpus_loss,
                               forward_backward, loss_curve_rows, new_bundle, run_warmup, tokenize,
                               warmup_step)

CFG = BundleConfig()


def _batch(kind, count=4, seed=0):
    items = series_corpus(count, seed)[0] if kind == "temporal" else image_corpus(count, seed)[0]
    return [tokenize(x, CFG) for x in items]


def test_loss_terms_are_per_token_means():
    rng = np.random.default_rng(0)
    params = ae.init_params(3, 2, 4, 1, rng)
    codes = rng.normal(size=(2, 3, 2))
    x = rng.normal(size=(2, 3, 2))
    recon, quant, commit, *_ = forward_backward(x, params, codes)
    e, _ = ae.encoder_forward(params, x)
    q = gather_codes(np.argmin(((e.reshape(2, 3, 2, 1, 2) - codes) ** 2).sum(-1), -1), codes)
    xhat, _ = ae.decoder_forward(params, q)
    assert recon == pytest.approx(np.sum((xhat - x) ** 2) / 6)
    assert quant == commit == pytest.approx(np.sum((e - q) ** 2) / 6)


def test_routed_gradients_match_frozen_surrogate():
    rng = np.random.default_rng(5)
    params = ae.init_params(4, 3, 4, 2, rng)
    codes = rng.normal(scale=0.5, size=(2, 5, 2))
    x = rng.normal(size=(3, 4, 3))
    _, _, _, grads, d_codes, idx = forward_backward(x, params, codes)
    e0, _ = ae.encoder_forward(params, x)
    q0 = gather_codes(idx, codes)
    keys = sorted(params)
    split = sum(params[k].size for k in keys)
    analytic = np.concatenate([ae.flatten(grads, keys), d_codes.reshape(-1)])

    def closure(theta):
        p = ae.unflatten(theta[:split], params, keys)
        return _surrogate(x, p, theta[split:].reshape(codes.shape), idx, e0, q0), analytic

    theta = np.concatenate([ae.flatten(params, keys), codes.reshape(-1)])
    assert ae.gradient_check(closure, theta) < 1e-6


def test_compute_losses_rejects_mixed_batches():
    bundle = new_bundle(CFG, 0)
    with pytest.raises(MixedModalityBatch):
        compute_losses(_batch("temporal", 2) + _batch("visual", 2), bundle)


def test_warmup_step_does_not_mutate_the_input_state():
    bundle = new_bundle(CFG, 0)
    before = bundle.checksum()
    state = WarmupState(bundle)
    new, losses, idx = warmup_step(_batch("visual"), state, WarmupConfig())
    assert bundle.checksum() == before and state.step == 0 and state.velocity == {}
    assert new.step == 1 and new.bundle.checksum() != before
    assert idx.shape == (4, CFG.n, CFG.heads)
    # only the visual autoencoder and the codebook move on a visual batch
    assert all(np.array_equal(new.bundle.temporal[k], bundle.temporal[k]) for k in bundle.temporal)


def test_plain_sgd_step_without_momentum():
    bundle = new_bundle(CFG, 1)
    batch = _batch("temporal")
    _, grads, d_codes, _ = compute_losses(batch, bundle)
    new, _, _ = warmup_step(batch, WarmupState(bundle), WarmupConfig(learning_rate=0.1, momentum=0.0))
    assert np.allclose(new.bundle.temporal["enc_in_w"], bundle.temporal["enc_in_w"] - 0.1 * grads["enc_in_w"])
    assert np.allclose(new.bundle.codebook.codes, bundle.codebook.codes - 0.1 * d_codes)


def test_run_warmup_is_deterministic_and_freezes():
    series, _ = series_corpus(32, 3)
    images, _ = image_corpus(32, 3)
    cfg = WarmupConfig(steps=40, seed=3)
    a = run_warmup(series, images, cfg)
    b = run_warmup(series, images, cfg)
    c = run_warmup(series, images, WarmupConfig(steps=40, seed=4))
    assert a.bundle.frozen and a.initial.frozen
    assert a.bundle.checksum() == b.bundle.checksum() != c.bundle.checksum()
    assert [r.modality for r in a.log[:4]] == ["visual", "temporal", "visual", "temporal"]
    assert len(loss_curve_rows(a.log)) == 40
    with pytest.raises(FrozenBundle):
        warmup_step(_batch("visual"), WarmupState(a.bundle), cfg)
    with pytest.raises(ValueError):
        a.bundle.visual["enc_in_w"][0, 0] = 1.0


def test_short_warmup_lowers_corpus_loss():
    series, _ = series_corpus(64, 11)
    images, _ = image_corpus(64, 11)
    res = run_warmup(series, images, WarmupConfig(steps=300, seed=11))
    for items in (series, images):
        assert corpus_loss(items, res.bundle).total < 0.6 * corpus_loss(items, res.initial).total


def test_empty_corpus_and_config_validation():
    with pytest.raises(EmptyCorpus):
        run_warmup([], image_corpus(2, 0)[0], WarmupConfig(steps=1))
    with pytest.raises(ValueError):
        WarmupConfig(momentum=1.0)
    with pytest.raises(ValueError):
        WarmupConfig(steps=0)


def test_tokenize_normalises_series_only():
    x = TimeSeries(np.arange(64.0) * 3 + 10)
    tok = tokenize(x, CFG)
    assert tok.tokens.shape == (16, 4)
    assert abs(tok.tokens.mean()) < 1e-12
    img = image_corpus(1, 0)[0][0]
    assert np.array_equal(tokenize(img, CFG).tokens.max(), img.pixels.max())
