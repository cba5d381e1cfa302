import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tvbridge.acceptance import _brute_indices
from tvbridge.autoencoder import EmbeddingGrid
from tvbridge.errors import EmptyHistory, IndexOutOfRange, InsufficientSamples, ShapeMismatch
from tvbridge.quantizer import (IndexSequence, MultiHeadCodebook, codebook_loss_grads,
                                codebook_losses, gather_codes, init_codebooks, lookup, nearest_codes,
                                quantize, split_heads, utilization)


@settings(max_examples=80, deadline=None)
@given(heads=st.integers(1, 4), sub=st.integers(1, 3), k=st.integers(2, 20), n=st.integers(1, 6),
       seed=st.integers(0, 2**32 - 1), ints=st.booleans())
def test_nearest_codes_matches_brute_force(heads, sub, k, n, seed, ints):
    rng = np.random.default_rng(seed)
    if ints:
        codes = rng.integers(-1, 2, size=(heads, k, sub)).astype(float)
        e = rng.integers(-1, 2, size=(n, heads * sub)).astype(float)
    else:
        codes = rng.normal(size=(heads, k, sub))
        e = rng.normal(size=(n, heads * sub))
    assert np.array_equal(nearest_codes(e, codes), _brute_indices(e, codes))


def test_ties_go_to_smallest_index():
    codes = np.array([[[1.0], [-1.0], [1.0]]])
    assert nearest_codes(np.array([[0.0]]), codes)[0, 0] == 0
    assert nearest_codes(np.array([[1.0]]), codes)[0, 0] == 0


def test_quantize_concatenates_head_codes():
    codes = np.array([[[0.0, 0.0], [1.0, 1.0]], [[5.0, 5.0], [-5.0, -5.0]]])
    res = quantize(EmbeddingGrid(np.array([[0.9, 0.8, -4.0, -6.0]]), "visual"), MultiHeadCodebook(codes))
    assert res.indices.indices.tolist() == [[1, 1]]
    assert res.q.data.tolist() == [[1.0, 1.0, -5.0, -5.0]]
    assert res.residual_sq == pytest.approx(0.01 + 0.04 + 1 + 1)


def test_losses_equal_in_value():
    rng = np.random.default_rng(0)
    book = MultiHeadCodebook(rng.normal(size=(2, 5, 3)))
    e = EmbeddingGrid(rng.normal(size=(4, 6)), "temporal")
    res = quantize(e, book)
    quant, commit = codebook_losses(e, res)
    assert quant == commit == res.residual_sq


def test_loss_gradients_route_to_one_side_each():
    rng = np.random.default_rng(1)
    codes = rng.normal(size=(2, 4, 3))
    e = rng.normal(size=(5, 6))
    idx = nearest_codes(e, codes)
    d_codes, d_e = codebook_loss_grads(e, idx, codes, scale=0.5)

    def loss(c, x):
        return 0.5 * np.sum((gather_codes(idx, c) - x) ** 2)

    h = 1e-6
    num_c = np.zeros_like(codes)
    for i in np.ndindex(codes.shape):
        cp, cm = codes.copy(), codes.copy()
        cp[i] += h
        cm[i] -= h
        num_c[i] = (loss(cp, e) - loss(cm, e)) / (2 * h)
    num_e = np.zeros_like(e)
    for i in np.ndindex(e.shape):
        ep, em = e.copy(), e.copy()
        ep[i] += h
        em[i] -= h
        num_e[i] = (loss(codes, ep) - loss(codes, em)) / (2 * h)
    assert np.allclose(d_codes, num_c, atol=1e-8)
    assert np.allclose(d_e, num_e, atol=1e-8)
    # codes never selected receive nothing
    unused = np.ones(codes.shape[:2], bool)
    for m in range(2):
        unused[m, idx[:, m]] = False
    assert np.all(d_codes[unused] == 0)


def test_lookup_inverts_quantize_and_checks_range():
    rng = np.random.default_rng(2)
    book = MultiHeadCodebook(rng.normal(size=(4, 16, 4)))
    res = quantize(EmbeddingGrid(rng.normal(size=(16, 16)), "visual"), book)
    assert np.array_equal(lookup(res.indices, book).data, res.q.data)
    with pytest.raises(IndexOutOfRange):
        lookup(IndexSequence(np.full((2, 4), 16)), book)
    with pytest.raises(ShapeMismatch):
        lookup(IndexSequence(np.zeros((2, 3))), book)


def test_utilization_counts_distinct_codes():
    book = MultiHeadCodebook(np.zeros((2, 4, 1)))
    hist = [np.array([[0, 1], [1, 1]]), IndexSequence(np.array([[2, 1]]))]
    assert utilization(hist, book).tolist() == [0.75, 0.25]
    with pytest.raises(EmptyHistory):
        utilization([], book)


def test_init_codebooks_draws_sample_points_deterministically():
    rng = np.random.default_rng(3)
    sample = rng.normal(size=(50, 8))
    a = init_codebooks(sample, 2, 6, seed=7)
    b = init_codebooks(sample, 2, 6, seed=7)
    assert np.array_equal(a.codes, b.codes)
    sub = split_heads(sample, 2)
    for m in range(2):
        for code in a.codes[m]:
            assert np.any(np.all(sub[:, m] == code, axis=1))
        assert len(np.unique(a.codes[m], axis=0)) == 6
    with pytest.raises(InsufficientSamples):
        init_codebooks(np.zeros((10, 4)), 2, 3, seed=0)


def test_shape_checks():
    with pytest.raises(ShapeMismatch):
        split_heads(np.zeros((2, 5)), 2)
    with pytest.raises(ShapeMismatch):
        MultiHeadCodebook(np.zeros((2, 1, 3)))
    with pytest.raises(ShapeMismatch):
        nearest_codes(np.zeros((1, 5)), np.zeros((2, 3, 2)))
