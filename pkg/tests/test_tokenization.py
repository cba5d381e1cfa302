import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tvbridge.errors import GeometryMismatch, NonDivisibleGeometry, NonDivisibleLength
from tvbridge.tokenization import (TEMPORAL, Image, TimeSeries, TokenSequence, assemble_series,
                                   denormalize, instance_normalize, patchify_image, segment_series,
                                   unpatchify_image)


@settings(max_examples=60, deadline=None)
@given(gh=st.integers(1, 4), gw=st.integers(1, 4), f=st.integers(1, 5), c=st.sampled_from([1, 3]),
       seed=st.integers(0, 2**32 - 1))
def test_patchify_round_trip_is_exact(gh, gw, f, c, seed):
    px = np.random.default_rng(seed).uniform(size=(gh * f, gw * f, c))
    tokens = patchify_image(Image(px), f)
    assert tokens.tokens.shape == (gh * gw, f * f * c)
    assert np.array_equal(unpatchify_image(tokens).pixels, px)


def test_patch_order_is_row_major_over_the_grid():
    px = np.arange(4 * 6).reshape(4, 6) / 23.0
    tok = patchify_image(Image(px), 2).tokens
    # second token is the block one step to the right, not one step down
    assert np.array_equal(tok[0], px[0:2, 0:2].reshape(-1))
    assert np.array_equal(tok[1], px[0:2, 2:4].reshape(-1))
    assert np.array_equal(tok[3], px[2:4, 0:2].reshape(-1))


def test_patchify_rejects_non_divisible():
    with pytest.raises(NonDivisibleGeometry):
        patchify_image(Image(np.zeros((6, 6))), 4)


def test_unpatchify_clamps_and_checks_geometry():
    tok = TokenSequence(np.full((4, 4), 1.7), "visual", (4, 4, 2, 1))
    assert unpatchify_image(tok).pixels.max() == 1.0
    with pytest.raises(GeometryMismatch):
        unpatchify_image(TokenSequence(np.zeros((3, 4)), "visual", (4, 4, 2, 1)))


def test_image_validates_range():
    with pytest.raises(ValueError):
        Image(np.full((2, 2), 1.5))
    with pytest.raises(GeometryMismatch):
        Image(np.zeros((2, 2, 2)))


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 10), l=st.integers(1, 6), seed=st.integers(0, 2**32 - 1))
def test_segment_assemble_round_trip(n, l, seed):
    x = TimeSeries(np.random.default_rng(seed).normal(size=n * l))
    tok = segment_series(x, l)
    assert tok.tokens.shape == (n, l)
    assert np.array_equal(assemble_series(tok).values, x.values)


def test_strict_mode_rejects_remainder():
    with pytest.raises(NonDivisibleLength):
        segment_series(TimeSeries(np.arange(10.0)), 4)


def test_lenient_mode_left_pads_with_first_value():
    x = TimeSeries(np.arange(1.0, 11.0))
    tok = segment_series(x, 4, "lenient")
    assert tok.pad == 2
    assert np.array_equal(tok.tokens[0], [1.0, 1.0, 1.0, 2.0])
    assert np.array_equal(assemble_series(tok).values, x.values)


def test_instance_normalize_records_population_stats():
    x = TimeSeries(np.array([1.0, 2.0, 3.0, 6.0]))
    z = instance_normalize(x)
    mean, std = z.norm_stats
    assert mean == pytest.approx(3.0)
    assert std == pytest.approx(np.std([1, 2, 3, 6]))
    assert np.mean(z.values) == pytest.approx(0.0, abs=1e-15)
    assert np.std(z.values) == pytest.approx(1.0)
    assert np.allclose(denormalize(z).values, x.values)


def test_constant_series_normalizes_without_dividing_by_zero():
    z = instance_normalize(TimeSeries(np.full(8, 5.0)))
    assert z.norm_stats == (5.0, 1.0)
    assert np.all(z.values == 0.0)


def test_explicit_stats_override():
    z = instance_normalize(TimeSeries(np.array([2.0, 4.0])), (1.0, 2.0))
    assert np.array_equal(z.values, [0.5, 1.5])


def test_series_rejects_non_finite():
    with pytest.raises(ValueError):
        TimeSeries(np.array([1.0, np.nan]))
    with pytest.raises(GeometryMismatch):
        TimeSeries(np.array([]))


def test_segment_keeps_modality():
    assert segment_series(TimeSeries(np.arange(4.0)), 2).origin == TEMPORAL
