import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tvbridge.acceptance import _jsd_oracle
from tvbridge.classpair import (IndexHistogram, NearestCentroidClassifier, brute_force_assign,
                                build_paired_dataset, cost_matrix, hungarian_assign, index_histogram,
                                js_divergence)
from tvbridge.errors import EmptySubset, InfeasibleShape, NoReferences, ShapeMismatch
from tvbridge.quantizer import IndexSequence
from tvbridge.tokenization import Image

counts = st.integers(1, 4).flatmap(lambda h: st.integers(2, 8).flatmap(
    lambda k: st.tuples(*[st.lists(st.lists(st.integers(0, 6), min_size=k, max_size=k), min_size=h, max_size=h)] * 2)))


def _hist(rows):
    # heads may hold different totals here: the divergence only sees probabilities
    a = np.array(rows)
    a[:, 0] += 1
    return IndexHistogram(a, a / a.sum(1, keepdims=True), int(a.sum()))


@settings(max_examples=150, deadline=None)
@given(counts)
def test_jsd_properties(pair):
    p, q = _hist(pair[0]), _hist(pair[1])
    d = js_divergence(p, q)
    assert d == pytest.approx(js_divergence(q, p), abs=1e-15)
    assert -1e-15 <= d <= math.log(2) + 1e-12
    assert d == pytest.approx(_jsd_oracle(p.probs, q.probs), abs=1e-12)
    assert js_divergence(p, p) == pytest.approx(0.0, abs=1e-15)
    if not np.allclose(p.probs, q.probs):
        assert d > 0


def test_jsd_disjoint_support_is_ln2():
    p = IndexHistogram.from_counts(np.array([[3, 0], [0, 3]]))
    q = IndexHistogram.from_counts(np.array([[0, 3], [3, 0]]))
    assert js_divergence(p, q) == pytest.approx(math.log(2), abs=1e-15)
    with pytest.raises(ShapeMismatch):
        js_divergence(p, IndexHistogram.from_counts(np.ones((2, 3))))


@settings(max_examples=200, deadline=None)
@given(n=st.integers(1, 5), extra=st.integers(0, 2), seed=st.integers(0, 2**32 - 1), ints=st.booleans())
def test_hungarian_matches_brute_force(n, extra, seed, ints):
    rng = np.random.default_rng(seed)
    shape = (n, n + extra)
    cost = rng.integers(0, 3, shape).astype(float) if ints else rng.uniform(size=shape)
    got, want = hungarian_assign(cost), brute_force_assign(cost)
    assert got.cost == pytest.approx(want.cost, abs=1e-12)
    if ints:  # exact ties: both return the lexicographically smallest optimum
        assert got.mapping == want.mapping
    assert len(set(got.mapping)) == n


def test_hungarian_tie_rule_and_shapes():
    assert hungarian_assign(np.zeros((3, 3))).mapping == (0, 1, 2)
    assert hungarian_assign(np.array([[1.0, 0.0], [0.0, 1.0]])).mapping == (1, 0)
    assert hungarian_assign(np.array([[5.0, 1.0, 1.0]])).mapping == (1,)
    with pytest.raises(InfeasibleShape):
        hungarian_assign(np.zeros((3, 2)))
    a = hungarian_assign(np.array([[2.0, 1.0], [1.0, 3.0]]))
    assert a.matrix(2).tolist() == [[0, 1], [1, 0]] and a.cost == 2.0


def test_index_histogram_counts_all_positions():
    grids = [IndexSequence(np.array([[0, 1], [0, 2]])), IndexSequence(np.array([[1, 1], [0, 1]]))]
    h = index_histogram(grids, codes=3)
    assert h.counts.tolist() == [[3, 1, 0], [0, 3, 1]]
    assert np.allclose(h.probs.sum(1), 1)
    with pytest.raises(EmptySubset):
        index_histogram([])


def test_from_counts_requires_equal_head_totals():
    with pytest.raises(ShapeMismatch):
        IndexHistogram.from_counts(np.array([[3, 0], [0, 2]]))


def test_cost_matrix_shape():
    hs = [IndexHistogram.from_counts(np.array([[i + 1, 1]])) for i in range(3)]
    c = cost_matrix(hs[:2], hs)
    assert c.shape == (2, 3) and c[0, 0] == 0 and c[1, 1] == 0


def test_paired_dataset_covers_both_sides():
    def grids(tag, count):
        return [IndexSequence(np.full((2, 1), tag * 100 + i)) for i in range(count)]

    temporal = [grids(0, 5), grids(1, 2)]
    visual = [grids(2, 3), grids(3, 4)]
    from tvbridge.classpair import Assignment
    pairs = build_paired_dataset(temporal, visual, Assignment((1, 0), 0.0), seed=0)
    assert len(pairs) == 5 + 3
    first = [p for p in pairs if p.label == 0]
    # class 0 (5 samples) with visual class 1 (4 samples): every sample used
    assert {int(p.source.indices[0, 0]) for p in first} == set(range(5))
    assert {int(p.target.indices[0, 0]) for p in first} == {300, 301, 302, 303}
    assert all(p.provenance == "class-assigned" for p in pairs)
    again = build_paired_dataset(temporal, visual, Assignment((1, 0), 0.0), seed=0)
    assert [(p.source, p.target) for p in again] == [(p.source, p.target) for p in pairs]
    with pytest.raises(EmptySubset):
        build_paired_dataset([[], grids(0, 1)], visual, Assignment((0, 1), 0.0), 0)


def test_nearest_centroid_classifier():
    refs = {0: [Image(np.zeros((2, 2))), Image(np.full((2, 2), 0.2))], 5: [Image(np.ones((2, 2)))]}
    clf = NearestCentroidClassifier(refs)
    assert clf.predict(Image(np.full((2, 2), 0.3))) == 0
    assert clf.predict(Image(np.full((2, 2), 0.7))) == 5
    with pytest.raises(NoReferences):
        NearestCentroidClassifier({0: []})


def test_brute_force_is_lexicographic():
    cost = np.ones((2, 3))
    assert brute_force_assign(cost).mapping == (0, 1)
    assert all(len(p) == 2 for p in itertools.permutations(range(3), 2))


def test_histograms_keep_full_width_when_top_codes_go_unused():
    low = [IndexSequence(np.array([[0, 1]]))]
    high = [IndexSequence(np.array([[3, 2]]))]
    a, b = index_histogram(low, codes=4), index_histogram(high, codes=4)
    assert a.shape == b.shape == (2, 4)
    assert js_divergence(a, b) == pytest.approx(math.log(2))
