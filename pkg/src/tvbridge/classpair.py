"""Class-level pairing between temporal and visual subsets.

Each class subset is summarised by per-head histograms of the code indices
its samples select. Temporal and visual classes are compared with the
Jensen-Shannon divergence, matched injectively by a Hungarian solver, and the
matched classes are paired sample-by-sample to train an alignment model.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autoencoder as ae
from .alignment import CLASS_ASSIGNED, AlignmentModel, PairedSample, align_predict, extract_indices
from .errors import EmptySubset, InfeasibleShape, NoReferences, ShapeMismatch
from .quantizer import IndexSequence, lookup
from .tokenization import VISUAL, Image, TimeSeries, TokenSequence, unpatchify_image
from .training import TokenizerBundle

LN2 = float(np.log(2.0))


@dataclass
class IndexHistogram:
    counts: np.ndarray
    probs: np.ndarray
    total: int

    @classmethod
    def from_counts(cls, counts: np.ndarray) -> "IndexHistogram":
        counts = np.asarray(counts, dtype=np.int64)
        totals = counts.sum(axis=1)
        if np.any(totals != totals[0]) or totals[0] == 0:
            raise ShapeMismatch("every head must hold the same positive number of counts")
        return cls(counts, counts / totals[:, None], int(totals[0]))

    @property
    def shape(self):
        return self.counts.shape


def index_histogram(subset: Sequence, bundle: TokenizerBundle | None = None,
                    codes: int | None = None) -> IndexHistogram:
    """Per-head code counts over every sample, position and head.

    ``subset`` holds :class:`IndexSequence` grids, or raw series/images when a
    bundle is given to extract them.
    """
    if len(subset) == 0:
        raise EmptySubset("cannot build a histogram of an empty subset")
    grids = []
    for item in subset:
        if not isinstance(item, IndexSequence):
            if bundle is None:
                raise TypeError("raw samples need a bundle")
            item = extract_indices(item, bundle)
        grids.append(item.indices)
    idx = np.stack(grids)
    k = codes if codes is not None else (bundle.config.codes if bundle is not None else int(idx.max()) + 1)
    heads = idx.shape[2]
    counts = np.stack([np.bincount(idx[:, :, m].reshape(-1), minlength=k) for m in range(heads)])
    return IndexHistogram.from_counts(counts)


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def js_divergence(p: IndexHistogram, q: IndexHistogram) -> float:
    """Mean over heads of the natural-log Jensen-Shannon divergence."""
    if p.shape != q.shape:
        raise ShapeMismatch(f"histogram shapes differ: {p.shape} vs {q.shape}")
    total = 0.0
    for pm, qm in zip(p.probs, q.probs):
        mid = 0.5 * (pm + qm)
        total += 0.5 * _kl(pm, mid) + 0.5 * _kl(qm, mid)
    return total / p.shape[0]


def cost_matrix(temporal: Sequence[IndexHistogram], visual: Sequence[IndexHistogram]) -> np.ndarray:
    return np.array([[js_divergence(t, v) for v in visual] for t in temporal], dtype=np.float64)


@dataclass
class Assignment:
    """``mapping[m]`` is the visual class matched to temporal class ``m``."""

    mapping: tuple[int, ...]
    cost: float

    def matrix(self, cols: int) -> np.ndarray:
        pi = np.zeros((len(self.mapping), cols), dtype=np.int64)
        pi[np.arange(len(self.mapping)), list(self.mapping)] = 1
        return pi


def _hungarian(cost: np.ndarray) -> list[int]:
    """Shortest-augmenting-path Hungarian method for ``rows <= cols``.

    Returns the column assigned to each row.
    """
    n, m = cost.shape
    inf = float("inf")
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    owner = [0] * (m + 1)  # owner[j]: row (1-based) matched to column j
    way = [0] * (m + 1)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = [inf] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = owner[j0]
            delta, j1 = inf, 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta, j1 = minv[j], j
            for j in range(m + 1):
                if used[j]:
                    u[owner[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    cols = [0] * n
    for j in range(1, m + 1):
        if owner[j]:
            cols[owner[j] - 1] = j - 1
    return cols


def _path_cost(cost: np.ndarray, rows, cols) -> float:
    total = 0.0
    for r, c in zip(rows, cols):
        total += float(cost[r, c])
    return total


def hungarian_assign(cost: np.ndarray) -> Assignment:
    """Minimum-cost injective map from rows to columns.

    Among optimal maps (up to a rounding tolerance) the lexicographically
    smallest one is returned: rows are fixed in order to the smallest
    column that still admits an optimal completion.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ShapeMismatch("cost must be a matrix")
    n, m = cost.shape
    if n > m:
        raise InfeasibleShape(f"cannot map {n} temporal classes injectively into {m} visual classes")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix has non-finite entries")
    if n == 0:
        return Assignment((), 0.0)
    best_cols = _hungarian(cost)
    best = _path_cost(cost, range(n), best_cols)
    tol = 1e-12 * max(1.0, float(np.abs(cost).max())) * n

    mapping: list[int] = []
    free = list(range(m))
    prefix = 0.0
    for r in range(n):
        rest_rows = list(range(r + 1, n))
        for c in free:
            cols_left = [j for j in free if j != c]
            if rest_rows:
                sub = cost[np.ix_(rest_rows, cols_left)]
                sub_cols = _hungarian(sub)
                rest = _path_cost(sub, range(len(rest_rows)), sub_cols)
            else:
                rest = 0.0
            if prefix + float(cost[r, c]) + rest <= best + tol:
                mapping.append(c)
                prefix += float(cost[r, c])
                free.remove(c)
                break
        else:  # pragma: no cover - only reachable through rounding pathologies
            mapping = list(best_cols)
            break
    return Assignment(tuple(mapping), _path_cost(cost, range(n), mapping))


def brute_force_assign(cost: np.ndarray) -> Assignment:
    """Exhaustive search over all injections; the test oracle for small shapes."""
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    if n > m:
        raise InfeasibleShape("more rows than columns")
    best, best_map = None, None
    for perm in itertools.permutations(range(m), n):
        c = _path_cost(cost, range(n), perm)
        if best is None or c < best:
            best, best_map = c, perm
    return Assignment(tuple(best_map), best)


def build_paired_dataset(temporal_subsets: Sequence[Sequence[IndexSequence]],
                         visual_subsets: Sequence[Sequence[IndexSequence]],
                         assignment: Assignment, seed: int) -> list[PairedSample]:
    """Pair samples inside every matched class pair.

    Every sample of the larger side appears exactly once; the smaller side is
    drawn with replacement after one full pass, so each of its samples is
    used at least once.
    """
    rng = np.random.default_rng([seed, 17])
    pairs = []
    for m, n in enumerate(assignment.mapping):
        ts, vs = temporal_subsets[m], visual_subsets[n]
        if len(ts) == 0 or len(vs) == 0:
            raise EmptySubset(f"class pair ({m}, {n}) has an empty side")
        big, small = (ts, vs) if len(ts) >= len(vs) else (vs, ts)
        fill = np.concatenate([rng.permutation(len(small)),
                               rng.integers(0, len(small), size=len(big) - len(small))])
        rng.shuffle(fill)
        for i, j in enumerate(fill):
            t, v = (big[i], small[j]) if big is ts else (small[j], big[i])
            pairs.append(PairedSample(t, v, CLASS_ASSIGNED, label=m))
    return pairs


class NearestCentroidClassifier:
    """Stand-in for a frozen vision model: nearest class centroid in pixel space."""

    def __init__(self, references: Mapping[int, Sequence[Image]]):
        if not references or any(len(v) == 0 for v in references.values()):
            raise NoReferences("every class needs at least one reference image")
        self.labels = sorted(references)
        self.centroids = np.stack([np.mean([im.pixels for im in references[c]], axis=0)
                                   for c in self.labels])

    def distances(self, image: Image) -> np.ndarray:
        diff = self.centroids - image.pixels[None]
        return np.mean(diff * diff, axis=(1, 2, 3))

    def predict(self, image: Image) -> int:
        return self.labels[int(np.argmin(self.distances(image)))]


def series_to_aligned_image(x: TimeSeries, model: AlignmentModel, bundle: TokenizerBundle) -> Image:
    """Temporal indices -> alignment model -> visual codes -> visual decoder."""
    cfg = bundle.config
    _, pred = align_predict(model, extract_indices(x, bundle))
    q = lookup(pred, bundle.codebook, VISUAL)
    out, _ = ae.decoder_forward(bundle.visual, q.data[None])
    side = cfg.image_side
    return unpatchify_image(TokenSequence(out[0], VISUAL, (side, side, cfg.f, cfg.channels)))


def classify_series(x: TimeSeries, model: AlignmentModel, bundle: TokenizerBundle,
                    references: Mapping[int, Sequence[Image]] | NearestCentroidClassifier) -> int:
    clf = references if isinstance(references, NearestCentroidClassifier) \
        else NearestCentroidClassifier(references)
    return clf.predict(series_to_aligned_image(x, model, bundle))


def write_assignment_csv(path, assignment: Assignment, cost: np.ndarray):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["temporal_class", "visual_class", "jsd"])
        for m, n in enumerate(assignment.mapping):
            w.writerow([m, n, repr(float(cost[m, n]))])


def write_histograms_csv(path, hists: Sequence[IndexHistogram], prefix: str):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subset", "head", "code", "count", "prob"])
        for s, h in enumerate(hists):
            for m in range(h.shape[0]):
                for k in range(h.shape[1]):
                    w.writerow([f"{prefix}{s}", m, k, int(h.counts[m, k]), repr(float(h.probs[m, k]))])
