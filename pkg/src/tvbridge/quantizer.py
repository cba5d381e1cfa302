"""Shared multi-head vector quantizer.

An ``N x D`` embedding is split along features into ``M`` sub-vectors of
width ``D/M``; each is snapped to its nearest code in that head's
codebook, and the selected codes are concatenated back to ``N x D``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .autoencoder import EmbeddingGrid
from .errors import EmptyHistory, IndexOutOfRange, InsufficientSamples, ShapeMismatch


@dataclass
class MultiHeadCodebook:
    """``codes[m, k]`` is the ``k``-th code vector of head ``m``."""

    codes: np.ndarray

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.float64)
        if self.codes.ndim != 3:
            raise ShapeMismatch("codebook must be M x K x (D/M)")
        if self.heads < 1 or self.size < 2:
            raise ShapeMismatch("need M >= 1 heads and K >= 2 codes")
        if not np.all(np.isfinite(self.codes)):
            raise ValueError("codebook contains non-finite entries")

    @property
    def heads(self) -> int:
        return self.codes.shape[0]

    @property
    def size(self) -> int:
        return self.codes.shape[1]

    @property
    def sub_dim(self) -> int:
        return self.codes.shape[2]

    @property
    def dim(self) -> int:
        return self.heads * self.sub_dim


@dataclass
class IndexSequence:
    indices: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.indices.ndim != 2:
            raise ShapeMismatch("index sequence must be N x M")

    def __eq__(self, other):
        return isinstance(other, IndexSequence) and np.array_equal(self.indices, other.indices)

    @property
    def shape(self):
        return self.indices.shape


@dataclass
class QuantizeResult:
    q: EmbeddingGrid
    indices: IndexSequence
    residual_sq: float


def split_heads(e: np.ndarray, heads: int) -> np.ndarray:
    """``(..., N, D)`` -> ``(..., N, M, D/M)``."""
    if e.shape[-1] % heads:
        raise ShapeMismatch(f"D={e.shape[-1]} is not divisible by M={heads}")
    return e.reshape(*e.shape[:-1], heads, e.shape[-1] // heads)


def nearest_codes(e: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Index of the nearest code per head for every token.

    ``e`` has shape ``(..., N, D)``; the result has shape ``(..., N, M)``.
    Distances are formed from explicit differences, not the expanded
    ``|a|^2 - 2ab + |b|^2`` form, so near-ties resolve like a direct scan.
    ``argmin`` returns the first minimum, i.e. the smallest index on ties.
    """
    if e.shape[-1] != codes.shape[0] * codes.shape[2]:
        raise ShapeMismatch(f"embedding width {e.shape[-1]} does not match codebook "
                            f"{codes.shape[0]} x {codes.shape[2]}")
    sub = split_heads(e, codes.shape[0])
    diff = sub[..., None, :] - codes
    dist = (diff * diff).sum(-1)
    return np.argmin(dist, axis=-1)


def gather_codes(indices: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Concatenate the selected codes: ``(..., N, M)`` -> ``(..., N, D)``."""
    heads = np.arange(codes.shape[0])
    picked = codes[heads, indices]
    return picked.reshape(*indices.shape[:-1], codes.shape[0] * codes.shape[2])


def quantize(e: EmbeddingGrid, book: MultiHeadCodebook) -> QuantizeResult:
    data = e.data
    idx = nearest_codes(data, book.codes)
    q = gather_codes(idx, book.codes)
    resid = float(np.sum((data - q) ** 2))
    return QuantizeResult(EmbeddingGrid(q, e.modality), IndexSequence(idx), resid)


def lookup(indices: IndexSequence, book: MultiHeadCodebook, modality: str = "visual") -> EmbeddingGrid:
    idx = indices.indices
    if idx.shape[1] != book.heads:
        raise ShapeMismatch(f"index grid has {idx.shape[1]} heads, codebook has {book.heads}")
    if idx.size and (idx.min() < 0 or idx.max() >= book.size):
        raise IndexOutOfRange(f"indices must lie in [0, {book.size})")
    return EmbeddingGrid(gather_codes(idx, book.codes), modality)


def codebook_losses(e: EmbeddingGrid, result: QuantizeResult) -> tuple[float, float]:
    """Quantization and commitment losses.

    Both equal ``sum |e - q|^2`` in value. They differ only in where the
    gradient goes: see :func:`codebook_loss_grads`.
    """
    if e.data.shape != result.q.data.shape:
        raise ShapeMismatch("embedding and quantized grid differ in shape")
    quant = float(np.sum((e.data - result.q.data) ** 2))
    commit = float(np.sum((result.q.data - e.data) ** 2))
    return quant, commit


def codebook_loss_grads(e: np.ndarray, indices: np.ndarray, codes: np.ndarray,
                        scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``scale * quant`` w.r.t. codes and ``scale * commit`` w.r.t. ``e``.

    ``e`` is ``(..., N, D)`` and ``indices`` ``(..., N, M)``. The quantization
    term sees ``e`` as a constant and the commitment term sees the codes as
    constants, so each gradient has exactly one consumer.
    """
    q = gather_codes(indices, codes)
    diff = q - e
    d_e = -2.0 * scale * diff
    d_codes = np.zeros_like(codes)
    sub = split_heads(2.0 * scale * diff, codes.shape[0]).reshape(-1, codes.shape[0], codes.shape[2])
    flat_idx = indices.reshape(-1, codes.shape[0])
    for m in range(codes.shape[0]):
        np.add.at(d_codes[m], flat_idx[:, m], sub[:, m])
    return d_codes, d_e


def utilization(history: Iterable[IndexSequence | np.ndarray], book: MultiHeadCodebook) -> np.ndarray:
    """Fraction of each head's codes selected at least once over ``history``."""
    used = np.zeros((book.heads, book.size), dtype=bool)
    seen = False
    for item in history:
        idx = item.indices if isinstance(item, IndexSequence) else np.asarray(item)
        idx = idx.reshape(-1, book.heads)
        for m in range(book.heads):
            used[m, idx[:, m]] = True
        seen = True
    if not seen:
        raise EmptyHistory("utilization needs at least one index sequence")
    return used.mean(axis=1)


def init_codebooks(sample: EmbeddingGrid | np.ndarray | Sequence[EmbeddingGrid], heads: int,
                   size: int, seed: int) -> MultiHeadCodebook:
    """k-means++ seeding per head over the sample's sub-vectors (no Lloyd steps)."""
    if isinstance(sample, EmbeddingGrid):
        tokens = sample.data
    elif isinstance(sample, np.ndarray):
        tokens = sample.reshape(-1, sample.shape[-1])
    else:
        tokens = np.concatenate([g.data for g in sample], axis=0)
    tokens = np.asarray(tokens, dtype=np.float64)
    sub = split_heads(tokens, heads)
    rng = np.random.default_rng(seed)
    codes = np.empty((heads, size, sub.shape[-1]))
    for m in range(heads):
        pts = sub[:, m]
        if np.unique(pts, axis=0).shape[0] < size:
            raise InsufficientSamples(f"head {m}: fewer than {size} distinct sub-vectors")
        chosen = [int(rng.integers(pts.shape[0]))]
        d2 = np.sum((pts - pts[chosen[0]]) ** 2, axis=1)
        for _ in range(1, size):
            total = d2.sum()
            nxt = int(rng.choice(pts.shape[0], p=d2 / total))
            chosen.append(nxt)
            d2 = np.minimum(d2, np.sum((pts - pts[nxt]) ** 2, axis=1))
        codes[m] = pts[chosen]
    return MultiHeadCodebook(codes)
