"""Index-to-index alignment models over a frozen bundle.

The model reads an ``N x M`` index grid, embeds every position as the sum of
its per-head code embeddings plus a learned positional vector, runs one
single-head self-attention block with a residual connection, and emits
``K`` logits per position and head. Forward and backward are written out
by hand; training is seeded minibatch SGD on mean cross-entropy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autoencoder as ae
from .errors import (EmptyCorpus, FrozenBundle, GeometryMismatch, IndexOutOfRange, NonFiniteLoss,
                     ShapeMismatch, WindowTooLarge)
from .quantizer import IndexSequence, nearest_codes
from .tokenization import TEMPORAL, VISUAL, Image, TimeSeries
from .training import TokenizerBundle, tokenize

T2V = "temporal->visual"
V2T = "visual->temporal"
DIRECTIONS = (T2V, V2T)
SLIDING = "sliding-window"
CLASS_ASSIGNED = "class-assigned"


@dataclass
class AlignmentModel:
    direction: str
    params: dict[str, np.ndarray]

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"unknown direction {self.direction!r}")

    @property
    def heads(self) -> int:
        return self.params["emb"].shape[0]

    @property
    def codes(self) -> int:
        return self.params["emb"].shape[1]

    @property
    def width(self) -> int:
        return self.params["emb"].shape[2]

    @property
    def positions(self) -> int:
        return self.params["pos"].shape[0]

    @property
    def source_modality(self) -> str:
        return TEMPORAL if self.direction == T2V else VISUAL

    @property
    def target_modality(self) -> str:
        return VISUAL if self.direction == T2V else TEMPORAL

    def copy(self) -> "AlignmentModel":
        return AlignmentModel(self.direction, {k: v.copy() for k, v in self.params.items()})


@dataclass
class PairedSample:
    source: IndexSequence
    target: IndexSequence
    provenance: str = SLIDING
    label: int | None = None

    def __post_init__(self):
        if self.source.shape != self.target.shape:
            raise ShapeMismatch(f"source {self.source.shape} and target {self.target.shape} differ")


@dataclass
class AlignConfig:
    learning_rate: float = 0.5
    steps: int = 3000
    batch_size: int = 16
    seed: int = 0
    width: int = 16
    momentum: float = 0.9
    clip_norm: float = 1.0  # global gradient norm cap; 0 disables


def init_alignment(direction: str, n: int, heads: int, codes: int, width: int = 16,
                   seed: int = 0, zero: bool = False) -> AlignmentModel:
    shapes = {
        "emb": (heads, codes, width),
        "pos": (n, width),
        "wq": (width, width),
        "wk": (width, width),
        "wv": (width, width),
        "wo": (heads, width, codes),
        "bo": (heads, codes),
    }
    if zero:
        return AlignmentModel(direction, {k: np.zeros(s) for k, s in shapes.items()})
    rng = np.random.default_rng([seed, 11])
    s = 1.0 / np.sqrt(width)
    params = {k: rng.uniform(-s, s, size=shape) for k, shape in shapes.items()}
    params["bo"] = np.zeros(shapes["bo"])
    return AlignmentModel(direction, params)


def _softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=axis, keepdims=True)


def forward(params: dict, idx: np.ndarray):
    """Logits of shape ``(B, N, M, K)`` for index grids ``(B, N, M)``."""
    heads = params["emb"].shape[0]
    width = params["emb"].shape[2]
    x = params["pos"][None].copy()
    for m in range(heads):
        x = x + params["emb"][m][idx[..., m]]
    qh, kh, vh = x @ params["wq"], x @ params["wk"], x @ params["wv"]
    scores = qh @ np.swapaxes(kh, -1, -2) / np.sqrt(width)
    attn = _softmax(scores)
    h = x + attn @ vh
    logits = np.einsum("bne,mek->bnmk", h, params["wo"]) + params["bo"]
    return logits, (idx, x, qh, kh, vh, attn, h)


def backward(params: dict, dlogits: np.ndarray, cache) -> dict:
    idx, x, qh, kh, vh, attn, h = cache
    width = params["emb"].shape[2]
    grads = {
        "wo": np.einsum("bne,bnmk->mek", h, dlogits),
        "bo": dlogits.sum(axis=(0, 1)),
    }
    dh = np.einsum("bnmk,mek->bne", dlogits, params["wo"])
    dx = dh.copy()
    dv = np.swapaxes(attn, -1, -2) @ dh
    dattn = dh @ np.swapaxes(vh, -1, -2)
    dscores = attn * (dattn - np.sum(dattn * attn, axis=-1, keepdims=True)) / np.sqrt(width)
    dq = dscores @ kh
    dk = np.swapaxes(dscores, -1, -2) @ qh
    grads["wq"] = np.einsum("bne,bnf->ef", x, dq)
    grads["wk"] = np.einsum("bne,bnf->ef", x, dk)
    grads["wv"] = np.einsum("bne,bnf->ef", x, dv)
    dx += dq @ params["wq"].T + dk @ params["wk"].T + dv @ params["wv"].T
    grads["pos"] = dx.sum(axis=0)
    demb = np.zeros_like(params["emb"])
    flat_dx = dx.reshape(-1, width)
    for m in range(params["emb"].shape[0]):
        np.add.at(demb[m], idx[..., m].reshape(-1), flat_dx)
    grads["emb"] = demb
    return grads


def cross_entropy(params: dict, src: np.ndarray, tgt: np.ndarray):
    """Mean cross-entropy (nats) over batch, positions and heads, with gradients."""
    logits, cache = forward(params, src)
    logp = logits - logits.max(axis=-1, keepdims=True)
    logp = logp - np.log(np.exp(logp).sum(axis=-1, keepdims=True))
    count = tgt.size
    picked = np.take_along_axis(logp, tgt[..., None], axis=-1)[..., 0]
    loss = -float(picked.sum()) / count
    dlogits = np.exp(logp)
    np.put_along_axis(dlogits, tgt[..., None], np.take_along_axis(dlogits, tgt[..., None], -1) - 1.0, -1)
    return loss, backward(params, dlogits / count, cache)


def _check_indices(model: AlignmentModel, idx: np.ndarray):
    if idx.shape[-2:] != (model.positions, model.heads):
        raise ShapeMismatch(f"index grid {idx.shape[-2:]} does not match model "
                            f"({model.positions}, {model.heads})")
    if idx.size and (idx.min() < 0 or idx.max() >= model.codes):
        raise IndexOutOfRange(f"indices must lie in [0, {model.codes})")


def align_predict(model: AlignmentModel, src: IndexSequence) -> tuple[np.ndarray, IndexSequence]:
    """Return ``(logits, argmax)``; ``argmax`` breaks ties toward the smallest index."""
    idx = src.indices
    _check_indices(model, idx)
    logits, _ = forward(model.params, idx[None])
    return logits[0], IndexSequence(np.argmax(logits[0], axis=-1))


def train_alignment(pairs: list[PairedSample], bundle: TokenizerBundle | None,
                    config: AlignConfig, direction: str = T2V, model: AlignmentModel | None = None):
    """Fit an alignment model on paired index grids.

    For ``visual->temporal`` the pairs are read in reverse, so the same
    corpus trains both directions. Returns ``(model, loss_curve)``.
    """
    if not pairs:
        raise EmptyCorpus("no paired samples")
    if bundle is not None and not bundle.frozen:
        raise FrozenBundle("alignment trains against a frozen bundle only")
    checksum = bundle.checksum() if bundle is not None else None
    src = np.stack([p.source.indices for p in pairs])
    tgt = np.stack([p.target.indices for p in pairs])
    if direction == V2T:
        src, tgt = tgt, src
    n, heads = src.shape[1:]
    codes = bundle.config.codes if bundle is not None else int(max(src.max(), tgt.max())) + 1
    if model is None:
        model = init_alignment(direction, n, heads, codes, config.width, config.seed)
    else:
        model = model.copy()
    _check_indices(model, src)
    _check_indices(model, tgt)

    rng = np.random.default_rng([config.seed, 13])
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    curve = []
    bs = min(config.batch_size, len(pairs))
    order = np.empty(0, dtype=np.int64)
    for _ in range(config.steps):
        if order.size < bs:
            order = np.concatenate([order, rng.permutation(len(pairs))])
        pick, order = order[:bs], order[bs:]
        loss, grads = cross_entropy(model.params, src[pick], tgt[pick])
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"alignment loss diverged after {len(curve)} steps")
        curve.append(loss)
        if config.clip_norm > 0:
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if norm > config.clip_norm:
                grads = {k: g * (config.clip_norm / norm) for k, g in grads.items()}
        for k, g in grads.items():
            velocity[k] = config.momentum * velocity[k] + g
            model.params[k] = model.params[k] - config.learning_rate * velocity[k]
    if checksum is not None and bundle.checksum() != checksum:
        raise RuntimeError("bundle changed during alignment training")
    return model, np.array(curve)


def extract_indices(x: TimeSeries | Image, bundle: TokenizerBundle,
                    stats: tuple[float, float] | None = None) -> IndexSequence:
    """Indices selected when ``x`` is tokenized, encoded and quantized."""
    cfg = bundle.config
    if isinstance(x, Image):
        side = cfg.image_side
        if x.pixels.shape != (side, side, cfg.channels):
            raise GeometryMismatch(f"image {x.pixels.shape} does not match bundle "
                                   f"({side}, {side}, {cfg.channels})")
        modality = VISUAL
    else:
        if len(x) + (-len(x)) % cfg.l != cfg.series_length or (cfg.mode == "strict" and len(x) != cfg.series_length):
            raise GeometryMismatch(f"series of length {len(x)} does not match bundle "
                                   f"length {cfg.series_length}")
        modality = TEMPORAL
    tokens = tokenize(x, cfg, stats)
    e, _ = ae.encoder_forward(bundle.params(modality), tokens.tokens[None])
    return IndexSequence(nearest_codes(e, bundle.codebook.codes)[0])


def build_sliding_pairs(series: TimeSeries, image: Image, window: int, stride: int,
                        bundle: TokenizerBundle) -> list[PairedSample]:
    """Synchronised sub-series / sub-image pairs.

    The k-th pair takes ``series[k*stride : k*stride + window]`` and the
    full-height crop of bundle width starting at the proportional column
    ``floor(k*stride * image_width / len(series))``.
    """
    cfg = bundle.config
    if window != cfg.series_length:
        raise WindowTooLarge(f"window must equal the bundle series length {cfg.series_length}")
    if stride < 1:
        raise ValueError("stride must be positive")
    total = len(series)
    if window > total:
        raise WindowTooLarge(f"window {window} exceeds series length {total}")
    crop = cfg.image_side
    if image.height != crop or image.width < crop:
        raise GeometryMismatch(f"image {image.height}x{image.width} cannot hold {crop}x{crop} crops")
    count = (total - window) // stride + 1
    pairs = []
    for k in range(count):
        start = k * stride
        col = (start * image.width) // total
        col = min(col, image.width - crop)
        sub = TimeSeries(series.values[start:start + window])
        img = Image(image.pixels[:, col:col + crop])
        pairs.append(PairedSample(extract_indices(sub, bundle), extract_indices(img, bundle), SLIDING))
    return pairs
