"""Patch and segment tokenizers for images and univariate series.

Both modalities are reduced to an ``N x P`` float matrix of raw token
features. Patches are taken in row-major patch order; segments in
chronological order. Every tokenizer here has an exact inverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryMismatch, NonDivisibleGeometry, NonDivisibleLength

VISUAL = "visual"
TEMPORAL = "temporal"
MODALITIES = (VISUAL, TEMPORAL)

STD_EPS = 1e-8


@dataclass
class TimeSeries:
    values: np.ndarray
    norm_stats: tuple[float, float] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.values.size < 1:
            raise GeometryMismatch("series must have at least one value")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("series contains non-finite values")

    def __len__(self):
        return self.values.size


@dataclass
class Image:
    """``H x W x C`` raster with pixels in ``[0, 1]``."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise GeometryMismatch(f"expected H x W x C with C in (1, 3), got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise GeometryMismatch("empty image")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("pixels must be finite and lie in [0, 1]")
        self.pixels = px

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def channels(self):
        return self.pixels.shape[2]


@dataclass
class TokenSequence:
    """Raw token features plus what is needed to undo the tokenization.

    ``geometry`` is ``(H, W, f, C)`` for visual tokens and ``(L, l)`` for
    temporal ones, where ``L`` is the unpadded series length. ``pad`` counts
    the left-padding values added by lenient segmentation.
    """

    tokens: np.ndarray
    origin: str
    geometry: tuple
    pad: int = 0
    norm_stats: tuple[float, float] | None = field(default=None, compare=False)

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.float64)
        if self.origin not in MODALITIES:
            raise ValueError(f"unknown modality {self.origin!r}")
        if self.tokens.ndim != 2:
            raise GeometryMismatch("tokens must be an N x P matrix")

    @property
    def n_tokens(self):
        return self.tokens.shape[0]

    @property
    def features(self):
        return self.tokens.shape[1]


def patchify_image(img: Image, f: int) -> TokenSequence:
    h, w, c = img.pixels.shape
    if f < 1 or h % f or w % f:
        raise NonDivisibleGeometry(f"patch size {f} does not divide {h}x{w}")
    gh, gw = h // f, w // f
    # (gh, f, gw, f, c) -> (gh, gw, f, f, c)
    blocks = img.pixels.reshape(gh, f, gw, f, c).transpose(0, 2, 1, 3, 4)
    return TokenSequence(blocks.reshape(gh * gw, f * f * c).copy(), VISUAL, (h, w, f, c))


def unpatchify_image(tokens: TokenSequence) -> Image:
    """Reassemble patches into an image, clamping pixels to ``[0, 1]``."""
    if tokens.origin != VISUAL or len(tokens.geometry) != 4:
        raise GeometryMismatch("unpatchify needs visual tokens")
    h, w, f, c = tokens.geometry
    n, p = tokens.tokens.shape
    if n * p != h * w * c or h % f or w % f or n != (h // f) * (w // f) or p != f * f * c:
        raise GeometryMismatch(f"{n}x{p} tokens do not tile a {h}x{w}x{c} image with f={f}")
    gh, gw = h // f, w // f
    px = tokens.tokens.reshape(gh, gw, f, f, c).transpose(0, 2, 1, 3, 4).reshape(h, w, c)
    return Image(np.clip(px, 0.0, 1.0))


def segment_series(x: TimeSeries, l: int, mode: str = "strict") -> TokenSequence:
    """Split ``x`` into consecutive length-``l`` segments.

    In lenient mode the series is left-padded with its first value up to the
    next multiple of ``l``.
    """
    if l < 1:
        raise NonDivisibleLength("segment length must be positive")
    vals = x.values
    L = vals.size
    if mode == "strict":
        if L % l:
            raise NonDivisibleLength(f"segment length {l} does not divide {L}")
        pad = 0
    elif mode == "lenient":
        pad = (-L) % l
        if pad:
            vals = np.concatenate([np.full(pad, vals[0]), vals])
    else:
        raise ValueError(f"unknown segmentation mode {mode!r}")
    return TokenSequence(vals.reshape(-1, l).copy(), TEMPORAL, (L, l), pad=pad,
                         norm_stats=x.norm_stats)


def assemble_series(tokens: TokenSequence) -> TimeSeries:
    if tokens.origin != TEMPORAL or len(tokens.geometry) != 2:
        raise GeometryMismatch("assemble needs temporal tokens")
    L, l = tokens.geometry
    n, p = tokens.tokens.shape
    if p != l or n * l != L + tokens.pad:
        raise GeometryMismatch(f"{n}x{p} tokens do not cover a length-{L} series")
    flat = tokens.tokens.reshape(-1)[tokens.pad:]
    return TimeSeries(flat.copy(), tokens.norm_stats)


def instance_normalize(x: TimeSeries, stats: tuple[float, float] | None = None) -> TimeSeries:
    """Standardize with population statistics and record them.

    ``stats`` overrides the statistics computed from ``x`` itself; forecasting
    uses it to render a future segment in the observation's scale.
    """
    if stats is None:
        mean = float(np.mean(x.values))
        std = float(np.std(x.values))
        if std < STD_EPS:
            std = 1.0
    else:
        mean, std = float(stats[0]), float(stats[1])
    return TimeSeries((x.values - mean) / std, (mean, std))


def denormalize(x: TimeSeries, stats: tuple[float, float] | None = None) -> TimeSeries:
    stats = stats if stats is not None else x.norm_stats
    if stats is None:
        return TimeSeries(x.values.copy())
    mean, std = stats
    return TimeSeries(x.values * std + mean)
