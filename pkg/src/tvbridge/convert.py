"""End-user pipelines over a frozen bundle: series <-> image conversion,
outpainting-based forecasting, latent style fusion and the metrics used to
score them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import autoencoder as ae
from .errors import GeometryMismatch, LengthMismatch, OutpainterContractViolation, ShapeMismatch
from .quantizer import gather_codes, nearest_codes
from .tokenization import (TEMPORAL, VISUAL, Image, TimeSeries, TokenSequence, instance_normalize,
                           patchify_image, unpatchify_image)
from .training import TokenizerBundle, tokenize


def _check_series(x: TimeSeries, bundle: TokenizerBundle):
    cfg = bundle.config
    padded = len(x) + ((-len(x)) % cfg.l if cfg.mode == "lenient" else 0)
    if padded != cfg.series_length:
        raise GeometryMismatch(f"series of length {len(x)} does not fit {cfg.n} tokens of {cfg.l}")


def _check_image(img: Image, bundle: TokenizerBundle):
    cfg = bundle.config
    side = cfg.image_side
    if img.pixels.shape != (side, side, cfg.channels):
        raise GeometryMismatch(f"image {img.pixels.shape} does not match ({side}, {side}, {cfg.channels})")


def _quantized(params, tokens: np.ndarray, codes: np.ndarray) -> np.ndarray:
    e, _ = ae.encoder_forward(params, tokens[None])
    return gather_codes(nearest_codes(e, codes), codes)[0]


def _render(q: np.ndarray, bundle: TokenizerBundle) -> Image:
    cfg = bundle.config
    out, _ = ae.decoder_forward(bundle.visual, q[None])
    side = cfg.image_side
    return unpatchify_image(TokenSequence(out[0], VISUAL, (side, side, cfg.f, cfg.channels)))


def series_to_image(x: TimeSeries, bundle: TokenizerBundle,
                    stats: tuple[float, float] | None = None) -> Image:
    """normalize -> segment -> temporal encoder -> quantize -> visual decoder -> image.

    ``stats`` replaces the series' own normalisation statistics.
    """
    _check_series(x, bundle)
    tokens = tokenize(x, bundle.config, stats)
    return _render(_quantized(bundle.temporal, tokens.tokens, bundle.codebook.codes), bundle)


def image_to_series(img: Image, bundle: TokenizerBundle,
                    norm_stats: tuple[float, float] | None = None) -> TimeSeries:
    """Visual encoder -> quantize -> temporal decoder; ``N*l`` values out.

    With ``norm_stats`` the output is mapped back to that scale.
    """
    _check_image(img, bundle)
    q = _quantized(bundle.visual, patchify_image(img, bundle.config.f).tokens, bundle.codebook.codes)
    out, _ = ae.decoder_forward(bundle.temporal, q[None])
    values = out[0].reshape(-1)
    if norm_stats is not None:
        values = values * norm_stats[1] + norm_stats[0]
    return TimeSeries(values)


class Outpainter(Protocol):
    def outpaint(self, image: Image, width: int) -> Image:
        """Extend ``image`` to ``width`` columns, keeping its columns as the left prefix."""


def _extend(image: Image, right: np.ndarray) -> Image:
    return Image(np.concatenate([image.pixels, np.clip(right, 0.0, 1.0)], axis=1))


class OracleOutpainter:
    """Paints a known future: each bundle-length block of ``future`` is
    rendered with :func:`series_to_image` in the observation's scale."""

    def __init__(self, future: TimeSeries, bundle: TokenizerBundle,
                 stats: tuple[float, float] | None = None):
        self.future = future
        self.bundle = bundle
        self.stats = stats

    def outpaint(self, image: Image, width: int) -> Image:
        cfg = self.bundle.config
        L, side = cfg.series_length, cfg.image_side
        blocks = (width - image.width) // side
        need = blocks * L
        vals = self.future.values
        if vals.size < need:
            vals = np.concatenate([vals, np.full(need - vals.size, vals[-1])])
        right = [series_to_image(TimeSeries(vals[b * L:(b + 1) * L]), self.bundle, self.stats).pixels
                 for b in range(blocks)]
        return _extend(image, np.concatenate(right, axis=1))


def dominant_period(image: Image, max_lag: int | None = None) -> int:
    """Column lag in ``[2, max_lag]`` with the largest autocorrelation.

    The score of a lag is the Pearson correlation between the image and
    itself shifted by that many columns. Ties resolve to the smallest lag.
    """
    w = image.width
    max_lag = w // 2 if max_lag is None else max_lag
    if max_lag < 2:
        raise GeometryMismatch("image too narrow to estimate a column period")
    px = image.pixels
    best_lag, best = 2, -np.inf
    for lag in range(2, max_lag + 1):
        a = px[:, :-lag].reshape(-1)
        b = px[:, lag:].reshape(-1)
        a = a - a.mean()
        b = b - b.mean()
        denom = np.sqrt(np.dot(a, a) * np.dot(b, b))
        score = np.dot(a, b) / denom if denom > 0 else 0.0
        if score > best + 1e-12:
            best_lag, best = lag, score
    return best_lag


class TileOutpainter:
    """Repeats the last ``period`` columns; estimated with
    :func:`dominant_period` when not given. ``period`` equal to the image
    width repeats the whole observation."""

    def __init__(self, period: int | None = None):
        if period is not None and period < 1:
            raise ValueError("period must be positive")
        self.period = period

    def outpaint(self, image: Image, width: int) -> Image:
        w = image.width
        period = dominant_period(image) if self.period is None else self.period
        if period > w:
            raise GeometryMismatch(f"period {period} exceeds the observed width {w}")
        src = w - period + (np.arange(width - w) % period)
        return _extend(image, image.pixels[:, src])


@dataclass
class ForecastConfig:
    context_length: int = 64
    horizon: int = 128
    w_obs: int = 16
    w_out: int = 48

    def __post_init__(self):
        if self.w_out <= self.w_obs:
            raise ValueError("forecast image must be wider than the observation image")
        if self.context_length < 1 or self.horizon < 1:
            raise ValueError("context length and horizon must be positive")


def forecast(x_obs: TimeSeries, cfg: ForecastConfig, bundle: TokenizerBundle,
             outpainter: Outpainter) -> TimeSeries:
    """Render the context, outpaint to the right, decode only the new columns.

    The outpainted region is decoded one bundle-width block at a time with
    the observation's normalisation statistics, then trimmed (or padded
    with its last value) to the horizon.
    """
    bcfg = bundle.config
    side = bcfg.image_side
    if len(x_obs) != cfg.context_length:
        raise GeometryMismatch(f"observation has {len(x_obs)} points, expected {cfg.context_length}")
    if cfg.w_obs != side or (cfg.w_out - cfg.w_obs) % side:
        raise GeometryMismatch(f"image widths {cfg.w_obs}->{cfg.w_out} do not tile bundle width {side}")
    stats = instance_normalize(x_obs).norm_stats
    obs_img = series_to_image(x_obs, bundle)
    painted = outpainter.outpaint(obs_img, cfg.w_out)
    if painted.pixels.shape[:2] != (side, cfg.w_out) or painted.channels != obs_img.channels:
        raise OutpainterContractViolation(f"outpainter returned {painted.pixels.shape}")
    if not np.array_equal(painted.pixels[:, :cfg.w_obs], obs_img.pixels):
        raise OutpainterContractViolation("outpainter modified the observed columns")
    pieces = []
    for c in range(cfg.w_obs, cfg.w_out, side):
        block = Image(painted.pixels[:, c:c + side])
        pieces.append(image_to_series(block, bundle, stats).values)
    pred = np.concatenate(pieces)
    if pred.size >= cfg.horizon:
        pred = pred[:cfg.horizon]
    else:
        pred = np.concatenate([pred, np.full(cfg.horizon - pred.size, pred[-1])])
    return TimeSeries(pred)


def seasonal_naive(x: TimeSeries, period: int, horizon: int) -> np.ndarray:
    vals = x.values
    return vals[len(vals) - period + (np.arange(horizon) % period)]


def stylize(img: Image, x: TimeSeries, bundle: TokenizerBundle) -> Image:
    """Decode the sum of the series' and the image's quantized grids."""
    _check_image(img, bundle)
    _check_series(x, bundle)
    codes = bundle.codebook.codes
    q_t = _quantized(bundle.temporal, tokenize(x, bundle.config).tokens, codes)
    q_v = _quantized(bundle.visual, patchify_image(img, bundle.config.f).tokens, codes)
    return _render(q_t + q_v, bundle)


def eval_forecast(pred, truth) -> tuple[float, float]:
    p = np.asarray(getattr(pred, "values", pred), dtype=np.float64).reshape(-1)
    t = np.asarray(getattr(truth, "values", truth), dtype=np.float64).reshape(-1)
    if p.shape != t.shape:
        raise LengthMismatch(f"prediction has {p.size} points, truth {t.size}")
    err = p - t
    return float(np.mean(err * err)), float(np.mean(np.abs(err)))


def _correlations(x: np.ndarray) -> np.ndarray:
    flat = x.reshape(-1, x.shape[-1])
    mean = flat.mean(axis=0)
    cov = (flat.T @ flat) / flat.shape[0] - np.outer(mean, mean)
    var = np.diag(cov)
    denom = np.sqrt(np.outer(var, var))
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(denom > 0, cov / np.where(denom > 0, denom, 1.0), 0.0)
    return rho


def correlational_score(real, synth) -> float:
    """Absolute gap between feature correlation matrices, summed and divided by 10.

    Inputs are ``(T, d)`` or ``(samples, T, d)``; all time steps are pooled.
    Zero-variance channels get correlation 0.
    """
    r = np.asarray(real, dtype=np.float64)
    s = np.asarray(synth, dtype=np.float64)
    if r.shape != s.shape or r.ndim not in (2, 3) or r.shape[-1] < 2:
        raise ShapeMismatch(f"need matching (..., T, d>=2) arrays, got {r.shape} and {s.shape}")
    return float(np.sum(np.abs(_correlations(r) - _correlations(s))) / 10.0)
