"""Procedural corpora used by the tests, the CLI and the self-test.

Images are oriented stripe patterns whose orientation is the class label;
series are sums of sinusoids around a class-specific base period, with a
small trend and noise. Nothing here touches the network.
"""

from __future__ import annotations

import numpy as np

from .tokenization import Image, TimeSeries

# orientation (radians) and base period (timesteps) per class
STRIPE_ANGLES = (0.0, np.pi / 2, np.pi / 4)
BASE_PERIODS = (4.0, 8.0, 16.0)
PIXEL_NOISE = 0.25


def stripe_image(label: int, rng: np.random.Generator, side: int = 16,
                 channels: int = 1, canonical: bool = False) -> Image:
    """``canonical`` pins period and phase so the class mean keeps its stripes."""
    theta = STRIPE_ANGLES[label % len(STRIPE_ANGLES)] + rng.normal(0.0, 0.05)
    if canonical:
        period, phase = 6.0, 0.0
    else:
        period = rng.uniform(4.0, 8.0)
        phase = rng.uniform(0.0, 2 * np.pi)
    rows, cols = np.mgrid[0:side, 0:side].astype(np.float64)
    # stripes run along theta, so intensity varies across it
    u = -rows * np.cos(theta) + cols * np.sin(theta)
    contrast = rng.uniform(0.1, 0.4)
    px = rng.uniform(0.35, 0.65) + contrast * np.sin(2 * np.pi * u / period + phase)
    for _ in range(int(rng.integers(1, 4))):
        br, bc = rng.uniform(0, side, size=2)
        width = rng.uniform(1.5, side / 3)
        px += rng.uniform(-0.25, 0.25) * np.exp(-((rows - br) ** 2 + (cols - bc) ** 2) / (2 * width ** 2))
    # heavy pixel noise keeps the image patches full-rank, so the visual
    # autoencoder stays invertible well away from the stripe manifold
    px += rng.normal(0.0, PIXEL_NOISE, size=px.shape)
    px = np.clip(px, 0.0, 1.0)
    return Image(np.repeat(px[:, :, None], channels, axis=2))


def sine_series(label: int, rng: np.random.Generator, length: int = 64) -> TimeSeries:
    t = np.arange(length, dtype=np.float64)
    base = BASE_PERIODS[label % len(BASE_PERIODS)] * rng.uniform(0.9, 1.1)
    y = np.sin(2 * np.pi * t / base + rng.uniform(0, 2 * np.pi))
    for _ in range(int(rng.integers(0, 3))):
        harmonic = int(rng.integers(2, 4))
        y += rng.uniform(0.1, 0.4) * np.sin(2 * np.pi * harmonic * t / base
                                            + rng.uniform(0, 2 * np.pi))
    y += rng.uniform(-0.5, 0.5) * t / length
    y += rng.normal(0.0, 0.05, size=length)
    return TimeSeries(rng.uniform(0.5, 2.0) * y + rng.normal(0.0, 1.0))


def image_corpus(count: int, seed: int, side: int = 16, channels: int = 1,
                 classes: int = 3, canonical: bool = False) -> tuple[list[Image], np.ndarray]:
    rng = np.random.default_rng([seed, 3 if canonical else 1])
    labels = np.arange(count) % classes
    return [stripe_image(int(c), rng, side, channels, canonical) for c in labels], labels


def series_corpus(count: int, seed: int, length: int = 64,
                  classes: int = 3) -> tuple[list[TimeSeries], np.ndarray]:
    rng = np.random.default_rng([seed, 2])
    labels = np.arange(count) % classes
    return [sine_series(int(c), rng, length) for c in labels], labels


def periodic_series(length: int, period: int, amplitude: float = 1.0,
                    offset: float = 0.0, phase: float = 0.3) -> TimeSeries:
    """Exact-period sinusoid; ``x[t + period] == x[t]`` up to rounding of sin."""
    t = np.arange(length) % period
    return TimeSeries(offset + amplitude * np.sin(2 * np.pi * t / period + phase))


def landscape_image(width: int, rng: np.random.Generator, side: int = 16,
                    channels: int = 1) -> Image:
    """Wide scene stand-in used for sliding-window pairing."""
    rows, cols = np.mgrid[0:side, 0:width].astype(np.float64)
    horizon = side * (0.5 + 0.2 * np.sin(2 * np.pi * cols / rng.uniform(12, 24)))
    sky = 0.8 - 0.3 * rows / side
    ground = 0.3 + 0.1 * np.sin(2 * np.pi * cols / 5.0)
    px = np.where(rows < horizon, sky, ground) + rng.normal(0.0, 0.02, size=rows.shape)
    px = np.clip(px, 0.0, 1.0)
    return Image(np.repeat(px[:, :, None], channels, axis=2))
