"""Figures for a run directory, rendered from the CSVs other subcommands
left there. Each PNG is written next to the table it was drawn from."""

from __future__ import annotations

import csv
import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .persist import atomic_write, load_image  # noqa: E402


def _rows(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _col(rows, key) -> np.ndarray:
    return np.array([float(r[key]) if r[key] != "" else np.nan for r in rows])


def _save(fig, path: Path) -> Path:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=100, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    atomic_write(path, buf.getvalue())
    return path


def _smooth(y: np.ndarray, window: int = 25) -> np.ndarray:
    if y.size < window:
        return y
    return np.convolve(y, np.ones(window) / window, mode="valid")


def plot_loss_curve(rows, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    for modality in ("visual", "temporal"):
        sel = [r for r in rows if r["modality"] == modality]
        if not sel:
            continue
        for key, style in (("total", "-"), ("recon", "--")):
            y = _smooth(_col(sel, key))
            ax.plot(np.arange(y.size) * 2, y, style, label=f"{modality} {key}")
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss (running mean)")
    ax.legend()
    ax.set_title("warmup losses")
    return _save(fig, path)


def plot_utilization(rows, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3))
    heads = [int(r["head"]) for r in rows]
    ax.bar(heads, _col(rows, "utilization"), color="tab:blue")
    ax.axhline(0.5, color="grey", lw=0.8, ls=":")
    ax.set_ylim(0, 1.05)
    ax.set_xticks(heads)
    ax.set_xlabel("head")
    ax.set_ylabel("fraction of codes used")
    return _save(fig, path)


def plot_forecast(rows, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(8, 3.5))
    t = _col(rows, "t")
    ax.plot(t, _col(rows, "observed"), color="black", lw=1, label="observed")
    truth = _col(rows, "truth")
    if np.isfinite(truth).any():
        ax.plot(t, truth, color="tab:green", lw=1, label="truth")
    ax.plot(t, _col(rows, "prediction"), color="tab:red", lw=1, ls="--", label="forecast")
    ax.set_xlabel("t")
    ax.legend()
    return _save(fig, path)


def plot_cost_matrix(rows, path: Path) -> Path:
    cols = [k for k in rows[0] if k != "temporal_class"]
    m = np.array([[float(r[c]) for c in cols] for r in rows])
    fig, ax = plt.subplots(figsize=(4, 3.5))
    im = ax.imshow(m, cmap="viridis")
    for i in range(m.shape[0]):
        for j in range(m.shape[1]):
            ax.text(j, i, f"{m[i, j]:.3f}", ha="center", va="center", color="white", fontsize=8)
    ax.set_xticks(range(len(cols)), [c.replace("visual_", "") for c in cols])
    ax.set_yticks(range(len(rows)), [r["temporal_class"] for r in rows])
    ax.set_xlabel("visual class")
    ax.set_ylabel("temporal class")
    fig.colorbar(im, ax=ax, label="JSD (nats)")
    return _save(fig, path)


def plot_curves(rows, path: Path, ylabel: str = "cross-entropy (nats)") -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for key in rows[0]:
        if key != "step":
            ax.plot(_smooth(_col(rows, key)), label=key.replace("_", " "))
    ax.set_xlabel("step")
    ax.set_ylabel(ylabel)
    ax.legend()
    return _save(fig, path)


def plot_images(paths: list[Path], path: Path) -> Path:
    fig, axes = plt.subplots(1, len(paths), figsize=(3 * len(paths), 3), squeeze=False)
    for ax, p in zip(axes[0], paths):
        img = load_image(p)
        px = img.pixels[:, :, 0] if img.channels == 1 else img.pixels
        ax.imshow(px, cmap="gray", vmin=0, vmax=1, interpolation="nearest")
        ax.set_title(p.stem, fontsize=8)
        ax.axis("off")
    return _save(fig, path)


def render_report(run_dir) -> list[Path]:
    """Render every figure whose source table exists; returns the PNG paths."""
    d = Path(run_dir)
    made = []
    tables = (("loss_curve.csv", plot_loss_curve),
              ("utilization.csv", plot_utilization),
              ("forecast_series.csv", plot_forecast),
              ("jsd_cost.csv", plot_cost_matrix),
              ("align_forecast_curve.csv", plot_curves),
              ("align_classify_curve.csv", plot_curves))
    for name, plot in tables:
        src = d / name
        if src.exists():
            rows = _rows(src)
            if rows:
                made.append(plot(rows, src.with_suffix(".png")))
    images = [d / n for n in ("forecast_observation.pgm", "forecast_outpainted.pgm",
                              "stylize_source.pgm", "stylized.pgm") if (d / n).exists()]
    if images:
        made.append(plot_images(images, d / "conversions.png"))
    return made
