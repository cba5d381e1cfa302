"""Command-line entry point.

Every subcommand works inside one run directory (``--out``): checkpoints,
CSV tables, images and figures all land there, and later subcommands pick
up what earlier ones wrote. Exit codes: 0 ok, 1 runtime error, 2 usage.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from . import acceptance
from .alignment import (T2V, V2T, AlignConfig, build_sliding_pairs, extract_indices,
                        train_alignment)
from .classpair import (NearestCentroidClassifier, build_paired_dataset, classify_series,
                        cost_matrix, hungarian_assign, index_histogram)
from .config import RunConfig, load_config
from .convert import (ForecastConfig, OracleOutpainter, TileOutpainter, eval_forecast, forecast,
                      image_to_series, series_to_image, stylize)
from .errors import ConfigError, MissingCheckpoint, TVBridgeError
from .persist import (atomic_write, load_checkpoint, load_image, load_series_csv, save_checkpoint,
                      save_image, save_rows_csv, save_series_csv)
from .synthetic import image_corpus, landscape_image, periodic_series, series_corpus
from .tokenization import Image, TimeSeries, instance_normalize
from .training import corpus_loss, loss_curve_rows, run_warmup

log = logging.getLogger("tvbridge")

BUNDLE = "bundle.tart"
ALIGN_T2V = "align_t2v.tart"
ALIGN_V2T = "align_v2t.tart"
ALIGN_CLASSIFY = "align_classify.tart"
REFERENCES = "references"


class UsageError(Exception):
    pass


# ----------------------------------------------------------------- helpers

def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _bundle(args, out: Path):
    path = Path(args.bundle) if getattr(args, "bundle", None) else out / BUNDLE
    if not path.exists():
        raise MissingCheckpoint(f"no bundle checkpoint at {path}; run `tvbridge warmup --out {out}` first")
    return load_checkpoint(path)


def _windows(series: list[TimeSeries], length: int) -> list[TimeSeries]:
    """Cut each series into consecutive non-overlapping windows of ``length``."""
    out = []
    for s in series:
        for start in range(0, len(s) - length + 1, length):
            out.append(TimeSeries(s.values[start:start + length]))
    return out


def _load_images(folder: Path) -> list[Image]:
    paths = sorted(p for p in folder.iterdir() if p.suffix.lower() in (".pgm", ".ppm"))
    return [load_image(p) for p in paths]


def _write_labels(path: Path, names, labels):
    save_rows_csv(path, ["file", "label"], zip(names, (int(v) for v in labels)))


# ------------------------------------------------------------- subcommands

def cmd_synth_data(args, cfg: RunConfig, out: Path) -> str:
    bc = cfg.bundle_config()
    series, slabels = series_corpus(args.count, cfg.seed, bc.series_length)
    images, ilabels = image_corpus(args.count, cfg.seed, bc.image_side)
    save_series_csv(out / "series.csv", series, [f"s{i}" for i in range(len(series))])
    save_rows_csv(out / "series_labels.csv", ["column", "label"],
                  ((f"s{i}", int(c)) for i, c in enumerate(slabels)))
    names = []
    for i, img in enumerate(images):
        name = f"img_{i:04d}.pgm"
        save_image(img, out / "images" / name)
        names.append(name)
    _write_labels(out / "images.csv", names, ilabels)
    return f"synth-data: {len(series)} series of length {bc.series_length}, {len(images)} images -> {out}"


def cmd_warmup(args, cfg: RunConfig, out: Path) -> str:
    bc = cfg.bundle_config()
    if args.series:
        series = _windows(load_series_csv(args.series), bc.series_length)
    else:
        series, _ = series_corpus(256, cfg.seed, bc.series_length)
    if args.images:
        images = _load_images(Path(args.images))
    else:
        images, _ = image_corpus(256, cfg.seed, bc.image_side)
    result = run_warmup(series, images, cfg.warmup_config(), bc,
                        callback=lambda step, loss: log.debug("step %d %s %.4f", step, loss.modality,
                                                              loss.total))
    save_checkpoint(result.bundle, out / BUNDLE)
    save_rows_csv(out / "loss_curve.csv", ["step", "modality", "recon", "quant", "commit", "total"],
                  loss_curve_rows(result.log))
    save_rows_csv(out / "utilization.csv", ["head", "utilization"],
                  ((m, float(u)) for m, u in enumerate(result.utilization)))
    atomic_write(out / "run.cfg", cfg.dumps().encode())
    ratios = {name: corpus_loss(items, result.bundle).total / corpus_loss(items, result.initial).total
              for name, items in (("visual", images), ("temporal", series))}
    return (f"warmup: {cfg.steps} steps, loss ratio visual {ratios['visual']:.3f} temporal "
            f"{ratios['temporal']:.3f}, min utilization {result.utilization.min():.2f} -> {out / BUNDLE}")


def cmd_align_forecast(args, cfg: RunConfig, out: Path) -> str:
    bundle = _bundle(args, out)
    bc = bundle.config
    L = bc.series_length
    if args.series:
        series = load_series_csv(args.series, 0)[0]
    else:
        series = series_corpus(1, cfg.seed + 7, length=8 * L)[0][0]
    if args.image:
        image = load_image(args.image)
    else:
        width = bc.image_side * max(2, len(series) // L)
        image = landscape_image(width, np.random.default_rng([cfg.seed, 8]), bc.image_side, bc.channels)
    stride = args.stride or max(1, L // 4)
    pairs = build_sliding_pairs(series, image, L, stride, bundle)
    acfg = AlignConfig(seed=cfg.seed, steps=args.steps, width=cfg.E)
    fwd, fcurve = train_alignment(pairs, bundle, acfg, T2V)
    rev, rcurve = train_alignment(pairs, bundle, acfg, V2T)
    save_checkpoint(fwd, out / ALIGN_T2V)
    save_checkpoint(rev, out / ALIGN_V2T)
    save_rows_csv(out / "align_forecast_curve.csv", ["step", "temporal_to_visual", "visual_to_temporal"],
                  ((i, float(a), float(b)) for i, (a, b) in enumerate(zip(fcurve, rcurve))))
    return (f"align-forecast: {len(pairs)} sliding pairs, final cross-entropy {fcurve[-1]:.3f} / "
            f"{rcurve[-1]:.3f} nats -> {out / ALIGN_T2V}, {out / ALIGN_V2T}")


def cmd_align_classify(args, cfg: RunConfig, out: Path) -> str:
    bundle = _bundle(args, out)
    bc = bundle.config
    ts, tl = series_corpus(args.count, cfg.seed + 500, bc.series_length)
    vs, vl = image_corpus(args.count, cfg.seed + 500, bc.image_side, bc.channels, canonical=True)
    classes = sorted(set(int(c) for c in tl))
    tsub = [[extract_indices(x, bundle) for x, c in zip(ts, tl) if c == k] for k in classes]
    vsub = [[extract_indices(x, bundle) for x, c in zip(vs, vl) if c == k] for k in classes]
    thist = [index_histogram(t, codes=bc.codes) for t in tsub]
    vhist = [index_histogram(v, codes=bc.codes) for v in vsub]
    cost = cost_matrix(thist, vhist)
    assignment = hungarian_assign(cost)
    pairs = build_paired_dataset(tsub, vsub, assignment, cfg.seed)
    model, curve = train_alignment(pairs, bundle, AlignConfig(seed=cfg.seed, steps=args.steps, width=cfg.E))
    save_checkpoint(model, out / ALIGN_CLASSIFY)
    save_rows_csv(out / "jsd_cost.csv", ["temporal_class"] + [f"visual_{k}" for k in classes],
                  ([k] + [float(v) for v in row] for k, row in zip(classes, cost)))
    save_rows_csv(out / "assignment.csv", ["temporal_class", "visual_class", "jsd"],
                  ((m, n, float(cost[m, n])) for m, n in enumerate(assignment.mapping)))
    rows = []
    for prefix, hists in (("temporal", thist), ("visual", vhist)):
        for s, h in enumerate(hists):
            for m in range(h.shape[0]):
                for k in range(h.shape[1]):
                    rows.append((f"{prefix}{s}", m, k, int(h.counts[m, k]), float(h.probs[m, k])))
    save_rows_csv(out / "histograms.csv", ["subset", "head", "code", "count", "prob"], rows)
    save_rows_csv(out / "align_classify_curve.csv", ["step", "cross_entropy"],
                  ((i, float(v)) for i, v in enumerate(curve)))
    names = []
    for i, img in enumerate(vs):
        names.append(f"ref_{i:04d}.pgm" if img.channels == 1 else f"ref_{i:04d}.ppm")
        save_image(img, out / REFERENCES / names[-1])
    _write_labels(out / REFERENCES / "labels.csv", names, vl)
    return (f"align-classify: assignment {assignment.mapping} (total JSD {assignment.cost:.4f}), "
            f"{len(pairs)} pairs, final cross-entropy {curve[-1]:.3f} nats -> {out / ALIGN_CLASSIFY}")


def cmd_convert(args, cfg: RunConfig, out: Path) -> str:
    bundle = _bundle(args, out)
    src = Path(args.input)
    if src.suffix.lower() == ".csv":
        x = load_series_csv(src, args.column)[0]
        img = series_to_image(x, bundle)
        dest = out / (src.stem + (".pgm" if img.channels == 1 else ".ppm"))
        save_image(img, dest)
        mean, std = instance_normalize(x).norm_stats
        return f"convert: series {src.name} ({len(x)} points, mean {mean:.4g}, std {std:.4g}) -> {dest}"
    img = load_image(src)
    stats = tuple(float(v) for v in args.stats.split(",")) if args.stats else None
    if stats is not None and len(stats) != 2:
        raise UsageError("--stats takes MEAN,STD")
    x = image_to_series(img, bundle, stats)
    dest = out / (src.stem + ".csv")
    save_series_csv(dest, [x], ["value"])
    return f"convert: image {src.name} -> {len(x)} values -> {dest}"


def cmd_forecast(args, cfg: RunConfig, out: Path) -> str:
    bundle = _bundle(args, out)
    fc = ForecastConfig(cfg.context_length, cfg.horizon, cfg.w_obs, cfg.w_out)
    if args.input:
        x = load_series_csv(args.input, args.column)[0]
        dataset = Path(args.input).stem
    else:
        x = periodic_series(fc.context_length + fc.horizon, 16, amplitude=2.0, offset=1.0) \
            if args.periodic else series_corpus(1, cfg.seed + 2000, length=fc.context_length + fc.horizon)[0][0]
        dataset = "synthetic-periodic" if args.periodic else "synthetic"
    if len(x) < fc.context_length:
        raise UsageError(f"input has {len(x)} points, need at least {fc.context_length}")
    obs = TimeSeries(x.values[:fc.context_length])
    truth = x.values[fc.context_length:fc.context_length + fc.horizon]
    if args.outpainter == "oracle":
        if truth.size < fc.horizon:
            raise UsageError("the oracle outpainter needs the true future in the input")
        painter = OracleOutpainter(TimeSeries(truth), bundle, instance_normalize(obs).norm_stats)
    else:
        painter = TileOutpainter(args.period)
    pred = forecast(obs, fc, bundle, painter)
    obs_img = series_to_image(obs, bundle)
    save_image(obs_img, out / "forecast_observation.pgm")
    save_image(painter.outpaint(obs_img, fc.w_out), out / "forecast_outpainted.pgm")
    full = np.concatenate([truth, np.full(fc.horizon - truth.size, np.nan)])
    save_rows_csv(out / "forecast_series.csv", ["t", "observed", "truth", "prediction"],
                  [(t, float(v), "", "") for t, v in enumerate(obs.values)]
                  + [(fc.context_length + i, "", "" if np.isnan(full[i]) else float(full[i]), float(p))
                     for i, p in enumerate(pred.values)])
    if truth.size == fc.horizon:
        mse, mae = eval_forecast(pred, truth)
        save_rows_csv(out / "forecast.csv", ["dataset", "horizon", "mse", "mae"],
                      [(dataset, fc.horizon, mse, mae)])
        return f"forecast: {dataset} horizon {fc.horizon} with {args.outpainter} outpainter, mse {mse:.4f} mae {mae:.4f}"
    return f"forecast: {dataset} horizon {fc.horizon} with {args.outpainter} outpainter (no truth to score)"


def cmd_classify(args, cfg: RunConfig, out: Path) -> str:
    bundle = _bundle(args, out)
    model_path = out / ALIGN_CLASSIFY
    if not model_path.exists():
        raise MissingCheckpoint(f"no alignment model at {model_path}; run `tvbridge align-classify` first")
    model = load_checkpoint(model_path)
    with open(out / REFERENCES / "labels.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    refs: dict[int, list[Image]] = {}
    for row in rows:
        refs.setdefault(int(row["label"]), []).append(load_image(out / REFERENCES / row["file"]))
    clf = NearestCentroidClassifier(refs)
    if args.input:
        series = load_series_csv(args.input)
        labels = None
    else:
        series, labels = series_corpus(args.count, cfg.seed + 900, bundle.config.series_length)
    pred = [classify_series(x, model, bundle, clf) for x in series]
    if labels is None:
        save_rows_csv(out / "predictions.csv", ["series", "predicted"], enumerate(pred))
        return f"classify: {len(pred)} series -> {out / 'predictions.csv'}"
    save_rows_csv(out / "predictions.csv", ["series", "predicted", "label"],
                  ((i, p, int(c)) for i, (p, c) in enumerate(zip(pred, labels))))
    acc = float(np.mean(np.array(pred) == labels))
    return f"classify: {len(pred)} synthetic series, accuracy {acc:.3f} -> {out / 'predictions.csv'}"


def cmd_stylize(args, cfg: RunConfig, out: Path) -> str:
    bundle = _bundle(args, out)
    bc = bundle.config
    img = load_image(args.image) if args.image else image_corpus(1, cfg.seed + 3, bc.image_side, bc.channels)[0][0]
    x = load_series_csv(args.series, args.column)[0] if args.series else \
        series_corpus(1, cfg.seed + 4, bc.series_length)[0][0]
    styled = stylize(img, x, bundle)
    dest = out / ("stylized.pgm" if styled.channels == 1 else "stylized.ppm")
    save_image(styled, dest)
    save_image(img, out / ("stylize_source.pgm" if img.channels == 1 else "stylize_source.ppm"))
    return f"stylize: fused a {len(x)}-point series into a {img.height}x{img.width} image -> {dest}"


def cmd_report(args, cfg: RunConfig, out: Path) -> str:
    from .report import render_report
    made = render_report(out)
    if not made:
        raise MissingCheckpoint(f"nothing to report in {out}; run warmup or forecast first")
    return f"report: {len(made)} figures ({', '.join(p.name for p in made)}) -> {out}"


def cmd_selftest(args, cfg: RunConfig, out: Path) -> str:
    results = acceptance.run_all(acceptance.Context(seed=cfg.seed), emit=print)
    failed = [r.number for r in results if not r.passed]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["criterion", "title", "passed", "detail"])
    w.writerows((r.number, r.title, r.passed, r.detail) for r in results)
    atomic_write(out / "selftest.csv", buf.getvalue().encode())
    if failed:
        raise SelftestFailed(f"selftest: {len(failed)} of {len(results)} criteria failed: {failed}")
    return f"selftest: all {len(results)} criteria passed"


class SelftestFailed(Exception):
    pass


COMMANDS = {
    "synth-data": cmd_synth_data,
    "warmup": cmd_warmup,
    "align-forecast": cmd_align_forecast,
    "align-classify": cmd_align_classify,
    "convert": cmd_convert,
    "forecast": cmd_forecast,
    "classify": cmd_classify,
    "stylize": cmd_stylize,
    "report": cmd_report,
    "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value run configuration file")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", default="run", help="run directory (default: run)")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging to stderr")

    parser = argparse.ArgumentParser(prog="tvbridge", description="Temporal-visual conversion toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth-data", parents=[common], help="write the synthetic corpora")
    p.add_argument("--count", type=int, default=256)

    p = sub.add_parser("warmup", parents=[common], help="train autoencoders and codebook")
    p.add_argument("--series", help="CSV of series (columns), cut into bundle-length windows")
    p.add_argument("--images", help="folder of PGM/PPM images")

    p = sub.add_parser("align-forecast", parents=[common], help="train sliding-window alignment models")
    p.add_argument("--series", help="CSV whose first column is the long series")
    p.add_argument("--image", help="wide PGM/PPM paired with the series")
    p.add_argument("--stride", type=int)
    p.add_argument("--steps", type=int, default=3000)
    p.add_argument("--bundle")

    p = sub.add_parser("align-classify", parents=[common], help="class pairing and alignment training")
    p.add_argument("--count", type=int, default=300, help="samples per modality in the benchmark")
    p.add_argument("--steps", type=int, default=3000)
    p.add_argument("--bundle")

    p = sub.add_parser("convert", parents=[common], help="series CSV -> image, or image -> series CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--column", default=None, help="CSV column (index or header name)")
    p.add_argument("--stats", help="MEAN,STD to rescale a decoded series")
    p.add_argument("--bundle")

    p = sub.add_parser("forecast", parents=[common], help="outpainting forecast")
    p.add_argument("--input", help="CSV holding the context (and optionally the true future)")
    p.add_argument("--column", default=None)
    p.add_argument("--outpainter", choices=("tile", "oracle"), default="tile")
    p.add_argument("--period", type=int, help="tile period in image columns (default: estimated; "
                   "the image width repeats the whole observation)")
    p.add_argument("--periodic", action="store_true", help="use an exact-period synthetic input")
    p.add_argument("--bundle")

    p = sub.add_parser("classify", parents=[common], help="classify series through the aligned images")
    p.add_argument("--input", help="CSV with one series per column")
    p.add_argument("--count", type=int, default=150)
    p.add_argument("--bundle")

    p = sub.add_parser("stylize", parents=[common], help="fuse a series into an image")
    p.add_argument("--image")
    p.add_argument("--series")
    p.add_argument("--column", default=None)
    p.add_argument("--bundle")

    sub.add_parser("report", parents=[common], help="render figures from the run directory")
    sub.add_parser("selftest", parents=[common], help="run acceptance criteria 1-11")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse has already printed the message
        return int(exc.code or 0) and 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        cfg = _config(args)
        out.mkdir(parents=True, exist_ok=True)
        summary = COMMANDS[args.command](args, cfg, out)
    except (UsageError, ConfigError) as exc:
        print(f"tvbridge {args.command}: usage error: {exc}", file=sys.stderr)
        return 2
    except SelftestFailed as exc:
        print(str(exc))
        return 1
    except (TVBridgeError, OSError, ValueError) as exc:
        print(f"tvbridge {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(summary)
    return 0
