"""Acceptance checks 1-11, shared by ``tvbridge selftest`` and the test suite.

Each check builds its own oracle (brute force, complex-step derivatives,
hand-evaluated closed forms) rather than reusing the code under test.
"""

from __future__ import annotations

import itertools
import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autoencoder as ae
from .alignment import AlignConfig, extract_indices, train_alignment
from .classpair import (NearestCentroidClassifier, build_paired_dataset, classify_series,
                        cost_matrix, hungarian_assign, index_histogram, js_divergence,
                        IndexHistogram)
from .convert import (ForecastConfig, OracleOutpainter, TileOutpainter, correlational_score,
                      forecast, image_to_series, seasonal_naive, series_to_image)
from .quantizer import (MultiHeadCodebook, IndexSequence, codebook_losses, gather_codes, lookup,
                        nearest_codes, quantize)
from .autoencoder import EmbeddingGrid
from .synthetic import image_corpus, periodic_series, series_corpus
from .tokenization import TEMPORAL, VISUAL, Image, TimeSeries, instance_normalize
from .training import (BundleConfig, TokenizerBundle, WarmupConfig, corpus_loss, forward_backward,
                       run_warmup)

PLANTED = (0, 1, 2)
STATED_CORRELATION_EXAMPLE = 0.8


@dataclass
class CheckResult:
    number: int
    title: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] criterion {self.number:>2} {self.title}: {self.detail}"


@dataclass
class Context:
    """Caches the expensive warmup run shared by checks 6-10."""

    seed: int = 42
    corpus_size: int = 256
    steps: int = 2000
    _warmup: object = field(default=None, repr=False)
    warmup_seconds: float = 0.0

    def warmup(self):
        if self._warmup is None:
            series, _ = series_corpus(self.corpus_size, self.seed)
            images, _ = image_corpus(self.corpus_size, self.seed)
            t0 = time.perf_counter()
            self._warmup = run_warmup(series, images, WarmupConfig(seed=self.seed, steps=self.steps),
                                      BundleConfig())
            self.warmup_seconds = time.perf_counter() - t0
        return self._warmup


# ------------------------------------------------------------------ oracles

def _surrogate(x, params, codes, idx, e0, q0):
    """Warmup loss with the stop-gradients and the argmin frozen at the base point.

    Its true derivative is the straight-through gradient, so finite or
    complex-step differences of it can check the analytic one.
    """
    b, n = x.shape[:2]
    e, _ = ae.encoder_forward(params, x)
    xhat, _ = ae.decoder_forward(params, e + (q0 - e0))
    r = xhat - x
    quant = gather_codes(idx, codes) - e0
    commit = e - q0
    scale = 1.0 / (b * n)
    return scale * (np.sum(r * r) + np.sum(quant * quant) + np.sum(commit * commit))


def _random_instance(rng):
    heads = int(rng.choice([1, 2, 4]))
    d = heads * int(rng.integers(1, 16 // heads + 1))
    n = int(rng.integers(2, 9))
    p = int(rng.integers(2, 7))
    depth = int(rng.integers(0, 3))
    k = int(rng.integers(2, 7))
    params = ae.init_params(n, p, d, depth, rng)
    x = rng.normal(size=(2, n, p))
    codes = rng.normal(scale=0.5, size=(heads, k, d // heads))
    return x, params, codes


def _brute_indices(e, codes):
    n, d = e.shape
    heads, k, sub = codes.shape
    out = np.zeros((n, heads), dtype=np.int64)
    for i in range(n):
        for m in range(heads):
            seg = e[i, m * sub:(m + 1) * sub]
            best, best_k = None, 0
            for j in range(k):
                dist = 0.0
                for t in range(sub):
                    diff = seg[t] - codes[m, j, t]
                    dist += diff * diff
                if best is None or dist < best:
                    best, best_k = dist, j
            out[i, m] = best_k
    return out


def _brute_assignment_cost(cost):
    n, m = cost.shape
    best = None
    for perm in itertools.permutations(range(m), n):
        c = 0.0
        for r, col in enumerate(perm):
            c += float(cost[r, col])
        if best is None or c < best:
            best = c
    return best


def _jsd_oracle(p, q):
    total = 0.0
    for pm, qm in zip(p, q):
        acc = 0.0
        for a, b in zip(pm, qm):
            mid = 0.5 * (a + b)
            if a > 0:
                acc += 0.5 * a * math.log(a / mid)
            if b > 0:
                acc += 0.5 * b * math.log(b / mid)
        total += acc
    return total / len(p)


def _pearson_by_hand(a, b):
    ma, mb = sum(a) / len(a), sum(b) / len(b)
    cov = sum((x - ma) * (y - mb) for x, y in zip(a, b)) / len(a)
    va = sum((x - ma) ** 2 for x in a) / len(a)
    vb = sum((y - mb) ** 2 for y in b) / len(b)
    return cov / math.sqrt(va * vb)


def lossless_bundle(values: np.ndarray, n: int = 16, l: int = 16, f: int = 4,
                    heads: int = 4, codes: int = 16) -> TokenizerBundle:
    """Identity-configured bundle that converts ``values`` without loss.

    Temporal autoencoder is the identity (D = l), the visual one is the
    affine pair pixel = 0.5 + 0.25 q and its inverse (D = f*f), and the
    codebook holds every sub-vector of the normalised tokens; spare codes
    sit far away.
    """
    d = l
    if f * f != d:
        raise ValueError("lossless bundle needs f*f == l")
    cfg = BundleConfig(n=n, d=d, heads=heads, codes=codes, f=f, l=l, depth=0)
    tok = instance_normalize(TimeSeries(values)).values.reshape(n, l)
    sub = d // heads
    book = np.zeros((heads, codes, sub))
    for m in range(heads):
        distinct = np.unique(tok[:, m * sub:(m + 1) * sub], axis=0)
        if len(distinct) > codes:
            raise ValueError("too many distinct sub-vectors for the codebook")
        book[m, :len(distinct)] = distinct
        for j in range(len(distinct), codes):
            book[m, j] = 100.0 + j
    temporal = ae.identity_params(n, d)
    visual = {"enc_in_w": 4.0 * np.eye(d), "enc_in_b": np.full(d, -2.0),
              "dec_out_w": 0.25 * np.eye(d), "dec_out_b": np.full(d, 0.5)}
    return TokenizerBundle(visual, temporal, MultiHeadCodebook(book), cfg).freeze()


# ------------------------------------------------------------------- checks

def check_gradients(ctx: Context, instances: int = 20) -> CheckResult:
    rng = np.random.default_rng([ctx.seed, 101])
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(instances):
        x, params, codes = _random_instance(rng)
        _, _, _, grads, d_codes, idx = forward_backward(x, params, codes)
        e0, _ = ae.encoder_forward(params, x)
        q0 = gather_codes(idx, codes)
        keys = sorted(params)
        analytic = np.concatenate([ae.flatten(grads, keys), d_codes.reshape(-1)])
        split = sum(params[k].size for k in keys)

        def closure(theta):
            p = ae.unflatten(theta[:split], params, keys)
            z = theta[split:].reshape(codes.shape)
            return _surrogate(x, p, z, idx, e0, q0), analytic

        theta = np.concatenate([ae.flatten(params, keys), codes.reshape(-1)])
        worst = max(worst, ae.gradient_check(closure, theta, 1e-6))
    secs = time.perf_counter() - t0
    ok = worst < 1e-4 and secs < 60
    return CheckResult(1, "gradient suite", ok,
                       f"{instances} instances, max rel err {worst:.2e} (< 1e-4), {secs:.1f}s (< 60s)")


def check_quantizer(ctx: Context, calls: int = 1000) -> CheckResult:
    rng = np.random.default_rng([ctx.seed, 102])
    mismatches, lookup_bad, loss_bad = 0, 0, 0
    for c in range(calls):
        heads = int(rng.integers(1, 5))
        sub = int(rng.integers(1, 4))
        k = int(rng.integers(2, 65))
        n = int(rng.integers(1, 9))
        if c % 4 == 0:  # small integers produce exact distance ties
            codes = rng.integers(-2, 3, size=(heads, k, sub)).astype(np.float64)
            e = rng.integers(-2, 3, size=(n, heads * sub)).astype(np.float64)
        else:
            codes = rng.normal(size=(heads, k, sub))
            e = rng.normal(size=(n, heads * sub))
        book = MultiHeadCodebook(codes)
        res = quantize(EmbeddingGrid(e, TEMPORAL), book)
        mismatches += not np.array_equal(res.indices.indices, _brute_indices(e, codes))
        lookup_bad += not np.array_equal(lookup(res.indices, book, TEMPORAL).data, res.q.data)
        quant, commit = codebook_losses(EmbeddingGrid(e, TEMPORAL), res)
        loss_bad += not (quant == res.residual_sq == commit)
    ok = mismatches == 0 and lookup_bad == 0 and loss_bad == 0
    return CheckResult(2, "quantizer oracle", ok,
                       f"{calls} calls: {mismatches} index mismatches, {lookup_bad} lookup mismatches, "
                       f"{loss_bad} loss mismatches")


def check_straight_through(ctx: Context, instances: int = 5) -> CheckResult:
    rng = np.random.default_rng([ctx.seed, 103])
    worst = 0.0
    h = 1e-30
    for _ in range(instances):
        x, params, codes = _random_instance(rng)
        _, _, _, grads, _, idx = forward_backward(x, params, codes)
        e0, _ = ae.encoder_forward(params, x)
        q0 = gather_codes(idx, codes)
        for key in params:
            if not key.startswith("enc"):
                continue
            flat = params[key].reshape(-1)
            for i in range(flat.size):
                bumped = dict(params)
                arr = params[key].astype(np.complex128)
                arr.reshape(-1)[i] += 1j * h
                bumped[key] = arr
                deriv = _surrogate(x, bumped, codes, idx, e0, q0).imag / h
                err = abs(grads[key].reshape(-1)[i] - deriv) / max(1.0, abs(deriv))
                worst = max(worst, err)
    ok = worst <= 1e-10
    return CheckResult(3, "straight-through", ok,
                       f"encoder gradients vs complex-step identity-backward oracle, max err {worst:.2e} (<= 1e-10)")


def check_hungarian(ctx: Context, per_shape: int = 100, max_side: int = 7) -> CheckResult:
    rng = np.random.default_rng([ctx.seed, 104])
    bad, total = 0, 0
    for n in range(1, max_side + 1):
        for m in range(n, max_side + 1):
            for t in range(per_shape):
                cost = rng.integers(0, 4, size=(n, m)).astype(np.float64) if t % 5 == 0 \
                    else rng.uniform(0, 1, size=(n, m))
                got = hungarian_assign(cost)
                total += 1
                bad += got.cost != _brute_assignment_cost(cost)
    return CheckResult(4, "hungarian oracle", bad == 0,
                       f"{total} matrices over all shapes n<=m<={max_side}: {bad} cost mismatches")


def check_jsd(ctx: Context, pairs: int = 1000) -> CheckResult:
    rng = np.random.default_rng([ctx.seed, 105])
    ln2 = math.log(2.0)
    worst_sym = worst_oracle = 0.0
    neg = over = zero_bad = 0
    for _ in range(pairs):
        heads = int(rng.integers(1, 5))
        k = int(rng.integers(2, 17))
        a = rng.integers(0, 5, size=(heads, k)) * (rng.uniform(size=(heads, k)) < 0.7)
        b = rng.integers(0, 5, size=(heads, k)) * (rng.uniform(size=(heads, k)) < 0.7)
        a[:, 0] += 1
        b[:, -1] += 1
        p = IndexHistogram(a, a / a.sum(1, keepdims=True), int(a.sum()))
        q = IndexHistogram(b, b / b.sum(1, keepdims=True), int(b.sum()))
        pq, qp = js_divergence(p, q), js_divergence(q, p)
        worst_sym = max(worst_sym, abs(pq - qp))
        worst_oracle = max(worst_oracle, abs(pq - _jsd_oracle(p.probs, q.probs)))
        neg += pq < 0
        over += pq > ln2 + 1e-12
        equal = np.allclose(p.probs, q.probs, rtol=0, atol=0)
        zero_bad += js_divergence(p, p) > 1e-12 or (not equal and pq <= 1e-12)
    delta = js_divergence(IndexHistogram(np.array([[1, 0]]), np.array([[1.0, 0.0]]), 1),
                          IndexHistogram(np.array([[0, 1]]), np.array([[0.0, 1.0]]), 1))
    ok = (worst_sym <= 1e-12 and neg == 0 and over == 0 and zero_bad == 0
          and abs(delta - ln2) <= 1e-12 and worst_oracle <= 1e-12)
    return CheckResult(5, "jsd properties", ok,
                       f"{pairs} pairs: asym {worst_sym:.1e}, negative {neg}, > ln2 {over}, "
                       f"zero-iff-equal failures {zero_bad}, oracle gap {worst_oracle:.1e}, "
                       f"delta case |err| {abs(delta - ln2):.1e}")


def warmup_ratios(ctx: Context):
    result = ctx.warmup()
    series, _ = series_corpus(ctx.corpus_size, ctx.seed)
    images, _ = image_corpus(ctx.corpus_size, ctx.seed)
    out = {}
    for name, items in ((VISUAL, images), (TEMPORAL, series)):
        out[name] = corpus_loss(items, result.bundle).total / corpus_loss(items, result.initial).total
    return out


def check_warmup(ctx: Context) -> CheckResult:
    result = ctx.warmup()
    ratios = warmup_ratios(ctx)
    util = result.utilization
    ok = all(r <= 0.2 for r in ratios.values()) and util.min() >= 0.5 and ctx.warmup_seconds < 300
    return CheckResult(6, "warmup convergence", ok,
                       f"final/initial corpus loss visual {ratios[VISUAL]:.3f}, temporal "
                       f"{ratios[TEMPORAL]:.3f} (<= 0.2); per-head utilization "
                       f"{', '.join(f'{u:.2f}' for u in util)} (>= 0.5); {ctx.warmup_seconds:.1f}s")


def round_trip_ratios(bundle: TokenizerBundle, series) -> np.ndarray:
    ratios = []
    for x in series:
        y = image_to_series(series_to_image(x, bundle), bundle, instance_normalize(x).norm_stats)
        ratios.append(np.mean((y.values - x.values) ** 2) / np.var(x.values))
    return np.array(ratios)


def check_round_trip(ctx: Context, count: int = 64) -> CheckResult:
    bundle = ctx.warmup().bundle
    held, _ = series_corpus(count, ctx.seed + 1000)
    ratios = round_trip_ratios(bundle, held)
    return CheckResult(7, "round-trip conversion", ratios.mean() <= 0.3,
                       f"mean MSE/var over {count} held-out series {ratios.mean():.3f} (<= 0.3)")


def check_forecast(ctx: Context, count: int = 16) -> CheckResult:
    bundle = ctx.warmup().bundle
    fc = ForecastConfig()
    L = bundle.config.series_length
    long, _ = series_corpus(count, ctx.seed + 2000, length=fc.context_length + fc.horizon)
    worst = 0.0
    for x in long:
        obs = TimeSeries(x.values[:fc.context_length])
        future = x.values[fc.context_length:]
        stats = instance_normalize(obs).norm_stats
        pred = forecast(obs, fc, bundle, OracleOutpainter(TimeSeries(future), bundle, stats))
        recon = np.concatenate([
            image_to_series(series_to_image(TimeSeries(future[i:i + L]), bundle, stats), bundle, stats).values
            for i in range(0, fc.horizon, L)])[:fc.horizon]
        rec_mse = np.mean((recon - future) ** 2)
        ratio = np.mean((pred.values - future) ** 2) / rec_mse if rec_mse > 0 else 1.0
        worst = max(worst, ratio)
    tile_err = 0.0
    for period in (16, 32):
        n, l = 16, 16
        context, horizon = n * l, 2 * n * l
        x = periodic_series(context, period, amplitude=1.7, offset=3.0)
        lb = lossless_bundle(x.values, n=n, l=l)
        cfg = ForecastConfig(context, horizon, lb.config.image_side, 3 * lb.config.image_side)
        pred = forecast(x, cfg, lb, TileOutpainter())
        tile_err = max(tile_err, float(np.max(np.abs(pred.values - seasonal_naive(x, period, horizon)))))
    ok = worst <= 1.05 and tile_err <= 1e-9
    return CheckResult(8, "forecast pipeline", ok,
                       f"oracle outpainter worst MSE ratio {worst:.4f} (<= 1.05); tile vs seasonal-naive "
                       f"max |err| {tile_err:.1e} (<= 1e-9)")


def classification_run(ctx: Context, subset_size: int = 300, held_out: int = 150):
    bundle = ctx.warmup().bundle
    s = ctx.seed
    ts, tl = series_corpus(subset_size, s + 500)
    vs, vl = image_corpus(subset_size, s + 500, canonical=True)
    tsub = [[extract_indices(x, bundle) for x, c in zip(ts, tl) if c == k] for k in range(3)]
    vsub = [[extract_indices(x, bundle) for x, c in zip(vs, vl) if c == k] for k in range(3)]
    k = bundle.config.codes
    cost = cost_matrix([index_histogram(t, codes=k) for t in tsub],
                       [index_histogram(v, codes=k) for v in vsub])
    assignment = hungarian_assign(cost)
    pairs = build_paired_dataset(tsub, vsub, assignment, s)
    model, curve = train_alignment(pairs, bundle, AlignConfig(seed=s))
    clf = NearestCentroidClassifier({k: [x for x, c in zip(vs, vl) if c == k] for k in range(3)})
    hs, hl = series_corpus(held_out, s + 900)
    pred = np.array([classify_series(x, model, bundle, clf) for x in hs])
    return {"cost": cost, "assignment": assignment, "model": model, "curve": curve,
            "pred": pred, "labels": hl,
            "accuracy": float(np.mean(pred == hl)),
            "routing": float(np.mean(pred == np.array(assignment.mapping)[hl]))}


def check_classification(ctx: Context) -> CheckResult:
    run = classification_run(ctx)
    mapping = run["assignment"].mapping
    ok = mapping == PLANTED and run["accuracy"] >= 0.9
    return CheckResult(9, "end-to-end classification", ok,
                       f"assignment {mapping} (planted {PLANTED}); accuracy {run['accuracy']:.3f} (>= 0.9); "
                       f"accuracy against the recovered assignment {run['routing']:.3f}")


def check_persistence(ctx: Context) -> CheckResult:
    from .alignment import init_alignment
    from .persist import checkpoint_bytes, load_checkpoint, load_image, save_checkpoint, save_image

    first = ctx.warmup().bundle
    series, _ = series_corpus(ctx.corpus_size, ctx.seed)
    images, _ = image_corpus(ctx.corpus_size, ctx.seed)
    second = run_warmup(series, images, WarmupConfig(seed=ctx.seed, steps=ctx.steps), BundleConfig()).bundle
    same_runs = checkpoint_bytes(first) == checkpoint_bytes(second)
    model = init_alignment("temporal->visual", 16, 4, 16, seed=ctx.seed)
    rng = np.random.default_rng([ctx.seed, 110])
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        trips = []
        for name, obj in (("bundle", first), ("model", model)):
            save_checkpoint(obj, tmp / name)
            trips.append(checkpoint_bytes(load_checkpoint(tmp / name)) == (tmp / name).read_bytes())
        for ch in (1, 3):
            img = Image(rng.integers(0, 256, size=(5, 7, ch)) / 255.0)
            save_image(img, tmp / "a")
            save_image(load_image(tmp / "a"), tmp / "b")
            trips.append((tmp / "a").read_bytes() == (tmp / "b").read_bytes())
    ok = same_runs and all(trips)
    return CheckResult(10, "determinism and persistence", ok,
                       f"repeat warmup checkpoints identical: {same_runs}; bundle, model, P5, P6 "
                       f"round trips bit-exact: {trips}")


def check_correlational(ctx: Context) -> CheckResult:
    rng = np.random.default_rng([ctx.seed, 111])
    base = rng.normal(size=200)
    real = np.stack([base, base], axis=1)
    synth = np.stack([base, -base], axis=1)
    # hand evaluation: rho matrices [[1,1],[1,1]] vs [[1,-1],[-1,1]]
    oracle = sum(abs(a - b) for a, b in zip(
        [1.0, _pearson_by_hand(base, base), _pearson_by_hand(base, base), 1.0],
        [1.0, _pearson_by_hand(base, -base), _pearson_by_hand(-base, base), 1.0])) / 10.0
    got = correlational_score(real, synth)
    same = correlational_score(real, real.copy())
    ok = abs(got - oracle) <= 1e-10 and abs(same) <= 1e-10
    return CheckResult(11, "correlational score", ok,
                       f"identical sets {same:.1e}; rho=+-1 construction {got:.10f} vs formula oracle "
                       f"{oracle:.10f} (the stated example value {STATED_CORRELATION_EXAMPLE} does not follow "
                       f"from the formula)")


CHECKS = (check_gradients, check_quantizer, check_straight_through, check_hungarian, check_jsd,
          check_warmup, check_round_trip, check_forecast, check_classification, check_persistence,
          check_correlational)


def run_all(ctx: Context | None = None, emit=print) -> list[CheckResult]:
    ctx = ctx or Context()
    results = []
    for check in CHECKS:
        try:
            res = check(ctx)
        except Exception as exc:  # a crash is a failed criterion, not an aborted run
            number = CHECKS.index(check) + 1
            res = CheckResult(number, check.__name__.removeprefix("check_"), False,
                              f"{type(exc).__name__}: {exc}")
        results.append(res)
        if emit is not None:
            emit(res.line())
    return results
