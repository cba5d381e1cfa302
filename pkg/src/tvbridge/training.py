"""Warmup phase: joint reconstruction training of both autoencoders and the
shared codebook, followed by freezing.

Per token the objective is

    |x - x_hat|^2 + |sg[e] - q|^2 + |sg[q] - e|^2

with squared norms summed over the token's features; a batch reports the
mean over its samples and token positions. The decoder consumes ``q`` and
its input gradient is copied to ``e`` unchanged (straight-through).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import autoencoder as ae
from .errors import EmptyCorpus, FrozenBundle, MixedModalityBatch, NonFiniteLoss, ShapeMismatch
from .quantizer import (MultiHeadCodebook, codebook_loss_grads, gather_codes, init_codebooks,
                        nearest_codes, utilization)
from .tokenization import (TEMPORAL, VISUAL, Image, TimeSeries, TokenSequence,
                           instance_normalize, patchify_image, segment_series)


@dataclass(frozen=True)
class BundleConfig:
    n: int = 16
    d: int = 16
    heads: int = 4
    codes: int = 16
    f: int = 4
    l: int = 4
    depth: int = 2
    channels: int = 1
    mode: str = "strict"

    def __post_init__(self):
        side = int(round(np.sqrt(self.n)))
        if side * side != self.n:
            raise ShapeMismatch(f"N={self.n} must be a perfect square for square images")
        if self.d % self.heads:
            raise ShapeMismatch(f"D={self.d} is not divisible by M={self.heads}")
        if self.codes < 2:
            raise ShapeMismatch("K must be at least 2")

    @property
    def image_side(self) -> int:
        return self.f * int(round(np.sqrt(self.n)))

    @property
    def series_length(self) -> int:
        return self.n * self.l

    def features(self, modality: str) -> int:
        return self.f * self.f * self.channels if modality == VISUAL else self.l


@dataclass
class TokenizerBundle:
    visual: ae.Params
    temporal: ae.Params
    codebook: MultiHeadCodebook
    config: BundleConfig
    frozen: bool = False

    def params(self, modality: str) -> ae.Params:
        return self.visual if modality == VISUAL else self.temporal

    def freeze(self) -> "TokenizerBundle":
        for arr in self.arrays().values():
            arr.flags.writeable = False
        self.frozen = True
        return self

    def arrays(self) -> dict[str, np.ndarray]:
        out = {f"visual.{k}": v for k, v in self.visual.items()}
        out.update({f"temporal.{k}": v for k, v in self.temporal.items()})
        out["codebook"] = self.codebook.codes
        return out

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, arr in self.arrays().items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()

    def copy(self) -> "TokenizerBundle":
        return TokenizerBundle({k: v.copy() for k, v in self.visual.items()},
                               {k: v.copy() for k, v in self.temporal.items()},
                               MultiHeadCodebook(self.codebook.codes.copy()),
                               self.config, False)


def new_bundle(config: BundleConfig, seed: int) -> TokenizerBundle:
    """Randomly initialised bundle with a placeholder codebook.

    :func:`run_warmup` replaces the codebook by k-means++ seeding over the
    initial embeddings.
    """
    rng = np.random.default_rng([seed, 0])
    vis = ae.init_params(config.n, config.features(VISUAL), config.d, config.depth, rng)
    tmp = ae.init_params(config.n, config.features(TEMPORAL), config.d, config.depth, rng)
    sub = config.d // config.heads
    codes = rng.uniform(-1.0, 1.0, size=(config.heads, config.codes, sub))
    return TokenizerBundle(vis, tmp, MultiHeadCodebook(codes), config)


def tokenize(x: TimeSeries | Image, config: BundleConfig,
             stats: tuple[float, float] | None = None) -> TokenSequence:
    """Series are instance-normalised before segmentation; images are patchified."""
    if isinstance(x, Image):
        return patchify_image(x, config.f)
    return segment_series(instance_normalize(x, stats), config.l, config.mode)


@dataclass
class LossBreakdown:
    recon: float
    quant: float
    commit: float
    total: float
    modality: str


@dataclass
class WarmupConfig:
    learning_rate: float = 1e-2
    steps: int = 2000
    batch_size: int = 16
    seed: int = 42
    momentum: float = 0.9

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning rate must be non-negative")
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be at least 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")


def _batch_array(batch) -> tuple[np.ndarray, str]:
    if isinstance(batch, np.ndarray):
        raise TypeError("pass TokenSequences so the modality is known")
    modalities = {t.origin for t in batch}
    if len(modalities) != 1:
        raise MixedModalityBatch(f"batch mixes modalities {sorted(modalities)}")
    return np.stack([t.tokens for t in batch]), modalities.pop()


def forward_backward(x: np.ndarray, params: ae.Params, codes: np.ndarray):
    """Loss terms and routed gradients for a unimodal batch ``x`` of ``(B, N, P)``.

    Returns ``(recon, quant, commit, grads, d_codes, indices)`` where the
    loss terms are means over samples and tokens of per-token squared norms.
    """
    b = x.shape[0] * x.shape[1]
    e, enc_cache = ae.encoder_forward(params, x)
    idx = nearest_codes(e, codes)
    q = gather_codes(idx, codes)
    x_hat, dec_cache = ae.decoder_forward(params, q)
    resid = x_hat - x
    recon = float(np.sum(resid * resid)) / b
    vq = float(np.sum((e - q) ** 2)) / b

    dec_grads, dq = ae.decoder_backward(params, 2.0 * resid / b, dec_cache)
    d_codes, d_commit = codebook_loss_grads(e, idx, codes, scale=1.0 / b)
    # straight-through: dL/de = dL/dq, plus the commitment pull
    enc_grads, _ = ae.encoder_backward(params, dq + d_commit, enc_cache)
    grads = {**enc_grads, **dec_grads}
    return recon, vq, vq, grads, d_codes, idx


def compute_losses(batch, bundle: TokenizerBundle):
    """Loss breakdown (recon, quant, commit, total) for a unimodal batch of token sequences.

    Returns ``(LossBreakdown, grads, d_codes, indices)``.
    """
    x, modality = _batch_array(batch)
    params = bundle.params(modality)
    _, p, _ = ae.dims_of(params)
    if x.shape[1] != bundle.config.n or x.shape[2] != p:
        raise ShapeMismatch(f"batch tokens {x.shape[1:]} do not match the {modality} autoencoder")
    recon, quant, commit, grads, d_codes, idx = forward_backward(x, params, bundle.codebook.codes)
    total = recon + quant + commit
    return LossBreakdown(recon, quant, commit, total, modality), grads, d_codes, idx


@dataclass
class WarmupState:
    bundle: TokenizerBundle
    velocity: dict = field(default_factory=dict)
    step: int = 0


def warmup_step(batch, state: WarmupState, config: WarmupConfig):
    """One optimiser update on the batch's autoencoder and the shared codebook.

    Returns ``(new_state, LossBreakdown, indices)``; ``state`` is not mutated.
    """
    if state.bundle.frozen:
        raise FrozenBundle("cannot train a frozen bundle")
    losses, grads, d_codes, idx = compute_losses(batch, state.bundle)
    if not np.isfinite(losses.total):
        raise NonFiniteLoss(f"loss diverged at step {state.step}")
    modality = losses.modality
    bundle = TokenizerBundle(dict(state.bundle.visual), dict(state.bundle.temporal),
                             state.bundle.codebook, state.bundle.config)
    velocity = dict(state.velocity)
    lr, mu = config.learning_rate, config.momentum

    def update(key, value, grad):
        if mu > 0.0:
            v = mu * velocity.get(key, 0.0) + grad
            velocity[key] = v
            return value - lr * v
        return value - lr * grad

    params = bundle.params(modality)
    for name, g in grads.items():
        params[name] = update(f"{modality}.{name}", params[name], g)
    bundle.codebook = MultiHeadCodebook(update("codebook", bundle.codebook.codes, d_codes))
    return WarmupState(bundle, velocity, state.step + 1), losses, idx


@dataclass
class WarmupResult:
    bundle: TokenizerBundle
    log: list[LossBreakdown]
    utilization: np.ndarray
    initial: TokenizerBundle


def _embed_all(tokens: np.ndarray, params: ae.Params) -> np.ndarray:
    e, _ = ae.encoder_forward(params, tokens)
    return e.reshape(-1, e.shape[-1])


def run_warmup(series: list[TimeSeries], images: list[Image], config: WarmupConfig,
               bundle_config: BundleConfig = BundleConfig(), util_window: int = 100,
               callback=None) -> WarmupResult:
    """Train both autoencoders and the codebook, then freeze.

    Even steps draw a visual batch and odd steps a temporal one; each
    modality walks through its own seeded permutations of the corpus.
    """
    if not series or not images:
        raise EmptyCorpus("both corpora must be non-empty")
    cfg = bundle_config
    series_tok = np.stack([tokenize(s, cfg).tokens for s in series])
    image_tok = np.stack([tokenize(im, cfg).tokens for im in images])
    bundle = new_bundle(cfg, config.seed)
    # Seeded from image embeddings only: standardised series embed several
    # times wider than bounded pixels, and a pooled seeding leaves most codes
    # in the temporal cloud where the visual decoder never learns them.
    sample = _embed_all(image_tok, bundle.visual)
    bundle.codebook = init_codebooks(sample, cfg.heads, cfg.codes, config.seed)
    initial = bundle.copy()

    rng = np.random.default_rng([config.seed, 7])
    corpora = {VISUAL: image_tok, TEMPORAL: series_tok}
    orders = {m: np.empty(0, dtype=np.int64) for m in corpora}
    geometry = {VISUAL: (cfg.image_side, cfg.image_side, cfg.f, cfg.channels),
                TEMPORAL: (cfg.series_length, cfg.l)}

    state = WarmupState(bundle)
    log, recent = [], []
    for step in range(config.steps):
        modality = VISUAL if step % 2 == 0 else TEMPORAL
        pool = corpora[modality]
        bs = min(config.batch_size, len(pool))
        if orders[modality].size < bs:
            orders[modality] = np.concatenate([orders[modality], rng.permutation(len(pool))])
        pick, orders[modality] = orders[modality][:bs], orders[modality][bs:]
        batch = [TokenSequence(pool[i], modality, geometry[modality]) for i in pick]
        state, losses, idx = warmup_step(batch, state, config)
        log.append(losses)
        if step >= config.steps - util_window:
            recent.append(idx.reshape(-1, cfg.heads))
        if callback is not None:
            callback(step, losses)
    util = utilization(recent, state.bundle.codebook)
    return WarmupResult(state.bundle.freeze(), log, util, initial.freeze())


def corpus_loss(items, bundle: TokenizerBundle) -> LossBreakdown:
    """Loss of a whole unimodal corpus in one batch (no update)."""
    cfg = bundle.config
    batch = [tokenize(x, cfg) for x in items]
    return compute_losses(batch, bundle)[0]


def loss_curve_rows(log: list[LossBreakdown]):
    """Rows ``(step, modality, recon, quant, commit, total)`` for CSV export."""
    return [(i, r.modality, r.recon, r.quant, r.commit, r.total) for i, r in enumerate(log)]
