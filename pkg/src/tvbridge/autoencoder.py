"""Per-modality encoder/decoder stacks with hand-derived backward passes.

Encoder::

    H_0 = X W_in + b_in
    H_j = H_{j-1} + S_j tanh(H_{j-1} W_j + b_j)        j = 1..depth

Decoder mirrors it, ending in a per-token affine map back to ``P`` features.
``S_j`` is an ``N x N`` token-mixing matrix, the only place tokens interact.
All arrays are float64; batched inputs have shape ``(B, N, P)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NonFiniteLoss, ShapeMismatch
from .tokenization import MODALITIES, TokenSequence

Params = dict[str, np.ndarray]


@dataclass
class EmbeddingGrid:
    data: np.ndarray
    modality: str

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ShapeMismatch("embedding grid must be N x D")
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")

    @property
    def shape(self):
        return self.data.shape


def param_shapes(n: int, p: int, d: int, depth: int) -> dict[str, tuple]:
    shapes = {"enc_in_w": (p, d), "enc_in_b": (d,)}
    for j in range(depth):
        shapes[f"enc{j}_w"] = (d, d)
        shapes[f"enc{j}_b"] = (d,)
        shapes[f"enc{j}_mix"] = (n, n)
    for j in range(depth):
        shapes[f"dec{j}_w"] = (d, d)
        shapes[f"dec{j}_b"] = (d,)
        shapes[f"dec{j}_mix"] = (n, n)
    shapes["dec_out_w"] = (d, p)
    shapes["dec_out_b"] = (p,)
    return shapes


def init_params(n: int, p: int, d: int, depth: int, rng: np.random.Generator) -> Params:
    """Uniform in ``[-s, s]`` with ``s = 1/sqrt(fan_in)``; biases included."""
    params = {}
    for name, shape in param_shapes(n, p, d, depth).items():
        if name.endswith("_b"):
            fan = params[name[:-2] + "_w"].shape[0]
        elif name.endswith("_mix"):
            fan = n
        else:
            fan = shape[0]
        s = 1.0 / np.sqrt(fan)
        params[name] = rng.uniform(-s, s, size=shape)
    return params


def identity_params(n: int, d: int, depth: int = 0) -> Params:
    """Depth-``depth`` stack that maps tokens to themselves (requires P = D)."""
    params = {name: np.zeros(shape) for name, shape in param_shapes(n, d, d, depth).items()}
    params["enc_in_w"] = np.eye(d)
    params["dec_out_w"] = np.eye(d)
    return params


def depth_of(params: Params) -> int:
    return sum(1 for k in params if k.startswith("enc") and k.endswith("_mix"))


def dims_of(params: Params) -> tuple[int, int, int]:
    """Return ``(N, P, D)``; ``N`` is None for depth 0 stacks."""
    p, d = params["enc_in_w"].shape
    n = params["enc0_mix"].shape[0] if "enc0_mix" in params else None
    return n, p, d


def _block_forward(h, w, b, mix):
    z = np.tanh(h @ w + b)
    return h + mix @ z, z


def _block_backward(dout, h, z, w, mix):
    dz = mix.T @ dout
    du = dz * (1.0 - z * z)
    dmix = np.einsum("bnd,bmd->nm", dout, z)
    dw = np.einsum("bnd,bne->de", h, du)
    db = du.sum(axis=(0, 1))
    dh = dout + du @ w.T
    return dh, dw, db, dmix


def encoder_forward(params: Params, x: np.ndarray):
    """Return ``(e, cache)`` for a batch ``x`` of shape ``(B, N, P)``."""
    depth = depth_of(params)
    h = x @ params["enc_in_w"] + params["enc_in_b"]
    hs, zs = [h], []
    for j in range(depth):
        h, z = _block_forward(h, params[f"enc{j}_w"], params[f"enc{j}_b"], params[f"enc{j}_mix"])
        hs.append(h)
        zs.append(z)
    return h, (x, hs, zs)


def encoder_backward(params: Params, de: np.ndarray, cache) -> tuple[Params, np.ndarray]:
    x, hs, zs = cache
    grads = {}
    dh = de
    for j in reversed(range(len(zs))):
        dh, grads[f"enc{j}_w"], grads[f"enc{j}_b"], grads[f"enc{j}_mix"] = _block_backward(
            dh, hs[j], zs[j], params[f"enc{j}_w"], params[f"enc{j}_mix"])
    grads["enc_in_w"] = np.einsum("bnp,bnd->pd", x, dh)
    grads["enc_in_b"] = dh.sum(axis=(0, 1))
    dx = dh @ params["enc_in_w"].T
    return grads, dx


def decoder_forward(params: Params, q: np.ndarray):
    depth = depth_of(params)
    g = q
    gs, zs = [g], []
    for j in range(depth):
        g, z = _block_forward(g, params[f"dec{j}_w"], params[f"dec{j}_b"], params[f"dec{j}_mix"])
        gs.append(g)
        zs.append(z)
    out = g @ params["dec_out_w"] + params["dec_out_b"]
    return out, (gs, zs)


def decoder_backward(params: Params, dout: np.ndarray, cache) -> tuple[Params, np.ndarray]:
    gs, zs = cache
    grads = {
        "dec_out_w": np.einsum("bnd,bnp->dp", gs[-1], dout),
        "dec_out_b": dout.sum(axis=(0, 1)),
    }
    dg = dout @ params["dec_out_w"].T
    for j in reversed(range(len(zs))):
        dg, grads[f"dec{j}_w"], grads[f"dec{j}_b"], grads[f"dec{j}_mix"] = _block_backward(
            dg, gs[j], zs[j], params[f"dec{j}_w"], params[f"dec{j}_mix"])
    return grads, dg


def _check_tokens(params: Params, x: np.ndarray):
    n, p, _ = dims_of(params)
    if x.shape[-1] != p or (n is not None and x.shape[-2] != n):
        raise ShapeMismatch(f"tokens {x.shape[-2:]} do not match encoder (N={n}, P={p})")


def encode(modality: str, tokens: TokenSequence, params: Params) -> EmbeddingGrid:
    if tokens.origin != modality:
        raise ShapeMismatch(f"{tokens.origin} tokens passed to the {modality} encoder")
    _check_tokens(params, tokens.tokens)
    e, _ = encoder_forward(params, tokens.tokens[None])
    return EmbeddingGrid(e[0], modality)


def decode(modality: str, q: EmbeddingGrid | np.ndarray, params: Params,
           geometry: tuple = None, pad: int = 0) -> TokenSequence:
    """Map a quantized grid back to raw token features.

    ``geometry`` defaults to an empty tuple; callers that want to
    unpatchify or assemble the result pass the target geometry.
    """
    data = q.data if isinstance(q, EmbeddingGrid) else np.asarray(q, dtype=np.float64)
    n, _, d = dims_of(params)
    if data.ndim != 2 or data.shape[1] != d or (n is not None and data.shape[0] != n):
        raise ShapeMismatch(f"embedding {data.shape} does not match decoder (N={n}, D={d})")
    out, _ = decoder_forward(params, data[None])
    return TokenSequence(out[0], modality, geometry if geometry is not None else (), pad=pad)


def gradient_check(closure: Callable[[np.ndarray], tuple[float, np.ndarray]],
                   theta: np.ndarray, step: float = 1e-6) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    ``closure(theta)`` returns ``(loss, grad)``. The error per coordinate is
    ``|analytic - numeric| / max(1, |numeric|)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    theta = np.array(theta, dtype=np.float64)
    loss, grad = closure(theta.copy())
    if not np.isfinite(loss):
        raise NonFiniteLoss("loss is not finite at the base point")
    grad = np.asarray(grad, dtype=np.float64).reshape(theta.shape)
    flat = theta.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        lp, _ = closure(theta.copy())
        flat[i] = old - step
        lm, _ = closure(theta.copy())
        flat[i] = old
        if not (np.isfinite(lp) and np.isfinite(lm)):
            raise NonFiniteLoss(f"loss not finite around coordinate {i}")
        num = (lp - lm) / (2.0 * step)
        err = abs(grad.reshape(-1)[i] - num) / max(1.0, abs(num))
        worst = max(worst, err)
    return worst


def flatten(params: Params, keys=None) -> np.ndarray:
    keys = list(params) if keys is None else keys
    return np.concatenate([params[k].reshape(-1) for k in keys])


def unflatten(vec: np.ndarray, like: Params, keys=None) -> Params:
    keys = list(like) if keys is None else keys
    out, pos = {}, 0
    for k in keys:
        size = like[k].size
        out[k] = vec[pos:pos + size].reshape(like[k].shape)
        pos += size
    return out
