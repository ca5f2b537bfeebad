"""Dense neural primitives: layer norm, multi-head attention, MLP, gradient checking.

All compute is float64. Each primitive exists in two forms: a Tensor form
(suffix _t) that participates in reverse-mode autodiff, and a plain-numpy
wrapper for forward-only callers.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable

import numpy as np

from .autograd import Tensor, ensure_tensor, softmax as softmax_t


@dataclass
class LayerParams:
    """Parameters of one pre-norm encoder layer (attention + MLP)."""

    heads: int
    wq: np.ndarray  # D x D_inner, D_inner = heads * head_dim
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray  # D_inner x D
    bo: np.ndarray
    w1: np.ndarray  # D x m
    b1: np.ndarray
    w2: np.ndarray  # m x D
    b2: np.ndarray
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray

    def array_fields(self) -> list[str]:
        return [f.name for f in fields(self) if f.name != "heads"]


def _check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise ValueError(f"non-finite values in {what}")


# ---------------------------------------------------------------------------
# primitives (Tensor form)
# ---------------------------------------------------------------------------

def layer_norm_t(x: Tensor, gamma, beta, eps: float = 1e-6) -> Tensor:
    """Normalize each row (last axis) to zero mean / unit population variance."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = ensure_tensor(x)
    gamma = ensure_tensor(gamma)
    beta = ensure_tensor(beta)
    if gamma.value.shape[-1] != x.value.shape[-1] or beta.value.shape[-1] != x.value.shape[-1]:
        raise ValueError("layer_norm parameter length must match feature dimension")
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / (var + eps).sqrt() * gamma + beta


def mlp_block_t(x: Tensor, p: LayerParams) -> Tensor:
    """Affine -> GELU -> affine, applied row-wise."""
    x = ensure_tensor(x)
    w1 = ensure_tensor(p.w1)
    if x.value.shape[-1] != w1.value.shape[0]:
        raise ValueError("mlp_block input dimension mismatch")
    h = (x @ w1 + ensure_tensor(p.b1)).gelu()
    return h @ ensure_tensor(p.w2) + ensure_tensor(p.b2)


def multi_head_attention_t(tokens: Tensor, p: LayerParams) -> tuple[Tensor, np.ndarray]:
    """Scaled-dot-product attention over (..., T, D) tokens.

    Returns the projected output and the per-head attention maps
    (..., heads, T, T) as plain arrays for the explainer.
    """
    tokens = ensure_tensor(tokens)
    _check_finite(tokens.value, "attention input")
    wq = ensure_tensor(p.wq)
    d_inner = wq.value.shape[1]
    if d_inner % p.heads != 0:
        raise ValueError("attention inner dim must be divisible by head count")
    if tokens.value.shape[-1] != wq.value.shape[0]:
        raise ValueError("attention input dimension mismatch")
    d_h = d_inner // p.heads
    t_len = tokens.value.shape[-2]
    lead = tokens.value.shape[:-2]

    def split_heads(x: Tensor) -> Tensor:
        return x.reshape(lead + (t_len, p.heads, d_h)).swapaxes(-3, -2)

    q = split_heads(tokens @ wq + ensure_tensor(p.bq))
    k = split_heads(tokens @ ensure_tensor(p.wk) + ensure_tensor(p.bk))
    v = split_heads(tokens @ ensure_tensor(p.wv) + ensure_tensor(p.bv))

    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(d_h))
    attn = softmax_t(scores, axis=-1)
    mixed = attn @ v  # (..., heads, T, d_h)
    merged = mixed.swapaxes(-3, -2).reshape(lead + (t_len, d_inner))
    out = merged @ ensure_tensor(p.wo) + ensure_tensor(p.bo)
    return out, attn.value


def encoder_layer_t(z: Tensor, p: LayerParams, eps: float = 1e-6) -> tuple[Tensor, np.ndarray]:
    """Pre-norm block with residuals on both sub-layers."""
    attn_out, attn = multi_head_attention_t(layer_norm_t(z, p.ln1_g, p.ln1_b, eps), p)
    z = z + attn_out
    z = z + mlp_block_t(layer_norm_t(z, p.ln2_g, p.ln2_b, eps), p)
    return z, attn


# ---------------------------------------------------------------------------
# forward-only wrappers
# ---------------------------------------------------------------------------

def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    return layer_norm_t(Tensor(x), gamma, beta, eps).value


def mlp_block(x: np.ndarray, p: LayerParams) -> np.ndarray:
    return mlp_block_t(Tensor(x), p).value


def multi_head_attention(tokens: np.ndarray, p: LayerParams) -> tuple[np.ndarray, np.ndarray]:
    out, attn = multi_head_attention_t(Tensor(tokens), p)
    return out.value, attn


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def gelu(x: np.ndarray) -> np.ndarray:
    return Tensor(x).gelu().value


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

GradFn = Callable[[dict[str, np.ndarray]], tuple[float, dict[str, np.ndarray]]]


def grad_check(
    f: GradFn,
    theta: dict[str, np.ndarray],
    h: float = 1e-5,
    n_directions: int = 24,
    coord_limit: int = 1024,
    seed: int = 0,
) -> float:
    """Max relative error between f's reverse-mode gradient and central differences.

    Small parameter sets are probed coordinate by coordinate; larger ones along
    random unit directions. Denominators are guarded by
    max(|analytic|, |numeric|, 1e-8).
    """
    if not (1e-6 <= h <= 1e-4):
        raise ValueError("h must lie in [1e-6, 1e-4]")
    theta = {k: np.asarray(v, dtype=np.float64) for k, v in theta.items()}
    loss0, grads = f(theta)
    if not np.isfinite(loss0):
        raise ValueError("non-finite loss at theta")

    def probe(direction: dict[str, np.ndarray]) -> float:
        plus = {k: theta[k] + h * direction[k] for k in theta}
        minus = {k: theta[k] - h * direction[k] for k in theta}
        fp, _ = f(plus)
        fm, _ = f(minus)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError("non-finite loss at finite-difference probe point")
        return (fp - fm) / (2.0 * h)

    total = sum(v.size for v in theta.values())
    max_err = 0.0
    if total <= coord_limit:
        for name, arr in theta.items():
            for idx in np.ndindex(arr.shape):
                direction = {k: np.zeros_like(v) for k, v in theta.items()}
                direction[name][idx] = 1.0
                numeric = probe(direction)
                analytic = float(grads[name][idx])
                denom = max(abs(analytic), abs(numeric), 1e-8)
                max_err = max(max_err, abs(analytic - numeric) / denom)
    else:
        rng = np.random.default_rng(seed)
        for _ in range(n_directions):
            direction = {k: rng.standard_normal(v.shape) for k, v in theta.items()}
            norm = np.sqrt(sum(float((d * d).sum()) for d in direction.values()))
            direction = {k: d / norm for k, d in direction.items()}
            numeric = probe(direction)
            analytic = sum(float((grads[k] * direction[k]).sum()) for k in theta)
            denom = max(abs(analytic), abs(numeric), 1e-8)
            max_err = max(max_err, abs(analytic - numeric) / denom)
    return max_err
