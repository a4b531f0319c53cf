"""Neural building blocks composed from the autodiff primitives.

Shapes follow the convention [..., sequence, features]; every op accepts
arbitrary leading batch axes.
"""

from __future__ import annotations

import numpy as np

from .tensor import (
    Tensor,
    concat,
    constant,
    exp,
    log,
    matmul,
    mul,
    pad2d,
    power,
    relu,
    reshape,
    swapaxes,
    tmean,
    tsum,
)

LAYERNORM_EPS = 1e-5


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map along the last axis; batch shape is preserved."""
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"dense: input width {x.shape[-1]} != weight rows {w.shape[0]}")
    return matmul(x, w) + b


def layernorm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Standardize the last axis to mean 0 / variance 1, then apply the affine."""
    mu = tmean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = tmean(mul(centered, centered), axis=-1, keepdims=True)
    inv = power(var + constant(LAYERNORM_EPS), -0.5)
    return mul(centered, inv) * gain + bias


def softmax(x: Tensor) -> Tensor:
    """Exponentiate-and-normalize along the last axis, max-subtracted."""
    shift = constant(x.data.max(axis=-1, keepdims=True))
    e = exp(x - shift)
    return e / tsum(e, axis=-1, keepdims=True)


def log_softmax(x: Tensor) -> Tensor:
    shift = constant(x.data.max(axis=-1, keepdims=True))
    centered = x - shift
    return centered - log(tsum(exp(centered), axis=-1, keepdims=True))


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Zero elements with probability rate, scaling survivors by 1/(1-rate)."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate {rate} outside [0, 1)")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training dropout requires an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, constant(mask))


def causal_mask(n: int) -> np.ndarray:
    """Additive mask: 0 on and below the diagonal, -inf above."""
    m = np.zeros((n, n))
    m[np.triu_indices(n, k=1)] = -np.inf
    return m


def mha(
    q_src: Tensor,
    kv_src: Tensor,
    heads: int,
    wq: Tensor,
    bq: Tensor,
    wk: Tensor,
    bk: Tensor,
    wv: Tensor,
    bv: Tensor,
    wo: Tensor,
    bo: Tensor,
    causal: bool = False,
) -> Tensor:
    """Multi-head scaled dot-product attention.

    q_src is [..., S_q, E] and kv_src is [..., S_kv, E].  The causal mask lets
    query position i attend to key positions <= i and is only meaningful for
    self-attention, so it requires S_q == S_kv.
    """
    e = q_src.shape[-1]
    if e % heads:
        raise ValueError(f"embedding dim {e} not divisible by {heads} heads")
    s_q, s_kv = q_src.shape[-2], kv_src.shape[-2]
    if causal and s_q != s_kv:
        raise ValueError("causal mask requires matching query/key lengths")
    d = e // heads

    def split_heads(t: Tensor) -> Tensor:
        t = reshape(t, t.shape[:-1] + (heads, d))
        return swapaxes(t, -2, -3)  # [..., heads, s, d]

    q = split_heads(dense(q_src, wq, bq))
    k = split_heads(dense(kv_src, wk, bk))
    v = split_heads(dense(kv_src, wv, bv))
    scores = matmul(q, swapaxes(k, -1, -2)) * constant(1.0 / np.sqrt(d))
    if causal:
        scores = scores + constant(causal_mask(s_q))
    attended = matmul(softmax(scores), v)  # [..., heads, s_q, d]
    merged = swapaxes(attended, -2, -3)
    merged = reshape(merged, merged.shape[:-2] + (e,))
    return dense(merged, wo, bo)


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 1) -> Tensor:
    """2-D convolution on [..., H, W, C] with kernel [kh, kw, C, C_out].

    Implemented as a sum of strided slices times kernel taps, so gradients
    come straight from the primitive ops.
    """
    kh, kw = w.shape[0], w.shape[1]
    xp = pad2d(x, padding, padding) if padding else x
    h = (x.shape[-3] + 2 * padding - kh) // stride + 1
    ww = (x.shape[-2] + 2 * padding - kw) // stride + 1
    out = None
    lead = (slice(None),) * (x.ndim - 3)
    for di in range(kh):
        for dj in range(kw):
            sl = xp[lead + (
                slice(di, di + (h - 1) * stride + 1, stride),
                slice(dj, dj + (ww - 1) * stride + 1, stride),
                slice(None),
            )]
            term = matmul(sl, w[di, dj])
            out = term if out is None else out + term
    return out + b
