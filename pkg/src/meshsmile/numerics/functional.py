"""Layer primitives composed by the relativity, trajectory and classifier nets.

Every function takes tensors and explicit parameters and returns a tensor
wired into the autodiff graph.  ``softmax``, ``layer_norm`` and ``gelu``
are fused ops with hand-derived backward passes.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import IndivisibleHeads, KOutOfRange, NonPositiveTemperature, ShapeMismatch
from .tensor import Tensor, _lift, _sigmoid_np, matmul, straight_through

_GELU_C = math.sqrt(2.0 / math.pi)


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``y = x W^T + b`` along the trailing axis."""
    x = _lift(x, W.dtype)
    d_out, d_in = W.shape
    if x.shape[-1] != d_in:
        raise ShapeMismatch(f"linear: input width {x.shape[-1]} != weight d_in {d_in}")
    # fused into one node; linear layers dominate the op count of a forward pass
    out = x.data @ W.data.T
    if b is not None:
        out = out + b.data

    def bw(g):
        if x.requires_grad:
            x._accum(g @ W.data)
        g2 = g.reshape(-1, d_out)
        if W.requires_grad:
            W._accum(g2.T @ x.data.reshape(-1, d_in))
        if b is not None and b.requires_grad:
            b._accum(g2.sum(axis=0))

    parents = (x, W) if b is None else (x, W, b)
    return Tensor._make(out, parents, bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _lift(x, None)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        x._accum(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return Tensor._make(out, (x,), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each trailing vector with its population variance."""
    x = _lift(x, gamma.dtype)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeMismatch("layer_norm: gamma/beta must match the trailing width")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        if gamma.requires_grad:
            gamma._accum((g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            beta._accum(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gx = g * gamma.data
            x._accum(inv * (gx - gx.mean(axis=-1, keepdims=True)
                            - xhat * (gx * xhat).mean(axis=-1, keepdims=True)))

    return Tensor._make(out, (x, gamma, beta), bw)


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximated GELU."""
    x = _lift(x, None)
    v = x.data
    v2 = v * v
    inner = _GELU_C * v * (1.0 + 0.044715 * v2)
    t = np.tanh(inner)
    out = 0.5 * v * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * v2)
        x._accum(g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner))

    return Tensor._make(out, (x,), bw)


def shifted_softplus(x: Tensor) -> Tensor:
    """``log(1 + e^x) - log 2``: smooth, monotone, zero at zero."""
    x = _lift(x, None)
    v = x.data
    out = np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v))) - math.log(2.0)

    def bw(g):
        x._accum(g * _sigmoid_np(v))

    return Tensor._make(out, (x,), bw)


def attention(Q: Tensor, K: Tensor, V: Tensor, return_weights: bool = False):
    """Scaled dot-product attention over the last two axes.

    Shapes ``[..., T_q, d]``, ``[..., T_k, d]``, ``[..., T_k, d_v]``.
    """
    if Q.shape[-1] != K.shape[-1] or K.shape[-2] != V.shape[-2]:
        raise ShapeMismatch(f"attention: Q{Q.shape} K{K.shape} V{V.shape}")
    if K.shape[-2] < 1:
        raise ShapeMismatch("attention needs at least one key")
    scale = 1.0 / math.sqrt(Q.shape[-1])
    scores = matmul(Q, K.swapaxes(-1, -2)) * scale
    w = softmax(scores, axis=-1)
    out = matmul(w, V)
    if return_weights:
        return out, w
    return out


def multi_head_attention(x: Tensor, params, n_heads: int) -> Tensor:
    """Self-attention over axis -2 of ``x`` (``[..., T, d]``).

    ``params`` needs ``q, k, v, o`` attributes, each with ``W`` and ``b``.
    """
    d = x.shape[-1]
    if n_heads < 1 or d % n_heads:
        raise IndivisibleHeads(f"width {d} is not divisible by {n_heads} heads")
    dh = d // n_heads
    lead = x.shape[:-2]
    T = x.shape[-2]

    def split(t):
        # [..., T, d] -> [..., h, T, dh]
        t = t.reshape(lead + (T, n_heads, dh))
        nd = t.ndim
        axes = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
        return t.transpose(axes)

    q = split(linear(x, params.q.W, params.q.b))
    k = split(linear(x, params.k.W, params.k.b))
    v = split(linear(x, params.v.W, params.v.b))
    heads = attention(q, k, v)
    nd = heads.ndim
    axes = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    merged = heads.transpose(axes).reshape(lead + (T, d))
    return linear(merged, params.o.W, params.o.b)


def transformer_block(x: Tensor, params) -> Tensor:
    """Pre-norm residual block: attention sublayer then a 4d GELU MLP."""
    if x.shape[-1] != params.ln1.gamma.shape[0]:
        raise ShapeMismatch(f"transformer_block: width {x.shape[-1]} != {params.ln1.gamma.shape[0]}")
    h = layer_norm(x, params.ln1.gamma, params.ln1.beta)
    x = x + multi_head_attention(h, params.attn, params.n_heads)
    h = layer_norm(x, params.ln2.gamma, params.ln2.beta)
    h = gelu(linear(h, params.fc1.W, params.fc1.b))
    return x + linear(h, params.fc2.W, params.fc2.b)


def sample_gumbel(shape, rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    u = rng.random(shape)
    return (-np.log(-np.log(u + 1e-20) + 1e-20)).astype(dtype, copy=False)


def gumbel_softmax(logits: Tensor, tau: float = 1.0, hard: bool = False,
                   noise: np.ndarray | None = None,
                   rng: np.random.Generator | None = None) -> Tensor:
    """Relaxed categorical sample over the last axis.

    With ``hard`` the forward value is the one-hot of the argmax (lowest
    index on ties) and the backward pass uses the soft sample.  Pass
    ``noise`` explicitly for deterministic tests; otherwise Gumbel noise is
    drawn from ``rng``.
    """
    if tau <= 0:
        raise NonPositiveTemperature(f"tau must be positive, got {tau}")
    logits = _lift(logits, None)
    if noise is None:
        if rng is None:
            raise ValueError("gumbel_softmax needs either explicit noise or an rng")
        noise = sample_gumbel(logits.shape, rng, logits.dtype)
    soft = softmax((logits + noise) * (1.0 / tau), axis=-1)
    if not hard:
        return soft
    idx = np.argmax(soft.data, axis=-1)
    onehot = np.zeros_like(soft.data)
    np.put_along_axis(onehot, idx[..., None], 1.0, axis=-1)
    return straight_through(onehot, soft)


def top_k_select(scores, k: int) -> list[int]:
    """Indices of the ``k`` largest scores, descending, ties to the lowest index."""
    s = np.asarray(scores.data if isinstance(scores, Tensor) else scores).reshape(-1)
    n = s.size
    if not 1 <= k <= n:
        raise KOutOfRange(f"k={k} outside [1, {n}]")
    order = np.argsort(-s, kind="stable")
    return [int(i) for i in order[:k]]


def top_k_rows(scores: np.ndarray, k: int) -> np.ndarray:
    """Row-wise :func:`top_k_select` for a ``[F, n]`` score matrix."""
    n = scores.shape[-1]
    if not 1 <= k <= n:
        raise KOutOfRange(f"k={k} outside [1, {n}]")
    return np.argsort(-scores, axis=-1, kind="stable")[..., :k]


def knn_indices(points, k: int) -> np.ndarray:
    """k nearest other landmarks per landmark.

    ``points`` is ``[3, L]`` (one frame, coordinate-major) or ``[F, L, 3]``
    (a batch of frames, landmark-major).  Returns ``[L, k]`` or ``[F, L, k]``;
    ascending distance, ties to the lowest index, self excluded.
    """
    p = np.asarray(points.data if isinstance(points, Tensor) else points, dtype=np.float64)
    single = p.ndim == 2
    if single:
        p = p.T[None]  # [1, L, 3]
    L = p.shape[1]
    if not 1 <= k <= L - 1:
        raise KOutOfRange(f"k={k} outside [1, {L - 1}]")
    diff = p[:, :, None, :] - p[:, None, :, :]
    d2 = np.einsum("flmc,flmc->flm", diff, diff)
    idx = np.arange(L)
    d2[:, idx, idx] = np.inf
    nbr = np.argsort(d2, axis=-1, kind="stable")[..., :k]
    return nbr[0] if single else nbr


def bce_loss(pred: Tensor, label, clamp: float = 1e-7) -> Tensor:
    """Mean binary cross-entropy ``-[y log p + (1-y) log(1-p)]``."""
    pred = _lift(pred, None)
    y = np.asarray(label, dtype=pred.dtype)
    p = pred.clip(clamp, 1.0 - clamp)
    ll = p.log() * y + (1.0 - p).log() * (1.0 - y)
    return -ll.mean()
