"""Axial spatial/temporal attention over mixed landmark tokens.

Input is per-frame landmark features ``[B, N, L, d]``.  A learned linear map
across the landmark axis mixes ``L`` landmarks into ``T`` tokens, spatial
blocks attend over tokens within each frame, and temporal blocks attend
over frames for each token.  Output ``[B, N, T, d]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .numerics.nn import Module, TransformerBlock
from .numerics.tensor import Parameter, Tensor, matmul


@dataclass(frozen=True)
class TrajectoryConfig:
    n_landmarks: int = 478
    tokens: int = 32
    clip_len: int = 16
    d: int = 64
    heads: int = 4
    spatial_blocks: int = 6
    temporal_blocks: int = 3
    block_order: str = "sequential"  # or "interleaved"
    attention: str = "both"  # "spatial", "time" or "both"

    def schedule(self) -> list[tuple[str, int]]:
        """Order in which blocks run, as ``(kind, index)`` pairs."""
        sp = [("spatial", i) for i in range(self.spatial_blocks)] if self.attention in ("both", "spatial") else []
        tm = [("temporal", i) for i in range(self.temporal_blocks)] if self.attention in ("both", "time") else []
        if self.attention not in ("both", "spatial", "time"):
            raise ValueError(f"unknown attention mode {self.attention!r}")
        if self.block_order == "sequential":
            return sp + tm
        if self.block_order != "interleaved":
            raise ValueError(f"unknown block_order {self.block_order!r}")
        if not sp or not tm:
            return sp + tm
        # spread temporal blocks evenly: S S T S S T ... for 6/3
        out, ti = [], 0
        per = len(sp) / len(tm)
        for si, blk in enumerate(sp, start=1):
            out.append(blk)
            while ti < len(tm) and si >= per * (ti + 1) - 1e-9:
                out.append(tm[ti])
                ti += 1
        out.extend(tm[ti:])
        return out


class TrajectoryNet(Module):
    def __init__(self, cfg: TrajectoryConfig, rng, dtype=np.float64):
        L, T, d = cfg.n_landmarks, cfg.tokens, cfg.d
        bound = 1.0 / math.sqrt(L)
        # no per-token bias: it is constant over channels and every consumer
        # layer-normalizes over channels, so its gradient is identically zero
        self.mix_W = Parameter(rng.uniform(-bound, bound, size=(T, L)).astype(dtype))
        self.spatial = [TransformerBlock(d, cfg.heads, rng, dtype) for _ in range(cfg.spatial_blocks)]
        self.temporal = [TransformerBlock(d, cfg.heads, rng, dtype) for _ in range(cfg.temporal_blocks)]
        self.pos = Parameter(np.zeros((cfg.clip_len, d), dtype=dtype))
        self.cfg = cfg
        self.applied: list[tuple[str, int]] = []

    def __call__(self, h: Tensor) -> Tensor:
        return trajectory_forward(h, self)


def mix_tokens(h: Tensor, params) -> Tensor:
    """``[..., L, d]`` landmark features -> ``[..., T, d]`` tokens (shared over frames and channels)."""
    W = params.mix_W
    if h.shape[-2] != W.shape[1]:
        raise ShapeMismatch(f"mix_tokens: {h.shape[-2]} landmarks, weights expect {W.shape[1]}")
    return matmul(W, h)


def spatial_block(x: Tensor, block: TransformerBlock) -> Tensor:
    """Attention over tokens, independently per frame. ``x``: ``[B, N, T, d]``."""
    return block(x)


def temporal_block(x: Tensor, block: TransformerBlock) -> Tensor:
    """Attention over frames, independently per token."""
    return block(x.swapaxes(-2, -3)).swapaxes(-2, -3)


def add_time_embedding(x: Tensor, pos: Tensor) -> Tensor:
    N = x.shape[-3]
    if N > pos.shape[0]:
        raise ShapeMismatch(f"clip of {N} frames exceeds positional table of {pos.shape[0]}")
    return x + pos[:N].reshape(N, 1, pos.shape[1])


def spatial_pass(x: Tensor, params: TrajectoryNet) -> Tensor:
    for blk in params.spatial:
        x = spatial_block(x, blk)
    return x


def temporal_pass(x: Tensor, params: TrajectoryNet) -> Tensor:
    x = add_time_embedding(x, params.pos)
    for blk in params.temporal:
        x = temporal_block(x, blk)
    return x


def trajectory_forward(h: Tensor, params: TrajectoryNet) -> Tensor:
    x = mix_tokens(h, params)
    params.applied = []
    pos_added = False
    for kind, i in params.cfg.schedule():
        if kind == "spatial":
            x = spatial_block(x, params.spatial[i])
        else:
            if not pos_added:
                x = add_time_embedding(x, params.pos)
                pos_added = True
            x = temporal_block(x, params.temporal[i])
        params.applied.append((kind, i))
    return x
