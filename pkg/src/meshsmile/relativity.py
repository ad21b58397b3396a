"""Per-frame local geometry features from curves over nearby landmarks.

Layout is landmark-major throughout: a batch of ``F`` frames carries
features ``[F, L, C]`` and coordinates ``[F, L, 3]``.  All frames of all
clips in a batch are processed together; walks advance every curve of
every frame in lock-step.

Stack: CIC(3->d), CIC(d->d) + curve grouping, CIC(d->d), CIC(d->d) + curve grouping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import COutOfRange, KOutOfRange, NoCurves, ShapeMismatch
from .numerics import functional as Fn
from .numerics.nn import Linear, Module
from .numerics.tensor import Tensor, concat, gather_max, gather_rows, stack, where

_MASKED = -1e9


@dataclass(frozen=True)
class CurveConfig:
    n_curves: int = 8
    curve_len: int = 16
    knn: int = 8
    d: int = 64
    tau: float = 1.0

    def validate(self, n_landmarks: int) -> None:
        if self.n_curves < 1 or self.n_curves > n_landmarks:
            raise COutOfRange(f"n_curves={self.n_curves} outside [1, {n_landmarks}]")
        if self.curve_len < 1:
            raise ValueError("curve_len must be >= 1")
        if not 1 <= self.knn <= n_landmarks - 1:
            raise KOutOfRange(f"knn={self.knn} outside [1, {n_landmarks - 1}]")


@dataclass
class FrameFeatures:
    features: Tensor  # [F, L, C]
    coords: Tensor  # [F, L, 3]

    def __post_init__(self):
        if self.features.shape[:-1] != self.coords.shape[:-1]:
            raise ShapeMismatch(f"features {self.features.shape} vs coords {self.coords.shape}")


@dataclass
class Curve:
    indices: list[int]
    step_features: Tensor  # [curve_len, d]


@dataclass
class CurveBatch:
    """Walk output for every frame and curve: ``paths`` is -1 padded."""

    paths: np.ndarray  # [F, c, s]
    lengths: np.ndarray  # [F, c]
    step_features: Tensor  # [F, c, s, d]

    def curve(self, f: int, j: int) -> Curve:
        n = int(self.lengths[f, j])
        return Curve([int(i) for i in self.paths[f, j, :n]], self.step_features[f, j])


class CICLayer(Module):
    """Edge convolution over the k nearest landmarks.

    e_{l,j} = act(W [f_j ; f_j - f_l ; p_j - p_l] + b), f'_l = max_j e_{l,j},
    plus a residual when input and output widths agree.  ``act`` is the
    shifted softplus; being monotone, the max can be taken before it.
    """

    def __init__(self, c_in: int, c_out: int, rng, dtype=np.float64):
        self.edge = Linear(2 * c_in + 3, c_out, rng, dtype)
        self.c_in = c_in
        self.c_out = c_out

    def __call__(self, feats: Tensor, coords: Tensor, nbr: np.ndarray) -> Tensor:
        C = self.c_in
        if feats.shape[-1] != C:
            raise ShapeMismatch(f"CIC layer expects width {C}, got {feats.shape[-1]}")
        W = self.edge.W
        w_nb, w_rel, w_pos = W[:, :C], W[:, C:2 * C], W[:, 2 * C:]
        # W [f_j; f_j - f_l; p_j - p_l] + b = A_j - B_l + b with
        # A = (w_nb + w_rel) f + w_pos p and B = w_rel f + w_pos p,
        # so the max over j only touches A.
        pos = Fn.linear(coords, w_pos)
        a = Fn.linear(feats, w_nb + w_rel) + pos
        b = Fn.linear(feats, w_rel) + pos
        out = Fn.shifted_softplus(gather_max(a, nbr) - b + self.edge.b)
        if self.c_in == self.c_out:
            out = out + feats
        return out


def cic_layer(inp: FrameFeatures, params: CICLayer, k_nn: int) -> FrameFeatures:
    L = inp.coords.shape[1]
    if not L > k_nn:
        raise ShapeMismatch(f"need more than k_nn={k_nn} landmarks, got {L}")
    nbr = Fn.knn_indices(inp.coords.data, k_nn)
    return FrameFeatures(params(inp.features, inp.coords, nbr), inp.coords)


class CurveGrouping(Module):
    """Curve start scoring, walking and aggregation for one CIC stage."""

    def __init__(self, d: int, rng, dtype=np.float64):
        self.score = Linear(d, 1, rng, dtype)
        self.phi = Linear(d, d, rng, dtype)
        self.psi = Linear(d, d, rng, dtype)
        self.state = Linear(2 * d, d, rng, dtype)
        self.desc = Linear(2 * d, d, rng, dtype)
        self.d = d

    def __call__(self, feats: Tensor, nbr: np.ndarray, cfg: CurveConfig, mode: str = "eval",
                 rng: np.random.Generator | None = None) -> Tensor:
        starts, start_feats = select_starts(feats, self, cfg.n_curves)
        curves = walk_curves(starts, start_feats, feats, nbr, self, cfg, mode, rng)
        return aggregate_features(feats, curves.step_features, self)


def select_starts(feats: Tensor, params: CurveGrouping, c: int):
    """Top-``c`` landmarks by projected score, with sigmoid-gated start features."""
    F, L, _ = feats.shape
    if not 1 <= c <= L:
        raise COutOfRange(f"c={c} outside [1, {L}]")
    scores = Fn.linear(feats, params.score.W, params.score.b)  # [F, L, 1]
    starts = Fn.top_k_rows(scores.data[..., 0], c)
    gate = gather_rows(scores, starts).sigmoid()
    return starts, gather_rows(feats, starts) * gate


def select_curve_starts(features: Tensor, params: CurveGrouping, c: int) -> list[int]:
    """Single-frame form: ``features`` is ``[L, d]``."""
    starts, _ = select_starts(features.reshape((1,) + features.shape), params, c)
    return [int(i) for i in starts[0]]


def walk_curves(starts: np.ndarray, start_feats: Tensor, feats: Tensor, nbr: np.ndarray,
                params: CurveGrouping, cfg: CurveConfig, mode: str = "eval",
                rng: np.random.Generator | None = None) -> CurveBatch:
    """Grow every curve by greedy (eval) or hard Gumbel-Softmax (train) steps.

    Candidates are the current landmark's kNN minus already-visited
    landmarks.  A curve with no candidates stops and repeats its last step
    feature up to ``curve_len``.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "train" and rng is None:
        raise ValueError("train-mode walks need an rng")
    F, L, d = feats.shape
    c = starts.shape[1]
    k = nbr.shape[-1]
    s = cfg.curve_len
    fi = np.arange(F)[:, None]
    ci = np.arange(c)[None, :]
    scale = 1.0 / math.sqrt(d)

    visited = np.zeros((F, c, L), dtype=bool)
    visited[fi, ci, starts] = True
    paths = np.full((F, c, s), -1, dtype=np.int64)
    paths[..., 0] = starts
    lengths = np.ones((F, c), dtype=np.int64)
    cur = starts.copy()
    alive = np.ones((F, c), dtype=bool)

    r = start_feats
    steps = [start_feats]
    keys = None
    for i in range(1, s):
        cand = nbr[fi, cur]  # [F, c, k]
        valid = ~visited[fi[..., None], ci[..., None], cand]
        step_alive = alive & valid.any(axis=-1)
        if not step_alive.any():
            steps.extend([steps[-1]] * (s - i))
            break
        if keys is None:
            keys = Fn.linear(feats, params.psi.W, params.psi.b)
        q = Fn.linear(r, params.phi.W, params.phi.b)  # [F, c, d]
        kc = gather_rows(keys, cand.reshape(F, c * k)).reshape(F, c, k, d)
        logits = (kc @ q.reshape(F, c, d, 1)).reshape(F, c, k) * scale
        if mode == "train":
            logits = where(valid, logits, _MASKED)
            y = Fn.gumbel_softmax(logits, cfg.tau, hard=True, rng=rng)
            pick = np.argmax(y.data, axis=-1)
            chosen = np.take_along_axis(cand, pick[..., None], axis=-1)[..., 0]
            cf = gather_rows(feats, cand.reshape(F, c * k)).reshape(F, c, k, d)
            picked = (y.reshape(F, c, 1, k) @ cf).reshape(F, c, d)
        else:
            pick = np.argmax(np.where(valid, logits.data, -np.inf), axis=-1)
            chosen = np.take_along_axis(cand, pick[..., None], axis=-1)[..., 0]
            picked = gather_rows(feats, chosen)

        r_new = Fn.gelu(Fn.linear(concat([r, picked], axis=-1), params.state.W, params.state.b))
        live = step_alive[..., None]
        r = where(live, r_new, r)
        steps.append(where(live, picked, steps[-1]))

        fa, ca = np.nonzero(step_alive)
        nxt = chosen[fa, ca]
        visited[fa, ca, nxt] = True
        paths[fa, ca, lengths[fa, ca]] = nxt
        lengths[fa, ca] += 1
        cur = np.where(step_alive, chosen, cur)
        alive = step_alive

    return CurveBatch(paths, lengths, stack(steps, axis=2))


def walk_curve(start: int, inp: FrameFeatures, params: CurveGrouping, cfg: CurveConfig,
               tau: float | None = None, mode: str = "eval",
               rng: np.random.Generator | None = None, start_feature: Tensor | None = None) -> Curve:
    """Single-curve, single-frame walk (features ``[L, d]`` or ``[1, L, d]``)."""
    feats = inp.features
    coords = inp.coords
    if feats.ndim == 2:
        feats = feats.reshape((1,) + feats.shape)
        coords = coords.reshape((1,) + coords.shape)
    L = feats.shape[1]
    if not 0 <= start < L:
        raise ValueError(f"start {start} outside [0, {L})")
    if tau is not None:
        cfg = CurveConfig(cfg.n_curves, cfg.curve_len, cfg.knn, cfg.d, tau)
    nbr = Fn.knn_indices(coords.data, cfg.knn)
    starts = np.array([[start]])
    if start_feature is None:
        start_feature = gather_rows(feats, starts)
    else:
        start_feature = start_feature.reshape(1, 1, feats.shape[-1])
    batch = walk_curves(starts, start_feature, feats, nbr, params, cfg, mode, rng)
    return batch.curve(0, 0)


def aggregate_features(feats: Tensor, step_features: Tensor, params: CurveGrouping) -> Tensor:
    """h'_l = f_l + sum_c softmax_c(<f_l, D_c>/sqrt(d)) D_c, D_c from max+mean pooled steps."""
    if step_features.shape[1] < 1:
        raise NoCurves("aggregation needs at least one curve")
    d = feats.shape[-1]
    pooled = concat([step_features.max(axis=2), step_features.mean(axis=2)], axis=-1)
    D = Fn.linear(pooled, params.desc.W, params.desc.b)  # [F, c, d]
    alpha = Fn.softmax((feats @ D.swapaxes(-1, -2)) * (1.0 / math.sqrt(d)), axis=-1)
    return feats + alpha @ D


def aggregate_curves(inp: FrameFeatures, curves: list[Curve], params: CurveGrouping) -> FrameFeatures:
    """Single-frame form taking explicit :class:`Curve` objects."""
    if not curves:
        raise NoCurves("aggregation needs at least one curve")
    feats = inp.features
    single = feats.ndim == 2
    if single:
        feats = feats.reshape((1,) + feats.shape)
    steps = stack([cv.step_features for cv in curves], axis=0)
    steps = steps.reshape((1,) + steps.shape)
    out = aggregate_features(feats, steps, params)
    return FrameFeatures(out[0] if single else out, inp.coords)


class RelativityNet(Module):
    """Four CIC layers, curve grouping after the second and fourth."""

    def __init__(self, cfg: CurveConfig, rng, dtype=np.float64):
        d = cfg.d
        self.cic = [CICLayer(3, d, rng, dtype), CICLayer(d, d, rng, dtype),
                    CICLayer(d, d, rng, dtype), CICLayer(d, d, rng, dtype)]
        self.group = [CurveGrouping(d, rng, dtype), CurveGrouping(d, rng, dtype)]
        self.cfg = cfg

    def __call__(self, coords: Tensor, mode: str = "eval",
                 rng: np.random.Generator | None = None) -> Tensor:
        """``coords`` ``[F, L, 3]`` (already normalized) -> features ``[F, L, d]``."""
        cfg = self.cfg
        cfg.validate(coords.shape[1])
        nbr = Fn.knn_indices(coords.data, cfg.knn)
        h = self.cic[0](coords, coords, nbr)
        h = self.cic[1](h, coords, nbr)
        h = self.group[0](h, nbr, cfg, mode, rng)
        h = self.cic[2](h, coords, nbr)
        h = self.cic[3](h, coords, nbr)
        h = self.group[1](h, nbr, cfg, mode, rng)
        return h


class PointEmbedding(Module):
    """Ablation stand-in for the relativity net: a per-landmark linear lift 3 -> d."""

    def __init__(self, d: int, rng, dtype=np.float64):
        self.proj = Linear(3, d, rng, dtype)

    def __call__(self, coords: Tensor, mode: str = "eval", rng=None) -> Tensor:
        return self.proj(coords)


def relativity_forward(frame, params: RelativityNet, cfg: CurveConfig | None = None,
                       mode: str = "eval", rng=None) -> FrameFeatures:
    """One frame (``LandmarkFrame`` or ``[3, L]`` array) -> features ``[L, d]``."""
    coords = getattr(frame, "coords", frame)
    coords = np.asarray(coords.data if isinstance(coords, Tensor) else coords)
    p = Tensor(coords.T[None].astype(params.cic[0].edge.W.dtype))
    if cfg is not None and cfg != params.cfg:
        raise ValueError("cfg does not match the network's configuration")
    h = params(p, mode, rng)
    return FrameFeatures(h[0], p[0])
