"""Whole-model composition: normalize -> relativity -> trajectory -> head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ConfigInvalid, ShapeMismatch
from .landmark_io import Clip, Label, LandmarkSequence, sample_eval_clips
from .numerics import functional as Fn
from .numerics.checkpoint import load_checkpoint, save_checkpoint
from .numerics.nn import LayerNorm, Linear, Module
from .numerics.tensor import Tensor, no_grad
from .relativity import CurveConfig, PointEmbedding, RelativityNet
from .trajectory import TrajectoryConfig, TrajectoryNet

DECISION_THRESHOLD = 0.5


@dataclass(frozen=True)
class ModelConfig:
    n_landmarks: int = 478
    clip_len: int = 16
    d: int = 64
    tokens: int = 32
    heads: int = 4
    curves: int = 8
    curve_len: int = 16
    knn: int = 8
    tau: float = 1.0
    spatial_blocks: int = 6
    temporal_blocks: int = 3
    block_order: str = "sequential"
    attention: str = "both"
    relativity: str = "curvenet"  # or "none" (per-landmark linear lift)
    pool: str = "mean"
    normalize: str = "frame"
    dtype: str = "float64"

    def __post_init__(self):
        if self.d % self.heads:
            raise ConfigInvalid(f"model.d={self.d} not divisible by model.heads={self.heads}")
        for key, allowed in (("block_order", ("sequential", "interleaved")),
                             ("attention", ("both", "spatial", "time")),
                             ("relativity", ("curvenet", "none")),
                             ("pool", ("mean", "max")),
                             ("normalize", ("frame", "video", "off")),
                             ("dtype", ("float64", "float32"))):
            if getattr(self, key) not in allowed:
                raise ConfigInvalid(f"model.{key} must be one of {allowed}, got {getattr(self, key)!r}")
        if self.relativity == "curvenet":
            CurveConfig(self.curves, self.curve_len, self.knn, self.d, self.tau).validate(self.n_landmarks)

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def curve_config(self) -> CurveConfig:
        return CurveConfig(self.curves, self.curve_len, self.knn, self.d, self.tau)

    def trajectory_config(self) -> TrajectoryConfig:
        return TrajectoryConfig(self.n_landmarks, self.tokens, self.clip_len, self.d, self.heads,
                                self.spatial_blocks, self.temporal_blocks, self.block_order,
                                self.attention)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass(frozen=True)
class Prediction:
    score: float

    @property
    def label(self) -> Label:
        return Label.POSED if self.score >= DECISION_THRESHOLD else Label.SPONTANEOUS


class ClassifierHead(Module):
    def __init__(self, d: int, rng, dtype=np.float64, pool: str = "mean"):
        self.ln = LayerNorm(d, dtype)
        self.fc = Linear(d, 1, rng, dtype)
        self.pool = pool


def head_logits(z: Tensor, params: ClassifierHead) -> Tensor:
    """Pool ``[B, N, T, d]`` over frames and tokens, layer-norm, project to one logit per clip."""
    d = params.ln.gamma.shape[0]
    if z.shape[-1] != d:
        raise ShapeMismatch(f"head expects width {d}, got {z.shape[-1]}")
    if z.ndim == 3:
        z = z.reshape((1,) + z.shape)
    B = z.shape[0]
    flat = z.reshape(B, -1, d)
    pooled = flat.mean(axis=1) if params.pool == "mean" else flat.max(axis=1)
    h = Fn.layer_norm(pooled, params.ln.gamma, params.ln.beta)
    return Fn.linear(h, params.fc.W, params.fc.b).reshape(B)


def classify_head(z: Tensor, params: ClassifierHead) -> Tensor:
    return head_logits(z, params).sigmoid()


def normalize_tensor(x: Tensor, mode: str = "frame") -> Tensor:
    """Differentiable centroid / mean-radius normalization of ``[..., N, L, 3]``."""
    if mode == "off":
        return x
    centroid = x.mean(axis=-2, keepdims=True)
    centered = x - centroid
    radius = ((centered * centered).sum(axis=-1, keepdims=True)).sqrt().mean(axis=-2, keepdims=True)
    if mode == "video":
        # first frame's statistics for every frame keeps global motion
        return (x - centroid[..., :1, :, :]) / radius[..., :1, :, :]
    return centered / radius


class MeshSmileNet(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | int = 0):
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        dt = cfg.np_dtype
        if cfg.relativity == "curvenet":
            self.relativity = RelativityNet(cfg.curve_config(), rng, dt)
        else:
            self.relativity = PointEmbedding(cfg.d, rng, dt)
        self.trajectory = TrajectoryNet(cfg.trajectory_config(), rng, dt)
        self.head = ClassifierHead(cfg.d, rng, dt, cfg.pool)
        self.cfg = cfg

    def logits(self, coords, mode: str = "eval", rng: np.random.Generator | None = None) -> Tensor:
        """``coords`` ``[B, N, L, 3]`` (raw) -> one pre-sigmoid value per clip."""
        cfg = self.cfg
        if not isinstance(coords, Tensor):
            coords = Tensor(np.asarray(coords, dtype=cfg.np_dtype))
        elif coords.dtype != cfg.np_dtype:
            raise TypeError(f"input dtype {coords.dtype} != model dtype {cfg.dtype}")
        if coords.ndim == 3:
            coords = coords.reshape((1,) + coords.shape)
        B, N, L, _ = coords.shape
        if L != cfg.n_landmarks:
            raise ShapeMismatch(f"model expects {cfg.n_landmarks} landmarks, got {L}")
        if N != cfg.clip_len:
            raise ShapeMismatch(f"model expects clips of {cfg.clip_len} frames, got {N}")
        x = normalize_tensor(coords, cfg.normalize)
        h = self.relativity(x.reshape(B * N, L, 3), mode, rng)
        z = self.trajectory(h.reshape(B, N, L, cfg.d))
        return head_logits(z, self.head)

    def __call__(self, coords, mode: str = "eval", rng=None) -> Tensor:
        return self.logits(coords, mode, rng).sigmoid()

    # checkpoint I/O -----------------------------------------------------------

    def save(self, path) -> None:
        save_checkpoint(path, self.state_dict(), self.cfg.to_dict())

    @classmethod
    def load(cls, path, dtype: str | None = None) -> "MeshSmileNet":
        state, cfg_dict = load_checkpoint(path)
        if dtype is not None:
            cfg_dict = dict(cfg_dict, dtype=dtype)
        model = cls(ModelConfig.from_dict(cfg_dict), rng=0)
        model.load_state_dict(state)
        return model


def forward_clip(model: MeshSmileNet, clip: Clip, mode: str = "eval",
                 rng: np.random.Generator | None = None) -> Prediction:
    with no_grad():
        score = model(clip.coords[None], mode, rng)
    return Prediction(float(score.data[0]))


def clip_scores(model: MeshSmileNet, seq: LandmarkSequence, n_clips: int = 5) -> np.ndarray:
    """Eval-mode scores of the evenly spaced evaluation clips of ``seq``."""
    clips = sample_eval_clips(seq, model.cfg.clip_len, n_clips)
    batch = np.stack([c.coords for c in clips])
    with no_grad():
        return model(batch, "eval").data.astype(np.float64)


def predict_video(model: MeshSmileNet, seq: LandmarkSequence, n_clips: int = 5) -> Prediction:
    """Mean clip score over ``n_clips`` evaluation clips; >= 0.5 means posed."""
    return Prediction(float(np.mean(clip_scores(model, seq, n_clips))))
