"""Training loop, subject-disjoint cross-validation, statistics and saliency.

Random streams: every (trial, fold) pair gets
``SeedSequence([seed, trial, fold])``, spawned into three children used for
weight init, batch order plus clip starts, and Gumbel noise.  Fold
assignment uses ``seed`` (or ``seed + trial`` with ``reseed_folds``).  Results
therefore do not depend on ``jobs`` or on the order folds run in.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .classifier import DECISION_THRESHOLD, MeshSmileNet, ModelConfig, predict_video
from .errors import DegenerateVariance, EmptyTestSet, EmptyTrainSet, ConfigInvalid, ShapeMismatch
from .landmark_io import (
    DatasetManifest,
    Label,
    LandmarkSequence,
    make_folds,
    resample_fps,
    sample_eval_clips,
    sample_train_clip,
    split_fold,
)
from .numerics.functional import bce_loss
from .numerics.optim import AdamW
from .numerics.tensor import Tensor


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    epochs: int = 300
    lr: float = 5e-4
    weight_decay: float = 0.01
    clip_len: int = 16
    fps: float | None = None  # resample target; None keeps the native rate
    seed: int = 0
    fold_count: int = 10
    trials: int = 1
    reseed_folds: bool = False
    eval_clips: int = 5
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigInvalid("train.batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigInvalid("train.epochs must be >= 1")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigInvalid("train.lr and train.weight_decay must be >= 0")
        if self.clip_len < 1:
            raise ConfigInvalid("train.clip_len must be >= 1")
        if self.fps is not None and self.fps <= 0:
            raise ConfigInvalid("data.fps must be positive")
        if self.trials < 1 or self.eval_clips < 1:
            raise ConfigInvalid("train.trials and train.eval_clips must be >= 1")

    def model_config(self, n_landmarks: int | None = None) -> ModelConfig:
        changes = {"clip_len": self.clip_len}
        if n_landmarks is not None:
            changes["n_landmarks"] = n_landmarks
        return replace(self.model, **changes)

    def fold_seed(self, trial: int) -> int:
        return self.seed + trial if self.reseed_folds else self.seed


@dataclass
class TrainResult:
    model: MeshSmileNet
    loss_history: list[float]
    steps: int


@dataclass(frozen=True)
class FoldResult:
    fold_index: int
    accuracy: float
    scores: dict[str, float]
    labels: dict[str, int]
    trial: int = 0
    loss_history: tuple[float, ...] = ()

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 1]")


@dataclass(frozen=True)
class CVResult:
    folds: list[FoldResult]

    @property
    def mean(self) -> float:
        return float(np.mean([f.accuracy for f in self.folds]))

    def trial_means(self) -> list[float]:
        trials = sorted({f.trial for f in self.folds})
        return [float(np.mean([f.accuracy for f in self.folds if f.trial == t])) for t in trials]

    def to_json(self) -> dict:
        return {"folds": [{"fold": f.fold_index, "trial": f.trial, "accuracy": f.accuracy}
                          for f in self.folds],
                "mean": self.mean}


def fold_streams(seed: int, trial: int, fold: int) -> tuple[np.random.Generator, ...]:
    """``(init, data, gumbel)`` generators for one training run."""
    children = np.random.SeedSequence([seed, trial, fold]).spawn(3)
    return tuple(np.random.default_rng(c) for c in children)


def load_sequences(manifest: DatasetManifest, fps: float | None = None) -> dict[str, LandmarkSequence]:
    """Every video of the manifest, resampled to ``fps`` when given."""
    out = {}
    for rec in manifest.videos:
        seq = manifest.load(rec)
        out[rec.video_id] = resample_fps(seq, fps) if fps is not None else seq
    return out


def _n_landmarks(seqs: dict[str, LandmarkSequence]) -> int:
    counts = {s.n_landmarks for s in seqs.values()}
    if len(counts) != 1:
        raise ShapeMismatch(f"videos disagree on landmark count: {sorted(counts)}")
    return counts.pop()


def train_fold(manifest: DatasetManifest, fold: int, cfg: TrainConfig, *,
               folds: Sequence[Sequence[str]] | None = None,
               sequences: dict[str, LandmarkSequence] | None = None,
               trial: int = 0,
               on_epoch: Callable[[int, float], None] | None = None) -> TrainResult:
    """Train a fresh model on every fold except ``fold``."""
    if folds is None:
        folds = make_folds(manifest, cfg.fold_count, cfg.fold_seed(trial))
    train_recs, test_recs = split_fold(manifest, folds, fold)
    if not train_recs:
        raise EmptyTrainSet(f"fold {fold} leaves no training videos")
    leaked = {r.subject_id for r in train_recs} & {r.subject_id for r in test_recs}
    assert not leaked, f"subjects in both train and test: {sorted(leaked)}"
    if sequences is None:
        sequences = load_sequences(DatasetManifest(train_recs, manifest.root), cfg.fps)
    train_seqs = [sequences[r.video_id] for r in train_recs]
    labels = np.array([int(r.label) for r in train_recs], dtype=np.float64)

    init_rng, data_rng, gumbel_rng = fold_streams(cfg.seed, trial, fold)
    mcfg = cfg.model_config(_n_landmarks({r.video_id: s for r, s in zip(train_recs, train_seqs)}))
    model = MeshSmileNet(mcfg, init_rng)
    opt = AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    dt = mcfg.np_dtype

    history: list[float] = []
    steps = 0
    n = len(train_seqs)
    for epoch in range(cfg.epochs):
        order = data_rng.permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            batch = np.stack([sample_train_clip(train_seqs[i], cfg.clip_len, data_rng).coords
                              for i in idx]).astype(dt)
            opt.zero_grad()
            pred = model(Tensor(batch), "train", gumbel_rng)
            loss = bce_loss(pred, labels[idx])
            loss.backward()
            opt.step()
            steps += 1
            total += float(loss.data) * len(idx)
        mean_loss = total / n
        if not math.isfinite(mean_loss):
            raise FloatingPointError(f"non-finite loss at epoch {epoch}")
        history.append(mean_loss)
        if on_epoch is not None:
            on_epoch(epoch, mean_loss)
    return TrainResult(model, history, steps)


def evaluate_fold(model: MeshSmileNet, manifest: DatasetManifest, fold: int, *,
                  folds: Sequence[Sequence[str]] | None = None,
                  cfg: TrainConfig | None = None,
                  sequences: dict[str, LandmarkSequence] | None = None,
                  trial: int = 0) -> FoldResult:
    """Accuracy of ``model`` on the test videos of ``fold`` (score >= 0.5 means posed)."""
    cfg = cfg or TrainConfig(clip_len=model.cfg.clip_len)
    if folds is None:
        folds = make_folds(manifest, cfg.fold_count, cfg.fold_seed(trial))
    _, test_recs = split_fold(manifest, folds, fold)
    if not test_recs:
        raise EmptyTestSet(f"fold {fold} has no test videos")
    if sequences is None:
        sequences = load_sequences(DatasetManifest(test_recs, manifest.root), cfg.fps)
    scores, labels = {}, {}
    correct = 0
    for rec in test_recs:
        p = predict_video(model, sequences[rec.video_id], cfg.eval_clips)
        scores[rec.video_id] = p.score
        labels[rec.video_id] = int(rec.label)
        correct += int(p.label == rec.label)
    return FoldResult(fold, correct / len(test_recs), scores, labels, trial)


def accuracy(scores: Sequence[float], labels: Sequence[int]) -> float:
    pred = np.asarray(scores) >= DECISION_THRESHOLD
    return float(np.mean(pred == (np.asarray(labels) == Label.POSED)))


def _run_fold(args) -> FoldResult:
    manifest, cfg, folds, fold, trial, sequences = args
    res = train_fold(manifest, fold, cfg, folds=folds, sequences=sequences, trial=trial)
    out = evaluate_fold(res.model, manifest, fold, folds=folds, cfg=cfg,
                        sequences=sequences, trial=trial)
    return replace(out, loss_history=tuple(res.loss_history))


def cross_validate(manifest: DatasetManifest, cfg: TrainConfig, jobs: int = 1,
                   on_fold: Callable[[FoldResult], None] | None = None) -> CVResult:
    """Train and test every fold from scratch, ``cfg.trials`` times."""
    if cfg.fold_count < 2:
        raise ConfigInvalid("cross-validation needs fold_count >= 2")
    sequences = load_sequences(manifest, cfg.fps)
    tasks = []
    for trial in range(cfg.trials):
        folds = make_folds(manifest, cfg.fold_count, cfg.fold_seed(trial))
        for f in range(cfg.fold_count):
            tasks.append((manifest, cfg, folds, f, trial, sequences))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_fold, tasks))
        if on_fold is not None:
            for r in results:
                on_fold(r)
    else:
        results = []
        for t in tasks:
            r = _run_fold(t)
            results.append(r)
            if on_fold is not None:
                on_fold(r)
    return CVResult(results)


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Two-sided paired t-test; returns ``(t, p)`` with ``n - 1`` degrees of freedom."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired_t_test needs two 1-D sequences of equal length")
    n = a.size
    if n < 2:
        raise ValueError("paired_t_test needs at least two pairs")
    d = a - b
    if np.all(d == 0):
        return 0.0, 1.0
    if np.all(d == d[0]):
        raise DegenerateVariance("all paired differences are equal; t is undefined")
    sd = d.std(ddof=1)
    t = float(d.mean() / (sd / math.sqrt(n)))
    p = float(2.0 * stats.t.sf(abs(t), df=n - 1))
    return t, p


# -- saliency ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SaliencyMap:
    importance: np.ndarray

    def __post_init__(self):
        imp = np.asarray(self.importance, dtype=np.float64)
        if imp.ndim != 1 or np.any(imp < 0) or not np.all(np.isfinite(imp)):
            raise ValueError("importance must be a finite non-negative vector")
        object.__setattr__(self, "importance", imp)

    @property
    def n_landmarks(self) -> int:
        return self.importance.size

    def mass_fraction(self, landmark: int) -> float:
        total = self.importance.sum()
        return float(self.importance[landmark] / total) if total > 0 else 0.0


def input_gradient(model, coords: np.ndarray) -> np.ndarray:
    """Gradient of the summed eval-mode scores with respect to raw coordinates ``[B, N, L, 3]``."""
    dtype = getattr(getattr(model, "cfg", None), "np_dtype", np.float64)
    x = Tensor(np.asarray(coords, dtype=dtype), requires_grad=True)
    score = model(x, "eval")
    score.sum().backward()
    return np.asarray(x.grad, dtype=np.float64)


def saliency(model, dataset: Sequence[LandmarkSequence], clip_len: int | None = None,
             n_clips: int = 5) -> SaliencyMap:
    """Per-landmark mean gradient norm of the score over videos, clips and frames; max scaled to 1.

    ``model`` is any callable mapping a ``[B, N, L, 3]`` tensor to ``B`` scores;
    ``clip_len`` defaults to ``model.cfg.clip_len``.
    """
    if not dataset:
        raise ValueError("saliency needs at least one sequence")
    if len({s.n_landmarks for s in dataset}) != 1:
        raise ShapeMismatch("saliency: sequences disagree on landmark count")
    if clip_len is None:
        clip_len = model.cfg.clip_len
    per_video = []
    for seq in dataset:
        clips = np.stack([c.coords for c in sample_eval_clips(seq, clip_len, n_clips)])
        g = input_gradient(model, clips)
        per_video.append(np.linalg.norm(g, axis=-1).mean(axis=(0, 1)))
    imp = np.mean(per_video, axis=0)
    peak = imp.max()
    if peak > 0:
        imp = imp / peak
    return SaliencyMap(imp)


# -- output files ----------------------------------------------------------------------

def write_loss_csv(history: Sequence[float], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_loss"])
        for i, v in enumerate(history):
            w.writerow([i, repr(float(v))])


def write_results_json(result: CVResult, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(result.to_json(), indent=2) + "\n")


def write_saliency_csv(smap: SaliencyMap, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["landmark_index", "importance"])
        for i, v in enumerate(smap.importance):
            w.writerow([i, repr(float(v))])
