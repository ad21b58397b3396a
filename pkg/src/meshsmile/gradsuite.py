"""Finite-difference suite over the whole model at a tiny float64 config."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .classifier import MeshSmileNet, ModelConfig
from .numerics.functional import bce_loss
from .numerics.gradcheck import GradCheckReport, grad_check_many
from .numerics.tensor import Tensor

TINY_MODEL = ModelConfig(n_landmarks=12, tokens=4, clip_len=4, d=8, heads=2, curves=2,
                         curve_len=3, knn=3, dtype="float64")


@dataclass
class SuiteResult:
    report: GradCheckReport
    seconds: float

    @property
    def passed(self) -> bool:
        return self.report.passed


def tiny_inputs(cfg: ModelConfig, rng: np.random.Generator, batch: int = 2):
    """Random clips ``[B, N, L, 3]`` and alternating labels."""
    base = rng.normal(size=(1, 1, cfg.n_landmarks, 3))
    motion = 0.1 * rng.normal(size=(batch, cfg.clip_len, cfg.n_landmarks, 3))
    x = base + np.cumsum(motion, axis=1)
    y = (np.arange(batch) % 2).astype(np.float64)
    return x, y


def run_suite(seed: int = 0, eps: float = 1e-5, tol: float = 1e-4,
              cfg: ModelConfig = TINY_MODEL, batch: int = 2) -> SuiteResult:
    """Eval-mode BCE of the full model against every parameter and the input coordinates."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    model = MeshSmileNet(cfg, rng)
    data, y = tiny_inputs(cfg, rng, batch)
    x = Tensor(data, requires_grad=True)
    tensors = [("input", x)] + list(model.named_parameters())
    report = grad_check_many(lambda: bce_loss(model(x, "eval"), y), tensors, eps=eps, tol=tol)
    return SuiteResult(report, time.perf_counter() - t0)
