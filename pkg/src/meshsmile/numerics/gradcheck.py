"""Central-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    max_rel_err: float
    tol: float
    n_checked: int
    worst: str = ""
    per_tensor: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} max_rel_err={self.max_rel_err:.3e} tol={self.tol:.1e} "
                f"checked={self.n_checked} worst={self.worst}")


def rel_err(a, n) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def numeric_grad(f: Callable[[], float], arr: np.ndarray, eps: float) -> np.ndarray:
    """Central differences of ``f`` w.r.t. every entry of ``arr`` (mutated in place, restored)."""
    out = np.zeros(arr.shape, dtype=np.float64)
    flat = arr.reshape(-1)
    g = out.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        g[i] = (fp - fm) / (2.0 * eps)
    return out


def grad_check_many(loss_fn: Callable[[], Tensor], tensors: Sequence[tuple[str, Tensor]],
                    eps: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic and numeric gradients of ``loss_fn()`` for each named leaf tensor.

    ``loss_fn`` must read the tensors' current ``.data`` on every call.
    """
    for _, t in tensors:
        if t.data.dtype != np.float64:
            raise TypeError("gradient checks require float64 tensors")
        t.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in tensors}

    def value() -> float:
        with no_grad():
            return float(loss_fn().data)

    worst, worst_name, n = 0.0, "", 0
    per = {}
    for name, t in tensors:
        num = numeric_grad(value, t.data, eps)
        err = rel_err(analytic[name], num)
        n += err.size
        m = float(err.max()) if err.size else 0.0
        per[name] = m
        if m > worst:
            worst, worst_name = m, f"{name}[{int(np.argmax(err))}]"
    for _, t in tensors:
        t.grad = None
    return GradCheckReport(worst, tol, n, worst_name, per)


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5,
               tol: float = 1e-4) -> GradCheckReport:
    """Check ``d f(x) / dx`` for a single leaf tensor ``x``."""
    if not x.requires_grad:
        x.requires_grad = True
    return grad_check_many(lambda: f(x), [("x", x)], eps=eps, tol=tol)
