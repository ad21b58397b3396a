"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Parameter


@dataclass
class AdamWState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def like(cls, param: Parameter) -> "AdamWState":
        return cls(np.zeros_like(param.data), np.zeros_like(param.data))


def adamw_step(param: Parameter, state: AdamWState, lr: float = 5e-4, beta1: float = 0.9,
               beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.01) -> None:
    """One in-place update.

    theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
    """
    if state.m.shape != param.shape:
        raise ValueError(f"optimizer state shape {state.m.shape} != parameter {param.shape}")
    g = param.grad if param.grad is not None else np.zeros_like(param.data)
    state.step += 1
    state.m = beta1 * state.m + (1.0 - beta1) * g
    state.v = beta2 * state.v + (1.0 - beta2) * g * g
    m_hat = state.m / (1.0 - beta1**state.step)
    v_hat = state.v / (1.0 - beta2**state.step)
    update = m_hat / (np.sqrt(v_hat) + eps) + weight_decay * param.data
    param.data = (param.data - lr * update).astype(param.dtype, copy=False)


@dataclass
class AdamW:
    params: list[Parameter]
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    states: list[AdamWState] = field(init=False)
    steps_taken: int = field(init=False, default=0)

    def __post_init__(self):
        self.states = [AdamWState.like(p) for p in self.params]

    def step(self) -> None:
        for p, s in zip(self.params, self.states):
            adamw_step(p, s, self.lr, self.beta1, self.beta2, self.eps, self.weight_decay)
        self.steps_taken += 1

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
