"""Parameter containers.

A :class:`Module` is a plain object whose attributes are Parameters, other
Modules or lists of Modules.  ``named_parameters`` walks them in attribute
order, which gives stable checkpoint names like ``trajectory.spatial.0.attn.q.W``.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import functional as Fn
from .tensor import Parameter, Tensor


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for n, p in own.items():
            arr = np.asarray(state[n])
            if arr.shape != p.shape:
                raise ValueError(f"{n}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype)

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float64,
                 bias: bool = True):
        self.W = Parameter(_uniform(rng, (d_out, d_in), d_in, dtype))
        self.b = Parameter(np.zeros(d_out, dtype=dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return Fn.linear(x, self.W, self.b)


class LayerNorm(Module):
    def __init__(self, d: int, dtype=np.float64):
        self.gamma = Parameter(np.ones(d, dtype=dtype))
        self.beta = Parameter(np.zeros(d, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return Fn.layer_norm(x, self.gamma, self.beta)


class MultiHeadAttention(Module):
    def __init__(self, d: int, n_heads: int, rng, dtype=np.float64):
        if d % n_heads:
            from ..errors import IndivisibleHeads
            raise IndivisibleHeads(f"width {d} is not divisible by {n_heads} heads")
        self.q = Linear(d, d, rng, dtype)
        # a key bias shifts every score in a row equally, so softmax ignores it
        self.k = Linear(d, d, rng, dtype, bias=False)
        self.v = Linear(d, d, rng, dtype)
        self.o = Linear(d, d, rng, dtype)
        self.n_heads = n_heads

    def __call__(self, x: Tensor) -> Tensor:
        return Fn.multi_head_attention(x, self, self.n_heads)


class TransformerBlock(Module):
    def __init__(self, d: int, n_heads: int, rng, dtype=np.float64, mlp_ratio: int = 4):
        self.ln1 = LayerNorm(d, dtype)
        self.attn = MultiHeadAttention(d, n_heads, rng, dtype)
        self.ln2 = LayerNorm(d, dtype)
        self.fc1 = Linear(d, mlp_ratio * d, rng, dtype)
        self.fc2 = Linear(mlp_ratio * d, d, rng, dtype)
        self.n_heads = n_heads

    def __call__(self, x: Tensor) -> Tensor:
        return Fn.transformer_block(x, self)
