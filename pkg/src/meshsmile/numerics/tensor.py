"""Reverse-mode automatic differentiation over dense numpy arrays.

A :class:`Tensor` records the op that produced it together with a closure
that pushes its gradient back to its parents.  Calling
:meth:`Tensor.backward` on a scalar walks the graph in reverse topological
order.  The op set is deliberately small: everything the networks in this
package need, nothing more.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference, optimizer)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "__weakref__")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _make(cls, data: np.ndarray, parents: Sequence["Tensor"], backward) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = track
        if track:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    def _accum(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            # grads are never mutated in place, so views are safe to keep
            self.grad = np.asarray(g, dtype=self.data.dtype)
        else:
            self.grad = self.grad + g

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # -- backward -------------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every leaf's ``.grad``."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _toposort(self)
        for node in order:
            if node is not self and node._backward is not None:
                node.grad = None
        self.grad = np.asarray(grad, dtype=self.data.dtype).reshape(self.data.shape)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # intermediate grads are not needed once propagated
                if node is not self:
                    node.grad = None

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other):
        other = _lift(other, self.dtype)
        a, b = self, other

        def bw(g):
            a._accum(_unbroadcast(g, a.shape))
            b._accum(_unbroadcast(g, b.shape))

        return Tensor._make(a.data + b.data, (a, b), bw)

    __radd__ = __add__

    def __sub__(self, other):
        other = _lift(other, self.dtype)
        a, b = self, other

        def bw(g):
            a._accum(_unbroadcast(g, a.shape))
            b._accum(_unbroadcast(-g, b.shape))

        return Tensor._make(a.data - b.data, (a, b), bw)

    def __rsub__(self, other):
        return _lift(other, self.dtype) - self

    def __mul__(self, other):
        other = _lift(other, self.dtype)
        a, b = self, other

        def bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g * a.data, b.shape))

        return Tensor._make(a.data * b.data, (a, b), bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _lift(other, self.dtype)
        a, b = self, other
        out_data = a.data / b.data

        def bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(-g * out_data / b.data, b.shape))

        return Tensor._make(out_data, (a, b), bw)

    def __rtruediv__(self, other):
        return _lift(other, self.dtype) / self

    def __neg__(self):
        a = self

        def bw(g):
            a._accum(-g)

        return Tensor._make(-a.data, (a,), bw)

    def __pow__(self, p: float):
        a = self

        def bw(g):
            a._accum(g * p * a.data ** (p - 1))

        return Tensor._make(a.data**p, (a,), bw)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        a = self

        def bw(g):
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a._accum(full)

        return Tensor._make(a.data[idx], (a,), bw)

    # -- shape ----------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self

        def bw(g):
            a._accum(g.reshape(a.shape))

        return Tensor._make(a.data.reshape(shape), (a,), bw)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        a = self

        def bw(g):
            a._accum(g.transpose(np.argsort(axes)))

        return Tensor._make(a.data.transpose(axes), (a,), bw)

    def swapaxes(self, i: int, j: int):
        axes = list(range(self.ndim))
        axes[i], axes[j] = axes[j], axes[i]
        return self.transpose(tuple(axes))

    @property
    def T(self):
        return self.transpose()

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        a = self

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accum(np.broadcast_to(g, a.shape))

        return Tensor._make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.data.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            n = math.prod(self.shape[ax] for ax in axes)
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def max(self, axis: int, keepdims: bool = False):
        """Maximum along one axis; the gradient goes to the first maximal entry."""
        a = self
        arg = np.argmax(a.data, axis=axis)
        out = np.take_along_axis(a.data, np.expand_dims(arg, axis), axis=axis)
        if not keepdims:
            out = np.squeeze(out, axis=axis)

        def bw(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            full = np.zeros_like(a.data)
            np.put_along_axis(full, np.expand_dims(arg, axis), g, axis=axis)
            a._accum(full)

        return Tensor._make(out, (a,), bw)

    # -- elementwise ----------------------------------------------------------

    def exp(self):
        a = self
        out = np.exp(a.data)

        def bw(g):
            a._accum(g * out)

        return Tensor._make(out, (a,), bw)

    def log(self):
        a = self

        def bw(g):
            a._accum(g / a.data)

        return Tensor._make(np.log(a.data), (a,), bw)

    def sqrt(self):
        a = self
        out = np.sqrt(a.data)

        def bw(g):
            a._accum(g * 0.5 / out)

        return Tensor._make(out, (a,), bw)

    def tanh(self):
        a = self
        out = np.tanh(a.data)

        def bw(g):
            a._accum(g * (1.0 - out * out))

        return Tensor._make(out, (a,), bw)

    def sigmoid(self):
        a = self
        out = _sigmoid_np(a.data)

        def bw(g):
            a._accum(g * out * (1.0 - out))

        return Tensor._make(out, (a,), bw)

    def clip(self, lo: float, hi: float):
        a = self
        inside = (a.data >= lo) & (a.data <= hi)

        def bw(g):
            a._accum(g * inside)

        return Tensor._make(np.clip(a.data, lo, hi), (a,), bw)


class Parameter(Tensor):
    """A named leaf tensor that always tracks gradients."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _lift(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    return expit(x)


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a = _lift(a, None)
    b = _lift(b, a.dtype)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul expects operands with at least 2 dimensions")

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return Tensor._make(a.data @ b.data, (a, b), bw)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accum(piece)

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    expanded = [t.reshape(t.shape[:axis % (t.ndim + 1)] + (1,) + t.shape[axis % (t.ndim + 1):])
                for t in tensors]
    return concat(expanded, axis=axis)


def where(mask: np.ndarray, a, b) -> Tensor:
    """Select ``a`` where ``mask`` is true, else ``b``; ``mask`` is constant."""
    dtype = a.dtype if isinstance(a, Tensor) else (b.dtype if isinstance(b, Tensor) else None)
    a = _lift(a, dtype)
    b = _lift(b, dtype)
    mask = np.asarray(mask, dtype=bool)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(np.where(mask, g, 0.0), a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(np.where(mask, 0.0, g), b.shape))

    return Tensor._make(np.where(mask, a.data, b.data), (a, b), bw)


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Per-batch row gather: ``out[f, ...] = x[f, idx[f, ...]]``.

    ``x`` has shape ``[F, L, C]``; ``idx`` holds integer rows of shape
    ``[F, ...]``.  The backward pass is a scatter-add done with one
    ``bincount`` instead of ``np.add.at``.
    """
    F, L, C = x.shape
    idx = np.asarray(idx)
    fi = np.arange(F).reshape((F,) + (1,) * (idx.ndim - 1))
    out = x.data[fi, idx]

    def bw(g):
        flat = (fi * L + idx).reshape(-1)
        cols = (flat[:, None] * C + np.arange(C)).reshape(-1)
        full = np.bincount(cols, weights=g.reshape(-1), minlength=F * L * C)
        x._accum(full.reshape(F, L, C).astype(x.dtype, copy=False))

    return Tensor._make(out, (x,), bw)


def gather_max(x: Tensor, idx: np.ndarray) -> Tensor:
    """``out[f, l, :] = max_j x[f, idx[f, l, j], :]``.

    The gradient goes to the first maximal neighbour per channel.
    """
    F, L, C = x.shape
    flat_x = x.data.reshape(F * L, C)
    rows = np.asarray(idx) + (np.arange(F) * L)[:, None, None]  # flat source rows [F, L, k]
    gathered = flat_x[rows]  # [F, L, k, C]
    out = gathered.max(axis=2)
    if not (_GRAD_ENABLED and x.requires_grad):
        return Tensor(out)

    def bw(g):
        hit = gathered == out[:, :, None, :]
        if np.count_nonzero(hit) != hit.size // hit.shape[2]:
            # ties: keep only the first maximal neighbour
            first = hit.argmax(axis=2)
            hit = np.arange(hit.shape[2])[None, None, :, None] == first[:, :, None, :]
        k = hit.shape[2]
        pos = np.flatnonzero(hit)  # one hit per (f, l, c), ascending
        c = pos % C
        src = rows.reshape(-1)[pos // C] * C + c
        weights = g.reshape(-1)[(pos // (k * C)) * C + c]
        full = np.bincount(src, weights=weights, minlength=F * L * C)
        x._accum(full.reshape(F, L, C).astype(x.dtype, copy=False))

    return Tensor._make(out, (x,), bw)


def straight_through(forward_value: np.ndarray, surrogate: Tensor) -> Tensor:
    """Return ``forward_value`` while routing gradients into ``surrogate``."""
    s = surrogate

    def bw(g):
        s._accum(g)

    return Tensor._make(np.asarray(forward_value, dtype=s.dtype), (s,), bw)


def parameters_of(objs: Iterable) -> list[Parameter]:
    return [p for p in objs if isinstance(p, Parameter)]
