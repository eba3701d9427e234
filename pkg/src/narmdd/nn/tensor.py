"""Tiny reverse-mode autodiff over float64 numpy arrays.

Only the operations needed by the attention, GRU and gating networks are
provided. A graph is recorded only when some input has ``requires_grad``
set, so plain inference builds no graph and is safe to run from several
threads at once.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def sigmoid_kernel(x: np.ndarray) -> np.ndarray:
    # exp(-log(1 + e^-x)) never overflows
    return np.exp(-np.logaddexp(0.0, -x))


def softmax_kernel(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax_kernel(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False,
                 _parents: tuple["Tensor", ...] = (),
                 _backward: Callable[[np.ndarray], None] | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def backward(self) -> None:
        if self.data.size != 1:
            raise ShapeError("backward() needs a scalar output")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _accum(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        g = _unbroadcast(g, self.data.shape)
        self.grad = g if self.grad is None else self.grad + g

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: add(self, neg(as_tensor(o)))
    __rsub__ = lambda self, o: add(o, neg(self))
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __matmul__ = lambda self, o: matmul(self, o)
    __neg__ = lambda self: neg(self)
    __truediv__ = lambda self, o: mul(self, 1.0 / o) if np.isscalar(o) else div(self, o)
    __pow__ = lambda self, p: power(self, p)
    __getitem__ = lambda self, idx: getitem(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor],
          backward: Callable[[np.ndarray], None]) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward)
    return Tensor(data)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        a._accum(g)
        b._accum(g)
    return _make(a.data + b.data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: a._accum(-g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        a._accum(g * b.data)
        b._accum(g * a.data)
    return _make(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        a._accum(g / b.data)
        b._accum(-g * a.data / b.data ** 2)
    return _make(a.data / b.data, (a, b), bw)


def power(a: Tensor, p: float) -> Tensor:
    out = a.data ** p
    return _make(out, (a,), lambda g: a._accum(g * p * a.data ** (p - 1)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch {a.shape} x {b.shape}")

    def bw(g):
        a._accum(g @ b.data.T)
        b._accum(a.data.T @ g)
    return _make(a.data @ b.data, (a, b), bw)


def transpose(a: Tensor) -> Tensor:
    return _make(a.data.T, (a,), lambda g: a._accum(g.T))


def getitem(a: Tensor, idx) -> Tensor:
    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accum(full)
    return _make(a.data[idx], (a,), bw)


def take_rows(table: Tensor, ids) -> Tensor:
    """Embedding lookup: rows of ``table`` selected by integer ids."""
    ids = np.asarray(ids, dtype=np.int64)
    return getitem(table, ids)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, part in zip(tensors, np.split(g, splits, axis=axis)):
            t._accum(part)
    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def broadcast_rows(v: Tensor, n: int) -> Tensor:
    """Repeat a vector (or 1×d row) ``n`` times as an n×d matrix."""
    row = v.data.reshape(1, -1)
    return _make(np.repeat(row, n, axis=0), (v,),
                 lambda g: v._accum(g.sum(axis=0).reshape(v.shape)))


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: a._accum(g.reshape(a.shape)))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.shape).copy())
    return _make(out, (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return tsum(a, axis, keepdims) * (1.0 / n)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: a._accum(g * out))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: a._accum(g / a.data))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: a._accum(g * (1.0 - out ** 2)))


def sigmoid(a: Tensor) -> Tensor:
    out = sigmoid_kernel(a.data)
    return _make(out, (a,), lambda g: a._accum(g * out * (1.0 - out)))


def relu(a: Tensor) -> Tensor:
    on = a.data > 0
    return _make(np.where(on, a.data, 0.0), (a,), lambda g: a._accum(g * on))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    out = softmax_kernel(a.data, axis)

    def bw(g):
        a._accum(out * (g - (g * out).sum(axis=axis, keepdims=True)))
    return _make(out, (a,), bw)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    out = log_softmax_kernel(a.data, axis)

    def bw(g):
        a._accum(g - np.exp(out) * g.sum(axis=axis, keepdims=True))
    return _make(out, (a,), bw)
