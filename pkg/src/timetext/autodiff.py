"""Minimal reverse-mode automatic differentiation on numpy arrays.

Everything is float64. A ``Tensor`` wraps an ndarray and records the ops
that produced it; ``backward()`` walks the tape in reverse topological
order. Only the ops needed by the models in this package are provided
(broadcasting arithmetic, matmul, reductions, smooth nonlinearities,
gather/concat/slicing, log-softmax and a masked cross-entropy).
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "tensor",
    "concatenate",
    "stack",
    "log_softmax",
    "softmax",
    "gelu",
    "cross_entropy",
]


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    # sum away leading axes added by broadcasting
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    """A node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100  # keep numpy from hijacking reflected ops

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- constructors -------------------------------------------------

    @staticmethod
    def _make(data, parents, backward) -> "Tensor":
        out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # -- bookkeeping ---------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack = [self]
        while stack:  # iterative DFS; graphs can be deep
            node = stack[-1]
            if id(node) in seen:
                stack.pop()
                continue
            unvisited = [p for p in node._parents if id(p) not in seen and p.requires_grad]
            if unvisited:
                stack.extend(unvisited)
            else:
                seen.add(id(node))
                topo.append(node)
                stack.pop()
        self._accumulate(np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=np.float64))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        other = tensor(other)
        out = Tensor._make(self.data + other.data, (self, other), None)

        def back(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.data.shape))

        out._backward = back
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor._make(-self.data, (self,), None)

        def back(g):
            if self.requires_grad:
                self._accumulate(-g)

        out._backward = back
        return out

    def __sub__(self, other):
        return self + (-tensor(other))

    def __rsub__(self, other):
        return tensor(other) + (-self)

    def __mul__(self, other):
        other = tensor(other)
        out = Tensor._make(self.data * other.data, (self, other), None)

        def back(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        out._backward = back
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * (tensor(other) ** -1.0)

    def __rtruediv__(self, other):
        return tensor(other) * (self ** -1.0)

    def __pow__(self, p: float):
        p = float(p)
        out = Tensor._make(self.data ** p, (self,), None)

        def back(g):
            if self.requires_grad:
                self._accumulate(g * p * self.data ** (p - 1.0))

        out._backward = back
        return out

    def __matmul__(self, other):
        other = tensor(other)
        out = Tensor._make(self.data @ other.data, (self, other), None)

        def back(g):
            a, b = self.data, other.data
            if self.requires_grad:
                if b.ndim == 1:
                    ga = np.outer(g, b) if a.ndim == 2 else g[..., None] * b
                else:
                    ga = g @ np.swapaxes(b, -1, -2)
                self._accumulate(_unbroadcast(ga, a.shape))
            if other.requires_grad:
                if a.ndim == 1:
                    gb = np.outer(a, g) if b.ndim == 2 else a[..., None] * g
                else:
                    gb = np.swapaxes(a, -1, -2) @ g
                other._accumulate(_unbroadcast(gb, b.shape))

        out._backward = back
        return out

    # -- reductions ----------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out = Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), None)

        def back(g):
            if not self.requires_grad:
                return
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.data.shape).copy())
            else:
                if not keepdims:
                    g = np.expand_dims(g, axis)
                self._accumulate(np.broadcast_to(g, self.data.shape).copy())

        out._backward = back
        return out

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- shape ops -----------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        orig = self.data.shape
        out = Tensor._make(self.data.reshape(shape), (self,), None)

        def back(g):
            if self.requires_grad:
                self._accumulate(g.reshape(orig))

        out._backward = back
        return out

    def swapaxes(self, a: int, b: int):
        out = Tensor._make(np.swapaxes(self.data, a, b), (self,), None)

        def back(g):
            if self.requires_grad:
                self._accumulate(np.swapaxes(g, a, b))

        out._backward = back
        return out

    @property
    def T(self):
        return self.swapaxes(-1, -2)

    def __getitem__(self, idx):
        out = Tensor._make(self.data[idx], (self,), None)

        def back(g):
            if self.requires_grad:
                full = np.zeros_like(self.data)
                np.add.at(full, idx, g)
                self._accumulate(full)

        out._backward = back
        return out

    # -- elementwise nonlinearities -------------------------------------

    def exp(self):
        val = np.exp(self.data)
        out = Tensor._make(val, (self,), None)

        def back(g):
            if self.requires_grad:
                self._accumulate(g * val)

        out._backward = back
        return out

    def log(self):
        out = Tensor._make(np.log(self.data), (self,), None)

        def back(g):
            if self.requires_grad:
                self._accumulate(g / self.data)

        out._backward = back
        return out

    def tanh(self):
        val = np.tanh(self.data)
        out = Tensor._make(val, (self,), None)

        def back(g):
            if self.requires_grad:
                self._accumulate(g * (1.0 - val * val))

        out._backward = back
        return out

    def sqrt(self):
        return self ** 0.5


def tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def concatenate(parts: list[Tensor], axis: int = 0) -> Tensor:
    parts = [tensor(p) for p in parts]
    out = Tensor._make(np.concatenate([p.data for p in parts], axis=axis), parts, None)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(int(lo), int(hi))
                p._accumulate(g[tuple(sl)])

    out._backward = back
    return out


def stack(parts: list[Tensor], axis: int = 0) -> Tensor:
    parts = [tensor(p) for p in parts]
    out = Tensor._make(np.stack([p.data for p in parts], axis=axis), parts, None)

    def back(g):
        moved = np.moveaxis(g, axis, 0)
        for i, p in enumerate(parts):
            if p.requires_grad:
                p._accumulate(moved[i])

    out._backward = back
    return out


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU; smooth, so finite-difference checks are clean."""
    x = tensor(x)
    inner = erf(x.data / np.sqrt(2.0))
    val = 0.5 * x.data * (1.0 + inner)
    out = Tensor._make(val, (x,), None)

    def back(g):
        if x.requires_grad:
            pdf = np.exp(-0.5 * x.data * x.data) / np.sqrt(2.0 * np.pi)
            x._accumulate(g * (0.5 * (1.0 + inner) + x.data * pdf))

    out._backward = back
    return out


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    val = shifted - lse
    out = Tensor._make(val, (x,), None)

    def back(g):
        if x.requires_grad:
            sm = np.exp(val)
            x._accumulate(g - sm * g.sum(axis=axis, keepdims=True))

    out._backward = back
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return log_softmax(x, axis=axis).exp()


def cross_entropy(logits: Tensor, labels: np.ndarray, ignore_index: int = -1) -> Tensor:
    """Mean negative log-likelihood over positions whose label != ignore_index.

    `logits` has shape (..., V); `labels` the matching integer shape.
    All positions ignored -> defined as 0 (constant, no gradient).
    """
    labels = np.asarray(labels)
    mask = labels != ignore_index
    n = int(mask.sum())
    if n == 0:
        return Tensor(0.0)
    logp = log_softmax(logits, axis=-1)
    flat = logp.reshape(-1, logp.shape[-1])
    flat_labels = labels.reshape(-1)
    flat_mask = mask.reshape(-1)
    rows = np.nonzero(flat_mask)[0]
    picked = flat[rows, flat_labels[rows]]
    return -picked.sum() * (1.0 / n)
