"""Minimal reverse-mode automatic differentiation over numpy arrays.

A Tensor records the operation that produced it; calling backward() on a
scalar result accumulates exact gradients into every reachable tensor with
requires_grad set.  Everything is float64.  The op set is exactly what the
attention encoder/decoder and the policy-gradient loss need: elementwise
arithmetic with broadcasting, matmul (including stacked batches), a few
nonlinearities, reductions, row gather/scatter and segment reductions.

Wrap evaluation-only code in ``with no_grad():`` to skip tape building.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import ShapeError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to `shape` (reverses numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward",
                 "_grad_borrowed")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad and _GRAD_ENABLED
        self._parents = ()
        self._backward = None
        self._grad_borrowed = False

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _make(data, parents, backward):
        out = Tensor(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(p for p in parents if p.requires_grad)
            out._backward = backward
        return out

    def backward(self):
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar tensor")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _accumulate(self, g):
        # First contribution is borrowed without a copy; reversed-topological
        # order guarantees it is final and only ever read.  A second
        # contribution reallocates, so borrowed buffers are never mutated.
        if self.grad is None:
            if g.shape != self.data.shape:
                g = np.broadcast_to(g, self.data.shape)
            self.grad = g
            self._grad_borrowed = True
        elif self._grad_borrowed:
            self.grad = self.grad + g
            self._grad_borrowed = False
        else:
            self.grad += g

    # -- arithmetic ----------------------------------------------------------

    @staticmethod
    def _wrap(x):
        return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))

    def __add__(self, other):
        other = Tensor._wrap(other)

        def back(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.data.shape))
        return Tensor._make(self.data + other.data, (self, other), back)

    __radd__ = __add__

    def __neg__(self):
        def back(g):
            self._accumulate(-g)
        return Tensor._make(-self.data, (self,), back)

    def __sub__(self, other):
        return self + (-Tensor._wrap(other))

    def __rsub__(self, other):
        return Tensor._wrap(other) + (-self)

    def __mul__(self, other):
        other = Tensor._wrap(other)

        def back(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.data.shape))
        return Tensor._make(self.data * other.data, (self, other), back)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._wrap(other)

        def back(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(
                    -g * self.data / (other.data * other.data), other.data.shape))
        return Tensor._make(self.data / other.data, (self, other), back)

    def __rtruediv__(self, other):
        return Tensor._wrap(other) / self

    def __pow__(self, exponent: float):
        def back(g):
            self._accumulate(g * exponent * self.data ** (exponent - 1))
        return Tensor._make(self.data ** exponent, (self,), back)

    def __matmul__(self, other):
        other = Tensor._wrap(other)

        def back(g):
            if self.requires_grad:
                ga = g @ np.swapaxes(other.data, -1, -2)
                self._accumulate(_unbroadcast(ga, self.data.shape))
            if other.requires_grad:
                gb = np.swapaxes(self.data, -1, -2) @ g
                other._accumulate(_unbroadcast(gb, other.data.shape))
        return Tensor._make(self.data @ other.data, (self, other), back)

    # -- shape ops -----------------------------------------------------------

    def reshape(self, *shape):
        old = self.data.shape

        def back(g):
            self._accumulate(g.reshape(old))
        return Tensor._make(self.data.reshape(*shape), (self,), back)

    def sum(self, axis=None, keepdims=False):
        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.data.shape))
        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), back)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            count = self.data.size
        else:
            count = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- nonlinearities -------------------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)

        def back(g):
            self._accumulate(g * out_data)
        return Tensor._make(out_data, (self,), back)

    def log(self):
        def back(g):
            self._accumulate(g / self.data)
        return Tensor._make(np.log(self.data), (self,), back)

    def tanh(self):
        out_data = np.tanh(self.data)

        def back(g):
            self._accumulate(g * (1.0 - out_data * out_data))
        return Tensor._make(out_data, (self,), back)

    def sqrt(self):
        out_data = np.sqrt(self.data)

        def back(g):
            self._accumulate(g * 0.5 / out_data)
        return Tensor._make(out_data, (self,), back)

    def relu(self):
        keep = self.data > 0

        def back(g):
            self._accumulate(g * keep)
        return Tensor._make(np.where(keep, self.data, 0.0), (self,), back)

    def leaky_relu(self, slope: float = 0.2):
        pos = self.data > 0
        factor = np.where(pos, 1.0, slope)

        def back(g):
            self._accumulate(g * factor)
        return Tensor._make(self.data * factor, (self,), back)

    def item(self) -> float:
        return float(self.data)


# -- indexed / segmented ops ------------------------------------------------


def take_rows(t: Tensor, idx) -> Tensor:
    """Rows t[idx] along axis 0; gradient scatter-adds back."""
    idx = np.asarray(idx, dtype=np.int64)

    def back(g):
        full = np.zeros_like(t.data)
        np.add.at(full, idx, g)
        t._accumulate(full)
    return Tensor._make(t.data[idx], (t,), back)


def segment_sum(t: Tensor, starts: np.ndarray) -> Tensor:
    """Sum of contiguous row segments: segment i is rows starts[i]:starts[i+1]."""
    counts = np.diff(np.append(starts, len(t.data)))

    def back(g):
        t._accumulate(np.repeat(g, counts, axis=0))
    return Tensor._make(np.add.reduceat(t.data, starts, axis=0), (t,), back)


def repeat_rows(t: Tensor, counts: np.ndarray) -> Tensor:
    """Repeat row i counts[i] times; gradient is the segment sum."""
    counts = np.asarray(counts, dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])

    def back(g):
        t._accumulate(np.add.reduceat(g, starts, axis=0))
    return Tensor._make(np.repeat(t.data, counts, axis=0), (t,), back)


def transpose2d(t: Tensor) -> Tensor:
    def back(g):
        t._accumulate(g.T)
    return Tensor._make(t.data.T, (t,), back)


def permute(t: Tensor, axes) -> Tensor:
    inverse = np.argsort(axes)

    def back(g):
        t._accumulate(np.transpose(g, inverse))
    return Tensor._make(np.transpose(t.data, axes), (t,), back)


def stack_rows(tensors) -> Tensor:
    """Stack same-shape tensors along a new leading axis."""
    ts = list(tensors)

    def back(g):
        for i, t in enumerate(ts):
            if t.requires_grad:
                t._accumulate(g[i])
    return Tensor._make(np.stack([t.data for t in ts]), tuple(ts), back)


def parameters_vector(tensors) -> np.ndarray:
    """Flatten tensor list into one vector (for norms and tests)."""
    return np.concatenate([t.data.ravel() for t in tensors])


def gradients_vector(tensors) -> np.ndarray:
    return np.concatenate([
        (t.grad if t.grad is not None else np.zeros_like(t.data)).ravel()
        for t in tensors])


def zero_grads(tensors):
    for t in tensors:
        t.grad = None
        t._grad_borrowed = False
