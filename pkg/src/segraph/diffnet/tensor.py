"""Reverse-mode tensors.

Each :class:`Tensor` records the tensors it was computed from and a closure
that pushes its gradient back to them.  ``Tensor.backward`` walks the tape in
reverse topological order.  Values are float64 numpy arrays.
"""
from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, value, requires_grad=False, name=None, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g, owned=False):
        """Add ``g`` into ``.grad``.  ``owned`` arrays are adopted without a copy."""
        if self.grad is None:
            self.grad = g if owned else np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        """Propagate ``grad`` (default ones) to every tensor on the tape."""
        if grad is None:
            grad = np.ones_like(self.value)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar; all delegate to the functions below
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(value, parents, backward):
    parents = tuple(p for p in parents if p.requires_grad)
    if not parents:
        return Tensor(value)
    return Tensor(value, requires_grad=True, parents=parents, backward=backward)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.shape))

    return _result(a.value + b.value, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g, b.shape))

    return _result(a.value - b.value, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.value, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.value, b.shape))

    return _result(a.value * b.value, (a, b), backward)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad:
            a.accumulate(g @ b.value.T)
        if b.requires_grad:
            b.accumulate(a.value.T @ g)

    return _result(a.value @ b.value, (a, b), backward)


def relu(x):
    x = as_tensor(x)
    out = np.maximum(x.value, 0.0)

    def backward(g):
        x.accumulate(g * (out > 0), owned=True)

    return _result(out, (x,), backward)


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.value)

    def backward(g):
        x.accumulate(g * out)

    return _result(out, (x,), backward)


def log_clamped(x, floor=1e-12):
    """Natural log of ``max(x, floor)``; zero gradient where clamped."""
    x = as_tensor(x)
    safe = np.maximum(x.value, floor)
    active = x.value > floor

    def backward(g):
        x.accumulate(np.where(active, g / safe, 0.0))

    return _result(np.log(safe), (x,), backward)


def total(x):
    x = as_tensor(x)

    def backward(g):
        x.accumulate(np.broadcast_to(g, x.shape))

    return _result(np.sum(x.value), (x,), backward)


def reshape(x, shape):
    x = as_tensor(x)

    def backward(g):
        x.accumulate(g.reshape(x.shape))

    return _result(x.value.reshape(shape), (x,), backward)


def getitem(x, idx):
    x = as_tensor(x)

    def backward(g):
        full = np.zeros_like(x.value)
        np.add.at(full, idx, g)
        x.accumulate(full)

    return _result(x.value[idx], (x,), backward)


def take_rows(x, index):
    """Gather rows ``x[index]`` of a 1-D or 2-D tensor."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)

    def backward(g):
        full = np.zeros_like(x.value)
        np.add.at(full, index, g)
        x.accumulate(full)

    return _result(x.value[index], (x,), backward)


def segment_sum(x, segment_ids, num_segments):
    """Sum rows of ``x`` that share a segment id; empty segments give zeros."""
    x = as_tensor(x)
    segment_ids = np.asarray(segment_ids, dtype=np.intp)
    out = np.zeros((num_segments,) + x.shape[1:])
    np.add.at(out, segment_ids, x.value)

    def backward(g):
        x.accumulate(g[segment_ids])

    return _result(out, (x,), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, part in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t.accumulate(part)

    return _result(np.concatenate([t.value for t in tensors], axis=axis), tensors, backward)


def softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        x.accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _result(out, (x,), backward)


def segment_softmax(x, segment_ids, num_segments):
    """Softmax of a 1-D tensor within groups sharing a segment id.

    The per-group maximum is subtracted before exponentiation.
    """
    x = as_tensor(x)
    segment_ids = np.asarray(segment_ids, dtype=np.intp)
    if x.value.ndim != 1 or len(segment_ids) != len(x.value):
        raise ValueError("segment_softmax expects a 1-D tensor and one id per entry")
    peak = np.full(num_segments, -np.inf)
    np.maximum.at(peak, segment_ids, x.value)
    e = np.exp(x.value - peak[segment_ids])
    denom = np.zeros(num_segments)
    np.add.at(denom, segment_ids, e)
    out = e / denom[segment_ids]

    def backward(g):
        dot = np.zeros(num_segments)
        np.add.at(dot, segment_ids, g * out)
        x.accumulate(out * (g - dot[segment_ids]), owned=True)

    return _result(out, (x,), backward)
