"""Reverse-mode differentiation over float64 numpy arrays.

A small tape: each operation returns a :class:`Node` holding the forward
value and, when any input requires gradients, a closure that propagates the
output gradient to the inputs. Gradient closures are only allocated along
paths that lead to trainable parameters, so running a graph purely for
inference costs little more than the raw numpy operations.

All matrix products go through :mod:`loadcast.numcore`, keeping the fixed
accumulation order (and therefore bit-exact reproducibility) of the rest of
the package.
"""

from __future__ import annotations

import numpy as np

from . import numcore
from .errors import DimensionError


class Node:
    __slots__ = ("value", "grad", "needs_grad", "_parents", "_backward")

    def __init__(self, value: np.ndarray, needs_grad: bool = False):
        self.value = value
        self.grad: np.ndarray | None = None
        self.needs_grad = needs_grad
        self._parents: tuple[Node, ...] = ()
        self._backward = None

    def __repr__(self):
        return f"Node(shape={np.shape(self.value)}, needs_grad={self.needs_grad})"


def constant(x) -> Node:
    return Node(np.asarray(x, dtype=np.float64))


def parameter(x) -> Node:
    return Node(np.asarray(x, dtype=np.float64), needs_grad=True)


def _as_node(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _make(value, parents, backward) -> Node:
    out = Node(value, needs_grad=any(p.needs_grad for p in parents))
    if out.needs_grad:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accumulate(node: Node, g: np.ndarray) -> None:
    if node.grad is None:
        node.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
    else:
        node.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape of the operand it belongs to."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(root: Node) -> None:
    """Backpropagate from a scalar-valued node, filling ``grad`` on every
    parameter node it depends on."""
    if np.size(root.value) != 1:
        raise DimensionError(f"backward needs a scalar root, got shape {np.shape(root.value)}")
    topo: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen or not node.needs_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    root.grad = np.ones_like(root.value)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# elementwise and broadcasting ops


def add(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    out_val = a.value + b.value

    def bw(g):
        if a.needs_grad:
            _accumulate(a, _unbroadcast(g, a.value.shape))
        if b.needs_grad:
            _accumulate(b, _unbroadcast(g, b.value.shape))

    return _make(out_val, (a, b), bw)


def sub(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    out_val = a.value - b.value

    def bw(g):
        if a.needs_grad:
            _accumulate(a, _unbroadcast(g, a.value.shape))
        if b.needs_grad:
            _accumulate(b, _unbroadcast(-g, b.value.shape))

    return _make(out_val, (a, b), bw)


def mul(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    out_val = a.value * b.value

    def bw(g):
        if a.needs_grad:
            _accumulate(a, _unbroadcast(g * b.value, a.value.shape))
        if b.needs_grad:
            _accumulate(b, _unbroadcast(g * a.value, b.value.shape))

    return _make(out_val, (a, b), bw)


def scale(a, s: float) -> Node:
    a = _as_node(a)

    def bw(g):
        _accumulate(a, g * s)

    return _make(a.value * s, (a,), bw)


def pow_scalar(a, p: float) -> Node:
    """a ** p elementwise, for strictly positive bases."""
    a = _as_node(a)
    out_val = a.value**p

    def bw(g):
        _accumulate(a, g * p * a.value ** (p - 1.0))

    return _make(out_val, (a,), bw)


# ---------------------------------------------------------------------------
# structural ops


def matmul(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    out_val = numcore.matmul(a.value, b.value)

    def bw(g):
        if a.needs_grad:
            _accumulate(a, numcore.matmul(g, b.value.T))
        if b.needs_grad:
            _accumulate(b, numcore.matmul(a.value.T, g))

    return _make(out_val, (a, b), bw)


def bmm(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    out_val = numcore.batched_matmul(a.value, b.value)

    def bw(g):
        if a.needs_grad:
            _accumulate(a, numcore.batched_matmul(g, np.swapaxes(b.value, -1, -2)))
        if b.needs_grad:
            _accumulate(b, numcore.batched_matmul(np.swapaxes(a.value, -1, -2), g))

    return _make(out_val, (a, b), bw)


def transpose(a) -> Node:
    a = _as_node(a)

    def bw(g):
        _accumulate(a, g.T)

    return _make(a.value.T, (a,), bw)


def swap_last_axes(a) -> Node:
    a = _as_node(a)

    def bw(g):
        _accumulate(a, np.swapaxes(g, -1, -2))

    return _make(np.swapaxes(a.value, -1, -2), (a,), bw)


def reshape(a, shape) -> Node:
    a = _as_node(a)
    in_shape = a.value.shape

    def bw(g):
        _accumulate(a, g.reshape(in_shape))

    return _make(a.value.reshape(shape), (a,), bw)


def concat_cols(a, b) -> Node:
    """Concatenate two 2-d arrays along columns (LSTM [h, x] stacking)."""
    a, b = _as_node(a), _as_node(b)
    na = a.value.shape[1]
    out_val = np.concatenate([a.value, b.value], axis=1)

    def bw(g):
        if a.needs_grad:
            _accumulate(a, g[:, :na])
        if b.needs_grad:
            _accumulate(b, g[:, na:])

    return _make(out_val, (a, b), bw)


def take_position(a, t: int) -> Node:
    """Select one position from axis 1 of a (batch, length, dim) array."""
    a = _as_node(a)
    out_val = a.value[:, t, :]

    def bw(g):
        full = np.zeros_like(a.value)
        full[:, t, :] = g
        _accumulate(a, full)

    return _make(out_val, (a,), bw)


# ---------------------------------------------------------------------------
# nonlinearities and reductions


def sigmoid(a) -> Node:
    a = _as_node(a)
    s = numcore.sigmoid(a.value)

    def bw(g):
        _accumulate(a, g * s * (1.0 - s))

    return _make(s, (a,), bw)


def tanh(a) -> Node:
    a = _as_node(a)
    t = numcore.tanh(a.value)

    def bw(g):
        _accumulate(a, g * (1.0 - t * t))

    return _make(t, (a,), bw)


def relu(a) -> Node:
    a = _as_node(a)
    out_val = numcore.relu(a.value)

    def bw(g):
        _accumulate(a, g * (a.value > 0.0))

    return _make(out_val, (a,), bw)


def softmax_last(a) -> Node:
    """Stable softmax over the last axis; rows sum to one."""
    a = _as_node(a)
    s = numcore.softmax_rows(a.value)

    def bw(g):
        inner = np.sum(g * s, axis=-1, keepdims=True)
        _accumulate(a, s * (g - inner))

    return _make(s, (a,), bw)


def mean_last(a) -> Node:
    """Mean over the last axis, keeping the axis for broadcasting."""
    a = _as_node(a)
    n = a.value.shape[-1]
    out_val = np.mean(a.value, axis=-1, keepdims=True)

    def bw(g):
        _accumulate(a, np.broadcast_to(g / n, a.value.shape).copy())

    return _make(out_val, (a,), bw)


def inv_norm_last(a) -> Node:
    """Reciprocal Euclidean norm of each row over the last axis (keepdims).

    Rows with zero norm map to 0 instead of dividing by zero; those rows
    also receive zero gradient, matching the cosine-similarity guard.
    """
    a = _as_node(a)
    sumsq = np.sum(a.value * a.value, axis=-1, keepdims=True)
    positive = sumsq > 0.0
    inv = np.where(positive, 1.0 / np.sqrt(np.where(positive, sumsq, 1.0)), 0.0)

    def bw(g):
        # d(s^-1/2)/da_j = -a_j * s^(-3/2) on rows with positive norm
        coeff = np.where(positive, -(inv**3), 0.0)
        _accumulate(a, g * coeff * a.value)

    return _make(inv, (a,), bw)


def mean_all(a) -> Node:
    """Scalar mean of every element (the loss reduction)."""
    a = _as_node(a)
    n = a.value.size
    out_val = np.asarray(np.mean(a.value))

    def bw(g):
        _accumulate(a, np.broadcast_to(g / n, a.value.shape).copy())

    return _make(out_val, (a,), bw)
