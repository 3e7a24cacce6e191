"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

A ``Var`` wraps an array and records enough structure to pull gradients
back through the graph. Operations accept plain numpy operands as
constants, so the same numerical code runs with or without gradient
tracking (pass arrays for a fast forward-only evaluation, pass a ``Var``
to differentiate).
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np


class NumericalError(RuntimeError):
    """A differentiable operation produced a NaN or Inf."""

    def __init__(self, tag: str):
        super().__init__(f"non-finite value produced by op '{tag}'")
        self.tag = tag


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to `shape`, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Var:
    """Node in the reverse-mode graph. Holds value, parents, and a vjp."""

    __slots__ = ("value", "grad", "_parents", "_vjp", "tag")

    # Make numpy defer binary ops to our reflected dunders.
    __array_ufunc__ = None

    def __init__(self, value, _parents=(), _vjp=None, tag="leaf"):
        self.value = _as_array(value)
        if not np.isfinite(self.value).all():
            raise NumericalError(tag)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = _parents
        self._vjp: Optional[Callable] = _vjp
        self.tag = tag

    @property
    def shape(self):
        return self.value.shape

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into .grad of every reachable node."""
        if self.value.size != 1:
            raise ValueError("backward() requires a scalar output")
        order = _toposort(self)
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                parent.grad = g if parent.grad is None else parent.grad + g

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Var):
            raise TypeError("division by a Var is not supported")
        return mul(self, 1.0 / _as_array(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        xv = self.value
        out = xv[idx]

        def grad_x(g):
            z = np.zeros_like(xv)
            np.add.at(z, idx, g)
            return z

        return _node(out, [(self, grad_x)], "getitem")

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        xv = self.value
        return _node(xv.reshape(shape), [(self, lambda g: g.reshape(xv.shape))], "reshape")

    def sum(self, axis=None):
        xv = self.value
        out = xv.sum(axis=axis)
        if axis is None:
            grad_x = lambda g: np.broadcast_to(g, xv.shape)
        else:
            grad_x = lambda g: np.broadcast_to(np.expand_dims(g, axis), xv.shape)
        return _node(out, [(self, grad_x)], "sum")

    def __repr__(self):
        return f"Var({self.value!r}, tag={self.tag!r})"


def _toposort(root: Var) -> list:
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order  # parents before children


def _node(value, parent_grads, tag) -> Var:
    parents = tuple(p for p, _ in parent_grads)
    fns = tuple(f for _, f in parent_grads)
    return Var(value, parents, lambda g: tuple(f(g) for f in fns), tag)


def value_of(x) -> np.ndarray:
    """Underlying array of a Var, or the array itself."""
    return x.value if isinstance(x, Var) else _as_array(x)


# -- binary ops ---------------------------------------------------------


def add(a, b):
    av, bv = value_of(a), value_of(b)
    pg = []
    if isinstance(a, Var):
        pg.append((a, lambda g: _unbroadcast(g, av.shape)))
    if isinstance(b, Var):
        pg.append((b, lambda g: _unbroadcast(g, bv.shape)))
    return _node(av + bv, pg, "add")


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    pg = []
    if isinstance(a, Var):
        pg.append((a, lambda g: _unbroadcast(g, av.shape)))
    if isinstance(b, Var):
        pg.append((b, lambda g: _unbroadcast(-g, bv.shape)))
    return _node(av - bv, pg, "sub")


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    pg = []
    if isinstance(a, Var):
        pg.append((a, lambda g: _unbroadcast(g * bv, av.shape)))
    if isinstance(b, Var):
        pg.append((b, lambda g: _unbroadcast(g * av, bv.shape)))
    return _node(av * bv, pg, "mul")


def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    pg = []
    if isinstance(a, Var):
        pg.append((a, lambda g: g @ bv.T))
    if isinstance(b, Var):
        pg.append((b, lambda g: av.T @ g))
    return _node(av @ bv, pg, "matmul")


# -- elementwise nonlinearities (dispatch on input type) -----------------


def _np_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _np_softplus(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x > 0
    out[pos] = x[pos] + np.log1p(np.exp(-x[pos]))
    out[~pos] = np.log1p(np.exp(x[~pos]))
    return out


def tanh(x):
    if not isinstance(x, Var):
        return np.tanh(value_of(x))
    t = np.tanh(x.value)
    return _node(t, [(x, lambda g: g * (1.0 - t * t))], "tanh")


def sigmoid(x):
    if not isinstance(x, Var):
        return _np_sigmoid(value_of(x))
    s = _np_sigmoid(x.value)
    return _node(s, [(x, lambda g: g * s * (1.0 - s))], "sigmoid")


def softplus(x):
    """log(1 + exp(x)), overflow-safe; this is -log(sigmoid(-x))."""
    if not isinstance(x, Var):
        return _np_softplus(value_of(x))
    xv = x.value
    return _node(_np_softplus(xv), [(x, lambda g: g * _np_sigmoid(xv))], "softplus")


def segment_sum(x, seg: np.ndarray, n: int):
    """Sum entries of a 1-D vector into n buckets given per-entry bucket ids."""
    seg = np.asarray(seg, dtype=np.intp)
    if not isinstance(x, Var):
        return np.bincount(seg, weights=value_of(x), minlength=n)
    xv = x.value
    out = np.bincount(seg, weights=xv, minlength=n)
    return _node(out, [(x, lambda g: g[seg])], "segment_sum")
