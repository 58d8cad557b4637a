"""Reverse-mode automatic differentiation by operation recording.

Every arithmetic result on a :class:`Var` remembers its parents together with
the local derivative rule. :func:`value_and_grad` opens a fresh tape for one
evaluation; nodes append themselves in creation order, which is already a
topological order, and the backward pass walks the tape in reverse. The tape
lives in thread-local storage and is dropped after the call, so concurrent
evaluations never share mutable state.

Values are numpy arrays. Elementwise rules are the scalar rules broadcast over
the array, so a vector node is just a batch of scalar nodes recorded at once.
The supported primitives are the ones the bundled models need: ``+ - * /``,
negation, ``@``, sums, indexing, cumulative sums, ``exp``, ``log``, ``tanh``,
``logistic`` and ``log_logistic``.

Functions in this module accept plain arrays too and then fall through to
numpy, which lets model code be written once and evaluated with or without
recording.
"""

from __future__ import annotations

import threading

import numpy as np
from scipy.special import expit

__all__ = [
    "Var",
    "value",
    "exp",
    "log",
    "tanh",
    "logistic",
    "log_logistic",
    "square",
    "sum",
    "cumsum",
    "value_and_grad",
    "grad",
]


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


_local = threading.local()


class Var:
    """A recorded value. ``parents`` holds ``(node, local_vjp)`` pairs."""

    __slots__ = ("value", "parents", "grad")
    # make numpy defer to the reflected operators below
    __array_ufunc__ = None

    def __init__(self, value, parents=()):
        self.value = value if type(value) is np.ndarray else np.asarray(value, dtype=float)
        self.parents = parents
        self.grad = None
        tape = getattr(_local, "tape", None)
        if tape is not None:
            tape.append(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var({self.value!r})"

    # arithmetic ---------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Var):
            out = self.value + other.value
            return Var(out, ((self, _reducer(self.shape, out.shape)), (other, _reducer(other.shape, out.shape))))
        out = self.value + other
        return Var(out, ((self, _reducer(self.shape, np.shape(out))),))

    __radd__ = __add__

    def __neg__(self):
        return Var(-self.value, ((self, lambda g: -g),))

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Var):
            a, b = self.value, other.value
            return Var(
                a * b,
                (
                    (self, lambda g: _unbroadcast(g * b, a.shape)),
                    (other, lambda g: _unbroadcast(g * a, b.shape)),
                ),
            )
        b = np.asarray(other, dtype=float)
        sa = self.shape
        return Var(self.value * b, ((self, lambda g: _unbroadcast(g * b, sa)),))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            return self * _reciprocal(other)
        return self * (1.0 / np.asarray(other, dtype=float))

    def __rtruediv__(self, other):
        return _reciprocal(self) * other

    def __matmul__(self, other):
        a = self.value
        if isinstance(other, Var):
            b = other.value
            return Var(
                a @ b,
                (
                    (self, lambda g: _matmul_left(g, b, a.shape)),
                    (other, lambda g: _matmul_right(a, g, b.shape)),
                ),
            )
        b = np.asarray(other, dtype=float)
        return Var(a @ b, ((self, lambda g: _matmul_left(g, b, a.shape)),))

    def __rmatmul__(self, other):
        a = np.asarray(other, dtype=float)
        b = self.value
        return Var(a @ b, ((self, lambda g: _matmul_right(a, g, b.shape)),))

    def __getitem__(self, idx):
        shape = self.shape

        basic = isinstance(idx, (int, slice)) or (
            isinstance(idx, tuple) and all(isinstance(i, (int, slice)) for i in idx)
        )

        def vjp(g):
            out = np.zeros(shape)
            if basic:
                out[idx] = g
            else:
                np.add.at(out, idx, g)
            return out

        return Var(self.value[idx], ((self, vjp),))

    def reshape(self, *shape):
        old = self.shape
        return Var(self.value.reshape(*shape), ((self, lambda g: g.reshape(old)),))

    @property
    def T(self):
        return Var(self.value.T, ((self, lambda g: g.T),))

    def sum(self, axis=None):
        return sum(self, axis=axis)


def _identity(g):
    return g


def _reducer(shape, out_shape):
    if shape == out_shape:
        return _identity
    return lambda g: _unbroadcast(g, shape)


def _reciprocal(x):
    r = 1.0 / x.value
    return Var(r, ((x, lambda g: -g * r * r),))


def _matmul_left(g, b, shape_a):
    if b.ndim == 1:
        return np.multiply.outer(g, b) if len(shape_a) > 1 else g * b
    return g @ b.T if len(shape_a) > 1 else b @ g


def _matmul_right(a, g, shape_b):
    if a.ndim == 1:
        return np.multiply.outer(a, g) if len(shape_b) > 1 else g * a
    return a.T @ g if len(shape_b) > 1 else g @ a


def value(x):
    """Strip recording: return the underlying numpy value."""
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


# elementwise primitives -------------------------------------------------


def exp(x):
    if isinstance(x, Var):
        e = np.exp(x.value)
        return Var(e, ((x, lambda g: g * e),))
    return np.exp(x)


def log(x):
    if isinstance(x, Var):
        v = x.value
        return Var(np.log(v), ((x, lambda g: g / v),))
    with np.errstate(divide="ignore"):
        return np.log(x)


def tanh(x):
    if isinstance(x, Var):
        t = np.tanh(x.value)
        return Var(t, ((x, lambda g: g * (1.0 - t * t)),))
    return np.tanh(x)


def logistic(x):
    if isinstance(x, Var):
        s = expit(x.value)
        return Var(s, ((x, lambda g: g * s * (1.0 - s)),))
    return expit(x)


def log_logistic(x):
    """log(logistic(x)) without the cancellation of composing the two."""
    if isinstance(x, Var):
        v = x.value
        return Var(-np.logaddexp(0.0, -v), ((x, lambda g: g * expit(-v)),))
    return -np.logaddexp(0.0, -np.asarray(x, dtype=float))


def square(x):
    if isinstance(x, Var):
        v = x.value
        return Var(v * v, ((x, lambda g: 2.0 * g * v),))
    return np.square(x)


def sum(x, axis=None):  # noqa: A001 - mirrors numpy naming
    if isinstance(x, Var):
        shape = x.shape

        def vjp(g):
            if axis is None:
                return np.full(shape, g)
            return np.broadcast_to(np.expand_dims(g, axis), shape)

        return Var(np.sum(x.value, axis=axis), ((x, vjp),))
    return np.sum(x, axis=axis)


def cumsum(x):
    """Cumulative sum of a 1-d vector."""
    if isinstance(x, Var):
        return Var(np.cumsum(x.value), ((x, lambda g: np.cumsum(g[::-1])[::-1]),))
    return np.cumsum(x)


# driver -----------------------------------------------------------------


def _backward(tape, out):
    out.grad = np.ones(out.value.shape)
    for node in reversed(tape):
        g = node.grad
        if g is None:
            continue
        for parent, vjp in node.parents:
            contrib = vjp(g)
            # accumulation below never mutates in place, so views are safe
            if parent.grad is None:
                parent.grad = contrib
            else:
                parent.grad = parent.grad + contrib


def value_and_grad(f, x):
    """Evaluate scalar ``f`` at ``x`` and return ``(f(x), df/dx)``.

    A constant output (``f`` ignoring its argument) has zero gradient.
    """
    x = np.array(x, dtype=float)
    outer = getattr(_local, "tape", None)
    tape = _local.tape = []
    try:
        xv = Var(x)
        out = f(xv)
    finally:
        _local.tape = outer
    if not isinstance(out, Var):
        return float(out), np.zeros_like(x)
    if out.value.size != 1:
        raise ValueError("value_and_grad needs a scalar-valued function")
    _backward(tape, out)
    g = xv.grad if xv.grad is not None else np.zeros_like(x)
    return float(out.value), np.array(g, dtype=float).reshape(x.shape)


def grad(f, x):
    return value_and_grad(f, x)[1]
