"""Reverse-mode differentiation over dense float64 arrays.

A :class:`Tensor` wraps a numpy array and, when any input requires a gradient,
records the primitive that produced it. :func:`grad` walks the recorded graph
backwards from a scalar loss.

Only the primitives defined here are differentiable. Passing a ``Tensor`` to a
numpy ufunc raises :class:`UnsupportedPrimitiveError` immediately, when the
expression is built, rather than silently dropping the gradient.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class UnsupportedPrimitiveError(TypeError):
    pass


class NonFiniteError(FloatingPointError):
    """A non-finite value appeared in a differentiated expression."""

    def __init__(self, op: str, where: str = ""):
        self.op = op
        msg = f"non-finite value produced by primitive '{op}'"
        if where:
            msg += f" in {where}"
        super().__init__(msg)


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class Tensor:
    __slots__ = ("value", "requires_grad", "op", "_parents", "_backward")

    # numpy must defer to our operators and never apply its own ufuncs
    __array_ufunc__ = None

    def __init__(self, value, requires_grad: bool = False, op: str = "leaf"):
        self.value = _as_array(value)
        self.requires_grad = requires_grad
        self.op = op
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape})"

    def __array__(self, dtype=None, copy=None):
        raise UnsupportedPrimitiveError(
            "Tensor cannot be converted implicitly; use .value for constants"
        )

    __add__ = lambda a, b: add(a, b)
    __radd__ = lambda a, b: add(b, a)
    __sub__ = lambda a, b: sub(a, b)
    __rsub__ = lambda a, b: sub(b, a)
    __mul__ = lambda a, b: mul(a, b)
    __rmul__ = lambda a, b: mul(b, a)
    __matmul__ = lambda a, b: matmul(a, b)
    __rmatmul__ = lambda a, b: matmul(b, a)
    __neg__ = lambda a: neg(a)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise UnsupportedPrimitiveError("division by a Tensor is not a supported primitive")
        return mul(self, 1.0 / _as_array(other))

    def __rtruediv__(self, other):
        raise UnsupportedPrimitiveError("division by a Tensor is not a supported primitive")

    def __pow__(self, other):
        raise UnsupportedPrimitiveError("power is not a supported primitive; use mul or exp/log")

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value: np.ndarray, op: str, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(value, op=op)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


# -- primitives ----------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    sa, sb = a.shape, b.shape
    return _make(
        a.value + b.value, "add", (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def sub(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    sa, sb = a.shape, b.shape
    return _make(
        a.value - b.value, "sub", (a, b),
        lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)),
    )


def mul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    av, bv = a.value, b.value
    return _make(
        av * bv, "mul", (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def neg(a) -> Tensor:
    a = tensor(a)
    return _make(-a.value, "neg", (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2:
        raise UnsupportedPrimitiveError("matmul is defined for 2-D operands only")
    return _make(av @ bv, "matmul", (a, b), lambda g: (g @ bv.T, av.T @ g))


def tanh(a) -> Tensor:
    a = tensor(a)
    y = np.tanh(a.value)
    return _make(y, "tanh", (a,), lambda g: (g * (1.0 - y * y),))


def relu(a) -> Tensor:
    a = tensor(a)
    pos = a.value > 0
    return _make(np.where(pos, a.value, 0.0), "relu", (a,), lambda g: (g * pos,))


def softplus(a) -> Tensor:
    a = tensor(a)
    v = a.value
    y = np.logaddexp(0.0, v)
    sig = np.exp(v - y)
    return _make(y, "softplus", (a,), lambda g: (g * sig,))


def exp(a) -> Tensor:
    a = tensor(a)
    y = np.exp(a.value)
    return _make(y, "exp", (a,), lambda g: (g * y,))


def log(a) -> Tensor:
    a = tensor(a)
    v = a.value
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(v)
    return _make(y, "log", (a,), lambda g: (g / v,))


def sum_(a, axis=None) -> Tensor:
    a = tensor(a)
    shape = a.shape

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(np.sum(a.value, axis=axis), "sum", (a,), back)


def mean(a, axis=None) -> Tensor:
    a = tensor(a)
    n = a.value.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis), 1.0 / n)


def logsumexp(a, axis: int = -1) -> Tensor:
    a = tensor(a)
    v = a.value
    m = np.max(v, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        y = np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True)) + m
    w = np.exp(v - y)

    def back(g):
        return (np.expand_dims(g, axis) * w,)

    return _make(np.squeeze(y, axis=axis), "logsumexp", (a,), back)


def take(a, idx) -> Tensor:
    """Basic or advanced indexing; gradients scatter-add back."""
    a = tensor(a)
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.value[idx], "index", (a,), back)


def reshape(a, shape) -> Tensor:
    a = tensor(a)
    old = a.shape
    return _make(a.value.reshape(shape), "reshape", (a,), lambda g: (g.reshape(old),))


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    parts = [tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate([p.value for p in parts], axis=axis), "concat", parts, back)


# -- differentiation -------------------------------------------------------------


def _topo(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
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
    return order


def _first_nonfinite(order: list[Tensor]) -> str:
    for node in order:
        if not np.all(np.isfinite(node.value)):
            return node.op
    return "unknown"


def grad(loss: Tensor, params: Iterable[Tensor]) -> list[np.ndarray]:
    """Gradient of a scalar ``loss`` with respect to each tensor in ``params``.

    Raises:
        NonFiniteError: if the loss is not finite; the error names the first
            primitive (in evaluation order) whose output was non-finite.
    """
    params = list(params)
    if loss.value.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    order = _topo(loss) if loss.requires_grad else [loss]
    if not np.isfinite(loss.value).all():
        raise NonFiniteError(_first_nonfinite(order))
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None or node._backward is None:
            if g is not None:
                grads[id(node)] = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return [grads.get(id(p), np.zeros_like(p.value)) for p in params]


def check_finite(t: Tensor, where: str) -> Tensor:
    """Raise :class:`NonFiniteError` naming ``where`` if ``t`` has non-finite entries."""
    if not np.all(np.isfinite(t.value)):
        raise NonFiniteError(t.op, where)
    return t
