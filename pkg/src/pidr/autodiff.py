"""Minimal reverse-mode automatic differentiation on numpy arrays.

A :class:`Tensor` wraps an ndarray and records how it was computed. Calling
:func:`backward` on a scalar result accumulates ``d result / d leaf`` into the
``grad`` of every leaf created with ``requires_grad=True``. Forward-mode time
tangents are built from the same operations, so reverse mode differentiates
through them exactly.

Only the operations needed by the network and the losses are provided. All
binary operations broadcast like numpy.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100.0

    def __init__(
        self,
        value: ArrayLike,
        requires_grad: bool = False,
        parents: Sequence["Tensor"] = (),
        backward: Callable[[NDArray], Sequence[NDArray | None]] | None = None,
    ):
        self.value = np.asarray(value, dtype=float)
        self.grad: NDArray | None = None
        self.requires_grad = requires_grad
        self._parents = tuple(parents)
        self._backward = backward

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __len__(self) -> int:
        return len(self.value)

    def zero_grad(self):
        self.grad = None

    # arithmetic -----------------------------------------------------------------
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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def value(x) -> NDArray:
    """Underlying array of a Tensor or array-like."""
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=float)


def _node(out: NDArray, parents: Sequence[Tensor], backward) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(out, True, parents, backward)
    return Tensor(out)


def _unbroadcast(g: NDArray, shape) -> NDArray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# --------------------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _node(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _node(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    return _node(av * bv, (a, b), lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    out = av / bv
    return _node(
        out, (a, b), lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape))
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.value, (a,), lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _node(av**p, (a,), lambda g: (g * p * av ** (p - 1),))


def square(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _node(av * av, (a,), lambda g: (2.0 * g * av,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.value)
    return _node(out, (a,), lambda g: (0.5 * g / out,))


def sin(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _node(np.sin(av), (a,), lambda g: (g * np.cos(av),))


def cos(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _node(np.cos(av), (a,), lambda g: (-g * np.sin(av),))


def tan(a) -> Tensor:
    a = as_tensor(a)
    out = np.tan(a.value)
    return _node(out, (a,), lambda g: (g * (1.0 + out * out),))


# --------------------------------------------------------------------------- reductions and shape


def _expand(g: NDArray, shape, axis, keepdims: bool) -> NDArray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return _node(a.value.sum(axis=axis, keepdims=keepdims), (a,), lambda g: (_expand(g, shape, axis, keepdims),))


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.value.mean(axis=axis, keepdims=keepdims)
    scale = out.size / a.value.size
    shape = a.shape
    return _node(out, (a,), lambda g: (_expand(g * scale, shape, axis, keepdims),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def swapaxes(a, i: int, j: int) -> Tensor:
    a = as_tensor(a)
    return _node(np.swapaxes(a.value, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _node(a.value[idx], (a,), back)


def stack(items: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(x) for x in items]
    out = np.stack([t.value for t in ts], axis=axis)
    ax = axis if axis >= 0 else out.ndim + axis

    def back(g):
        return tuple(np.take(g, k, axis=ax) for k in range(len(ts)))

    return _node(out, ts, back)


def concatenate(items: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(x) for x in items]
    out = np.concatenate([t.value for t in ts], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _node(out, ts, lambda g: tuple(np.split(g, splits, axis=axis)))


# --------------------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting (operands of ndim >= 2)."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2:
        raise ValueError("matmul operands must have ndim >= 2; reshape vectors to columns")

    def back(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return _node(av @ bv, (a, b), back)


def linear(x, w, b=None) -> Tensor:
    """``x @ w.T + b`` for a batch ``x`` of shape (n, in) and ``w`` of shape (out, in)."""
    x, w = as_tensor(x), as_tensor(w)
    xv, wv = x.value, w.value
    out = xv @ wv.T
    if b is None:
        return _node(out, (x, w), lambda g: (g @ wv, g.T @ xv))
    b = as_tensor(b)
    return _node(out + b.value, (x, w, b), lambda g: (g @ wv, g.T @ xv, g.sum(0)))


# --------------------------------------------------------------------------- driver


def backward(root: Tensor, seed: ArrayLike | None = None):
    """Accumulate gradients of ``root`` into every reachable leaf.

    ``seed`` defaults to 1 and must be given for non-scalar roots.
    """
    if seed is None:
        if root.value.size != 1:
            raise ValueError("backward on a non-scalar needs an explicit seed")
        seed = np.ones_like(root.value)
    seed = np.asarray(seed, dtype=float)
    if seed.shape != root.shape:
        raise ValueError(f"seed shape {seed.shape} does not match output shape {root.shape}")
    if not root.requires_grad:
        return
    order, seen, stack_ = [], set(), [(root, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    grads = {id(root): seed}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, gp in zip(node._parents, node._backward(g)):
            if gp is None or not p.requires_grad:
                continue
            k = id(p)
            grads[k] = grads[k] + gp if k in grads else np.array(gp, dtype=float)
