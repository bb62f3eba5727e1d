"""Tensor node and reverse-mode accumulation.

Each op produces a new :class:`Tensor` holding a reference to its parents and
a closure mapping the output gradient to one gradient per parent. Only
same-shape elementwise arithmetic (or python scalars) is supported; there is
no broadcasting.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

_DTYPES = (np.float32, np.float64)
_grad_enabled = True


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif arr.dtype not in _DTYPES:
        arr = arr.astype(np.float64)
    if arr.dtype not in _DTYPES:
        raise TypeError(f"unsupported dtype {arr.dtype}; use float32 or float64")
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op})"

    def zero_grad(self):
        self.grad = None

    # arithmetic sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def backward(self):
        backward(self)


def make_node(
    value: np.ndarray,
    parents: Sequence[Tensor],
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
    op: str = "custom",
) -> Tensor:
    """Wrap ``value`` as the output of an op over ``parents``.

    ``backward_fn(grad_out)`` must return one gradient (or None) per parent.
    Nothing is recorded when grad mode is off or no parent needs a gradient.
    """
    out = Tensor(value)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out.op = op
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
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
    return order


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def _check_same(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _wrap(x, like: Tensor) -> Tensor | float:
    if isinstance(x, Tensor):
        return x
    if np.isscalar(x):
        return float(x)
    return Tensor(np.asarray(x, dtype=like.dtype))


def add(a: Tensor, b) -> Tensor:
    b = _wrap(b, a)
    if isinstance(b, float):
        return make_node(a.data + a.dtype.type(b), (a,), lambda g: (g,), "add")
    _check_same(a, b, "add")
    return make_node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b) -> Tensor:
    b = _wrap(b, a)
    if isinstance(b, float):
        return make_node(a.data - a.dtype.type(b), (a,), lambda g: (g,), "sub")
    _check_same(a, b, "sub")
    return make_node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def neg(a: Tensor) -> Tensor:
    return make_node(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a: Tensor, b) -> Tensor:
    b = _wrap(b, a)
    if isinstance(b, float):
        s = a.dtype.type(b)
        return make_node(a.data * s, (a,), lambda g: (g * s,), "mul")
    _check_same(a, b, "mul")
    ad, bd = a.data, b.data
    return make_node(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return make_node(e, (a,), lambda g: (g * e,), "exp")


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return make_node(t, (a,), lambda g: (g * (1 - t * t),), "tanh")


def square(a: Tensor) -> Tensor:
    ad = a.data
    return make_node(ad * ad, (a,), lambda g: (2 * g * ad,), "square")


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape, dt = a.shape, a.dtype
    return make_node(
        np.asarray(a.data.sum(), dtype=dt),
        (a,),
        lambda g: (np.full(shape, g, dtype=dt),),
        "sum",
    )


def mean(a: Tensor) -> Tensor:
    shape, dt, n = a.shape, a.dtype, a.size
    return make_node(
        np.asarray(a.data.mean(), dtype=dt),
        (a,),
        lambda g: (np.full(shape, g / n, dtype=dt),),
        "mean",
    )


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return make_node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def channels(a: Tensor, start: int, stop: int) -> Tensor:
    """Slice ``a[:, start:stop]`` (channel axis 1)."""
    shape = a.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, start:stop] = g
        return (full,)

    return make_node(a.data[:, start:stop], (a,), bw, "channels")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        idx = [slice(None)] * g.ndim
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            out.append(g[tuple(idx)])
        return out

    return make_node(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")
