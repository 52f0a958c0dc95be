"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tensor` wraps a numpy array.  Every primitive records, when any
input requires a gradient, a closure computing the vector-Jacobian product
for each input.  :meth:`Tensor.backward` replays the record in reverse
topological order.

Broadcasting is deliberately narrow: binary primitives accept operands of
identical shape, or one operand holding a single element.  The only other
implicit expansion is the row bias of :func:`affine`.
"""
from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "DomainError",
    "no_grad",
    "is_grad_enabled",
    "tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "affine",
    "relu",
    "exp",
    "log",
    "sqrt",
    "softplus",
    "sigmoid",
    "tanh",
    "softmax",
    "sum",
    "cumsum",
    "concat",
    "gather",
    "take",
    "where",
    "reshape",
    "backward",
]


class ShapeError(ValueError):
    """Operand shapes do not satisfy a primitive's broadcasting rule."""


class DomainError(ValueError):
    """Input lies outside the mathematical domain of a primitive."""


_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


class no_grad:
    """Context manager disabling graph recording on the current thread."""

    def __enter__(self):
        self._prev = is_grad_enabled()
        _state.enabled = False
        return self

    def __exit__(self, *exc):
        _state.enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _slice(self, index)

    def sum(self, axis=None):
        return sum(self, axis)


def tensor(value, requires_grad: bool = False) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=requires_grad)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _record(out: np.ndarray, parents: Iterable[Tensor], vjp, op: str) -> Tensor:
    parents = tuple(parents)
    result = Tensor(out)
    result.op = op
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        result.requires_grad = True
        result._parents = parents
        result._vjp = vjp
    return result


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(grad: np.ndarray, target: Tensor) -> np.ndarray:
    if grad.shape == target.shape:
        return grad
    # target holds a single element that was expanded
    return np.asarray(grad.sum()).reshape(target.shape)


# ---------------------------------------------------------------- arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b, "add")

    def vjp(g):
        return _unbroadcast(g, a), _unbroadcast(g, b)

    return _record(a.data + b.data, (a, b), vjp, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b, "sub")

    def vjp(g):
        return _unbroadcast(g, a), _unbroadcast(-g, b)

    return _record(a.data - b.data, (a, b), vjp, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b, "mul")

    def vjp(g):
        return _unbroadcast(g * b.data, a), _unbroadcast(g * a.data, b)

    return _record(a.data * b.data, (a, b), vjp, "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b, "div")
    out = a.data / b.data

    def vjp(g):
        ga = g / b.data
        return _unbroadcast(ga, a), _unbroadcast(-ga * out, b)

    return _record(out, (a, b), vjp, "div")


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _record(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a, b) -> Tensor:
    """Matrix product of 2-D operands (a vector operand on the right is allowed)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        ga = (np.outer(g, b.data) if b.ndim == 1 else g @ b.data.T) if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), vjp, "matmul")


def affine(x, weight, bias) -> Tensor:
    """``x @ weight + bias`` with ``bias`` of shape (out,) added to every row."""
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if (
        x.ndim != 2
        or weight.ndim != 2
        or x.shape[1] != weight.shape[0]
        or bias.shape != (weight.shape[1],)
    ):
        raise ShapeError(
            f"affine: incompatible shapes {x.shape}, {weight.shape} and {bias.shape}"
        )
    out = x.data @ weight.data + bias.data

    def vjp(g):
        gx = g @ weight.data.T if x.requires_grad else None
        return gx, x.data.T @ g, g.sum(axis=0)

    return _record(out, (x, weight, bias), vjp, "affine")


# -------------------------------------------------------------- elementwise


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    return _record(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(~(a.data > 0)):
        bad = a.data[~(a.data > 0)].reshape(-1)[0]
        raise DomainError(f"log: non-positive input {bad!r}")
    return _record(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError("sqrt: negative input")
    out = np.sqrt(a.data)
    return _record(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus(a) -> Tensor:
    a = _as_tensor(a)
    out = np.log1p(np.exp(-np.abs(a.data))) + np.maximum(a.data, 0.0)
    return _record(out, (a,), lambda g: (g * _sigmoid(a.data),), "softplus")


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out = _sigmoid(a.data)
    return _record(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)
    return _record(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _record(out, (a,), vjp, "softmax")


# ------------------------------------------------------------ structural


def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    a = _as_tensor(a)
    out = a.data.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _record(np.asarray(out), (a,), vjp, "sum")


def cumsum(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)

    def vjp(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _record(np.cumsum(a.data, axis=axis), (a,), vjp, "cumsum")


def _slice(a: Tensor, index) -> Tensor:
    out = a.data[index]

    def vjp(g):
        full = np.zeros_like(a.data)
        if _is_fancy(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return _record(np.array(out, dtype=np.float64), (a,), vjp, "slice")


def _is_fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    parts = [_as_tensor(t) for t in tensors]
    out = np.concatenate([p.data for p in parts], axis=axis)
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record(out, parts, vjp, "concat")


def gather(a, index: np.ndarray, axis: int = -1) -> Tensor:
    """``take_along_axis``: pick ``a[..., index[...]]`` along ``axis``."""
    a = _as_tensor(a)
    index = np.asarray(index, dtype=np.intp)
    out = np.take_along_axis(a.data, index, axis=axis)

    def vjp(g):
        full = np.zeros_like(a.data)
        sel = list(np.indices(index.shape, sparse=True))
        sel[axis % a.ndim] = index
        np.add.at(full, tuple(sel), g)
        return (full,)

    return _record(out, (a,), vjp, "gather")


def take(a, indices: Sequence[int], axis: int = -1) -> Tensor:
    """Reorder (permute) entries of ``a`` along ``axis``."""
    a = _as_tensor(a)
    indices = np.asarray(indices, dtype=np.intp)
    out = np.take(a.data, indices, axis=axis)

    def vjp(g):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (full,)

    return _record(out, (a,), vjp, "take")


def where(condition: np.ndarray, a, b) -> Tensor:
    """Select ``a`` where ``condition`` holds, else ``b``; condition is constant."""
    a, b = _as_tensor(a), _as_tensor(b)
    cond = np.asarray(condition, dtype=bool)
    _check_binary(a, b, "where")
    shape = np.broadcast_shapes(a.shape, b.shape)
    if cond.shape != shape:
        raise ShapeError(f"where: condition shape {cond.shape} does not match {shape}")

    def vjp(g):
        return _unbroadcast(np.where(cond, g, 0.0), a), _unbroadcast(np.where(cond, 0.0, g), b)

    return _record(np.where(cond, a.data, b.data), (a, b), vjp, "where")


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


# --------------------------------------------------------------- backward


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into ``.grad`` of every ancestor requiring grad.

    Gradients add onto existing ``.grad`` buffers; call ``zero_grad`` between
    steps.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological_order(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg
