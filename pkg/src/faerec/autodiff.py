"""A small dense-tensor engine with tape-based reverse-mode differentiation.

Tensors wrap float64 numpy arrays. Every operation on tensors that require
gradients records its parents and a backward rule; ``Tensor.backward`` walks
the recorded graph once in reverse topological order.

Gradients accumulate into ``.grad`` of leaf tensors only, so calling
``backward`` twice without ``zero_grad`` doubles the stored gradients.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import ContractError, DimensionError, DomainError

__all__ = [
    "Tensor",
    "tensor",
    "matmul",
    "sigmoid",
    "log_sigmoid",
    "exp",
    "log",
    "sqrt",
    "square",
    "tanh",
    "relu",
    "softmax",
    "logsumexp",
    "concat",
    "take",
    "no_grad",
]

_grad_enabled = True


@contextmanager
def no_grad() -> Iterator[None]:
    """Build results without recording the tape (evaluation only)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous

Array = np.ndarray


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _as_tensor(x) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(x)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[Array], Sequence[Array | None]] | None = None
        self.op = "leaf"

    @classmethod
    def _result(cls, data: Array, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> Array:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # -- differentiation --------------------------------------------------
    def backward(self) -> None:
        if self.data.shape not in ((), (1,)):
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("backward() called on a tensor that is not on a recorded tape")

        order = self._topological_order()
        grads: dict[int, Array] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = _unbroadcast(np.asarray(pg, dtype=np.float64), parent.shape)
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg

    def _topological_order(self) -> list["Tensor"]:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        return order

    # -- arithmetic -------------------------------------------------------
    def _binary(self, other, fn, grad_fn, op: str) -> "Tensor":
        other = _as_tensor(other)
        try:
            data = fn(self.data, other.data)
        except ValueError as exc:
            raise DimensionError(f"{op}: incompatible shapes {self.shape} and {other.shape}") from exc
        a, b = self, other
        return Tensor._result(data, (a, b), lambda g: grad_fn(g, a.data, b.data, data), op)

    def __add__(self, other) -> "Tensor":
        return self._binary(other, np.add, lambda g, a, b, out: (g, g), "add")

    def __radd__(self, other) -> "Tensor":
        return _as_tensor(other) + self

    def __sub__(self, other) -> "Tensor":
        return self._binary(other, np.subtract, lambda g, a, b, out: (g, -g), "sub")

    def __rsub__(self, other) -> "Tensor":
        return _as_tensor(other) - self

    def __mul__(self, other) -> "Tensor":
        return self._binary(other, np.multiply, lambda g, a, b, out: (g * b, g * a), "mul")

    def __rmul__(self, other) -> "Tensor":
        return _as_tensor(other) * self

    def __truediv__(self, other) -> "Tensor":
        return self._binary(
            other, np.divide, lambda g, a, b, out: (g / b, -g * a / (b * b)), "div"
        )

    def __rtruediv__(self, other) -> "Tensor":
        return _as_tensor(other) / self

    def __neg__(self) -> "Tensor":
        return Tensor._result(-self.data, (self,), lambda g: (-g,), "neg")

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    # -- reductions -------------------------------------------------------
    def _check_axis(self, axis):
        if axis is None:
            return None
        axes = axis if isinstance(axis, tuple) else (axis,)
        for ax in axes:
            if not -self.ndim <= ax < self.ndim:
                raise DimensionError(f"axis {ax} is invalid for shape {self.shape}")
        return axis

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        axis = self._check_axis(axis)
        shape = self.shape
        data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape),)

        return Tensor._result(np.asarray(data), (self,), backward, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        axis = self._check_axis(axis)
        if axis is None:
            count = self.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def max(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        """Maximum; the gradient goes to the first position attaining it."""
        axis = self._check_axis(axis)
        x = self.data
        if axis is None:
            idx = int(np.argmax(x))
            data = np.asarray(x.flat[idx])
            if keepdims:
                data = data.reshape((1,) * x.ndim)

            def backward(g):
                out = np.zeros_like(x)
                out.flat[idx] = float(np.sum(g))
                return (out,)

            return Tensor._result(data, (self,), backward, "max")

        idx = np.expand_dims(np.argmax(x, axis=axis), axis)
        data = np.take_along_axis(x, idx, axis=axis)
        if not keepdims:
            data = np.squeeze(data, axis=axis)

        def backward(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            out = np.zeros_like(x)
            np.put_along_axis(out, idx, g, axis=axis)
            return (out,)

        return Tensor._result(data, (self,), backward, "max")

    # -- shape manipulation -----------------------------------------------
    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        try:
            data = self.data.reshape(shape)
        except ValueError as exc:
            raise DimensionError(f"cannot reshape {old} to {shape}") from exc
        return Tensor._result(data, (self,), lambda g: (g.reshape(old),), "reshape")

    def transpose(self, *axes) -> "Tensor":
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = tuple(np.argsort(axes))
        return Tensor._result(
            self.data.transpose(axes), (self,), lambda g: (g.transpose(inverse),), "transpose"
        )

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def swap_last(self) -> "Tensor":
        axes = list(range(self.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
        return self.transpose(tuple(axes))

    def __getitem__(self, index) -> "Tensor":
        if isinstance(index, Tensor):
            raise TypeError("index with integer arrays, not tensors")
        x = self.data
        data = x[index]

        def backward(g):
            out = np.zeros_like(x)
            np.add.at(out, index, g)
            return (out,)

        return Tensor._result(np.array(data), (self,), backward, "getitem")

    # -- elementwise conveniences -----------------------------------------
    def sigmoid(self) -> "Tensor":
        return sigmoid(self)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def sqrt(self, floor: float | None = None) -> "Tensor":
        return sqrt(self, floor=floor)

    def square(self) -> "Tensor":
        return square(self)

    def tanh(self) -> "Tensor":
        return tanh(self)

    def relu(self) -> "Tensor":
        return relu(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading batch dimensions follow numpy's matmul rules."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from exc
    ad, bd = a.data, b.data

    def backward(g):
        return (
            np.matmul(g, np.swapaxes(bd, -1, -2)) if a.requires_grad else None,
            np.matmul(np.swapaxes(ad, -1, -2), g) if b.requires_grad else None,
        )

    return Tensor._result(data, (a, b), backward, "matmul")


def _unary(x, data: Array, grad_fn, op: str) -> Tensor:
    return Tensor._result(data, (x,), lambda g: (grad_fn(g),), op)


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    v = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(v))
    out = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _unary(x, out, lambda g: g * out * (1.0 - out), "sigmoid")


def log_sigmoid(x: Tensor) -> Tensor:
    """log(sigmoid(x)) evaluated without overflow or log(0)."""
    x = _as_tensor(x)
    v = x.data
    out = np.minimum(v, 0.0) - np.log1p(np.exp(-np.abs(v)))
    e = np.exp(-np.abs(v))
    # d/dx log sigmoid(x) = 1 - sigmoid(x)
    one_minus_sig = np.where(v >= 0, e / (1.0 + e), 1.0 / (1.0 + e))
    return _unary(x, out, lambda g: g * one_minus_sig, "log_sigmoid")


def exp(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.exp(x.data)
    return _unary(x, out, lambda g: g * out, "exp")


def log(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError(f"log of non-positive input (min {x.data.min()!r})")
    v = x.data
    return _unary(x, np.log(v), lambda g: g / v, "log")


def sqrt(x: Tensor, floor: float | None = None) -> Tensor:
    """Square root.

    Without ``floor`` any non-positive entry raises ``DomainError``. With
    ``floor`` the input is clamped from below first and clamped entries get a
    zero gradient.
    """
    x = _as_tensor(x)
    v = x.data
    if floor is None:
        if np.any(v <= 0):
            raise DomainError(f"sqrt of non-positive input (min {v.min()!r})")
        out = np.sqrt(v)
        return _unary(x, out, lambda g: g * 0.5 / out, "sqrt")
    if floor <= 0:
        raise DomainError("sqrt floor must be positive")
    clamped = v < floor
    out = np.sqrt(np.where(clamped, floor, v))
    return _unary(x, out, lambda g: np.where(clamped, 0.0, g * 0.5 / out), "sqrt")


def square(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    v = x.data
    return _unary(x, v * v, lambda g: 2.0 * g * v, "square")


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)
    return _unary(x, out, lambda g: g * (1.0 - out * out), "tanh")


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return _unary(x, np.where(mask, x.data, 0.0), lambda g: g * mask, "relu")


def softmax(x: Tensor, axis: int = -1, mask: Array | None = None) -> Tensor:
    """Softmax along ``axis``. Entries where ``mask`` is False get probability 0.

    Every slice along ``axis`` must keep at least one unmasked entry.
    """
    x = _as_tensor(x)
    v = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), v.shape)
        if not np.all(mask.any(axis=axis)):
            raise ContractError("softmax: a slice is fully masked")
        v = np.where(mask, v, -np.inf)
    shifted = v - v.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._result(out, (x,), backward, "softmax")


def logsumexp(x: Tensor, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    v = x.data
    m = v.max(axis=axis, keepdims=True)
    e = np.exp(v - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(s), axis=axis)
    probs = e / s

    def backward(g):
        return (np.expand_dims(g, axis) * probs,)

    return Tensor._result(out, (x,), backward, "logsumexp")


def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    parts = [_as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        shapes = ", ".join(str(p.shape) for p in parts)
        raise DimensionError(f"concat: incompatible shapes {shapes}") from exc
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._result(data, parts, backward, "concat")


def take(table: Tensor, ids) -> Tensor:
    """Row gather ``table[ids]`` for an integer array of any shape."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise TypeError("take: ids must be integers")
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"take: id out of range for table with {n} rows")
    data = table.data[ids]
    shape = table.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, ids, g)
        return (out,)

    return Tensor._result(data, (table,), backward, "take")
