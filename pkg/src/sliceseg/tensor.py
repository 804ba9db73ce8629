"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation builds a node in an implicit tape: the output tensor keeps
references to its parents and a closure that routes the upstream gradient
to them. ``Tensor.backward()`` on a scalar walks the tape in reverse
topological order and accumulates gradients additively into every
``requires_grad`` tensor (call ``zero_grad`` between steps).

The op set is fixed and small: elementwise arithmetic, matmul, exp/log/
sqrt/tanh/sigmoid, sum/mean, reshape/transpose/narrow/concatenate,
softmax, layer normalization, clip and cosine similarity. Shapes are
checked eagerly; only numpy-style broadcasting needed by the model is
supported.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DomainError, ShapeError

NORM_EPS = 1e-12


class Tensor:
    """A node in the autodiff tape wrapping a float64 ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = "leaf"

    # ---------------------------------------------------------------- basics

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A view of the same data, cut off from the tape."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(op={self._op}, shape={self.shape}, requires_grad={self.requires_grad})"

    # ------------------------------------------------------------- autodiff

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every requires_grad tensor.

        Repeated calls without zeroing add up, matching the per-sequence
        loss accumulation the training loop relies on.
        """
        if self.data.size != 1:
            raise ContractError(
                f"backward requires a scalar loss, got shape {self.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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

        flowing: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = flowing.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is not None:
                node._backward_route(g, flowing)

    def _backward_route(self, g: np.ndarray, flowing: dict[int, np.ndarray]) -> None:
        for parent, pg in self._backward(g):
            if pg is None:
                continue
            key = id(parent)
            if key in flowing:
                flowing[key] = flowing[key] + pg
            else:
                flowing[key] = pg

    # ------------------------------------------------------------ operators

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad or p._parents for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    else:
        out._op = op
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g over the axes numpy broadcast to reach its shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


# ------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape)))

    return _node(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape)))

    return _node(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        return (
            (a, _unbroadcast(g * b.data, a.shape)),
            (b, _unbroadcast(g * a.data, b.shape)),
        )

    return _node(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")

    def backward(g):
        return (
            (a, _unbroadcast(g / b.data, a.shape)),
            (b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape)),
        )

    return _node(a.data / b.data, (a, b), backward, "div")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def backward(g):
        return ((a, g * out_data),)

    return _node(out_data, (a,), backward, "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log requires strictly positive input")

    def backward(g):
        return ((a, g / a.data),)

    return _node(np.log(a.data), (a,), backward, "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0.0):
        raise DomainError("sqrt requires non-negative input")
    out_data = np.sqrt(a.data)

    def backward(g):
        return ((a, g * 0.5 / out_data),)

    return _node(out_data, (a,), backward, "sqrt")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def backward(g):
        return ((a, g * (1.0 - out_data * out_data)),)

    return _node(out_data, (a,), backward, "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        return ((a, g * out_data * (1.0 - out_data)),)

    return _node(out_data, (a,), backward, "sigmoid")


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only through the interior."""
    a = as_tensor(a)
    mask = (a.data > lo) & (a.data < hi)

    def backward(g):
        return ((a, g * mask),)

    return _node(np.clip(a.data, lo, hi), (a,), backward, "clip")


# --------------------------------------------------------------- reductions


def tensor_sum(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if axis is None:
            return ((a, np.broadcast_to(g, a.shape).copy()),)
        return ((a, np.broadcast_to(np.expand_dims(g, axis), a.shape).copy()),)

    return _node(a.data.sum(axis=axis), (a,), backward, "sum")


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]

    def backward(g):
        if axis is None:
            return ((a, np.broadcast_to(g / count, a.shape).copy()),)
        return ((a, np.broadcast_to(np.expand_dims(g, axis) / count, a.shape).copy()),)

    return _node(a.data.mean(axis=axis), (a,), backward, "mean")


# ------------------------------------------------------------------ linear


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner extents differ, {a.shape} vs {b.shape}")

    def backward(g):
        return ((a, g @ b.data.T), (b, a.data.T @ g))

    return _node(a.data @ b.data, (a, b), backward, "matmul")


# -------------------------------------------------------------- structural


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {tuple(shape)}")

    def backward(g):
        return ((a, g.reshape(a.shape)),)

    return _node(a.data.reshape(shape), (a,), backward, "reshape")


def transpose(a, axes: tuple[int, ...] | None = None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return ((a, g.transpose(inverse)),)

    return _node(a.data.transpose(axes), (a,), backward, "transpose")


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of `length` entries along `axis`."""
    a = as_tensor(a)
    if start < 0 or start + length > a.shape[axis]:
        raise ShapeError(
            f"narrow: [{start}, {start + length}) out of range for axis {axis} of {a.shape}"
        )
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def backward(g):
        full = np.zeros(a.shape)
        full[index] = g
        return ((a, full),)

    return _node(a.data[index], (a,), backward, "narrow")


def concatenate(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ContractError("concatenate requires at least one tensor")
    extents = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + extents)

    def backward(g):
        grads = []
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            grads.append((p, g[tuple(index)]))
        return tuple(grads)

    return _node(np.concatenate([p.data for p in parts], axis=axis), parts, backward, "concat")


def stack_scalars(tensors: Sequence[Tensor]) -> Tensor:
    """Pack scalar tensors into a length-n vector."""
    return concatenate([reshape(t, (1,)) for t in tensors], axis=0)


# ---------------------------------------------------------------- compound


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stable softmax along `axis` (max-subtraction)."""
    a = as_tensor(a)
    if a.size == 0:
        raise DomainError("softmax of empty input")
    if not np.all(np.isfinite(a.data)):
        raise DomainError("softmax requires finite input")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        return ((a, out_data * (g - inner)),)

    return _node(out_data, (a,), backward, "softmax")


def layer_norm(a, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean, unit variance (no affine)."""
    a = as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv
    n = a.shape[-1]

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return ((a, inv * (g - gm - xhat * gx)),)

    return _node(xhat, (a,), backward, "layer_norm")


def cosine_sim(u, v) -> Tensor:
    """Cosine similarity of two 1-D vectors, differentiable in both.

    A degenerate input (norm below 1e-12) yields a constant 0 with no
    gradient through the pair; near-zero pooled features early in
    training must not poison the tape.
    """
    u, v = as_tensor(u), as_tensor(v)
    if u.data.ndim != 1 or v.data.ndim != 1 or u.shape != v.shape:
        raise ShapeError(f"cosine_sim expects matching 1-D vectors, got {u.shape} and {v.shape}")
    if np.linalg.norm(u.data) <= NORM_EPS or np.linalg.norm(v.data) <= NORM_EPS:
        return Tensor(0.0)
    dot = tensor_sum(mul(u, v))
    nu = sqrt(tensor_sum(mul(u, u)))
    nv = sqrt(tensor_sum(mul(v, v)))
    return div(dot, mul(nu, nv))
