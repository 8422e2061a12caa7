"""Minimal dense-tensor arithmetic with reverse-mode automatic differentiation.

Values are row-major 64-bit float numpy buffers. Gradients are recorded on an
explicit :class:`Tape`: every operation that touches a tracked tensor appends
one node holding its parents and local-gradient closures, so the node list is
topologically ordered by construction. A tape is rebuilt per training step
(define-by-run) and is consumed by a single :func:`backward` call.

Tensors without a tape node are immutable constants and safe to share across
threads; a tape must only ever be used from one thread.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, DomainError, TapeError

__all__ = [
    "Tape",
    "Tensor",
    "add",
    "sub",
    "mul",
    "div",
    "matmul",
    "relu",
    "softmax",
    "log",
    "log_softmax",
    "absolute",
    "reduce_sum",
    "reduce_mean",
    "reduce_max",
    "concat",
    "gather_rows",
    "row_l2norm",
    "reshape",
    "backward",
]


class _Node:
    __slots__ = ("parents", "grad_fns", "grad")

    def __init__(self, parents, grad_fns):
        self.parents = parents
        self.grad_fns = grad_fns
        self.grad = None


class Tape:
    """Ordered record of operations for one reverse-mode sweep."""

    def __init__(self) -> None:
        self._nodes: list[_Node] = []
        self.consumed = False

    def leaf(self, data) -> "Tensor":
        """Create a tracked leaf (a trainable parameter) on this tape."""
        t = Tensor(data)
        t.node = _Node((), ())
        t.tape = self
        self._nodes.append(t.node)
        return t

    def _record(self, out: "Tensor", parents, grad_fns) -> None:
        if self.consumed:
            raise TapeError("tape already consumed by backward(); build a new tape")
        out.node = _Node(tuple(parents), tuple(grad_fns))
        out.tape = self
        self._nodes.append(out.node)


class Tensor:
    """Dense float64 array, optionally attached to a tape node."""

    __slots__ = ("data", "node", "tape")

    def __init__(self, data) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.node: _Node | None = None
        self.tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def grad(self) -> np.ndarray | None:
        """Gradient buffer populated by backward(); None for constants."""
        return None if self.node is None else self.node.grad

    def __repr__(self) -> str:
        kind = "leaf" if (self.node and not self.node.parents) else (
            "tracked" if self.node else "const")
        return f"Tensor(shape={self.shape}, {kind})"

    # arithmetic sugar; all routing goes through the module-level ops
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(*tensors: Tensor) -> Tape | None:
    tape = None
    for t in tensors:
        if t.node is not None:
            if tape is None:
                tape = t.tape
            elif tape is not t.tape:
                raise TapeError("operands belong to different tapes")
    return tape


def _make(data, parents_and_fns, tape: Tape | None) -> Tensor:
    out = Tensor(data)
    if tape is not None:
        tracked = [(p.node, fn) for p, fn in parents_and_fns if p.node is not None]
        if tracked:
            parents, fns = zip(*tracked)
            tape._record(out, parents, fns)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _elementwise(name, a, b, forward, grad_a, grad_b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = forward(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(
            f"{name}: shapes {a.shape} and {b.shape} are not broadcastable") from exc
    tape = _tape_of(a, b)
    return _make(data, [
        (a, lambda g: _unbroadcast(grad_a(g, a.data, b.data), a.shape)),
        (b, lambda g: _unbroadcast(grad_b(g, a.data, b.data), b.shape)),
    ], tape)


def add(a, b) -> Tensor:
    return _elementwise("add", a, b, lambda x, y: x + y,
                        lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _elementwise("sub", a, b, lambda x, y: x - y,
                        lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _elementwise("mul", a, b, lambda x, y: x * y,
                        lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b) -> Tensor:
    return _elementwise("div", a, b, lambda x, y: x / y,
                        lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y))


def matmul(a, b) -> Tensor:
    """Matrix product of a 2-D (M, K) by a 2-D (K, P) tensor."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    tape = _tape_of(a, b)
    return _make(a.data @ b.data, [
        (a, lambda g: g @ b.data.T),
        (b, lambda g: a.data.T @ g),
    ], tape)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0.0
    return _make(np.where(mask, x.data, 0.0),
                 [(x, lambda g: g * mask)], _tape_of(x))


def softmax(x, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis``; slices sum to 1."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def grad_x(g):
        return (g - (g * y).sum(axis=axis, keepdims=True)) * y

    return _make(y, [(x, grad_x)], _tape_of(x))


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0.0):
        raise DomainError("log: input must be strictly positive")
    return _make(np.log(x.data), [(x, lambda g: g / x.data)], _tape_of(x))


def log_softmax(x, axis: int = -1) -> Tensor:
    """log(softmax(x)) computed without underflow for extreme logits."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    sm = np.exp(y)

    def grad_x(g):
        return g - sm * g.sum(axis=axis, keepdims=True)

    return _make(y, [(x, grad_x)], _tape_of(x))


def absolute(x) -> Tensor:
    x = as_tensor(x)
    sign = np.sign(x.data)
    return _make(np.abs(x.data), [(x, lambda g: g * sign)], _tape_of(x))


def reduce_sum(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    return _reduce(x, axis, keepdims, mean=False)


def reduce_mean(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    return _reduce(x, axis, keepdims, mean=True)


def _reduce(x, axis, keepdims, mean: bool) -> Tensor:
    x = as_tensor(x)
    if axis is not None and not -x.data.ndim <= axis < x.data.ndim:
        raise DimensionError(f"reduce: axis {axis} out of range for shape {x.shape}")
    data = x.data.mean(axis=axis, keepdims=keepdims) if mean else \
        x.data.sum(axis=axis, keepdims=keepdims)
    count = x.data.size if axis is None else x.data.shape[axis]

    def grad_x(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        g = np.broadcast_to(g, x.data.shape)
        return g / count if mean else g

    return _make(data, [(x, grad_x)], _tape_of(x))


def reduce_max(x, axis: int) -> Tensor:
    """Max along ``axis`` (axis removed); gradient routes to the first argmax."""
    x = as_tensor(x)
    if not -x.data.ndim <= axis < x.data.ndim:
        raise DimensionError(f"reduce_max: axis {axis} out of range for shape {x.shape}")
    data = x.data.max(axis=axis)
    idx = np.expand_dims(x.data.argmax(axis=axis), axis)

    def grad_x(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis)
        return gx

    return _make(data, [(x, grad_x)], _tape_of(x))


def concat(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    try:
        data = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: incompatible shapes "
                             f"{[x.shape for x in xs]}") from exc
    sizes = [x.data.shape[axis] for x in xs]
    bounds = np.cumsum(sizes)[:-1]

    def grad_for(i):
        def grad_x(g):
            return np.split(g, bounds, axis=axis)[i]
        return grad_x

    return _make(data, [(x, grad_for(i)) for i, x in enumerate(xs)], _tape_of(*xs))


def gather_rows(x, indices) -> Tensor:
    """Select rows (axis 0) by integer index; gradients accumulate per source row."""
    x = as_tensor(x)
    idx = np.asarray(indices)
    if idx.ndim != 1 or not np.issubdtype(idx.dtype, np.integer):
        raise DimensionError("gather_rows: indices must be a 1-D integer array")
    n = x.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"gather_rows: index out of range for {n} rows")

    def grad_x(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return gx

    return _make(x.data[idx], [(x, grad_x)], _tape_of(x))


def row_l2norm(x) -> Tensor:
    """Euclidean norm over the last axis, kept as a trailing singleton dim."""
    x = as_tensor(x)
    norm = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))

    def grad_x(g):
        safe = np.where(norm > 0.0, norm, 1.0)
        return g * x.data / safe

    return _make(norm, [(x, grad_x)], _tape_of(x))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        data = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}") from exc
    return _make(data, [(x, lambda g: g.reshape(x.data.shape))], _tape_of(x))


def backward(loss: Tensor) -> None:
    """Reverse-accumulate gradients from a scalar loss into every tracked leaf."""
    if loss.node is None:
        raise TapeError("backward: tensor is detached from any tape")
    if loss.data.size != 1:
        raise DimensionError(f"backward: loss must be a scalar, got shape {loss.shape}")
    tape = loss.tape
    if tape.consumed:
        raise TapeError("backward: tape already consumed; build a new tape")
    tape.consumed = True
    loss.node.grad = np.ones_like(loss.data)
    for node in reversed(tape._nodes):
        g = node.grad
        if g is None:
            continue
        for parent, fn in zip(node.parents, node.grad_fns):
            contrib = fn(g)
            if parent.grad is None:
                parent.grad = np.array(contrib, dtype=np.float64, copy=True)
            else:
                parent.grad += contrib
