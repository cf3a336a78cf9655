"""Dense float64 tensors with reverse-mode automatic differentiation.

Small enough to read in one sitting: a :class:`Tensor` wraps a contiguous
row-major numpy float64 array, every differentiable operation attaches a
closure that pushes gradients back to its inputs, and :func:`backward`
replays those closures in reverse topological order over an explicit
:class:`Tape`.

Deliberate restrictions, chosen to remove whole classes of silent bugs:

* float64 only; row-major contiguous storage; no views or strides;
* no broadcasting beyond scalar-with-tensor (pair equal shapes, or expand
  explicitly with :func:`expand_cols` / :func:`expand_rows`);
* fixed subgradient conventions: relu'(0) = 0, clamp' = 0 at the bounds,
  max routes its gradient to the first maximal element.

Everything here is single-threaded per computation; independent graphs in
separate threads share no mutable state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "TapeNode",
    "backward",
    "trace",
    "concat",
    "matmul",
    "expand_cols",
    "expand_rows",
]


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim > 0 and not arr.flags["C_CONTIGUOUS"]:
        # ascontiguousarray would promote 0-d to 1-d, so guard the rank
        arr = np.ascontiguousarray(arr)
    return arr


class Tensor:
    """A dense float64 array that can participate in the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}, op={self._op!r})"

    # -- gradient bookkeeping -------------------------------------------

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """Copy of the values as a fresh leaf, cut off from the tape."""
        return Tensor(self.data.copy())

    def backward(self) -> None:
        backward(self)

    # -- operator sugar --------------------------------------------------

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

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def relu(self):
        return relu(self)

    def clamp(self, lo: float, hi: float):
        return clamp(self, lo, hi)

    def sqrt(self):
        return sqrt(self)

    def cos(self):
        return cos(self)

    def sin(self):
        return sin(self)

    def acos(self):
        return acos(self)

    def sum(self, axis: int | None = None, keepdims: bool = False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | None = None, keepdims: bool = False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def max(self, axis: int | None = None, keepdims: bool = False):
        return reduce_max(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape: Sequence[int]):
        return reshape(self, shape)

    def transpose(self):
        return transpose(self)


@dataclass(frozen=True)
class TapeNode:
    """One recorded primitive: op id, input tensors, output tensor.

    Saved values for the backward rule live in the output's closure.
    """

    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor


class Tape:
    """Topologically ordered record of the ops reachable from one tensor.

    Every node's inputs are produced by earlier nodes or are leaves, so
    replaying ``nodes`` backwards visits consumers before producers.
    """

    def __init__(self, nodes: list[TapeNode]):
        self.nodes = nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def ops(self) -> list[str]:
        return [n.op for n in self.nodes]


def trace(root: Tensor) -> Tape:
    """Collect the gradient-relevant ancestry of ``root`` in topological order."""
    nodes: list[TapeNode] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            if t._op != "leaf":
                nodes.append(TapeNode(t._op, t._parents, t))
            continue
        if id(t) in seen or not t.requires_grad:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for p in reversed(t._parents):
            stack.append((p, False))
    return Tape(nodes)


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires-grad tensor reachable from ``loss``.

    ``loss`` must be a scalar. Gradients accumulate additively across calls;
    callers zero them between steps.
    """
    if loss.ndim != 0:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    tape = trace(loss)
    _accumulate(loss, np.ones(()))
    for node in reversed(tape.nodes):
        out = node.output
        if out.grad is not None and out._backward is not None:
            out._backward(out.grad)


# -- op plumbing ---------------------------------------------------------


def _record(
    op: str,
    parents: tuple[Tensor, ...],
    data: np.ndarray,
    backward_fn: Callable[[np.ndarray], None],
) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = _as_array(data)
    out.grad = None
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._op = op
        out._parents = parents
        out._backward = backward_fn
    else:
        # constants fold out of the tape entirely
        out.requires_grad = False
        out._op = "leaf"
        out._parents = ()
        out._backward = None
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    if g.shape != t.data.shape:
        # only the scalar-with-tensor pairing can get here
        g = np.sum(g).reshape(t.data.shape)
    t.grad += g


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float, np.floating, np.integer)):
        return Tensor(float(x))
    raise TypeError(f"expected Tensor or scalar, got {type(x).__name__}")


def _check_pair(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} must match (or one be scalar)")


def _check_2d(op: str, t: Tensor) -> None:
    if t.ndim != 2:
        raise ShapeError(f"{op} needs a 2-D tensor, got shape {t.shape}")


# -- elementwise binary ----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_pair("add", a, b)

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, g)
        _accumulate(b, g)

    return _record("add", (a, b), a.data + b.data, backward_fn)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_pair("sub", a, b)

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, g)
        _accumulate(b, -g)

    return _record("sub", (a, b), a.data - b.data, backward_fn)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_pair("mul", a, b)

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _record("mul", (a, b), a.data * b.data, backward_fn)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_pair("div", a, b)
    if np.any(b.data == 0.0):
        raise DomainError("division by zero")
    out_data = a.data / b.data

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, g / b.data)
        _accumulate(b, -g * a.data / (b.data * b.data))

    return _record("div", (a, b), out_data, backward_fn)


# -- elementwise unary ----------------------------------------------------


def neg(a: Tensor) -> Tensor:
    a = _as_tensor(a)

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, -g)

    return _record("neg", (a,), -a.data, backward_fn)


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, g * out_data)

    return _record("exp", (a,), out_data, backward_fn)


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log of non-positive input")

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, g / a.data)

    return _record("log", (a,), np.log(a.data), backward_fn)


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0.0  # subgradient 0 at exactly 0

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, g * mask)

    return _record("relu", (a,), a.data * mask, backward_fn)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    a = _as_tensor(a)
    lo, hi = float(lo), float(hi)
    if not lo < hi:
        raise DomainError(f"clamp needs lo < hi, got [{lo}, {hi}]")
    mask = (a.data > lo) & (a.data < hi)  # gradient 0 at the bounds

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, g * mask)

    return _record("clamp", (a,), np.clip(a.data, lo, hi), backward_fn)


def sqrt(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0.0):
        # derivative is unbounded at 0; callers guard degenerate inputs first
        raise DomainError("sqrt needs strictly positive input")
    out_data = np.sqrt(a.data)

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, g / (2.0 * out_data))

    return _record("sqrt", (a,), out_data, backward_fn)


def cos(a: Tensor) -> Tensor:
    a = _as_tensor(a)

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, -g * np.sin(a.data))

    return _record("cos", (a,), np.cos(a.data), backward_fn)


def sin(a: Tensor) -> Tensor:
    a = _as_tensor(a)

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, g * np.cos(a.data))

    return _record("sin", (a,), np.sin(a.data), backward_fn)


def acos(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if np.any(np.abs(a.data) > 1.0):
        raise DomainError("acos input outside [-1, 1]")

    def backward_fn(g: np.ndarray) -> None:
        # unbounded at |x| = 1; callers clamp to (-1, 1) first
        _accumulate(a, -g / np.sqrt(1.0 - a.data * a.data))

    return _record("acos", (a,), np.arccos(a.data), backward_fn)


# -- linear algebra --------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_2d("matmul", a)
    _check_2d("matmul", b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} x {b.shape}")

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _record("matmul", (a, b), a.data @ b.data, backward_fn)


def transpose(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    _check_2d("transpose", a)

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, g.T)

    return _record("transpose", (a,), a.data.T.copy(), backward_fn)


def expand_cols(col: Tensor, n: int) -> Tensor:
    """Tile a [B, 1] column into [B, n] via matmul with a constant ones row."""
    if col.ndim != 2 or col.shape[1] != 1:
        raise ShapeError(f"expand_cols needs a [B, 1] column, got {col.shape}")
    return matmul(col, Tensor(np.ones((1, n))))


def expand_rows(row: Tensor, m: int) -> Tensor:
    """Tile a [1, C] row into [m, C] via matmul with a constant ones column."""
    if row.ndim != 2 or row.shape[0] != 1:
        raise ShapeError(f"expand_rows needs a [1, C] row, got {row.shape}")
    return matmul(Tensor(np.ones((m, 1))), row)


# -- shape ops -------------------------------------------------------------


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}")
    old_shape = a.shape

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, g.reshape(old_shape))

    return _record("reshape", (a,), a.data.reshape(shape).copy(), backward_fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("concat of zero tensors")
    rank = tensors[0].ndim
    axis = _check_axis("concat", axis, rank)
    for t in tensors[1:]:
        if t.ndim != rank:
            raise ShapeError(f"concat: ranks differ, {tensors[0].shape} vs {t.shape}")
        for d in range(rank):
            if d != axis and t.shape[d] != tensors[0].shape[d]:
                raise ShapeError(f"concat: shapes {tensors[0].shape} and {t.shape} differ off axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g: np.ndarray) -> None:
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            index = [slice(None)] * rank
            index[axis] = slice(start, stop)
            _accumulate(t, g[tuple(index)])

    return _record("concat", tensors, np.concatenate([t.data for t in tensors], axis=axis), backward_fn)


# -- reductions ------------------------------------------------------------


def _check_axis(op: str, axis: int, rank: int) -> int:
    if not -rank <= axis < rank:
        raise ShapeError(f"{op}: axis {axis} out of range for rank {rank}")
    return axis % rank


def _spread(g: np.ndarray, shape: tuple[int, ...], axis: int | None, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def reduce_sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    if axis is not None:
        axis = _check_axis("sum", axis, a.ndim)
    shape = a.shape

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, _spread(g, shape, axis, keepdims))

    return _record("sum", (a,), np.sum(a.data, axis=axis, keepdims=keepdims), backward_fn)


def reduce_mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    if axis is not None:
        axis = _check_axis("mean", axis, a.ndim)
    count = a.size if axis is None else a.shape[axis]
    if count == 0:
        raise ShapeError("mean over zero elements")
    shape = a.shape

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, _spread(g / count, shape, axis, keepdims))

    return _record("mean", (a,), np.mean(a.data, axis=axis, keepdims=keepdims), backward_fn)


def reduce_max(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    if axis is not None:
        axis = _check_axis("max", axis, a.ndim)
    if a.size == 0:
        raise ShapeError("max of empty tensor")

    if axis is None:
        flat_idx = int(np.argmax(a.data))  # first maximal element in row-major order

        def backward_fn(g: np.ndarray) -> None:
            buf = np.zeros_like(a.data)
            buf.reshape(-1)[flat_idx] = np.sum(g)
            _accumulate(a, buf)

        return _record("max", (a,), np.max(a.data, keepdims=keepdims), backward_fn)

    idx = np.argmax(a.data, axis=axis)  # first maximal along the axis

    def backward_fn(g: np.ndarray) -> None:
        if not keepdims:
            g = np.expand_dims(g, axis)
        buf = np.zeros_like(a.data)
        np.put_along_axis(buf, np.expand_dims(idx, axis), g, axis=axis)
        _accumulate(a, buf)

    return _record("max", (a,), np.max(a.data, axis=axis, keepdims=keepdims), backward_fn)
