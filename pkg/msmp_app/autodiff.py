"""
Dense float64 tensors with reverse-mode differentiation.

Every op appends one TapeNode (output id, input ids, vector-Jacobian product)
to the tape owned by its operands; `backward` walks the tape in exact reverse
order. Shapes must agree exactly: nothing broadcasts.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .exceptions import ShapeError, TapeError

logger = logging.getLogger(__name__)

SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805

VJP = Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass(frozen=True)
class TapeNode:
    op: str
    inputs: tuple[int | None, ...]   # None for constant operands
    output: int
    vjp: VJP


class Tensor:
    """A value on a tape (or a constant when `tape` is None)."""

    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data: np.ndarray, tape: "Tape | None" = None, node_id: int | None = None):
        data.flags.writeable = False
        self.data = data
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node={self.node_id})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


class Tape:
    """Ordered record of executed ops. Single owner while recording."""

    def __init__(self):
        self.values: list[np.ndarray] = []
        self.nodes: list[TapeNode] = []
        self.leaves: list[int] = []

    def leaf(self, value) -> Tensor:
        data = np.array(value, dtype=np.float64)
        node_id = len(self.values)
        self.values.append(data)
        self.leaves.append(node_id)
        return Tensor(data, self, node_id)

    def record(self, op: str, operands: Sequence[Tensor], data: np.ndarray, vjp: VJP) -> Tensor:
        node_id = len(self.values)
        self.values.append(data)
        self.nodes.append(TapeNode(op, tuple(t.node_id if t.tape is self else None for t in operands), node_id, vjp))
        return Tensor(data, self, node_id)

    def __len__(self) -> int:
        return len(self.nodes)


def constant(value) -> Tensor:
    return Tensor(np.array(value, dtype=np.float64))


def _emit(op: str, operands: Sequence[Tensor], data: np.ndarray, vjp: VJP) -> Tensor:
    tape = None
    for operand in operands:
        if operand.tape is None:
            continue
        if tape is not None and operand.tape is not tape:
            raise TapeError(f"{op}: operands belong to different tapes")
        tape = operand.tape
    data = np.asarray(data, dtype=np.float64)
    if tape is None:
        return Tensor(data)
    return tape.record(op, operands, data, vjp)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not match")


# ─── Elementwise binary ─────────────────────────────────────────────────────

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _emit("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _emit("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    x, y = a.data, b.data
    return _emit("mul", (a, b), x * y, lambda g: (g * y, g * x))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    x, y = a.data, b.data
    return _emit("matmul", (a, b), x @ y, lambda g: (g @ y.T, x.T @ g))


# ─── Elementwise unary ──────────────────────────────────────────────────────

def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    out = _stable_sigmoid(a.data)
    return _emit("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _emit("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    # gradient at exactly 0 is 0
    positive = a.data > 0
    return _emit("relu", (a,), np.where(positive, a.data, 0.0), lambda g: (g * positive,))


def selu(a: Tensor) -> Tensor:
    x = a.data
    positive = x > 0
    exp = np.exp(np.minimum(x, 0.0))
    out = SELU_SCALE * np.where(positive, x, SELU_ALPHA * (exp - 1.0))
    slope = SELU_SCALE * np.where(positive, 1.0, SELU_ALPHA * exp)
    return _emit("selu", (a,), out, lambda g: (g * slope,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ShapeError("log: operand has non-positive entries")
    x = a.data
    return _emit("log", (a,), np.log(x), lambda g: (g / x,))


def absolute(a: Tensor) -> Tensor:
    x = a.data
    return _emit("abs", (a,), np.abs(x), lambda g: (g * np.sign(x),))


def clip(a: Tensor, low: float, high: float) -> Tensor:
    x = a.data
    inside = (x >= low) & (x <= high)
    return _emit("clip", (a,), np.clip(x, low, high), lambda g: (g * inside,))


def scale(a: Tensor, factor: float) -> Tensor:
    return _emit("scale", (a,), a.data * factor, lambda g: (g * factor,))


def scale_rows(a: Tensor, factors: np.ndarray) -> Tensor:
    """Multiply row i of a 2-D tensor by the constant factors[i]."""
    factors = np.asarray(factors, dtype=np.float64)
    if a.data.ndim != 2 or factors.shape != (a.shape[0],):
        raise ShapeError(f"scale_rows: shapes {a.shape} and {factors.shape} do not conform")
    column = factors[:, None]
    return _emit("scale_rows", (a,), a.data * column, lambda g: (g * column,))


# ─── Structural ─────────────────────────────────────────────────────────────

def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat: no operands")
    ndim = tensors[0].data.ndim
    axis = axis % ndim if ndim else 0
    reference = tensors[0].shape
    for t in tensors[1:]:
        if t.data.ndim != ndim or any(
            t.shape[d] != reference[d] for d in range(ndim) if d != axis
        ):
            raise ShapeError(f"concat(axis={axis}): shapes {reference} and {t.shape} do not conform")
    offsets = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _emit("concat", tuple(tensors), out, lambda g: np.split(g, offsets, axis=axis))


def slice_range(a: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    if not 0 <= start <= stop <= a.shape[axis]:
        raise ShapeError(f"slice: range [{start}, {stop}) outside axis {axis} of shape {a.shape}")
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def vjp(g):
        grad = np.zeros_like(a.data)
        grad[index] = g
        return (grad,)

    return _emit("slice", (a,), a.data[index], vjp)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from exc
    original = a.shape
    return _emit("reshape", (a,), out, lambda g: (g.reshape(original),))


def stack(rows: Sequence[Tensor]) -> Tensor:
    if not rows:
        raise ShapeError("stack: no rows")
    for row in rows[1:]:
        _same_shape("stack", rows[0], row)
    out = np.stack([r.data for r in rows])
    return _emit("stack", tuple(rows), out, lambda g: tuple(g[i] for i in range(len(rows))))


def take_row(a: Tensor, index: int) -> Tensor:
    if not 0 <= index < a.shape[0]:
        raise ShapeError(f"take_row: row {index} outside shape {a.shape}")

    def vjp(g):
        grad = np.zeros_like(a.data)
        grad[index] = g
        return (grad,)

    return _emit("take_row", (a,), a.data[index], vjp)


def unstack(a: Tensor) -> list[Tensor]:
    return [take_row(a, i) for i in range(a.shape[0])]


def repeat_rows(vector: Tensor, count: int) -> Tensor:
    """Explicit (d,) -> (count, d) expansion, used for biases."""
    if vector.data.ndim != 1:
        raise ShapeError(f"repeat_rows: expected a vector, got shape {vector.shape}")
    out = np.tile(vector.data, (count, 1))
    return _emit("repeat_rows", (vector,), out, lambda g: (g.sum(axis=0),))


def gather_rows(a: Tensor, indices: np.ndarray) -> Tensor:
    indices = np.asarray(indices, dtype=np.int64)
    if a.data.ndim != 2 or (indices.size and (indices.min() < 0 or indices.max() >= a.shape[0])):
        raise ShapeError(f"gather_rows: indices outside shape {a.shape}")

    def vjp(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, indices, g)
        return (grad,)

    return _emit("gather_rows", (a,), a.data[indices], vjp)


# ─── Reductions ─────────────────────────────────────────────────────────────

def reduce_sum(a: Tensor, axis: int = 0) -> Tensor:
    shape = a.shape
    return _emit("reduce_sum", (a,), a.data.sum(axis=axis),
                 lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),))


def reduce_mean(a: Tensor, axis: int = 0) -> Tensor:
    count = a.shape[axis]
    if count == 0:
        raise ShapeError(f"reduce_mean: axis {axis} of shape {a.shape} is empty")
    shape = a.shape
    return _emit("reduce_mean", (a,), a.data.sum(axis=axis) / count,
                 lambda g: (np.broadcast_to(np.expand_dims(g / count, axis), shape).copy(),))


def _reduce_extreme(op: str, a: Tensor, axis: int, pick) -> Tensor:
    if a.shape[axis] == 0:
        raise ShapeError(f"{op}: axis {axis} of shape {a.shape} is empty")
    # argmax/argmin return the first attaining index on ties
    winners = np.expand_dims(pick(a.data, axis=axis), axis)
    out = np.take_along_axis(a.data, winners, axis=axis).squeeze(axis)

    def vjp(g):
        grad = np.zeros_like(a.data)
        np.put_along_axis(grad, winners, np.expand_dims(g, axis), axis=axis)
        return (grad,)

    return _emit(op, (a,), out, vjp)


def reduce_max(a: Tensor, axis: int = 0) -> Tensor:
    return _reduce_extreme("reduce_max", a, axis, np.argmax)


def reduce_min(a: Tensor, axis: int = 0) -> Tensor:
    return _reduce_extreme("reduce_min", a, axis, np.argmin)


def segment_sum(a: Tensor, segments: np.ndarray, count: int) -> Tensor:
    """Row i of the result is the sum, in row order, of the rows of `a` whose segment is i."""
    segments = np.asarray(segments, dtype=np.int64)
    if a.data.ndim != 2 or segments.shape != (a.shape[0],):
        raise ShapeError(f"segment_sum: shapes {a.shape} and {segments.shape} do not conform")
    out = np.zeros((count, a.shape[1]))
    np.add.at(out, segments, a.data)
    return _emit("segment_sum", (a,), out, lambda g: (g[segments],))


def _segment_extreme(op: str, a: Tensor, segments: np.ndarray, count: int, pick) -> Tensor:
    segments = np.asarray(segments, dtype=np.int64)
    if a.data.ndim != 2 or segments.shape != (a.shape[0],):
        raise ShapeError(f"{op}: shapes {a.shape} and {segments.shape} do not conform")
    winners = np.zeros((count, a.shape[1]), dtype=np.int64)
    for segment in range(count):
        rows = np.flatnonzero(segments == segment)
        if rows.size == 0:
            raise ShapeError(f"{op}: segment {segment} is empty")
        winners[segment] = rows[pick(a.data[rows], axis=0)]
    columns = np.broadcast_to(np.arange(a.shape[1]), winners.shape)
    out = a.data[winners, columns]

    def vjp(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, (winners, columns), g)
        return (grad,)

    return _emit(op, (a,), out, vjp)


def segment_max(a: Tensor, segments: np.ndarray, count: int) -> Tensor:
    return _segment_extreme("segment_max", a, segments, count, np.argmax)


def segment_min(a: Tensor, segments: np.ndarray, count: int) -> Tensor:
    return _segment_extreme("segment_min", a, segments, count, np.argmin)


# ─── Differentiation ────────────────────────────────────────────────────────

def backward(tape: Tape, loss: Tensor) -> dict[int, np.ndarray]:
    """
    Gradients of the scalar `loss` w.r.t. every node reached, plus zeros for
    every untouched leaf.
    """
    if loss.tape is not tape:
        raise TapeError("backward: loss was not recorded on this tape")
    if loss.data.size != 1:
        raise TapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        upstream = grads.get(node.output)
        if upstream is None:
            continue
        for input_id, grad in zip(node.inputs, node.vjp(upstream)):
            if input_id is None or grad is None:
                continue
            grads[input_id] = grads[input_id] + grad if input_id in grads else np.asarray(grad, dtype=np.float64)
    for leaf in tape.leaves:
        if leaf not in grads:
            grads[leaf] = np.zeros_like(tape.values[leaf])
    return grads


def _evaluate(f: Callable[[Tensor], Tensor], point: np.ndarray) -> float:
    return float(f(Tape().leaf(point)).data.reshape(()))


def gradient_check(f: Callable[[Tensor], Tensor], point, epsilon: float = 1e-6) -> float:
    """
    Max component-wise relative error between backward gradients of `f` at
    `point` and central differences; denominators are max(|a|, |b|, 1e-8).
    Points on non-differentiable kinks (relu at 0) must be avoided by callers.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    base = np.array(point, dtype=np.float64)
    tape = Tape()
    x = tape.leaf(base)
    out = f(x)
    analytic = backward(tape, out)[x.node_id]
    if _evaluate(f, base) != float(out.data.reshape(())):
        raise TapeError("gradient_check: f is not deterministic")
    numeric = np.zeros_like(base)
    for index in np.ndindex(base.shape):
        plus, minus = base.copy(), base.copy()
        plus[index] += epsilon
        minus[index] -= epsilon
        numeric[index] = (_evaluate(f, plus) - _evaluate(f, minus)) / (2.0 * epsilon)
    if base.size == 0:
        return 0.0
    denominator = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    error = float(np.max(np.abs(analytic - numeric) / denominator))
    logger.debug("gradient_check over %d components: max relative error %.3e", base.size, error)
    return error
