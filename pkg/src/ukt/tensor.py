"""Dense-tensor engine with tape-based reverse-mode differentiation.

Tensors wrap numpy arrays and follow numpy broadcasting rules. Gradients are
computed by recording executed ops on a ``Tape``: ops append a node (output,
inputs, backward rule) whenever a tape is active and at least one input has
``requires_grad=True``. ``backward(loss)`` then walks the tape in reverse,
accumulating over fan-out, and deposits results in ``tensor.grad``.

Code run outside a ``Tape`` context is plain numpy: nothing is recorded, so
evaluation-only passes carry no graph overhead. A tape is confined to one
thread; the active-tape stack is thread-local.

Default scalar type is float64. float32 can be selected for training
throughput via ``set_default_dtype``; gradient checks require float64.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, ShapeError, UsageError

_DTYPE = np.float64


def set_default_dtype(dtype) -> None:
    """Set the scalar type used for newly created tensors."""
    global _DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise UsageError(f"unsupported dtype {dt}; use float32 or float64")
    _DTYPE = dt.type


def default_dtype():
    return _DTYPE


class Tensor:
    """A dense array plus autodiff bookkeeping.

    ``data`` is the value, ``grad`` (filled by ``backward``) has the same
    shape. Tensors are treated as immutable once created by an op; only leaf
    parameters are updated in place, between tapes, by the optimizer.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        out = cls.__new__(cls)
        out.data = arr
        out.requires_grad = False
        out.grad = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise UsageError(f"item() on non-scalar tensor of shape {self.shape}")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # arithmetic sugar; all routed through the op functions below
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class _Node:
    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out, inputs, backward_fn):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of executed ops; inputs of a node always precede it."""

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self, "tape contexts must nest"
        return False


_LOCAL = threading.local()


def _tape_stack() -> list:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = []
        _LOCAL.stack = stack
    return stack


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finish(out: Tensor, inputs: tuple, backward_fn) -> Tensor:
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append(_Node(out, inputs, backward_fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _shape_fail(op: str, *operands):
    shapes = " and ".join(str(np.asarray(getattr(o, "data", o)).shape) for o in operands)
    raise ShapeError(f"{op}: incompatible shapes {shapes}")


# ---------------------------------------------------------------------------
# elementwise binary ops (numpy broadcasting)
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    try:
        out = Tensor._wrap(a.data + b.data)
    except ValueError:
        _shape_fail("add", a, b)
    return _finish(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    try:
        out = Tensor._wrap(a.data - b.data)
    except ValueError:
        _shape_fail("sub", a, b)
    return _finish(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    try:
        out = Tensor._wrap(a.data * b.data)
    except ValueError:
        _shape_fail("mul", a, b)

    def backward_fn(g):
        return (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape))

    return _finish(out, (a, b), backward_fn)


def div(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    try:
        out = Tensor._wrap(a.data / b.data)
    except ValueError:
        _shape_fail("div", a, b)

    def backward_fn(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _finish(out, (a, b), backward_fn)


def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.ndim < 2 or b.ndim < 2:
        _shape_fail("matmul", a, b)
    try:
        out = Tensor._wrap(a.data @ b.data)
    except ValueError:
        _shape_fail("matmul", a, b)

    def backward_fn(g):
        ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape)
        gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape)
        return ga, gb

    return _finish(out, (a, b), backward_fn)


# ---------------------------------------------------------------------------
# elementwise unary ops
# ---------------------------------------------------------------------------

def square(x) -> Tensor:
    x = _coerce(x)
    out = Tensor._wrap(x.data * x.data)
    return _finish(out, (x,), lambda g: (2.0 * x.data * g,))


def sqrt(x) -> Tensor:
    x = _coerce(x)
    if np.any(x.data < 0):
        raise DomainError("sqrt: negative operand")
    out = Tensor._wrap(np.sqrt(x.data))

    def backward_fn(g):
        return (g * 0.5 / np.sqrt(x.data),)

    return _finish(out, (x,), backward_fn)


def exp(x) -> Tensor:
    x = _coerce(x)
    val = np.exp(x.data)
    out = Tensor._wrap(val)
    return _finish(out, (x,), lambda g: (g * val,))


def log(x) -> Tensor:
    x = _coerce(x)
    if np.any(x.data <= 0):
        raise DomainError("log: nonpositive operand")
    out = Tensor._wrap(np.log(x.data))
    return _finish(out, (x,), lambda g: (g / x.data,))


def relu(x) -> Tensor:
    x = _coerce(x)
    out = Tensor._wrap(np.maximum(x.data, 0.0))
    return _finish(out, (x,), lambda g: (g * (x.data > 0),))


def elu(x) -> Tensor:
    """Exponential linear unit with alpha=1; C1 at the origin."""
    x = _coerce(x)
    pos = x.data > 0
    out = Tensor._wrap(np.where(pos, x.data, np.expm1(x.data)))

    def backward_fn(g):
        return (g * np.where(pos, 1.0, np.exp(x.data)),)

    return _finish(out, (x,), backward_fn)


_TINY = np.nextafter(0.0, 1.0)  # smallest positive subnormal double


def elu_plus_one(x) -> Tensor:
    """Fused ELU(x) + 1: x + 1 above zero, exp(x) below; always > 0.

    The two-step form rounds exp(x) - 1 to exactly -1 once x < ~-37 and the
    +1 then cancels to zero. Evaluating exp(x) directly (with a subnormal
    floor) keeps every output strictly positive for any finite input.
    """
    x = _coerce(x)
    pos = x.data > 0
    neg_branch = np.maximum(np.exp(np.minimum(x.data, 0.0)), _TINY)
    out = Tensor._wrap(np.where(pos, x.data + 1.0, neg_branch))

    def backward_fn(g):
        return (g * np.where(pos, 1.0, np.exp(np.minimum(x.data, 0.0))),)

    return _finish(out, (x,), backward_fn)


def sigmoid(x) -> Tensor:
    x = _coerce(x)
    val = np.empty_like(x.data)
    pos = x.data >= 0
    val[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    val[~pos] = ex / (1.0 + ex)
    out = Tensor._wrap(val)
    return _finish(out, (x,), lambda g: (g * val * (1.0 - val),))


def clip_max(x, cap: float) -> Tensor:
    """Elementwise min(x, cap); gradient passes where x <= cap."""
    x = _coerce(x)
    out = Tensor._wrap(np.minimum(x.data, cap))
    return _finish(out, (x,), lambda g: (g * (x.data <= cap),))


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _coerce(x)
    out = Tensor._wrap(x.data.sum(axis=axis, keepdims=keepdims))

    def backward_fn(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _finish(out, (x,), backward_fn)


def tmean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _coerce(x)
    count = x.size if axis is None else x.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def trace_diag(x) -> Tensor:
    """Trace of diag(v) for the vectors along the last axis: a plain sum."""
    return tsum(x, axis=-1)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    parts = [_coerce(t) for t in tensors]
    try:
        out = Tensor._wrap(np.concatenate([p.data for p in parts], axis=axis))
    except ValueError:
        _shape_fail("concat", *parts)
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return _finish(out, tuple(parts), backward_fn)


def reshape(x, shape) -> Tensor:
    x = _coerce(x)
    try:
        out = Tensor._wrap(x.data.reshape(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}")
    return _finish(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes) -> Tensor:
    x = _coerce(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = Tensor._wrap(x.data.transpose(axes))
    return _finish(out, (x,), lambda g: (g.transpose(inverse),))


# ---------------------------------------------------------------------------
# structured ops
# ---------------------------------------------------------------------------

def embedding(table, ids) -> Tensor:
    """Row lookup: table (V, d) indexed by an integer array of any shape."""
    table = _coerce(table)
    idx = np.asarray(ids)
    if table.ndim != 2:
        raise ShapeError(f"embedding: table must be 2-d, got {table.shape}")
    if not np.issubdtype(idx.dtype, np.integer):
        raise UsageError("embedding: ids must be integers")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise DomainError(
            f"embedding: id out of range [0, {table.shape[0]}) "
            f"(got min {idx.min()}, max {idx.max()})"
        )
    out = Tensor._wrap(table.data[idx])

    def backward_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _finish(out, (table,), backward_fn)


def gather_steps(x, step_idx) -> Tensor:
    """Pick one time step per sequence: x (B, T, ...), step_idx (B,) -> (B, ...)."""
    x = _coerce(x)
    idx = np.asarray(step_idx)
    if x.ndim < 2 or idx.ndim != 1 or idx.shape[0] != x.shape[0]:
        _shape_fail("gather_steps", x, idx)
    rows = np.arange(x.shape[0])
    out = Tensor._wrap(x.data[rows, idx])

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, idx), g)
        return (gx,)

    return _finish(out, (x,), backward_fn)


def softmax_masked_data(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Data-level masked softmax over the last axis; empty rows -> zeros.

    Works in place on a scratch copy: masked entries become -inf, the row
    max is subtracted, and exp(-inf) = 0 zeroes them without a second mask
    pass. Fully-masked rows keep max 0 so they exp to all zeros, not NaN.
    """
    m = np.broadcast_to(np.asarray(mask, dtype=bool), scores.shape)
    z = np.where(m, scores, -np.inf)
    row_max = z.max(axis=-1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    z -= row_max
    np.exp(z, out=z)
    denom = z.sum(axis=-1, keepdims=True)
    np.divide(z, denom, out=z, where=denom > 0)
    return z


def softmax_backward_data(weights: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Jacobian-vector product of a (masked) softmax given its output."""
    inner = (g * weights).sum(axis=-1, keepdims=True)
    return weights * (g - inner)


def masked_softmax(scores, mask) -> Tensor:
    """Softmax over the last axis restricted to mask==True entries.

    Masked entries get exactly 0. Rows with no unmasked entry come out as
    all zeros rather than raising; callers decide what an empty context
    means.
    """
    scores = _coerce(scores)
    val = softmax_masked_data(scores.data, mask)
    out = Tensor._wrap(val)
    return _finish(out, (scores,), lambda g: (softmax_backward_data(val, g),))


def dropout(x, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate == 0."""
    x = _coerce(x)
    if not 0.0 <= rate < 1.0:
        raise UsageError(f"dropout: rate {rate} outside [0, 1)")
    if rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    out = Tensor._wrap(x.data * keep)
    return _finish(out, (x,), lambda g: (g * keep,))


def custom_op(out_data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    """Record a hand-fused computation as one tape node.

    ``backward_fn(g)`` must return one gradient (or None) per input, in
    order. Used where composing primitive ops would record dozens of
    large intermediates.
    """
    out = Tensor._wrap(np.asarray(out_data))
    return _finish(out, tuple(inputs), backward_fn)


# ---------------------------------------------------------------------------
# op-identifier dispatch (used by fuzz tests and generic tooling)
# ---------------------------------------------------------------------------

OPS: dict[str, Callable] = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "broadcast_add": add,
    "sqrt": sqrt,
    "square": square,
    "sum": tsum,
    "mean": tmean,
    "concat": concat,
    "relu": relu,
    "elu": elu,
    "elu_plus_one": elu_plus_one,
    "sigmoid": sigmoid,
    "log": log,
    "exp": exp,
    "masked_softmax": masked_softmax,
    "trace_diag": trace_diag,
    "embedding": embedding,
    "reshape": reshape,
    "transpose": transpose,
    "clip_max": clip_max,
    "gather_steps": gather_steps,
    "dropout": dropout,
}


def apply_op(kind: str, *inputs, **kwargs) -> Tensor:
    """Dispatch by op identifier; unknown kinds raise UsageError."""
    fn = OPS.get(kind)
    if fn is None:
        raise UsageError(f"unknown op kind {kind!r}")
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Populate .grad of every requires_grad tensor reachable from loss.

    Walks the innermost active tape in reverse execution order; fan-out
    accumulates. The loss must be a scalar recorded on that tape.
    """
    tape = active_tape()
    if tape is None:
        raise UsageError("backward: no active tape")
    if not tape.nodes:
        raise UsageError("backward: tape is empty")
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise UsageError("backward: loss must be a scalar tensor")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        g_out = grads.pop(id(node.out), None)
        holders.pop(id(node.out), None)
        if g_out is None:
            continue
        input_grads = node.backward_fn(g_out)
        for inp, g in zip(node.inputs, input_grads):
            if g is None:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
                holders[key] = inp

    # whatever is left was never produced by a node on this tape: the leaves
    for key, tensor in holders.items():
        if tensor.requires_grad:
            g = grads[key]
            tensor.grad = g if tensor.grad is None else tensor.grad + g
