"""Reverse-mode automatic differentiation over scalars and small dense arrays.

A Tape records operations in topological order; backward() replays the
records in reverse exactly once, accumulating gradients additively into
each Value's grad slot. Everything is float64. There is no broadcasting
beyond scalar*array; shape mismatches raise DimensionError instead of
silently broadcasting.
"""

from __future__ import annotations

import numpy as np


class TapeError(RuntimeError):
    pass


class DimensionError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def _as_array(x):
    return np.asarray(x, dtype=np.float64)


class Value:
    """A node in the computation graph: payload plus gradient slot."""

    __slots__ = ("data", "tape", "requires_grad", "grad")

    def __init__(self, tape, data, requires_grad):
        self.tape = tape
        self.data = data
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def detach(self):
        return np.array(self.data, copy=True)

    # Convenience operators; raw numbers/arrays are lifted to constants.
    def __add__(self, other):
        return add(self, _lift(self.tape, other))

    def __radd__(self, other):
        return add(_lift(self.tape, other), self)

    def __sub__(self, other):
        return sub(self, _lift(self.tape, other))

    def __rsub__(self, other):
        return sub(_lift(self.tape, other), self)

    def __mul__(self, other):
        return mul(self, _lift(self.tape, other))

    def __rmul__(self, other):
        return mul(_lift(self.tape, other), self)

    def __neg__(self):
        return mul(self, self.tape.constant(-1.0))

    def __repr__(self):
        return f"Value(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _lift(tape, x):
    if isinstance(x, Value):
        return x
    return tape.constant(x)


class Tape:
    """Ordered operation records; single-threaded during record and backward."""

    def __init__(self):
        self._records = []  # (output, inputs, backward_fn)
        self._finished = False

    def leaf(self, data, requires_grad=True):
        arr = _as_array(data)
        _check_finite(arr, "leaf")
        return Value(self, arr, requires_grad)

    def constant(self, data):
        return self.leaf(data, requires_grad=False)

    def _record(self, out, inputs, backward_fn):
        if self._finished:
            raise TapeError("tape already used for backward; create a new tape")
        self._records.append((out, inputs, backward_fn))

    def backward(self, root):
        """Populate grad slots of all antecedents of a scalar root."""
        if self._finished:
            raise TapeError("backward() may run only once per tape")
        if not isinstance(root, Value) or root.tape is not self:
            raise TapeError("root does not belong to this tape")
        if root.data.size != 1:
            raise TapeError(f"backward root must be scalar, got shape {root.data.shape}")
        self._finished = True
        root.grad = np.ones_like(root.data)
        for out, inputs, backward_fn in reversed(self._records):
            if out.grad is None:
                continue
            grads = backward_fn(out.grad)
            for v, g in zip(inputs, grads):
                if g is None or not v.requires_grad:
                    continue
                if v.grad is None:
                    v.grad = g
                else:
                    v.grad = v.grad + g


def _check_finite(arr, opname):
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite payload produced by {opname}")


def _same_tape(*vals):
    tape = vals[0].tape
    for v in vals[1:]:
        if v.tape is not tape:
            raise TapeError("cannot mix Values from different tapes")
    return tape


def _make(tape, data, inputs, backward_fn, opname):
    _check_finite(data, opname)
    requires = any(v.requires_grad for v in inputs)
    out = Value(tape, data, requires)
    if requires:
        tape._record(out, inputs, backward_fn)
    return out


def _binary_shapes(a, b, opname):
    # Same shape, or one side scalar (shape () or size 1).
    if a.data.shape == b.data.shape:
        return
    if a.data.size == 1 or b.data.size == 1:
        return
    raise DimensionError(f"{opname}: incompatible shapes {a.data.shape} vs {b.data.shape}")


def _unbroadcast(g, shape):
    # Reduce a gradient back to a scalar operand's shape.
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape)


def add(a, b):
    tape = _same_tape(a, b)
    _binary_shapes(a, b, "add")
    data = a.data + b.data

    def backward(g):
        return (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape))

    return _make(tape, data, (a, b), backward, "add")


def sub(a, b):
    tape = _same_tape(a, b)
    _binary_shapes(a, b, "sub")
    data = a.data - b.data

    def backward(g):
        return (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape))

    return _make(tape, data, (a, b), backward, "sub")


def mul(a, b):
    tape = _same_tape(a, b)
    _binary_shapes(a, b, "mul")
    data = a.data * b.data
    a_data, b_data = a.data, b.data

    def backward(g):
        return (_unbroadcast(g * b_data, a_data.shape), _unbroadcast(g * a_data, b_data.shape))

    return _make(tape, data, (a, b), backward, "mul")


def matmul(a, b):
    tape = _same_tape(a, b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul: {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data
    a_data, b_data = a.data, b.data

    def backward(g):
        return (g @ b_data.T, a_data.T @ g)

    return _make(tape, data, (a, b), backward, "matmul")


def matvec(a, x):
    tape = _same_tape(a, x)
    if a.data.ndim != 2 or x.data.ndim != 1 or a.data.shape[1] != x.data.shape[0]:
        raise DimensionError(f"matvec: {a.data.shape} @ {x.data.shape}")
    data = a.data @ x.data
    a_data, x_data = a.data, x.data

    def backward(g):
        return (np.outer(g, x_data), a_data.T @ g)

    return _make(tape, data, (a, x), backward, "matvec")


def dot(x, y):
    tape = _same_tape(x, y)
    if x.data.ndim != 1 or x.data.shape != y.data.shape:
        raise DimensionError(f"dot: {x.data.shape} . {y.data.shape}")
    data = np.asarray(np.dot(x.data, y.data))
    x_data, y_data = x.data, y.data

    def backward(g):
        return (g * y_data, g * x_data)

    return _make(tape, data, (x, y), backward, "dot")


def concat(vals, axis=0):
    tape = _same_tape(*vals)
    data = np.concatenate([v.data for v in vals], axis=axis)
    sizes = [v.data.shape[axis] for v in vals]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(vals))
        )

    return _make(tape, data, tuple(vals), backward, "concat")


def slice_(v, key):
    """Basic slicing (no fancy indexing); gradient scatters back into zeros."""
    data = v.data[key]
    shape = v.data.shape

    def backward(g):
        out = np.zeros(shape)
        out[key] = g
        return (out,)

    return _make(v.tape, np.asarray(data), (v,), backward, "slice")


def reshape(v, shape):
    data = v.data.reshape(shape)
    old = v.data.shape

    def backward(g):
        return (g.reshape(old),)

    return _make(v.tape, data, (v,), backward, "reshape")


def sum_reduce(v):
    data = np.asarray(np.sum(v.data))
    shape = v.data.shape

    def backward(g):
        return (np.full(shape, float(g)),)

    return _make(v.tape, data, (v,), backward, "sum_reduce")


def elementwise_max_reduce(vals):
    """Elementwise max across a list of same-shape arrays.

    Gradient routes to the first argmax element (lowest list index wins ties).
    """
    tape = _same_tape(*vals)
    shape = vals[0].data.shape
    for v in vals:
        if v.data.shape != shape:
            raise DimensionError("elementwise_max_reduce: shape mismatch")
    stacked = np.stack([v.data for v in vals], axis=0)
    arg = np.argmax(stacked, axis=0)  # first max on ties
    data = np.take_along_axis(stacked, arg[None], axis=0)[0]

    def backward(g):
        return tuple(np.where(arg == k, g, 0.0) for k in range(len(vals)))

    return _make(tape, data, tuple(vals), backward, "elementwise_max_reduce")


def leaky_relu(v, slope):
    # slope < 1 assumed; derivative at the kink is defined as the slope.
    data = np.maximum(v.data, slope * v.data)
    pos = v.data > 0

    def backward(g):
        return (np.where(pos, g, slope * g),)

    return _make(v.tape, data, (v,), backward, "leaky_relu")


def softmax(v):
    if v.data.ndim != 1:
        raise DimensionError("softmax expects a 1-D vector")
    z = v.data - np.max(v.data)
    e = np.exp(z)
    y = e / np.sum(e)

    def backward(g):
        return (y * (g - np.dot(g, y)),)

    return _make(v.tape, y, (v,), backward, "softmax")


def reciprocal(v):
    data = 1.0 / v.data

    def backward(g):
        return (-g * data * data,)

    return _make(v.tape, data, (v,), backward, "reciprocal")


def square(v):
    data = v.data * v.data
    v_data = v.data

    def backward(g):
        return (2.0 * g * v_data,)

    return _make(v.tape, data, (v,), backward, "square")


def sin(v):
    data = np.sin(v.data)
    v_data = v.data

    def backward(g):
        return (g * np.cos(v_data),)

    return _make(v.tape, data, (v,), backward, "sin")


def cos(v):
    data = np.cos(v.data)
    v_data = v.data

    def backward(g):
        return (-g * np.sin(v_data),)

    return _make(v.tape, data, (v,), backward, "cos")


class GatherPlan:
    """Precomputed row-gather plan with a matching scatter-add plan for backward.

    Sorting the index array once up front turns the backward scatter-add into
    a permutation plus np.add.reduceat, which is far cheaper than np.add.at.
    """

    __slots__ = ("idx", "n_source", "order", "starts", "unique")

    def __init__(self, idx, n_source):
        idx = np.asarray(idx, dtype=np.intp)
        if idx.size and (idx.min() < 0 or idx.max() >= n_source):
            raise DimensionError("gather index out of range")
        self.idx = idx
        self.n_source = int(n_source)
        self.order = np.argsort(idx, kind="stable")
        s = idx[self.order]
        if s.size:
            head = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
        else:
            head = np.zeros(0, dtype=np.intp)
        self.starts = head
        self.unique = s[head] if s.size else s


def gather_rows(v, plan):
    if isinstance(plan, GatherPlan):
        if plan.n_source != v.data.shape[0]:
            raise DimensionError("gather plan built for a different row count")
    else:
        plan = GatherPlan(plan, v.data.shape[0])
    data = v.data[plan.idx]
    n, tail = plan.n_source, v.data.shape[1:]

    def backward(g):
        out = np.zeros((n,) + tail)
        if plan.idx.size:
            sums = np.add.reduceat(g[plan.order], plan.starts, axis=0)
            out[plan.unique] = sums
        return (out,)

    return _make(v.tape, data, (v,), backward, "gather_rows")


class SegmentPlan:
    """Contiguous-segment reduction plan: rows grouped by segment, in order."""

    __slots__ = ("starts", "counts", "n_rows")

    def __init__(self, counts):
        counts = np.asarray(counts, dtype=np.intp)
        if (counts <= 0).any():
            raise DimensionError("segment counts must be positive")
        self.counts = counts
        self.starts = np.r_[0, np.cumsum(counts)[:-1]]
        self.n_rows = int(counts.sum())


def segment_sum(v, plan):
    if v.data.shape[0] != plan.n_rows:
        raise DimensionError("segment plan row count mismatch")
    data = np.add.reduceat(v.data, plan.starts, axis=0)

    def backward(g):
        return (np.repeat(g, plan.counts, axis=0),)

    return _make(v.tape, data, (v,), backward, "segment_sum")


def assemble(scalars, shape):
    """Build an array from scalar Values laid out in C order."""
    tape = _same_tape(*scalars)
    flat = np.array([float(s.data) for s in scalars])
    if flat.size != int(np.prod(shape)):
        raise DimensionError("assemble: element count does not match shape")
    data = flat.reshape(shape)

    def backward(g):
        gf = g.reshape(-1)
        return tuple(np.asarray(gf[i]) for i in range(gf.size))

    return _make(tape, data, tuple(scalars), backward, "assemble")
