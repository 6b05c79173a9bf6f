"""Minimal reverse-mode automatic differentiation over numpy arrays.

The engine provides exactly the primitives the completion model needs.
A :class:`Tensor` wraps a float32 or float64 numpy array. While a
:class:`Tape` is active (used as a context manager), every primitive whose
inputs require gradients appends a record with an exact adjoint closure;
``tape.backward(loss)`` replays the records in reverse and accumulates
``d(loss)/d(tensor)`` into ``tensor.grad``.

Design rules kept deliberately strict so the adjoint code stays auditable:

* elementwise ops accept equal shapes or a python scalar, nothing else;
* only ``linear`` broadcasts (its bias, over rows) and it owns that adjoint;
* without an active tape the primitives just compute values (inference mode).

Gradient accumulation semantics match common practice: grads of tensors
produced on the tape are reset at the start of every backward pass, grads of
leaf tensors accumulate across backward passes until ``grad`` is cleared.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractError, NumericsError, ShapeError

_ALLOWED_DTYPES = (np.float32, np.float64)


class Tensor:
    """An n-dimensional float array participating in differentiation.

    Attributes:
        data: the numpy value array (float32 or float64).
        requires_grad: whether backward should populate ``grad``.
        grad: numpy array of the same shape, filled by ``Tape.backward``.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _ALLOWED_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    # Operator sugar over the primitive set.
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

    def __neg__(self):
        return mul(self, -1.0)


def tensor(data, requires_grad=False, dtype=None):
    """Wrap ``data`` in a Tensor (convenience constructor)."""
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def constant(data, like=None):
    """A non-differentiable Tensor, cast to the dtype of ``like`` if given."""
    dtype = like.dtype if isinstance(like, Tensor) else None
    return Tensor(data, requires_grad=False, dtype=dtype)


# ---------------------------------------------------------------------------
# Tape


class _Record:
    __slots__ = ("output", "inputs", "backfn")

    def __init__(self, output, inputs, backfn):
        self.output = output
        self.inputs = inputs
        self.backfn = backfn


_ACTIVE_TAPE = None


class Tape:
    """Ordered record of executed primitives, in topological order.

    Use as a context manager around the forward computation, then call
    ``backward`` on the scalar result::

        with Tape() as tape:
            loss = fn(x)
        tape.backward(loss)
    """

    def __init__(self):
        self.records = []

    def __len__(self):
        return len(self.records)

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise ContractError("tapes do not nest; close the active tape first")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def backward(self, loss):
        """Populate grads of every requires_grad tensor reachable from ``loss``.

        Tensors recorded on this tape but not reachable from ``loss`` end up
        with zero grads; grads of leaf tensors accumulate across backward
        passes. Raises ContractError if ``loss`` is not scalar.
        """
        if not isinstance(loss, Tensor) or loss.size != 1:
            raise ContractError("backward expects a scalar Tensor loss")
        if not self.records:
            raise ContractError("backward on an empty tape")
        for rec in self.records:
            rec.output.grad = None  # reset intermediates, keep leaf grads
        loss.grad = np.ones_like(loss.data)
        for rec in reversed(self.records):
            gout = rec.output.grad
            if gout is None:
                continue  # not reachable from the loss
            for inp, gin in zip(rec.inputs, rec.backfn(gout)):
                if gin is None:
                    continue
                if inp.grad is None:
                    # pass-through adjoints hand back gout or a view of it;
                    # those must be copied before they can be accumulated into
                    if np.may_share_memory(gin, gout):
                        inp.grad = np.array(gin)
                    else:
                        inp.grad = gin
                else:
                    inp.grad += gin
        for rec in self.records:
            for t in (rec.output, *rec.inputs):
                if t.requires_grad and t.grad is None:
                    t.grad = np.zeros_like(t.data)


def _emit(out_data, inputs, backfn, requires=None):
    """Finalize a primitive: build the output tensor and record the adjoint."""
    needs = any(t.requires_grad for t in inputs) if requires is None else requires
    out = Tensor(out_data, requires_grad=needs)
    if needs and _ACTIVE_TAPE is not None:
        _ACTIVE_TAPE.records.append(_Record(out, tuple(inputs), backfn))
    return out


def _as_scalar(x, dtype):
    if isinstance(x, (int, float, np.floating, np.integer)):
        return dtype.type(x)
    return None


def _check_same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")
    if a.dtype != b.dtype:
        raise ContractError(f"{op}: dtypes {a.dtype} and {b.dtype} differ")


# ---------------------------------------------------------------------------
# Elementwise and scalar primitives


def add(a, b):
    if not isinstance(a, Tensor):
        a, b = b, a
    s = _as_scalar(b, a.dtype)
    if s is not None:
        return _emit(a.data + s, [a], lambda g: (g if a.requires_grad else None,))
    _check_same_shape(a, b, "add")

    def back(g):
        return (g if a.requires_grad else None, g if b.requires_grad else None)

    return _emit(a.data + b.data, [a, b], back)


def sub(a, b):
    if isinstance(a, Tensor):
        s = _as_scalar(b, a.dtype)
        if s is not None:
            return _emit(a.data - s, [a], lambda g: (g if a.requires_grad else None,))
    else:
        s = _as_scalar(a, b.dtype)
        return _emit(s - b.data, [b], lambda g: (-g if b.requires_grad else None,))
    _check_same_shape(a, b, "sub")

    def back(g):
        return (g if a.requires_grad else None, -g if b.requires_grad else None)

    return _emit(a.data - b.data, [a, b], back)


def mul(a, b):
    if not isinstance(a, Tensor):
        a, b = b, a
    s = _as_scalar(b, a.dtype)
    if s is not None:
        return _emit(a.data * s, [a], lambda g: (g * s if a.requires_grad else None,))
    _check_same_shape(a, b, "mul")

    def back(g):
        ga = g * b.data if a.requires_grad else None
        gb = g * a.data if b.requires_grad else None
        return (ga, gb)

    return _emit(a.data * b.data, [a, b], back)


def relu(x):
    mask = x.data > 0

    def back(g):
        return (g * mask if x.requires_grad else None,)

    return _emit(np.where(mask, x.data, x.dtype.type(0)), [x], back)


def sqrt(x):
    """Elementwise square root; inputs must be nonnegative.

    The adjoint denominator is floored at 1e-12 so coincident points in the
    distance losses produce a finite (sub)gradient instead of an infinity.
    """
    if np.any(x.data < 0):
        raise NumericsError("sqrt of a negative value")
    y = np.sqrt(x.data)

    def back(g):
        if not x.requires_grad:
            return (None,)
        return (g * 0.5 / np.maximum(y, x.dtype.type(1e-12)),)

    return _emit(y, [x], back)


# ---------------------------------------------------------------------------
# Linear algebra


def linear(x, weight, bias):
    """Affine map ``x @ weight + bias`` over rows of a rank-2 input."""
    if x.ndim != 2 or weight.ndim != 2 or bias.ndim != 1:
        raise ShapeError("linear expects x:(n,i), weight:(i,o), bias:(o,)")
    if x.shape[1] != weight.shape[0] or weight.shape[1] != bias.shape[0]:
        raise ShapeError(
            f"linear: x {x.shape} incompatible with weight {weight.shape}, bias {bias.shape}"
        )
    out = x.data @ weight.data + bias.data

    def back(g):
        gx = g @ weight.data.T if x.requires_grad else None
        gw = x.data.T @ g if weight.requires_grad else None
        gb = g.sum(axis=0) if bias.requires_grad else None
        return (gx, gw, gb)

    return _emit(out, [x, weight, bias], back)


# ---------------------------------------------------------------------------
# Normalizers


def softmax_last(x):
    """Softmax over the last axis, stabilized by subtracting the slice max."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        if not x.requires_grad:
            return (None,)
        dot = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - dot),)

    return _emit(s, [x], back)


def log_softmax_last(x):
    """Log-softmax over the last axis (yields nonpositive values)."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    s = np.exp(y)

    def back(g):
        if not x.requires_grad:
            return (None,)
        return (g - s * g.sum(axis=-1, keepdims=True),)

    return _emit(y, [x], back)


# ---------------------------------------------------------------------------
# Reductions


def reduce_sum(x, axis=None):
    if axis is None:
        out = x.data.sum()

        def back(g):
            return (np.broadcast_to(g, x.shape).copy() if x.requires_grad else None,)

        return _emit(out, [x], back)
    axis = _check_axis(x, axis)
    out = x.data.sum(axis=axis)

    def back_axis(g):
        if not x.requires_grad:
            return (None,)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _emit(out, [x], back_axis)


def reduce_mean(x, axis=None):
    n = x.size if axis is None else x.shape[_check_axis(x, axis)]
    scaled = reduce_sum(x, axis=axis)
    return mul(scaled, 1.0 / n)


def max_over_axis(x, axis):
    """Max reduction over one axis; ties route the gradient to the first max."""
    axis = _check_axis(x, axis)
    out = x.data.max(axis=axis)
    winner = x.data.argmax(axis=axis)

    def back(g):
        if not x.requires_grad:
            return (None,)
        gx = np.zeros_like(x.data)
        idx = list(np.indices(out.shape))
        idx.insert(axis, winner)
        gx[tuple(idx)] = g
        return (gx,)

    return _emit(out, [x], back)


def _check_axis(x, axis):
    if not isinstance(axis, int) or not (-x.ndim <= axis < x.ndim):
        raise ShapeError(f"axis {axis} invalid for rank-{x.ndim} tensor")
    return axis % x.ndim


# ---------------------------------------------------------------------------
# Structure


def concat(xs, axis=0):
    xs = list(xs)
    if not xs:
        raise ShapeError("concat of an empty sequence")
    axis = _check_axis(xs[0], axis)
    for x in xs[1:]:
        if x.ndim != xs[0].ndim:
            raise ShapeError("concat: rank mismatch")
        if x.dtype != xs[0].dtype:
            raise ContractError("concat: dtype mismatch")
        for d in range(x.ndim):
            if d != axis and x.shape[d] != xs[0].shape[d]:
                raise ShapeError(f"concat: shapes {x.shape} vs {xs[0].shape} on axis {d}")
    out = np.concatenate([x.data for x in xs], axis=axis)
    offsets = np.cumsum([0] + [x.shape[axis] for x in xs])

    def back(g):
        grads = []
        sl = [slice(None)] * g.ndim
        for i, x in enumerate(xs):
            if x.requires_grad:
                sl[axis] = slice(offsets[i], offsets[i + 1])
                grads.append(g[tuple(sl)])
            else:
                grads.append(None)
        return tuple(grads)

    return _emit(out, xs, back)


def gather_rows(x, index):
    """Select rows along axis 0: ``out[i] = x[index[i]]``.

    Indices may repeat, which doubles as row duplication; the adjoint
    scatter-adds, so repeated rows accumulate their gradients.
    """
    idx = np.asarray(index)
    if idx.ndim != 1 or idx.dtype.kind not in "iu":
        raise ShapeError("gather_rows expects a 1-d integer index")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise IndexError(f"gather_rows index out of range for {x.shape[0]} rows")

    def back(g):
        if not x.requires_grad:
            return (None,)
        # scatter-add via bincount over a flattened composite index; much
        # faster than np.add.at and deterministic (bin-order accumulation)
        stride = int(np.prod(x.shape[1:], dtype=np.int64)) if x.ndim > 1 else 1
        flat = (idx[:, None] * stride + np.arange(stride)).ravel() if stride > 1 else idx
        gx = np.bincount(flat, weights=g.ravel(), minlength=x.size)
        return (gx.reshape(x.shape).astype(x.dtype, copy=False),)

    return _emit(x.data[idx], [x], back)


def reshape(x, shape):
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")

    def back(g):
        return (g.reshape(x.shape) if x.requires_grad else None,)

    return _emit(x.data.reshape(shape), [x], back)


def permute(x, axes):
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"permute axes {axes} invalid for rank {x.ndim}")
    inverse = np.argsort(axes)

    def back(g):
        return (g.transpose(inverse) if x.requires_grad else None,)

    return _emit(x.data.transpose(axes), [x], back)


def repeat_cols(x, n):
    """Tile a (rows, 1) tensor to (rows, n); adjoint sums the copies."""
    if x.ndim != 2 or x.shape[1] != 1:
        raise ShapeError(f"repeat_cols expects shape (rows, 1), got {x.shape}")
    n = int(n)

    def back(g):
        return (g.sum(axis=1, keepdims=True) if x.requires_grad else None,)

    return _emit(np.repeat(x.data, n, axis=1), [x], back)


def repeat_rows(x, r):
    """Duplicate each row ``r`` times in place order: rows i*r..i*r+r-1 copy
    row i. Equivalent to gathering with a repeated index, with a cheaper
    group-sum adjoint."""
    if x.ndim < 1:
        raise ShapeError("repeat_rows expects at least one axis")
    r = int(r)
    if r < 1:
        raise ShapeError("repeat_rows needs r >= 1")
    n = x.shape[0]

    def back(g):
        if not x.requires_grad:
            return (None,)
        return (g.reshape(n, r, *x.shape[1:]).sum(axis=1),)

    return _emit(np.repeat(x.data, r, axis=0), [x], back)


# ---------------------------------------------------------------------------
# Gradient checking


class GradCheckReport:
    """Per-coordinate comparison of analytic and central-difference gradients."""

    def __init__(self, tol):
        self.tol = tol
        self.checked = 0
        self.max_rel_error = 0.0
        self.worst = None  # (input_index, flat_coord, analytic, numeric)
        self.failures = []

    @property
    def passed(self):
        return not self.failures

    def record(self, input_index, coord, analytic, numeric):
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        self.checked += 1
        if rel > self.max_rel_error:
            self.max_rel_error = rel
            self.worst = (input_index, coord, analytic, numeric)
        if rel > self.tol:
            self.failures.append((input_index, coord, analytic, numeric, rel))

    def summary(self):
        status = "ok" if self.passed else f"{len(self.failures)} coordinate(s) over tol"
        return (
            f"checked {self.checked} coordinates, max rel err "
            f"{self.max_rel_error:.3e} (tol {self.tol:.1e}): {status}"
        )


def grad_check(fn, inputs, eps=1e-5, tol=1e-4, max_coords_per_input=None, seed=0):
    """Compare analytic gradients of ``fn`` against central differences.

    Args:
        fn: callable mapping the given Tensors to a scalar Tensor.
        inputs: sequence of float64 leaf Tensors with requires_grad set.
        eps: central-difference step.
        tol: relative-error threshold for flagging a coordinate.
        max_coords_per_input: if given, check only this many coordinates per
            input, chosen by a seeded rng (still touching every input).

    Returns a GradCheckReport. Raises NumericsError if ``fn`` produces a
    non-finite value and ContractError on misuse (non-scalar output, wrong
    precision, nonpositive eps).
    """
    if eps <= 0:
        raise ContractError("grad_check needs eps > 0")
    inputs = list(inputs)
    for t in inputs:
        if t.dtype != np.float64:
            raise ContractError("grad_check requires float64 inputs")
        t.zero_grad()

    with Tape() as tape:
        out = fn(*inputs)
    if not isinstance(out, Tensor) or out.size != 1:
        raise ContractError("grad_check expects fn to return a scalar Tensor")
    if not np.isfinite(out.data).all():
        raise NumericsError("grad_check: fn returned a non-finite value")
    tape.backward(out)
    analytic = [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs
    ]

    def evaluate():
        val = fn(*inputs)
        v = float(val.data.reshape(-1)[0])
        if not np.isfinite(v):
            raise NumericsError("grad_check: fn returned a non-finite value")
        return v

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol)
    for i, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords_per_input is not None and flat.size > max_coords_per_input:
            coords = rng.choice(flat.size, size=max_coords_per_input, replace=False)
            coords.sort()
        ga = analytic[i].reshape(-1)
        for c in coords:
            keep = flat[c]
            flat[c] = keep + eps
            up = evaluate()
            flat[c] = keep - eps
            down = evaluate()
            flat[c] = keep
            report.record(i, int(c), float(ga[c]), (up - down) / (2.0 * eps))
    return report
