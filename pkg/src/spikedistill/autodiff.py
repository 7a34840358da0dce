"""Dense float64 tensors with taped reverse-mode differentiation.

The design is define-by-run: while a Tape is active (used as a context
manager), every operation whose inputs require gradients appends a backward
rule to the tape.  ``backward(tape, root)`` replays the rules in reverse
recording order, which is a valid topological order by construction, and
accumulates ``d root / d leaf`` into each leaf's ``grad`` with ``+=``.  The
tape is consumed by the replay; build a fresh one per forward pass.

Everything is float64.  Gradient checks against central finite differences
are part of the test suite and rely on that precision.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from .errors import NumericError, ShapeError, StateError

_tls = threading.local()


def _active_tape():
    return getattr(_tls, "tape", None)


class Tensor:
    """A dense float64 array plus an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, key):
        return take(self, key)

    def relu(self):
        return relu(self)

    def abs(self):
        return absolute(self)

    def exp(self):
        return exp(self)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)


class Tape:
    """Ordered record of operations from one forward pass.

    Each entry is ``(output_tensor, backward_rule)``; inputs of an entry are
    always produced by an earlier entry or are leaves, so iterating the list
    in reverse visits every node exactly once.
    """

    def __init__(self):
        self.ops = []
        self._prev = None

    def __enter__(self):
        self._prev = _active_tape()
        _tls.tape = self
        return self

    def __exit__(self, *exc):
        _tls.tape = self._prev
        self._prev = None
        return False

    def __len__(self):
        return len(self.ops)


@contextmanager
def no_grad():
    """Disable recording; forwards run on plain numpy inside this block."""
    prev = _active_tape()
    _tls.tape = None
    try:
        yield
    finally:
        _tls.tape = prev


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _record(out_data: np.ndarray, parents, backward_rule) -> Tensor:
    """Wrap op output; register the backward rule if recording applies."""
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.grad = np.zeros_like(out.data)
        tape.ops.append((out, backward_rule))
    return out


def backward(tape: Tape, root: Tensor) -> None:
    """Accumulate d root / d leaf into every requires_grad leaf.

    ``root`` must be a scalar produced on this tape.  The tape is cleared
    afterwards; a second call is a no-op on an empty tape.
    """
    if root.data.size != 1:
        raise ShapeError(f"backward root must be scalar, got shape {root.data.shape}")
    if not any(out is root for out, _ in tape.ops):
        raise StateError("backward root was not produced on this tape")
    root.grad += 1.0
    for out, rule in reversed(tape.ops):
        rule(out.grad)
    tape.ops.clear()


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting introduced."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t.grad += _unbroadcast(g, t.data.shape)


# -- elementwise and structural ops -------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def rule(g):
        _accum(a, g)
        _accum(b, g)

    return _record(out, (a, b), rule)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def rule(g):
        _accum(a, g)
        _accum(b, -g)

    return _record(out, (a, b), rule)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def rule(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _record(out, (a, b), rule)


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = np.maximum(x.data, 0.0)
    mask = x.data > 0  # subgradient 0 at exactly 0

    def rule(g):
        _accum(x, g * mask)

    return _record(out, (x,), rule)


def absolute(x) -> Tensor:
    x = as_tensor(x)
    out = np.abs(x.data)
    sign = np.sign(x.data)

    def rule(g):
        _accum(x, g * sign)

    return _record(out, (x,), rule)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)

    def rule(g):
        _accum(x, g * out)

    return _record(out, (x,), rule)


def tsum(x, axis=None) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis)
    shape = x.data.shape

    def rule(g):
        if axis is None:
            _accum(x, np.broadcast_to(g, shape))
        else:
            _accum(x, np.broadcast_to(np.expand_dims(g, axis), shape))

    return _record(out, (x,), rule)


def tmean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    out = x.data.mean(axis=axis)
    shape = x.data.shape
    n = x.data.size if axis is None else shape[axis]

    def rule(g):
        if axis is None:
            _accum(x, np.broadcast_to(g / n, shape))
        else:
            _accum(x, np.broadcast_to(np.expand_dims(g / n, axis), shape))

    return _record(out, (x,), rule)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = x.data.reshape(shape)
    orig = x.data.shape

    def rule(g):
        _accum(x, g.reshape(orig))

    return _record(out, (x,), rule)


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    out = np.transpose(x.data, axes)
    inverse = np.argsort(axes)

    def rule(g):
        _accum(x, np.transpose(g, inverse))

    return _record(out, (x,), rule)


def take(x, key) -> Tensor:
    """Integer or slice indexing along the first axis."""
    x = as_tensor(x)
    if not isinstance(key, (int, np.integer, slice)):
        raise ShapeError(f"take supports int or slice keys, got {type(key).__name__}")
    out = x.data[key]

    def rule(g):
        if x.requires_grad:
            x.grad[key] += g

    return _record(out, (x,), rule)


def stack(tensors) -> Tensor:
    """Join same-shape tensors along a new leading axis."""
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors])

    def rule(g):
        for i, t in enumerate(tensors):
            _accum(t, g[i])

    return _record(out, tensors, rule)


def gather_rows(x, cols) -> Tensor:
    """Pick one column per row: out[k] = x[k, cols[k]]."""
    x = as_tensor(x)
    cols = np.asarray(cols)
    rows = np.arange(x.data.shape[0])
    out = x.data[rows, cols]

    def rule(g):
        if x.requires_grad:
            x.grad[rows, cols] += g

    return _record(out, (x,), rule)


# -- neural-net ops ------------------------------------------------------


def linear(x, weight, bias) -> Tensor:
    """out[k, j] = sum_i x[k, i] * weight[i, j] + bias[j]."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ShapeError("linear expects 2-d input and weight")
    if x.data.shape[1] != weight.data.shape[0]:
        raise ShapeError(
            f"linear: input width {x.data.shape[1]} vs weight rows {weight.data.shape[0]}"
        )
    if bias.data.shape != (weight.data.shape[1],):
        raise ShapeError(f"linear: bias shape {bias.data.shape} vs out width {weight.data.shape[1]}")
    if not (np.isfinite(x.data).all() and np.isfinite(weight.data).all() and np.isfinite(bias.data).all()):
        raise NumericError("linear received non-finite input")
    out = x.data @ weight.data + bias.data

    def rule(g):
        _accum(x, g @ weight.data.T)
        _accum(weight, x.data.T @ g)
        _accum(bias, g.sum(axis=0))

    return _record(out, (x, weight, bias), rule)


class BatchNormState:
    """Running statistics for one batch-norm instance."""

    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5):
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)
        self.momentum = momentum
        self.eps = eps
        self.ready = False  # True once train-mode statistics have been folded in


def batchnorm(x, gamma, beta, state: BatchNormState, train: bool) -> Tensor:
    """Normalize each feature column over all rows, then scale and shift.

    Train mode uses batch statistics and updates the running moments by an
    exponential moving average (unbiased variance in the running estimate,
    biased in the normalization itself).  Eval mode requires populated
    running statistics.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    rows = x.data.shape[0]
    if train:
        if rows < 2:
            raise ShapeError("batchnorm train mode needs at least 2 rows, variance is degenerate")
        mean = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        m = state.momentum
        state.running_mean *= 1.0 - m
        state.running_mean += m * mean
        state.running_var *= 1.0 - m
        state.running_var += m * var * (rows / (rows - 1))
        state.ready = True
    else:
        if not state.ready:
            raise StateError("batchnorm eval mode before running statistics exist")
        mean = state.running_mean
        var = state.running_var
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mean) * inv_std
    out = gamma.data * xhat + beta.data

    def rule(g):
        _accum(gamma, (g * xhat).sum(axis=0))
        _accum(beta, g.sum(axis=0))
        if x.requires_grad:
            gi = g * gamma.data
            if train:
                x.grad += inv_std * (
                    gi - gi.mean(axis=0) - xhat * (gi * xhat).mean(axis=0)
                )
            else:
                x.grad += gi * inv_std

    return _record(out, (x, gamma, beta), rule)


def log_softmax(x, axis: int) -> Tensor:
    """Max-subtracted log-softmax along ``axis``."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - logsumexp
    softmax = np.exp(out)

    def rule(g):
        _accum(x, g - softmax * g.sum(axis=axis, keepdims=True))

    return _record(out, (x,), rule)
