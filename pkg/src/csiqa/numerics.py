"""Dense float64 tensors with tape-based reverse-mode differentiation.

Everything downstream (sampling, embedding, encoder, scoring head, training)
is built from the primitives in this module. Arrays are double precision so
gradient checks against central finite differences are meaningful.

Tensors are treated as immutable values once created; the one sanctioned
mutation is the optimizer rewriting parameter data between tapes. Recording
is single-threaded: open a ``GradTape`` around the forward pass, then call
``backward`` on a scalar loss to populate ``.grad`` on every reachable
tensor with ``requires_grad=True``. Code that runs outside a tape performs
no recording and is safe to run in parallel over read-only tensors.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_GELU_CUBIC = 0.044715

# Stack of currently recording tapes (innermost last). Single-writer.
_ACTIVE_TAPES: list["GradTape"] = []


class Tensor:
    """A dense double-precision array plus gradient bookkeeping.

    ``data`` is always a C-contiguous float64 ndarray, so the flat buffer is
    the row-major enumeration of the logical shape. ``grad`` stays ``None``
    until ``backward`` accumulates into it.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if 0 in arr.shape:
            raise ShapeError(f"tensor extents must all be >= 1, got {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._tape: GradTape | None = None

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

    def numpy(self) -> np.ndarray:
        """A defensive copy of the underlying array."""
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class GradTape:
    """Ordered record of primitive operations for reverse replay.

    Used as a context manager around a forward pass. Replaying backward
    visits each recorded operation exactly once, in reverse recording order.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, object]] = []

    def __enter__(self) -> "GradTape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _ACTIVE_TAPES.pop()
        assert popped is self, "tape stack corrupted"

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: Tensor, backprop) -> None:
        self._records.append((out, backprop))

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)/d(loss)=1 and propagate through the tape in reverse."""
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise ContractError("loss was not recorded on this tape")
        loss.grad = np.ones_like(loss.data)
        for out, backprop in reversed(self._records):
            if out.grad is not None:
                backprop(out.grad)


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` for every requires_grad tensor the loss depends on.

    Tensors not on the loss's tape are untouched (their ``grad`` stays as
    it was, i.e. an unused parameter reads as zero gradient).
    """
    if loss._tape is None:
        raise ContractError("loss is not connected to a gradient tape")
    loss._tape.backward(loss)


def _active_tape() -> "GradTape | None":
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make(out_data: np.ndarray, inputs: Sequence[Tensor], backprop) -> Tensor:
    """Wrap an op result; record it if a tape is open and gradients flow.

    ``backprop(g)`` must accumulate into each input that requires grad.
    """
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape
        tape.record(out, backprop)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape`` by summing."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# Elementwise arithmetic (numpy broadcasting, gradient reduced to each input)
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backprop(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.shape))

    return _make(out, (a, b), backprop)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def backprop(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(out, (a, b), backprop)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backprop(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(out, (a, b), backprop)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backprop(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out, (a, b), backprop)


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a non-learnable python scalar."""
    x = as_tensor(x)
    c = float(c)

    def backprop(g):
        if x.requires_grad:
            _accumulate(x, g * c)

    return _make(x.data * c, (x,), backprop)


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs two rank-2 tensors, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    out = a.data @ b.data

    def backprop(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _make(out, (a, b), backprop)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the leading axis of two rank-3 tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 3 or b.ndim != 3:
        raise ShapeError(f"bmm needs two rank-3 tensors, got {a.shape} and {b.shape}")
    if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"bmm extents incompatible: {a.shape} x {b.shape}")
    out = a.data @ b.data

    def backprop(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.swapaxes(-1, -2))
        if b.requires_grad:
            _accumulate(b, a.data.swapaxes(-1, -2) @ g)

    return _make(out, (a, b), backprop)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused ``x @ w + b`` with the bias broadcast over rows."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 2 or w.ndim != 2 or b.ndim != 1:
        raise ShapeError(f"affine needs (2d, 2d, 1d), got {x.shape}, {w.shape}, {b.shape}")
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ShapeError(f"affine extents incompatible: {x.shape} @ {w.shape} + {b.shape}")
    out = x.data @ w.data + b.data

    def backprop(g):
        if x.requires_grad:
            _accumulate(x, g @ w.data.T)
        if w.requires_grad:
            _accumulate(w, x.data.T @ g)
        if b.requires_grad:
            _accumulate(b, g.sum(axis=0))

    return _make(out, (x, w, b), backprop)


def transpose(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"transpose expects rank 2, got {x.shape}")
    return permute(x, (1, 0))


def permute(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"permute axes {axes} invalid for shape {x.shape}")
    inverse = sorted(range(len(axes)), key=axes.__getitem__)

    def backprop(g):
        if x.requires_grad:
            _accumulate(x, np.ascontiguousarray(g.transpose(inverse)))

    return _make(np.ascontiguousarray(x.data.transpose(axes)), (x,), backprop)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    if math.prod(shape) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")
    old = x.shape

    def backprop(g):
        if x.requires_grad:
            _accumulate(x, g.reshape(old))

    return _make(x.data.reshape(shape), (x,), backprop)


# ---------------------------------------------------------------------------
# Structural ops (slicing, gathering, concatenation)
# ---------------------------------------------------------------------------

def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2 or not (0 <= start < stop <= x.shape[0]):
        raise ShapeError(f"row slice [{start}:{stop}] invalid for shape {x.shape}")

    def backprop(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[start:stop] = g
            _accumulate(x, full)

    return _make(x.data[start:stop].copy(), (x,), backprop)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2 or not (0 <= start < stop <= x.shape[1]):
        raise ShapeError(f"column slice [{start}:{stop}] invalid for shape {x.shape}")

    def backprop(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[:, start:stop] = g
            _accumulate(x, full)

    return _make(x.data[:, start:stop].copy(), (x,), backprop)


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Select rows by integer index; index ``-1`` yields an all-zero row."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"gather_rows expects rank 2, got {x.shape}")
    idx = np.asarray(index, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"gather index must be rank 1, got {idx.shape}")
    if idx.max(initial=-1) >= x.shape[0] or idx.min(initial=0) < -1:
        raise ShapeError(f"gather index out of range for {x.shape[0]} rows")
    valid = idx >= 0
    out = np.zeros((idx.size, x.shape[1]), dtype=np.float64)
    out[valid] = x.data[idx[valid]]

    def backprop(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            np.add.at(gx, idx[valid], g[valid])
            _accumulate(x, gx)

    return _make(out, (x,), backprop)


def _concat(parts: Iterable[Tensor], axis: int) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ContractError("concat of zero parts")
    if any(p.ndim != 2 for p in parts):
        raise ShapeError("concat expects rank-2 parts")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backprop(g):
        for p, a, b in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                piece = g[a:b] if axis == 0 else g[:, a:b]
                _accumulate(p, piece)

    return _make(out, parts, backprop)


def concat_rows(parts: Iterable[Tensor]) -> Tensor:
    return _concat(parts, axis=0)


def concat_cols(parts: Iterable[Tensor]) -> Tensor:
    return _concat(parts, axis=1)


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    x = as_tensor(x)

    def backprop(g):
        if x.requires_grad:
            _accumulate(x, np.broadcast_to(g, x.shape).copy())

    return _make(np.asarray(x.data.sum()), (x,), backprop)


def mean_all(x: Tensor) -> Tensor:
    x = as_tensor(x)
    n = x.size

    def backprop(g):
        if x.requires_grad:
            _accumulate(x, np.broadcast_to(g / n, x.shape).copy())

    return _make(np.asarray(x.data.mean()), (x,), backprop)


# ---------------------------------------------------------------------------
# Nonlinearities and normalization
# ---------------------------------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-stabilized softmax along ``axis``; outputs sum to 1 there."""
    x = as_tensor(x)
    if not (-x.ndim <= axis < x.ndim):
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backprop(g):
        if x.requires_grad:
            dot = (g * y).sum(axis=axis, keepdims=True)
            _accumulate(x, y * (g - dot))

    return _make(y, (x,), backprop)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-8) -> Tensor:
    """Per-row normalization over the last axis, then affine gain and bias.

    Uses the biased variance. ``eps`` keeps the constant-row case finite.
    """
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm gain/bias must have shape ({d},), got {gain.shape} and {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gain.data + bias.data

    def backprop(g):
        if bias.requires_grad:
            _accumulate(bias, _unbroadcast(g, bias.shape))
        if gain.requires_grad:
            _accumulate(gain, _unbroadcast(g * xhat, gain.shape))
        if x.requires_grad:
            gx_hat = g * gain.data
            m1 = gx_hat.mean(axis=-1, keepdims=True)
            m2 = (gx_hat * xhat).mean(axis=-1, keepdims=True)
            _accumulate(x, inv_std * (gx_hat - m1 - xhat * m2))

    return _make(out, (x, gain, bias), backprop)


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh approximation:
    0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3))).
    """
    x = as_tensor(x)
    sq = x.data * x.data
    u = _SQRT_2_OVER_PI * (x.data + _GELU_CUBIC * (sq * x.data))
    t = np.tanh(u)
    out = 0.5 * x.data * (1.0 + t)

    def backprop(g):
        if x.requires_grad:
            du = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_CUBIC * sq)
            local = 0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du
            _accumulate(x, g * local)

    return _make(out, (x,), backprop)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.maximum(x.data, 0.0)

    def backprop(g):
        if x.requires_grad:
            _accumulate(x, g * (x.data > 0.0))

    return _make(out, (x,), backprop)


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = 1.0 / (1.0 + np.exp(-x.data))

    def backprop(g):
        if x.requires_grad:
            _accumulate(x, g * out * (1.0 - out))

    return _make(out, (x,), backprop)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

class AdamState:
    """Per-parameter first/second moment buffers plus the step counter.

    Buffers are zero-initialized lazily on the first ``adam_step`` call.
    """

    def __init__(self):
        self.step: int = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def ensure(self, params: Sequence[Tensor]) -> None:
        if self.m is None:
            self.m = [np.zeros_like(p.data) for p in params]
            self.v = [np.zeros_like(p.data) for p in params]
        if len(self.m) != len(params):
            raise ShapeError(
                f"optimizer state holds {len(self.m)} buffers for {len(params)} parameters")
        for p, m in zip(params, self.m):
            if m.shape != p.data.shape:
                raise ShapeError(f"moment buffer {m.shape} does not match parameter {p.shape}")


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> tuple[Sequence[Tensor], AdamState]:
    """One Adam update with bias correction, applied in place.

    Weight decay is coupled L2 (classic Adam): ``weight_decay * p`` is added
    to the gradient before the moment updates, not decoupled AdamW-style.
    """
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    state.ensure(params)
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient {g.shape} does not match parameter {p.shape}")
        if weight_decay != 0.0:
            g = g + weight_decay * p.data
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


# ---------------------------------------------------------------------------
# Initialization helpers
# ---------------------------------------------------------------------------

def trunc_normal(rng: np.random.Generator, shape, std: float, clip: float = 2.0) -> np.ndarray:
    """Normal(0, std) resampled until every draw lies within ``clip`` sigmas."""
    out = rng.normal(0.0, std, size=shape)
    bound = clip * std
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > bound
    return out
