"""Dense arrays with reverse-mode differentiation on an explicit tape.

Values live in numpy arrays. Every differentiable op records a node on the
active GradTape; backward() replays the tape once in reverse, accumulating
gradients additively across fan-out. Float64 is the default so the
finite-difference checks have headroom; pass dtype=np.float32 at leaf
creation to trade precision for training speed.

Gradient arrays are never mutated in place: accumulation always builds a new
array, so a gradient handed to two parents may be safely aliased.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested operation."""


class DomainError(ValueError):
    """Operand values outside an operation's domain (e.g. log of x <= 0)."""


class Tensor:
    """N-dimensional array participating in reverse-mode differentiation.

    data  -- numpy array (cast to float64 unless dtype says otherwise)
    grad  -- same-shape accumulator, populated by backward()
    requires_grad marks leaves (parameters). Results produced inside an
    active GradTape are tracked automatically.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        self.data = np.asarray(data, dtype=DEFAULT_DTYPE if dtype is None else dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._tape: "GradTape | None" = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.grad = None
        t.requires_grad = False
        t.name = None
        t._tape = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor has {self.data.size} elements")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape},{tag} requires_grad={self.requires_grad})"

    # operator sugar; all routing goes through the module-level ops
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class GradTape:
    """Ordered record of executed differentiable operations.

    Use as a context manager around one forward pass; backward(loss) then
    replays the nodes in reverse exactly once. A tape is single-use: record,
    replay, discard.
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []
        self._replayed = False

    def __enter__(self) -> "GradTape":
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TAPES.pop()

    def __len__(self) -> int:
        return len(self._nodes)


_TAPES: list[GradTape] = []


def _tracked(t: Tensor) -> bool:
    return t.requires_grad or t._tape is not None


def _record(out: Tensor, inputs: Sequence[Tensor], backward_fn: Callable[[np.ndarray], None]) -> None:
    if not _TAPES:
        return
    if not any(_tracked(t) for t in inputs):
        return
    tape = _TAPES[-1]
    out._tape = tape
    tape._nodes.append((out, backward_fn))


def _accum(t: Tensor, g: np.ndarray) -> None:
    # never in-place: see module docstring
    t.grad = g if t.grad is None else t.grad + g


def _as_tensor(x, ref: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = ref.data.dtype if ref is not None else DEFAULT_DTYPE
    return Tensor._wrap(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Replay the tape of `loss` in reverse, filling .grad on every tracked
    tensor that contributed to it. `loss` must be scalar."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise ValueError("backward: loss was not recorded on an active GradTape")
    if tape._replayed:
        raise RuntimeError("backward: tape already replayed; use a fresh GradTape per pass")
    tape._replayed = True
    loss.grad = np.ones_like(loss.data)
    for out, fn in reversed(tape._nodes):
        if out.grad is not None:
            fn(out.grad)


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, ref=a)
    try:
        out = Tensor._wrap(a.data + b.data)
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} vs {b.shape}") from None

    def bwd(g):
        if _tracked(a):
            _accum(a, _unbroadcast(g, a.data.shape))
        if _tracked(b):
            _accum(b, _unbroadcast(g, b.data.shape))

    _record(out, (a, b), bwd)
    return out


def sub(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, ref=a)
    try:
        out = Tensor._wrap(a.data - b.data)
    except ValueError:
        raise ShapeError(f"sub: shapes {a.shape} vs {b.shape}") from None

    def bwd(g):
        if _tracked(a):
            _accum(a, _unbroadcast(g, a.data.shape))
        if _tracked(b):
            _accum(b, _unbroadcast(-g, b.data.shape))

    _record(out, (a, b), bwd)
    return out


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, ref=a)
    try:
        out = Tensor._wrap(a.data * b.data)
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} vs {b.shape}") from None

    def bwd(g):
        if _tracked(a):
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if _tracked(b):
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    _record(out, (a, b), bwd)
    return out


def div(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, ref=a)
    try:
        out = Tensor._wrap(a.data / b.data)
    except ValueError:
        raise ShapeError(f"div: shapes {a.shape} vs {b.shape}") from None

    def bwd(g):
        if _tracked(a):
            _accum(a, _unbroadcast(g / b.data, a.data.shape))
        if _tracked(b):
            _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    _record(out, (a, b), bwd)
    return out


def neg(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor._wrap(-a.data)

    def bwd(g):
        if _tracked(a):
            _accum(a, -g)

    _record(out, (a,), bwd)
    return out


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)
    out = Tensor._wrap(y)

    def bwd(g):
        if _tracked(a):
            _accum(a, _tanh_backward(y, g))

    _record(out, (a,), bwd)
    return out


def _tanh_backward(y: np.ndarray, g: np.ndarray) -> np.ndarray:
    # module-level so tests can inject a corrupted rule
    return g * (1.0 - y * y)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor._wrap(y)

    def bwd(g):
        if _tracked(a):
            _accum(a, g * y * (1.0 - y))

    _record(out, (a,), bwd)
    return out


def exp(a) -> Tensor:
    a = _as_tensor(a)
    y = np.exp(a.data)
    out = Tensor._wrap(y)

    def bwd(g):
        if _tracked(a):
            _accum(a, g * y)

    _record(out, (a,), bwd)
    return out


def log(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError(f"log: non-positive input (min {a.data.min()})")
    out = Tensor._wrap(np.log(a.data))

    def bwd(g):
        if _tracked(a):
            _accum(a, g / a.data)

    _record(out, (a,), bwd)
    return out


# ---------------------------------------------------------------------------
# matrix / shape ops
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, ref=a)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expects 2-D operands, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul: inner extents differ, {a.shape} x {b.shape}"
        )
    out = Tensor._wrap(a.data @ b.data)

    def bwd(g):
        if _tracked(a):
            _accum(a, g @ b.data.T)
        if _tracked(b):
            _accum(b, a.data.T @ g)

    _record(out, (a, b), bwd)
    return out


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = Tensor._wrap(a.data.reshape(shape))

    def bwd(g):
        if _tracked(a):
            _accum(a, g.reshape(a.data.shape))

    _record(out, (a,), bwd)
    return out


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    out = Tensor._wrap(np.concatenate([t.data for t in ts], axis=axis))
    sizes = [t.data.shape[axis] for t in ts]

    def bwd(g):
        off = 0
        for t, s in zip(ts, sizes):
            if _tracked(t):
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(off, off + s)
                _accum(t, g[tuple(idx)])
            off += s

    _record(out, ts, bwd)
    return out


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    a = _as_tensor(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Tensor._wrap(a.data[idx].copy())

    def bwd(g):
        if _tracked(a):
            gx = np.zeros_like(a.data)
            gx[idx] = g
            _accum(a, gx)

    _record(out, (a,), bwd)
    return out


def row(a, i: int) -> Tensor:
    """Row i of a 2-D tensor, as a 1-D tensor."""
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"row: expects 2-D input, got {a.shape}")
    out = Tensor._wrap(a.data[i].copy())

    def bwd(g):
        if _tracked(a):
            gx = np.zeros_like(a.data)
            gx[i] = g
            _accum(a, gx)

    _record(out, (a,), bwd)
    return out


def gather(a, indices) -> Tensor:
    """1-D gather: out[k] = a[indices[k]]. Duplicate indices accumulate."""
    a = _as_tensor(a)
    if a.ndim != 1:
        raise ShapeError(f"gather: expects 1-D input, got {a.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    out = Tensor._wrap(a.data[idx])

    def bwd(g):
        if _tracked(a):
            gx = np.zeros_like(a.data)
            np.add.at(gx, idx, g)
            _accum(a, gx)

    _record(out, (a,), bwd)
    return out


# ---------------------------------------------------------------------------
# reductions and normalizers
# ---------------------------------------------------------------------------

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - tensor-lib convention
    a = _as_tensor(a)
    out = Tensor._wrap(np.sum(a.data, axis=axis, keepdims=keepdims))

    def bwd(g):
        if _tracked(a):
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            _accum(a, np.broadcast_to(gg, a.data.shape).copy())

    _record(out, (a,), bwd)
    return out


def mean(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor._wrap(np.asarray(a.data.mean()))
    n = a.data.size

    def bwd(g):
        if _tracked(a):
            _accum(a, np.broadcast_to(g / n, a.data.shape).copy())

    _record(out, (a,), bwd)
    return out


def add_n(tensors: Sequence) -> Tensor:
    """Elementwise sum of same-shape tensors (single tape node)."""
    ts = [_as_tensor(t) for t in tensors]
    acc = ts[0].data.copy()
    for t in ts[1:]:
        if t.data.shape != acc.shape:
            raise ShapeError(f"add_n: shapes {acc.shape} vs {t.data.shape}")
        acc += t.data
    out = Tensor._wrap(acc)

    def bwd(g):
        for t in ts:
            if _tracked(t):
                _accum(t, g)

    _record(out, ts, bwd)
    return out


def softmax(a, axis: int = -1) -> Tensor:
    """Positive, sums to one along `axis`; max-subtraction keeps it finite
    for any finite input."""
    a = _as_tensor(a)
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor._wrap(y)

    def bwd(g):
        if _tracked(a):
            dot = np.sum(g * y, axis=axis, keepdims=True)
            _accum(a, (g - dot) * y)

    _record(out, (a,), bwd)
    return out


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    s = x - m
    lse = np.log(np.sum(np.exp(s), axis=axis, keepdims=True))
    y = s - lse
    out = Tensor._wrap(y)

    def bwd(g):
        if _tracked(a):
            _accum(a, g - np.exp(y) * np.sum(g, axis=axis, keepdims=True))

    _record(out, (a,), bwd)
    return out


def logaddexp(*tensors) -> Tensor:
    """Elementwise log(sum(exp(t_i))) over two or more same-shape tensors,
    computed against the running max so -1e30 sentinels stay finite."""
    ts = [_as_tensor(t) for t in tensors]
    if len(ts) < 2:
        raise ValueError("logaddexp: needs at least two operands")
    m = ts[0].data
    for t in ts[1:]:
        if t.data.shape != m.shape:
            raise ShapeError(f"logaddexp: shapes {m.shape} vs {t.data.shape}")
        m = np.maximum(m, t.data)
    acc = np.zeros_like(m)
    for t in ts:
        acc += np.exp(t.data - m)
    y = m + np.log(acc)
    out = Tensor._wrap(y)

    def bwd(g):
        for t in ts:
            if _tracked(t):
                _accum(t, g * np.exp(t.data - y))

    _record(out, ts, bwd)
    return out


def logsumexp(a) -> Tensor:
    """log(sum(exp(a))) over all elements, as a scalar tensor."""
    a = _as_tensor(a)
    m = float(np.max(a.data))
    y = m + np.log(np.sum(np.exp(a.data - m)))
    out = Tensor._wrap(np.asarray(y))

    def bwd(g):
        if _tracked(a):
            _accum(a, g * np.exp(a.data - y))

    _record(out, (a,), bwd)
    return out


# ---------------------------------------------------------------------------
# LSTM cell
# ---------------------------------------------------------------------------

@dataclass
class LstmParams:
    """Stacked gate parameters, gate order (input, forget, output, candidate).

    wx: (4H, d_in)   wh: (4H, H)   b: (4H,)
    """

    wx: Tensor
    wh: Tensor
    b: Tensor

    @property
    def hidden(self) -> int:
        return self.wh.shape[1]

    def named(self, prefix: str):
        yield f"{prefix}.wx", self.wx
        yield f"{prefix}.wh", self.wh
        yield f"{prefix}.b", self.b


def lstm_cell(x, h_prev, c_prev, params: LstmParams) -> tuple[Tensor, Tensor]:
    """One LSTM step. Accepts (B, d) batches or bare (d,) vectors."""
    squeeze = False
    if _as_tensor(x).ndim == 1:
        squeeze = True
        x = reshape(x, (1, -1))
        h_prev = reshape(h_prev, (1, -1))
        c_prev = reshape(c_prev, (1, -1))
    h = params.hidden
    pre = add(add(matmul(x, transpose(params.wx)), matmul(h_prev, transpose(params.wh))), params.b)
    i = sigmoid(narrow(pre, 1, 0, h))
    f = sigmoid(narrow(pre, 1, h, h))
    o = sigmoid(narrow(pre, 1, 2 * h, h))
    cand = tanh(narrow(pre, 1, 3 * h, h))
    c = add(mul(f, c_prev), mul(i, cand))
    hy = mul(o, tanh(c))
    if squeeze:
        hy = reshape(hy, (-1,))
        c = reshape(c, (-1,))
    return hy, c


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose: expects 2-D input, got {a.shape}")
    out = Tensor._wrap(a.data.T.copy())

    def bwd(g):
        if _tracked(a):
            _accum(a, g.T)

    _record(out, (a,), bwd)
    return out


# ---------------------------------------------------------------------------
# parameter utilities
# ---------------------------------------------------------------------------

def zeros(shape, dtype=None, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=DEFAULT_DTYPE if dtype is None else dtype),
                  requires_grad=requires_grad)


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype=None,
                 requires_grad: bool = True) -> Tensor:
    """Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], seeded via `rng`."""
    bound = 1.0 / np.sqrt(fan_in)
    data = rng.uniform(-bound, bound, size=shape)
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def init_lstm(rng: np.random.Generator, d_in: int, hidden: int, dtype=None) -> LstmParams:
    return LstmParams(
        wx=uniform_init(rng, (4 * hidden, d_in), d_in, dtype=dtype),
        wh=uniform_init(rng, (4 * hidden, hidden), hidden, dtype=dtype),
        b=uniform_init(rng, (4 * hidden,), d_in + hidden, dtype=dtype),
    )


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


def global_grad_norm(tensors) -> float:
    total = 0.0
    for t in tensors:
        if t.grad is not None:
            total += float(np.sum(t.grad * t.grad))
    return float(np.sqrt(total))


def clip_global_norm(tensors, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm.
    Returns the pre-clip norm. Out-of-place, like all gradient math here."""
    norm = global_grad_norm(tensors)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for t in tensors:
            if t.grad is not None:
                t.grad = t.grad * scale
    return norm
