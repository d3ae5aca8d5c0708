"""Dense 2-D tensors with a recording tape for reverse-mode differentiation.

Every value is a float64 matrix. Operations executed while a :class:`Tape` is
active (and touching at least one tensor that requires grad) are appended to
the tape together with their vector-Jacobian product; :func:`backward` walks
the tape in exact reverse order.  Outside a tape the same functions run as
plain numpy and nothing is recorded, which is what inference uses.

>>> W = Tensor(np.ones((2, 2)), requires_grad=True)
>>> with Tape():
...     loss = sum_all(W)
>>> backward(loss)
>>> W.grad
array([[1., 1.],
       [1., 1.]])
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Tape", "ShapeError", "backward", "no_tape",
    "matmul", "add", "sub", "mul", "scale", "add_scalar", "neg",
    "concat_cols", "slice_rows", "take_rows", "slice_cols", "transpose",
    "leaky_relu", "relu", "sin", "softmax_rows", "layer_norm_rows",
    "dropout", "cross_entropy_rows", "mse", "sum_all", "mean_all",
]

DEBUG = False


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class Tensor:
    """A 2-D float64 array with an optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"Tensor must be 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name
        self._tape = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)


class Tape:
    """Ordered record of executed primitives.

    Used as a context manager; nesting is not supported.
    """

    def __init__(self):
        self.entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._prev = None

    def __enter__(self) -> "Tape":
        global _active
        self._prev = _active
        _active = self
        return self

    def __exit__(self, *exc):
        global _active
        _active = self._prev
        return False

    def __len__(self) -> int:
        return len(self.entries)


_active: Tape | None = None


class no_tape:
    """Suspend recording inside an active tape."""

    def __enter__(self):
        global _active
        self._prev = _active
        _active = None

    def __exit__(self, *exc):
        global _active
        _active = self._prev
        return False


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out_data: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    if DEBUG and not np.all(np.isfinite(out_data)):
        raise FloatingPointError("non-finite value produced by forward op")
    needs = any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.name = None
    out._tape = None
    if needs and _active is not None:
        out.requires_grad = True
        out.grad = None
        out._tape = _active
        _active.entries.append((out, tuple(inputs), vjp))
    else:
        out.requires_grad = False
        out.grad = None
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every tensor reachable from ``loss``.

    Leaf parameters accumulate into their existing ``grad`` arrays, so call
    ``zero_grad`` between optimizer steps.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"backward: loss must be 1x1, got {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise ValueError("backward: loss was not recorded on a tape")
    loss.grad = np.ones((1, 1))
    for out, inputs, vjp in reversed(tape.entries):
        g = out.grad
        if g is None:
            continue
        grads = vjp(g)
        for t, gi in zip(inputs, grads):
            if gi is None or not t.requires_grad:
                continue
            if t.grad is None:
                t.grad = np.array(gi, dtype=np.float64, copy=True)
            else:
                t.grad += gi
    # drop intermediate accumulators so a tape's memory is released with it
    for out, _, _ in tape.entries:
        if out is not loss:
            out.grad = None


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}")


# ---------------------------------------------------------------------------
# linear algebra and arithmetic
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.cols != b.rows:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        return (g @ bd.T if a.requires_grad else None,
                ad.T @ g if b.requires_grad else None)

    return _record(ad @ bd, (a, b), vjp)


def add(a, b) -> Tensor:
    """Elementwise sum; a 1-row or 1-column operand is broadcast."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape

    def vjp(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _record(a.data + b.data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape

    def vjp(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _record(a.data - b.data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data

    def vjp(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return _record(ad * bd, (a, b), vjp)


def scale(x: Tensor, c: float) -> Tensor:
    return _record(x.data * c, (x,), lambda g: (g * c,))


def add_scalar(x: Tensor, c: float) -> Tensor:
    return _record(x.data + c, (x,), lambda g: (g,))


def neg(x: Tensor) -> Tensor:
    return scale(x, -1.0)


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _record(np.array([[x.data.sum()]]), (x,),
                   lambda g: (np.full(shape, g[0, 0]),))


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    shape = x.shape
    return _record(np.array([[x.data.mean()]]), (x,),
                   lambda g: (np.full(shape, g[0, 0] / n),))


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    rows = parts[0].rows
    for p in parts[1:]:
        if p.rows != rows:
            shapes = ", ".join(str(q.shape) for q in parts)
            raise ShapeError(f"concat_cols: row counts differ: {shapes}")
    bounds = np.cumsum([0] + [p.cols for p in parts])

    def vjp(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _record(np.concatenate([p.data for p in parts], axis=1), parts, vjp)


def take_rows(x: Tensor, index) -> Tensor:
    """Gather rows by integer index (repeats allowed).

    The gradient scatters back with accumulation, so only gathered rows of
    ``x`` ever receive a nonzero gradient.
    """
    idx = np.asarray(index, dtype=np.intp).reshape(-1)
    if idx.size and (idx.min() < -x.rows or idx.max() >= x.rows):
        raise IndexError(f"take_rows: index out of range for {x.shape}")
    shape = x.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _record(x.data[idx], (x,), vjp)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start <= stop <= x.rows:
        raise ShapeError(f"slice_rows: [{start}:{stop}] invalid for {x.shape}")
    shape = x.shape

    def vjp(g):
        out = np.zeros(shape)
        out[start:stop] = g
        return (out,)

    return _record(x.data[start:stop], (x,), vjp)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start <= stop <= x.cols:
        raise ShapeError(f"slice_cols: [{start}:{stop}] invalid for {x.shape}")
    shape = x.shape

    def vjp(g):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return (out,)

    return _record(x.data[:, start:stop], (x,), vjp)


def transpose(x: Tensor) -> Tensor:
    return _record(x.data.T.copy(), (x,), lambda g: (g.T,))


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    pos = x.data > 0
    factor = np.where(pos, 1.0, slope)
    return _record(x.data * factor, (x,), lambda g: (g * factor,))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _record(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


def sin(x: Tensor) -> Tensor:
    c = np.cos(x.data)
    return _record(np.sin(x.data), (x,), lambda g: (g * c,))


def softmax_rows(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row-wise softmax; entries where ``mask`` is False get probability 0."""
    z = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != z.shape:
            raise ShapeError(f"softmax_rows: mask {mask.shape} vs input {z.shape}")
        if not mask.any(axis=1).all():
            raise ValueError("softmax_rows: a row has every position masked")
        z = np.where(mask, z, -np.inf)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    y = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _record(y, (x,), vjp)


def layer_norm_rows(x: Tensor, eps: float = 1e-9) -> Tensor:
    """Standardize each row to zero mean, unit variance (no affine)."""
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    y = xc * inv

    def vjp(g):
        gm = g.mean(axis=1, keepdims=True)
        gym = (g * y).mean(axis=1, keepdims=True)
        return (inv * (g - gm - y * gym),)

    return _record(y, (x,), vjp)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None,
            train: bool) -> Tensor:
    """Inverted dropout: identity when ``train`` is False or ``rate`` is 0."""
    if not train or rate <= 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate must lie in [0, 1), got {rate}")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _record(x.data * keep, (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def cross_entropy_rows(logits: Tensor, targets) -> Tensor:
    """Mean over rows of ``-log softmax(logits)[row, target]``."""
    t = np.asarray(targets, dtype=np.intp).reshape(-1)
    n, c = logits.shape
    if t.size != n:
        raise ShapeError(f"cross_entropy_rows: {t.size} targets for logits {logits.shape}")
    if n == 0:
        raise ValueError("cross_entropy_rows: empty batch")
    if t.min() < 0 or t.max() >= c:
        raise IndexError(f"cross_entropy_rows: target out of range [0, {c})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = (lse - z[rows, t]).mean()

    def vjp(g):
        p = np.exp(z - lse[:, None])
        p[rows, t] -= 1.0
        return (p * (g[0, 0] / n),)

    return _record(np.array([[loss]]), (logits,), vjp)


def mse(pred: Tensor, target) -> Tensor:
    """Mean squared error over all entries; ``target`` is a constant."""
    tgt = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    tgt = tgt.reshape(pred.shape) if tgt.size == pred.data.size else tgt
    if tgt.shape != pred.shape:
        raise ShapeError(f"mse: prediction {pred.shape} vs target {tgt.shape}")
    diff = pred.data - tgt
    n = diff.size

    def vjp(g):
        return (diff * (2.0 * g[0, 0] / n),)

    return _record(np.array([[np.mean(diff * diff)]]), (pred,), vjp)
