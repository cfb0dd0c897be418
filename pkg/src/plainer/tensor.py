"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only the primitives the simplification model needs are provided: matmul,
elementwise add/mul, ReLU, stabilized softmax, embedding lookup, dropout
masking, concatenation/slicing, layer normalization and cross-entropy.
There is no broadcasting beyond bias addition along the last axis; every
shape is explicit.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class NumericError(ValueError):
    """Non-finite values where finite ones are required."""


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

_TAPES: list["Tape"] = []


class Tape:
    """Execution-ordered record of primitive ops, replayed in reverse for backward.

    Ops are appended as they run, so the record is topologically ordered by
    construction and the backward sweep is deterministic: the same forward
    computation always accumulates gradients in the same order.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, object]] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _TAPES.pop()
        return False

    def record(self, out: "Tensor", backward_fn) -> None:
        self._records.append((out, backward_fn))

    def backward(self, loss: "Tensor") -> None:
        """Seed d(loss)/d(loss) = 1 and sweep the record in reverse."""
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for out, fn in reversed(self._records):
            if out.grad is not None:
                fn(out.grad)


def _active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


# ---------------------------------------------------------------------------
# Tensor
# ---------------------------------------------------------------------------


class Tensor:
    """A float64 array plus an optional gradient of the same shape."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        tape = _active_tape()
        if tape is None:
            raise RuntimeError("backward() called with no active Tape")
        tape.backward(self)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; the free functions below do the work
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Create an op output; record it when a tape is active and grads are needed."""
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape.record(out, backward_fn)
    return out


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    """Elementwise sum of two same-shape tensors."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _make(a.data + b.data, (a, b), backward)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a length-d vector along the last axis of x (the one allowed broadcast)."""
    if bias.data.ndim != 1 or x.shape[-1] != bias.shape[0]:
        raise ShapeError(f"bias {bias.shape} does not fit last axis of {x.shape}")

    def backward(g):
        _accumulate(x, g)
        _accumulate(bias, g.reshape(-1, bias.shape[0]).sum(axis=0))

    return _make(x.data + bias.data, (x, bias), backward)


def scale(x: Tensor, s: float) -> Tensor:
    def backward(g):
        _accumulate(x, g * s)

    return _make(x.data * s, (x,), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product, same shapes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes differ: {a.shape} vs {b.shape}")

    def backward(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _make(a.data * b.data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product; dL/da = g @ b.T, dL/db = a.T @ g."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes incompatible: {a.shape} x {b.shape}")

    def backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), backward)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose expects 2-D, got {x.shape}")

    def backward(g):
        _accumulate(x, g.T)

    return _make(x.data.T.copy(), (x,), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        _accumulate(x, g * mask)

    return _make(np.where(mask, x.data, 0.0), (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-stabilized softmax along `axis`; -inf entries get exactly zero mass.

    Rejects NaN input; rows that are entirely -inf (fully masked) are a
    caller error and also rejected.
    """
    if np.isnan(x.data).any():
        raise NumericError("softmax input contains NaN")
    m = np.max(x.data, axis=axis, keepdims=True)
    if not np.isfinite(m).all():
        raise NumericError("softmax has a fully -inf slice (all positions masked)")
    e = np.exp(x.data - m)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        # dx = (g - sum(g*y)) * y along the softmax axis
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accumulate(x, (g - dot) * y)

    return _make(y, (x,), backward)


def tsum(x: Tensor) -> Tensor:
    """Sum of all entries, as a scalar tensor."""

    def backward(g):
        _accumulate(x, np.full_like(x.data, float(g)))

    return _make(np.asarray(x.data.sum()), (x,), backward)


def tmean(x: Tensor) -> Tensor:
    n = x.data.size

    def backward(g):
        _accumulate(x, np.full_like(x.data, float(g) / n))

    return _make(np.asarray(x.data.mean()), (x,), backward)


def concat(parts: list[Tensor], axis: int = 0) -> Tensor:
    """Concatenate 2-D tensors along axis 0 or 1."""
    if not parts:
        raise ShapeError("concat of zero tensors")
    if axis not in (0, 1) or any(p.data.ndim != 2 for p in parts):
        raise ShapeError("concat supports 2-D tensors on axis 0 or 1")
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, a, b in zip(parts, offsets[:-1], offsets[1:]):
            _accumulate(p, g[a:b] if axis == 0 else g[:, a:b])

    return _make(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), backward)


def col_slice(x: Tensor, start: int, stop: int) -> Tensor:
    """Columns [start, stop) of a 2-D tensor."""
    if x.data.ndim != 2:
        raise ShapeError(f"col_slice expects 2-D, got {x.shape}")

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[:, start:stop] = g
            _accumulate(x, full)

    return _make(x.data[:, start:stop].copy(), (x,), backward)


def rows(x: Tensor, index: int) -> Tensor:
    """Single row of a 2-D tensor, kept 2-D with shape (1, d)."""

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[index] = g[0]
            _accumulate(x, full)

    return _make(x.data[index : index + 1].copy(), (x,), backward)


def embedding(table: Tensor, ids) -> Tensor:
    """Gather rows of `table` for a sequence of ids; backward scatter-adds."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeError(f"embedding ids must be 1-D, got {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding id out of range for table with {table.shape[0]} rows")

    def backward(g):
        if table.requires_grad:
            full = np.zeros_like(table.data)
            np.add.at(full, ids, g)
            _accumulate(table, full)

    return _make(table.data[ids].copy(), (table,), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator, train: bool) -> Tensor:
    """Inverted dropout: Bernoulli keep-mask scaled by 1/(1-p) at train time.

    Identity at eval time. Mask draws come from the caller's seeded stream so
    runs are reproducible.
    """
    if not train or p <= 0.0:
        return x
    if p >= 1.0:
        raise ValueError(f"dropout rate must be < 1, got {p}")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)

    def backward(g):
        _accumulate(x, g * mask)

    return _make(x.data * mask, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance, then affine-transform."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm gain/bias must be ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def backward(g):
        dxhat = g * gain.data
        if x.requires_grad:
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            _accumulate(x, inv * (dxhat - m1 - xhat * m2))
        _accumulate(gain, (g * xhat).reshape(-1, d).sum(axis=0))
        _accumulate(bias, g.reshape(-1, d).sum(axis=0))

    return _make(xhat * gain.data + bias.data, (x, gain, bias), backward)


def cross_entropy(logits: Tensor, target_ids) -> Tensor:
    """Mean over steps of -log softmax(logits)[target]; fused for stability."""
    ids = np.asarray(target_ids, dtype=np.int64)
    if logits.data.ndim != 2 or ids.ndim != 1 or ids.shape[0] != logits.shape[0]:
        raise ShapeError(
            f"cross_entropy needs (steps, V) logits and matching ids, "
            f"got {logits.shape} and {ids.shape}"
        )
    n, v = logits.shape
    if ids.size and (ids.min() < 0 or ids.max() >= v):
        raise IndexError(f"target id out of range for vocabulary of size {v}")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    loss = -logp[np.arange(n), ids].mean()

    def backward(g):
        if logits.requires_grad:
            grad = np.exp(logp)
            grad[np.arange(n), ids] -= 1.0
            _accumulate(logits, grad * (float(g) / n))

    return _make(np.asarray(loss), (logits,), backward)


def log_probs(logits: np.ndarray) -> np.ndarray:
    """Stable log-softmax over the last axis of a plain array (no grad)."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def check_gradients(f, inputs: list[Tensor], epsilon: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central differences.

    `f` takes no arguments, reads `inputs`, and must be deterministic
    (dropout off); relative error uses max(|analytic|, |numeric|, 1e-8) as
    the denominator, checked at every coordinate of every input.
    """
    if not 1e-6 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon {epsilon} outside [1e-6, 1e-3]")
    for t in inputs:
        t.zero_grad()
    with Tape() as tape:
        out = f()
        tape.backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    worst = 0.0
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        aflat = a.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + epsilon
            up = float(f().data)
            flat[i] = keep - epsilon
            down = float(f().data)
            flat[i] = keep
            numeric = (up - down) / (2.0 * epsilon)
            denom = max(abs(aflat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(aflat[i] - numeric) / denom)
    return worst
