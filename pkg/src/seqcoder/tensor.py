"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

A forward pass runs inside a `Tape` context; every differentiable operation
records a local backward closure on the active tape. `Tape.backward` seeds a
scalar loss with gradient 1 and replays the records in reverse, accumulating
into the `.grad` buffers of tensors that require gradients. The tape is freed
after backward, so there are no retained-graph semantics.

Broadcasting is deliberately restricted: binary elementwise ops accept either
exactly matching shapes or a 1-D row vector against a 2-D matrix. Anything
richer is rejected so the gradient code stays auditable.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    IndexRangeError,
    MaskError,
)


class Tensor:
    """Dense numeric array with an optional accumulated gradient."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float64):
        self.data = np.asarray(data, dtype=dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


_ACTIVE_TAPE: Optional["Tape"] = None


class Tape:
    """Ordered record of operations for one forward/backward pass."""

    def __init__(self):
        self._records: list[tuple[Tensor, object]] = []
        self._prev: Optional["Tape"] = None

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        self._prev = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._prev
        return False

    def record(self, out: Tensor, backward_fn) -> None:
        self._records.append((out, backward_fn))

    def backward(self, loss: Tensor) -> None:
        """Reverse traversal from a scalar loss; frees the tape afterwards."""
        if loss.data.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
        loss.accumulate_grad(np.ones_like(loss.data))
        for out, fn in reversed(self._records):
            if out.grad is not None:
                fn(out.grad)
        self._records.clear()


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE


def backward(loss: Tensor) -> None:
    if _ACTIVE_TAPE is None:
        raise ContractError("backward called with no active tape")
    _ACTIVE_TAPE.backward(loss)


def _record(out: Tensor, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    if _ACTIVE_TAPE is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _ACTIVE_TAPE.record(out, backward_fn)
    return out


def _acc(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t.accumulate_grad(g)


def _binary_mode(a: Tensor, b: Tensor) -> str:
    """'same' for exact shape match, 'row' for 1-D row vector over 2-D matrix."""
    if a.data.shape == b.data.shape:
        return "same"
    if a.data.ndim == 2 and b.data.ndim == 1 and b.data.shape[0] == a.data.shape[1]:
        return "row"
    raise DimensionError(f"incompatible shapes {a.data.shape} and {b.data.shape}")


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    mode = _binary_mode(a, b)
    out = Tensor(a.data + b.data)

    def bw(g):
        _acc(a, g)
        _acc(b, g.sum(axis=0) if mode == "row" else g)

    return _record(out, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    mode = _binary_mode(a, b)
    out = Tensor(a.data * b.data)

    def bw(g):
        _acc(a, g * b.data)
        gb = g * a.data
        _acc(b, gb.sum(axis=0) if mode == "row" else gb)

    return _record(out, (a, b), bw)


def neg(x: Tensor) -> Tensor:
    out = Tensor(-x.data)

    def bw(g):
        _acc(x, -g)

    return _record(out, (x,), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, neg(b))


def scale(x: Tensor, k: float) -> Tensor:
    out = Tensor(x.data * k)

    def bw(g):
        _acc(x, g * k)

    return _record(out, (x,), bw)


def sigmoid(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(s)

    def bw(g):
        _acc(x, g * s * (1.0 - s))

    return _record(out, (x,), bw)


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    out = Tensor(t)

    def bw(g):
        _acc(x, g * (1.0 - t * t))

    return _record(out, (x,), bw)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))
    pos = x.data > 0.0

    def bw(g):
        _acc(x, g * pos)

    return _record(out, (x,), bw)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul shapes {a.data.shape} x {b.data.shape} do not agree")
    out = Tensor(a.data @ b.data)

    def bw(g):
        _acc(a, g @ b.data.T)
        _acc(b, a.data.T @ g)

    return _record(out, (a, b), bw)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {x.data.shape}")
    out = Tensor(x.data.T.copy())

    def bw(g):
        _acc(x, g.T)

    return _record(out, (x,), bw)


def softmax_rows(x: Tensor, mask=None) -> Tensor:
    """Row-wise softmax; masked entries are exactly zero in the output."""
    if x.data.ndim != 2:
        raise DimensionError(f"softmax_rows expects a matrix, got shape {x.data.shape}")
    if mask is not None:
        m_arr = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
        if m_arr.shape != x.data.shape:
            raise DimensionError(f"mask shape {m_arr.shape} != input shape {x.data.shape}")
        keep = m_arr != 0
        if not keep.any(axis=1).all():
            raise MaskError("softmax row is fully masked")
        shifted = np.where(keep, x.data, -np.inf)
    else:
        keep = None
        shifted = x.data
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    if keep is not None:
        e = np.where(keep, e, 0.0)
    p = e / e.sum(axis=1, keepdims=True)
    out = Tensor(p)

    def bw(g):
        dot = (g * p).sum(axis=1, keepdims=True)
        _acc(x, p * (g - dot))

    return _record(out, (x,), bw)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Row gather; backward scatter-adds into the table rows."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.data.ndim != 2:
        raise DimensionError(f"embedding table must be a matrix, got shape {table.data.shape}")
    v = table.data.shape[0]
    if ids.size:
        bad = ids[(ids < 0) | (ids >= v)]
        if bad.size:
            raise IndexRangeError(f"id {int(bad[0])} out of range [0, {v})")
    out = Tensor(table.data[ids].copy() if ids.size else np.zeros((0, table.data.shape[1])))

    def bw(g):
        if table.requires_grad and ids.size:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, ids, g)

    return _record(out, (table,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ContractError("concat of zero tensors")
    ref = tensors[0].data.shape
    for t in tensors[1:]:
        a, b = list(ref), list(t.data.shape)
        if len(a) != len(b):
            raise DimensionError(f"concat rank mismatch: {ref} vs {t.data.shape}")
        a[axis] = b[axis] = 0
        if a != b:
            raise DimensionError(f"concat non-axis dims differ: {ref} vs {t.data.shape}")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    widths = [t.data.shape[axis] for t in tensors]

    def bw(g):
        start = 0
        for t, w in zip(tensors, widths):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + w)
            _acc(t, g[tuple(sl)])
            start += w

    return _record(out, tuple(tensors), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization to mean 0 / variance 1 followed by an affine map."""
    if x.data.ndim != 2:
        raise DimensionError(f"layer_norm expects a matrix, got shape {x.data.shape}")
    d = x.data.shape[1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise DimensionError(f"gain/bias must have shape ({d},)")
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (x.data - mu) * inv
    out = Tensor(y * gain.data + bias.data)

    def bw(g):
        _acc(gain, (g * y).sum(axis=0))
        _acc(bias, g.sum(axis=0))
        gy = g * gain.data
        # standard layer-norm backward, all reductions per row
        _acc(
            x,
            inv * (gy - gy.mean(axis=1, keepdims=True) - y * (gy * y).mean(axis=1, keepdims=True)),
        )

    return _record(out, (x, gain, bias), bw)


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = rng.random(x.data.shape) >= rate
    factor = 1.0 / (1.0 - rate)
    out = Tensor(x.data * keep * factor)

    def bw(g):
        _acc(x, g * keep * factor)

    return _record(out, (x,), bw)


# ---------------------------------------------------------------------------
# reductions and losses


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum()))

    def bw(g):
        _acc(x, np.full_like(x.data, float(g)))

    return _record(out, (x,), bw)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    out = Tensor(np.asarray(x.data.mean()))

    def bw(g):
        _acc(x, np.full_like(x.data, float(g) / n))

    return _record(out, (x,), bw)


def cross_entropy_rows(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of `targets` under row-wise softmax(logits).

    Numerically stable (log-sum-exp); gradient is (softmax - onehot) / T.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2:
        raise DimensionError(f"cross_entropy_rows expects a matrix, got {logits.data.shape}")
    t, v = logits.data.shape
    if targets.shape != (t,):
        raise DimensionError(f"targets length {targets.shape} != rows {t}")
    if targets.size and ((targets < 0) | (targets >= v)).any():
        raise IndexRangeError("target id out of vocabulary range")
    m = logits.data.max(axis=1, keepdims=True)
    e = np.exp(logits.data - m)
    z = e.sum(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(z[:, 0])
    nll = lse - logits.data[np.arange(t), targets]
    out = Tensor(np.asarray(nll.mean()))

    def bw(g):
        p = e / z
        p[np.arange(t), targets] -= 1.0
        _acc(logits, p * (float(g) / t))

    return _record(out, (logits,), bw)


def bce_with_probs(p: Tensor, y, clamp: float = 1e-12) -> Tensor:
    """Mean binary cross entropy; probabilities clamped away from 0/1."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != p.data.shape:
        raise DimensionError(f"label shape {y.shape} != probability shape {p.data.shape}")
    pc = np.clip(p.data, clamp, 1.0 - clamp)
    n = pc.size
    loss = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)).mean()
    out = Tensor(np.asarray(loss))

    def bw(g):
        _acc(p, (-(y / pc) + (1.0 - y) / (1.0 - pc)) * (float(g) / n))

    return _record(out, (p,), bw)


def check_finite(x: Tensor, what: str = "tensor") -> Tensor:
    from .errors import NumericError

    if not np.isfinite(x.data).all():
        raise NumericError(f"non-finite values in {what}")
    return x
