"""Dense float64 arrays with a reverse-mode gradient tape.

The tape is a flat list of primitive records appended in execution order,
which is already a topological order of the computation. ``backward`` walks
that list once in reverse.

Usage::

    w = Tensor(np.ones((3, 2)), requires_grad=True)
    with GradTape() as tape:
        loss = reduce("sum", matmul(x, w))
    grads = tape.backward(loss)
    grads[w]  # Tensor of shape (3, 2)
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Optional, Sequence

import numpy as np

from equibench.errors import ContractError, DimensionError, DomainError

_local = threading.local()
_tape_ids = itertools.count(1)


class Tensor:
    """A dense row-major array, optionally participating in a gradient tape."""

    __slots__ = ("data", "requires_grad", "tape_id", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        arr = np.array(data, dtype=dtype or np.float64, copy=True)
        if arr.dtype not in (np.float64, np.float32):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.tape_id: Optional[tuple[int, int]] = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.tape_id = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor._wrap(np.asarray(x, dtype=np.float64))


class GradTape:
    """Ordered record of primitive operations for one forward pass."""

    def __init__(self):
        self.id = next(_tape_ids)
        self._records: list[tuple[int, tuple[Optional[int], ...], Callable]] = []
        self._leaves: dict[int, Tensor] = {}
        self._n_slots = 0

    def __enter__(self):
        stack = _stack()
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def __len__(self):
        return len(self._records)

    def _slot(self, t: Tensor) -> Optional[int]:
        if t.tape_id is not None and t.tape_id[0] == self.id:
            return t.tape_id[1]
        if t.requires_grad:
            slot = self._new_slot()
            t.tape_id = (self.id, slot)
            self._leaves[slot] = t
            return slot
        return None

    def _new_slot(self) -> int:
        slot = self._n_slots
        self._n_slots += 1
        return slot

    def record(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
        slots = tuple(self._slot(t) for t in inputs)
        if all(s is None for s in slots):
            return out
        out_slot = self._new_slot()
        out.tape_id = (self.id, out_slot)
        self._records.append((out_slot, slots, backward))
        return out

    def backward(self, loss: Tensor) -> dict[Tensor, Tensor]:
        """Gradients of a scalar ``loss`` w.r.t. every leaf seen by this tape."""
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.tape_id is None or loss.tape_id[0] != self.id:
            raise ContractError("loss is not attached to this tape")
        grads: dict[int, np.ndarray] = {loss.tape_id[1]: np.ones_like(loss.data)}
        for out_slot, in_slots, fn in reversed(self._records):
            g = grads.pop(out_slot, None)
            if g is None:
                continue
            for slot, gi in zip(in_slots, fn(g)):
                if slot is None or gi is None:
                    continue
                if slot in grads:
                    grads[slot] = grads[slot] + gi
                else:
                    grads[slot] = gi
        out = {}
        for slot, leaf in self._leaves.items():
            g = grads.get(slot)
            out[leaf] = Tensor._wrap(np.zeros_like(leaf.data) if g is None else g)
        return out


def _stack() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> Optional[GradTape]:
    stack = _stack()
    return stack[-1] if stack else None


def _emit(arr: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor._wrap(arr)
    tape = active_tape()
    if tape is not None:
        tape.record(out, inputs, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor) -> None:
    sa, sb = a.shape, b.shape
    for x, y in zip(reversed(sa), reversed(sb)):
        if x != y and x != 1 and y != 1:
            raise DimensionError(f"incompatible shapes {sa} and {sb}")


# -- primitives ---------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    return _emit(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    sa, sb = a.shape, b.shape
    return _emit(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    sa, sb = a.shape, b.shape
    return _emit(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    ad, bd = a.data, b.data
    return _emit(
        ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape))
    )


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    # np.maximum propagates NaN, so a poisoned input still surfaces as a non-finite loss
    return _emit(np.maximum(a.data, 0.0), (a,), lambda g: (g * mask,))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # branch form avoids exp overflow for large |z|
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return _emit(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _emit(t, (a,), lambda g: (g * (1.0 - t * t),))


def signed_log(a: Tensor) -> Tensor:
    """sign(z) * log(1 + |z|): compresses wide-range inputs, odd and monotone."""
    d = a.data
    return _emit(np.sign(d) * np.log1p(np.abs(d)), (a,), lambda g: (g / (1.0 + np.abs(d)),))


_UNARY = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, a: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Dispatch one of add, sub, mul, relu, sigmoid, tanh."""
    if op in _UNARY:
        if b is not None:
            raise ContractError(f"{op} is unary")
        return _UNARY[op](a)
    if op in _BINARY:
        if b is None:
            raise ContractError(f"{op} needs two operands")
        return _BINARY[op](a, b)
    raise ContractError(f"unknown elementwise op {op!r}")


def reduce(op: str, a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    """sum / mean / max over ``axis`` (all axes when None)."""
    if axis is not None and not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {a.shape}")
    shape = a.shape
    if op == "sum":
        out = a.data.sum(axis=axis, keepdims=keepdims)

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return _emit(out, (a,), back)
    if op == "mean":
        n = a.data.size if axis is None else shape[axis]
        out = a.data.mean(axis=axis, keepdims=keepdims)

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g / n, shape).copy(),)

        return _emit(out, (a,), back)
    if op == "max":
        out = a.data.max(axis=axis, keepdims=True)
        # gradient goes to the first maximal entry only
        if axis is None:
            mask = np.zeros(a.data.size, dtype=bool)
            mask[np.argmax(a.data)] = True
            mask = mask.reshape(shape)
        else:
            idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
            mask = np.zeros(shape, dtype=bool)
            np.put_along_axis(mask, idx, True, axis=axis)
        result = out if keepdims else (out.reshape(()) if axis is None else np.squeeze(out, axis))

        def back(g):
            g = np.asarray(g).reshape(out.shape)
            return (mask * g,)

        return _emit(result, (a,), back)
    raise ContractError(f"unknown reduction {op!r}")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as err:
        raise DimensionError(f"cannot reshape {old} to {shape}") from err
    return _emit(out, (a,), lambda g: (g.reshape(old),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [t for t in tensors]
    if not tensors:
        raise DimensionError("concat of nothing")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            x != y for k, (x, y) in enumerate(zip(t.shape, ref)) if k != axis % len(ref)
        ):
            raise DimensionError(f"concat shape mismatch: {ref} vs {t.shape}")
    if len(tensors) == 1:
        return tensors[0]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _emit(out, tensors, lambda g: tuple(np.split(g, cuts, axis=axis)))


def gather(a: Tensor, index: np.ndarray) -> Tensor:
    """Rows ``a[index]``; the backward pass scatter-adds."""
    index = np.asarray(index, dtype=np.int64)
    n = a.shape[0]

    def back(g):
        out = np.zeros((n,) + g.shape[1:], dtype=g.dtype)
        np.add.at(out, index, g)
        return (out,)

    return _emit(a.data[index], (a,), back)


def segment_sum(a: Tensor, segments: np.ndarray, n_segments: int) -> Tensor:
    """Sum rows of ``a`` into ``n_segments`` buckets, in row order."""
    segments = np.asarray(segments, dtype=np.int64)
    if segments.shape[0] != a.shape[0]:
        raise DimensionError(f"segment ids {segments.shape} do not match rows {a.shape}")
    out = np.zeros((n_segments,) + a.shape[1:], dtype=a.data.dtype)
    np.add.at(out, segments, a.data)
    return _emit(out, (a,), lambda g: (g[segments],))


def segment_mean(a: Tensor, segments: np.ndarray, n_segments: int) -> Tensor:
    segments = np.asarray(segments, dtype=np.int64)
    counts = np.bincount(segments, minlength=n_segments).astype(a.data.dtype)
    scale = 1.0 / np.maximum(counts, 1.0)
    summed = segment_sum(a, segments, n_segments)
    shape = (n_segments,) + (1,) * (a.ndim - 1)
    return mul(summed, Tensor._wrap(scale.reshape(shape)))


def segment_max(a: Tensor, segments: np.ndarray, n_segments: int) -> Tensor:
    """Per-segment max; empty segments yield 0."""
    segments = np.asarray(segments, dtype=np.int64)
    if segments.shape[0] != a.shape[0]:
        raise DimensionError(f"segment ids {segments.shape} do not match rows {a.shape}")
    out = np.full((n_segments,) + a.shape[1:], -np.inf, dtype=a.data.dtype)
    np.maximum.at(out, segments, a.data)
    out[np.isinf(out)] = 0.0
    # gradient goes to the first row attaining each (segment, column) max
    rows = np.arange(a.shape[0]).reshape((-1,) + (1,) * (a.ndim - 1))
    big = a.shape[0]
    cand = np.where(a.data == out[segments], rows, big)
    first = np.full(out.shape, big, dtype=np.int64)
    np.minimum.at(first, segments, cand)
    winner = rows == first[segments]
    return _emit(out, (a,), lambda g: (g[segments] * winner,))


def bce_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross-entropy of raw logits, overflow-free."""
    y = np.asarray(labels, dtype=logits.data.dtype).reshape(logits.shape)
    z = logits.data
    n = z.size
    if n == 0:
        raise DomainError("bce on empty input")
    loss = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    value = np.asarray(loss.mean())
    return _emit(value, (logits,), lambda g: (g * (_sigmoid(z) - y) / n,))


FD_STEP = 2.0**-20  # ~9.5e-7; a power of two keeps x +- eps exact for moderate |x|


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = FD_STEP) -> float:
    """Max relative gap between tape gradients and central differences of ``f`` at ``x``."""
    probe = Tensor(x.data, requires_grad=True)
    with GradTape() as tape:
        y = f(probe)
    analytic = tape.backward(y)[probe].data
    base = np.array(x.data, dtype=np.float64)
    numeric = np.empty_like(base)
    flat = base.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        hi, lo = old + eps, old - eps
        flat[k] = hi
        up = f(Tensor(base)).item()
        flat[k] = lo
        down = f(Tensor(base)).item()
        flat[k] = old
        # divide by the step actually taken after rounding, not the nominal 2*eps
        numeric.reshape(-1)[k] = (up - down) / (hi - lo)
    rel = np.abs(analytic - numeric) / (np.abs(analytic) + 1e-12)
    return float(rel.max()) if rel.size else 0.0
