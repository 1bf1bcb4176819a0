"""Minimal dense linear algebra with explicit forward/backward passes.

Everything is 64-bit and desk-scale. Backward passes are hand-written
per operation (the navigation pipeline is a fixed composition, not a
general autodiff graph) and every one is gated by `grad_check`, a
central-difference oracle over a ParamStore.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError

CHECKPOINT_MAGIC = b"MGCK1"


def as_matrix(value) -> np.ndarray:
    """Coerce to a 2-D float64 C-order array."""
    arr = np.ascontiguousarray(value, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D array, got shape {arr.shape}")
    return arr


@dataclass
class Tensor2D:
    """Dense row-major float64 matrix. `data` owns the storage."""

    data: np.ndarray

    def __post_init__(self):
        self.data = as_matrix(self.data)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "Tensor2D":
        return cls(np.zeros((rows, cols)))

    def finite(self) -> bool:
        return bool(np.isfinite(self.data).all())


@dataclass
class Param:
    """A trainable tensor paired with its gradient accumulator."""

    value: Tensor2D
    grad: Tensor2D = field(init=False)

    def __post_init__(self):
        self.grad = Tensor2D.zeros(self.value.rows, self.value.cols)


class ParamStore:
    """Flat named collection of trainable tensors with gradients.

    Names are unique and iteration is always sorted by name, which is
    what makes checkpoints and gradient clipping deterministic.
    """

    def __init__(self):
        self._entries: dict[str, Param] = {}

    def add(self, name: str, value) -> np.ndarray:
        if name in self._entries:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Param(Tensor2D(value))
        self._entries[name] = p
        return p.value.data

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return sorted(self._entries)

    def value(self, name: str) -> np.ndarray:
        return self._entries[name].value.data

    def grad(self, name: str) -> np.ndarray:
        return self._entries[name].grad.data

    def vec(self, name: str) -> np.ndarray:
        """Value viewed as a 1-D vector (for biases stored as one row)."""
        return self._entries[name].value.data.reshape(-1)

    def grad_vec(self, name: str) -> np.ndarray:
        return self._entries[name].grad.data.reshape(-1)

    def items(self):
        for name in self.names():
            p = self._entries[name]
            yield name, p.value.data, p.grad.data

    def zero_grads(self) -> None:
        for p in self._entries.values():
            p.grad.data[:] = 0.0

    def grad_global_norm(self) -> float:
        total = 0.0
        for p in self._entries.values():
            total += float(np.sum(p.grad.data * p.grad.data))
        return float(np.sqrt(total))

    def scale_grads(self, factor: float) -> None:
        for p in self._entries.values():
            p.grad.data *= factor

    def copy_values(self) -> dict[str, np.ndarray]:
        return {n: p.value.data.copy() for n, p in self._entries.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for n, v in values.items():
            self._entries[n].value.data[:] = v


# ---------------------------------------------------------------------------
# Forward/backward primitives. Each forward returns what the matching
# backward needs; backwards accumulate parameter gradients in place and
# return the gradient w.r.t. their non-parameter inputs.
# ---------------------------------------------------------------------------


def linear(w: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """w @ x + b for a single vector x."""
    if w.shape[1] != x.shape[0]:
        raise DimensionError(f"linear: weight {w.shape} vs input {x.shape}")
    if b.shape[0] != w.shape[0]:
        raise DimensionError(f"linear: weight {w.shape} vs bias {b.shape}")
    return w @ x + b


def linear_backward(dy, x, w, dw, db):
    """Accumulate into dw/db, return dx for y = w @ x + b."""
    dw += np.outer(dy, x)
    db += dy
    return w.T @ dy


def softmax(v: np.ndarray) -> np.ndarray:
    """Stable softmax of a non-empty vector."""
    if v.size == 0:
        raise ValueError("softmax of an empty vector")
    shifted = v - np.max(v)
    e = np.exp(shifted)
    return e / e.sum()


def softmax_backward(dp: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Gradient through softmax given output p and upstream dp."""
    return p * (dp - float(dp @ p))


def leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must be in (0, 1), got {slope}")
    return np.where(x > 0.0, x, slope * x)


def leaky_relu_backward(dy: np.ndarray, x: np.ndarray, slope: float) -> np.ndarray:
    # Subgradient at exactly 0 is the negative-side slope.
    return dy * np.where(x > 0.0, 1.0, slope)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# Finite-difference gradient verification.
# ---------------------------------------------------------------------------


def grad_check(forward, params: ParamStore, eps: float = 1e-5) -> float:
    """Worst relative error between analytic and central-difference grads.

    `forward(params)` must return a finite scalar loss and, as a side
    effect, accumulate analytic gradients into `params` (grads are
    zeroed here first). Relative error per coordinate is
    |a - n| / max(1e-8, |a| + |n|). On return the params hold their
    analytic gradients again.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params.zero_grads()
    loss = float(forward(params))
    if not np.isfinite(loss):
        raise ValueError(f"non-finite loss {loss!r} during gradient check")
    analytic = {n: g.copy() for n, _, g in params.items()}

    worst = 0.0
    for name in params.names():
        value = params.value(name)
        flat = value.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(forward(params))
            flat[i] = orig - eps
            f_minus = float(forward(params))
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise ValueError(f"non-finite loss while perturbing {name}[{i}]")
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = a_flat[i]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            if err > worst:
                worst = err

    # Numeric probing polluted the accumulators; put the analytic
    # gradients back so callers can keep using them.
    for name, _, grad in params.items():
        grad[:] = analytic[name]
    return worst


# ---------------------------------------------------------------------------
# Checkpoint format: magic "MGCK1", u32 entry count, then per entry
# (sorted by name): u32 name length, UTF-8 name, u32 rows, u32 cols,
# row-major float64 little-endian payload.
# ---------------------------------------------------------------------------


def save_checkpoint(path, params: ParamStore) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(params)))
        for name, value, _ in params.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<II", value.shape[0], value.shape[1]))
            fh.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def load_checkpoint(path) -> ParamStore:
    params = ParamStore()
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file: bad magic {magic!r}")
        (count,) = struct.unpack("<I", fh.read(4))
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            rows, cols = struct.unpack("<II", fh.read(8))
            payload = fh.read(rows * cols * 8)
            if len(payload) != rows * cols * 8:
                raise ValueError(f"truncated checkpoint entry {name!r}")
            value = np.frombuffer(payload, dtype="<f8").reshape(rows, cols)
            params.add(name, value.astype(np.float64))
    return params
