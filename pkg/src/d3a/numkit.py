"""Dense numeric kernel: matrices, softmax, RNG, SGD with momentum, LR schedule,
and central finite-difference gradients.

Matrices are plain ``numpy.ndarray`` objects in float64. The RNG is a
counter-based SplitMix64 generator evaluated in vectorised uint64 arithmetic,
so a given seed yields the same raw stream on every platform and numpy
version.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidInputError, OracleFailureError

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def as_matrix(data, name: str = "matrix") -> np.ndarray:
    """Convert external input to a finite 2-D float64 array."""
    arr = np.array(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains NaN or Inf")
    return arr


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class Rng:
    """SplitMix64 stream.

    Output ``i`` (1-based) of a generator whose state is ``s`` is
    ``mix(s + i * 0x9E3779B97F4A7C15)``; drawing ``n`` values advances the
    state by ``n`` increments. Floats use the top 53 bits.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._state = self.seed

    def next_u64(self, n: int) -> np.ndarray:
        if n < 0:
            raise InvalidInputError("cannot draw a negative number of values")
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            out = _mix(np.uint64(self._state) + steps * _GOLDEN)
        self._state = (self._state + n * int(_GOLDEN)) & _MASK64
        return out

    def random(self, size) -> np.ndarray:
        """Uniform floats in [0, 1)."""
        shape = (size,) if isinstance(size, (int, np.integer)) else tuple(size)
        n = int(np.prod(shape, dtype=np.int64))
        bits = self.next_u64(n) >> np.uint64(11)
        return (bits.astype(np.float64) * 2.0**-53).reshape(shape)

    def uniform(self, low: float, high: float, size) -> np.ndarray:
        return low + (high - low) * self.random(size)

    def normal(self, size) -> np.ndarray:
        """Standard normal draws via Box-Muller (two uniforms per value)."""
        shape = (size,) if isinstance(size, (int, np.integer)) else tuple(size)
        n = int(np.prod(shape, dtype=np.int64))
        u = self.random(2 * n)
        u1 = 1.0 - u[:n]  # (0, 1]
        u2 = u[n:]
        return (np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        keys = self.next_u64(n)
        return np.argsort(keys, kind="stable").astype(np.int64)

    def subsample(self, n: int, k: int) -> np.ndarray:
        """Sorted indices of a uniformly random size-``k`` subset of ``range(n)``."""
        if k >= n:
            return np.arange(n)
        return np.sort(self.permutation(n)[:k])

    def spawn(self, tag: int) -> "Rng":
        """Independent child stream; the parent state is not advanced."""
        with np.errstate(over="ignore"):
            s = _mix(np.array([self.seed ^ (int(tag) * 0xD1B54A32D192ED03 & _MASK64)],
                              dtype=np.uint64))
        return Rng(int(s[0]))


def softmax(v) -> np.ndarray:
    """Row-wise softmax with max-subtraction. Accepts a vector or a batch."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.size == 0:
        raise InvalidInputError("softmax of an empty vector")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("softmax input contains NaN or Inf")
    shifted = arr - arr.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    # floor at the smallest normal float so probabilities stay strictly positive
    return np.maximum(e / e.sum(axis=-1, keepdims=True), np.finfo(np.float64).tiny)


def log_softmax(v: np.ndarray) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    shifted = arr - arr.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


@dataclass
class SgdState:
    velocity: list[np.ndarray] = field(default_factory=list)
    momentum: float = 0.9
    lr_init: float = 0.01
    gamma: float = 0.8
    epoch_drop: int = 10

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidInputError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.epoch_drop <= 0:
            raise InvalidInputError("epoch_drop must be positive")

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **kwargs) -> "SgdState":
        return cls(velocity=[np.zeros_like(p) for p in params], **kwargs)


def lr_at_epoch(state: SgdState, epoch: int) -> float:
    """``lr_init * gamma ** ((1 + epoch) / epoch_drop)`` with real-valued exponent."""
    if epoch < 0:
        raise InvalidInputError("epoch must be non-negative")
    return state.lr_init * state.gamma ** ((1.0 + epoch) / state.epoch_drop)


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: SgdState,
             lr: float | Sequence[float]) -> list[np.ndarray]:
    """Classical momentum: ``v <- mu*v + g``; ``p <- p - lr*v``.

    ``lr`` may be one scalar or one value per parameter array (used for the
    head learning-rate multiplier). Velocities are updated in place on
    ``state``; new parameter arrays are returned.
    """
    if len(params) != len(grads) or len(params) != len(state.velocity):
        raise InvalidInputError("params, grads and velocity lengths differ")
    lrs = [lr] * len(params) if np.isscalar(lr) else list(lr)
    if len(lrs) != len(params):
        raise InvalidInputError("one learning rate per parameter array required")
    out = []
    for i, (p, g, v) in enumerate(zip(params, grads, state.velocity)):
        if p.shape != g.shape or p.shape != v.shape:
            raise InvalidInputError(
                f"shape mismatch at parameter {i}: {p.shape}, {g.shape}, {v.shape}")
        v = state.momentum * v + g
        state.velocity[i] = v
        out.append(p - lrs[i] * v)
    return out


def finite_diff_grad(loss_fn: Callable[[np.ndarray], float], params, eps: float = 1e-5
                     ) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    if eps <= 0:
        raise InvalidInputError("eps must be positive")
    p = np.array(params, dtype=np.float64).ravel()
    grad = np.empty_like(p)
    for i in range(p.size):
        orig = p[i]
        p[i] = orig + eps
        f_plus = loss_fn(p.copy())
        p[i] = orig - eps
        f_minus = loss_fn(p.copy())
        p[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise OracleFailureError(f"non-finite loss while differencing coordinate {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
