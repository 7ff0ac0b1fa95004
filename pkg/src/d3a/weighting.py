"""Dynamic per-source weights from overall and per-batch domain distances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

TIE_TOL = 1e-12


@dataclass
class DomainWeights:
    D: np.ndarray        # overall distances, frozen after pretraining
    d: np.ndarray        # current-batch distances
    alpha: np.ndarray
    epsilon: np.ndarray  # signed
    omega: np.ndarray


def alphas(D) -> np.ndarray:
    """``min(D) / D_i``: the closest source gets 1, farther ones proportionally less."""
    D = np.asarray(D, dtype=np.float64).ravel()
    if D.size < 1:
        raise InvalidInputError("need at least one source distance")
    if not np.all(np.isfinite(D)) or np.any(D <= 0):
        raise InvalidInputError(f"overall distances must be positive and finite, got {D}")
    return D.min() / D


def epsilon_magnitudes(d) -> np.ndarray:
    """Softmax of the negated batch distances."""
    d = np.asarray(d, dtype=np.float64).ravel()
    if np.any(d < 0):
        raise InvalidInputError(f"batch distances must be non-negative, got {d}")
    e = np.exp(-(d - d.min()))
    return e / e.sum()


def _shares(v: np.ndarray) -> np.ndarray:
    total = v.sum()
    if total <= 0:
        return np.full_like(v, 1.0 / v.size)
    return v / total


def epsilon_signs(D, d) -> np.ndarray:
    """+1 where the source's share of overall distance exceeds its share of
    batch distance, -1 where it is smaller, 0 on a tie (within 1e-12)."""
    D = np.asarray(D, dtype=np.float64).ravel()
    d = np.asarray(d, dtype=np.float64).ravel()
    diff = _shares(D) - _shares(d)
    sign = np.sign(diff)
    sign[np.abs(diff) <= TIE_TOL] = 0.0
    return sign


def omega(D, d, omega_min: float = 0.05, use_alpha: bool = True,
          use_epsilon: bool = True) -> DomainWeights:
    """Combined weight ``max(alpha + signed epsilon, omega_min)``.

    Disabling ``use_alpha`` replaces alpha by 1; disabling ``use_epsilon``
    drops the batch correction. With both off every source gets weight 1.
    """
    D = np.asarray(D, dtype=np.float64).ravel()
    d = np.asarray(d, dtype=np.float64).ravel()
    if D.shape != d.shape:
        raise InvalidInputError("overall and batch distance vectors differ in length")
    a = alphas(D)
    eps = epsilon_signs(D, d) * epsilon_magnitudes(d)
    base = a if use_alpha else np.ones_like(a)
    corr = eps if use_epsilon else np.zeros_like(eps)
    w = np.maximum(base + corr, omega_min)
    if not (use_alpha or use_epsilon):
        w = np.ones_like(a)
    return DomainWeights(D=D, d=d, alpha=a, epsilon=eps, omega=w)
