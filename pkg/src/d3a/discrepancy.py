"""Gaussian-kernel MMD: kernels, median-heuristic bandwidths, the squared-MMD
estimator and its gradient with respect to both sample sets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .numkit import Rng


@dataclass(frozen=True)
class KernelSpec:
    """Bandwidths are sigma^2 values; the kernel is their arithmetic mean."""

    bandwidths: tuple[float, ...]
    unbiased: bool = False

    def __post_init__(self):
        bw = tuple(float(b) for b in self.bandwidths)
        if not bw:
            raise InvalidInputError("at least one bandwidth is required")
        if not all(np.isfinite(b) and b > 0 for b in bw):
            raise InvalidInputError(f"bandwidths must be positive and finite, got {bw}")
        object.__setattr__(self, "bandwidths", bw)

    @classmethod
    def multiscale(cls, median_sigma2: float, count: int = 5, unbiased: bool = False
                   ) -> "KernelSpec":
        """``count`` bandwidths ``median * 2**i`` centred on the median (i = -2..2 for 5)."""
        if count < 1:
            raise InvalidInputError("bandwidth count must be >= 1")
        lo = -(count // 2)
        return cls(tuple(median_sigma2 * 2.0 ** (lo + i) for i in range(count)), unbiased)


@dataclass
class MmdResult:
    value: float
    grad_x: np.ndarray
    grad_y: np.ndarray


def gaussian_kernel(x, y, sigma2: float) -> float:
    if sigma2 <= 0:
        raise InvalidInputError("sigma^2 must be positive")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise InvalidInputError("kernel arguments must have equal dimension")
    return float(np.exp(-np.sum((x - y) ** 2) / (2.0 * sigma2)))


def sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, clipped at zero."""
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d, 0.0)


def median_bandwidth(X, Y, rng: Rng | None = None, max_rows: int = 1000) -> float:
    """Median pairwise squared distance over the pooled rows (distinct pairs only).

    Pools larger than ``max_rows`` are subsampled with ``rng`` (seed 0 if none
    is given). A zero median falls back to 1.0.
    """
    Z = np.vstack([np.asarray(X, dtype=np.float64), np.asarray(Y, dtype=np.float64)])
    if Z.shape[0] < 2:
        raise InvalidInputError("median bandwidth needs at least two rows")
    if Z.shape[0] > max_rows:
        rng = rng if rng is not None else Rng(0)
        Z = Z[rng.subsample(Z.shape[0], max_rows)]
    d = sq_dists(Z, Z)
    iu = np.triu_indices(Z.shape[0], k=1)
    med = float(np.median(d[iu]))
    return med if med > 0 else 1.0


def _pair_term(A, B, sigma2):
    """Kernel matrix and the gradient factor for sum_ij K_ij w.r.t. rows of A."""
    K = np.exp(-sq_dists(A, B) / (2.0 * sigma2))
    # d/dA_a sum_j K_aj = -(1/sigma2) * (rowsum_a * A_a - (K @ B)_a)
    gA = -(K.sum(1)[:, None] * A - K @ B) / sigma2
    return K, gA


def mmd2(X, Y, spec: KernelSpec) -> MmdResult:
    """Squared MMD between the row sets ``X`` and ``Y``.

    Default is the V-statistic (all pairs, diagonal included); with
    ``spec.unbiased`` the within-set sums exclude the diagonal (U-statistic).
    The value is averaged over the kernel's bandwidths.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] == 0 or Y.shape[0] == 0:
        raise InvalidInputError("mmd2 needs two nonempty 2-D sample sets")
    if X.shape[1] != Y.shape[1]:
        raise InvalidInputError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    n, m = X.shape[0], Y.shape[0]
    if spec.unbiased:
        if n < 2 or m < 2:
            raise InvalidInputError("the unbiased estimator needs at least two rows per set")
        cxx, cyy = 1.0 / (n * (n - 1)), 1.0 / (m * (m - 1))
    else:
        cxx, cyy = 1.0 / (n * n), 1.0 / (m * m)
    cxy = 1.0 / (n * m)

    value = 0.0
    gx = np.zeros_like(X)
    gy = np.zeros_like(Y)
    for s2 in spec.bandwidths:
        Kxx, gxx = _pair_term(X, X, s2)
        Kyy, gyy = _pair_term(Y, Y, s2)
        Kxy, gxy = _pair_term(X, Y, s2)
        Kyx_grad = -(Kxy.sum(0)[:, None] * Y - Kxy.T @ X) / s2
        sxx, syy = Kxx.sum(), Kyy.sum()
        if spec.unbiased:
            sxx -= np.trace(Kxx)
            syy -= np.trace(Kyy)
        value += cxx * sxx + cyy * syy - 2.0 * cxy * Kxy.sum()
        # within-set sums are symmetric, hence the factor 2; diagonal terms have zero gradient
        gx += 2.0 * cxx * gxx - 2.0 * cxy * gxy
        gy += 2.0 * cyy * gyy - 2.0 * cxy * Kyx_grad
    nb = len(spec.bandwidths)
    return MmdResult(value / nb, gx / nb, gy / nb)


def domain_loss(z_source, z_target, spec: KernelSpec) -> MmdResult:
    """Discrepancy between projected source and target features."""
    return mmd2(z_source, z_target, spec)
