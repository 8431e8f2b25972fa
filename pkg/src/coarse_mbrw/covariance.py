"""Closed-form covariances of the k-coarse MBRW field.

The field is a sum of independent scales h_j with covariance
``g_j(d) = k log 2 * A(d; 2^{-kj})`` where ``A`` is the normalized lens area.
Only scales with ``2^{-kj} >= d/2`` contribute, so every sum below is finite
for ``d > 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .torus import ball_overlap_fraction, torus_distance_array

LOG2 = math.log(2.0)
GAMMA_MAX = 0.5


@dataclass(frozen=True)
class KernelParams:
    k: int
    gamma: float = 0.0

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k}")
        check_gamma(self.gamma)

    @property
    def scale_variance(self) -> float:
        return self.k * LOG2


def check_gamma(gamma: float) -> float:
    if not 0 <= gamma < GAMMA_MAX:
        raise ValueError(
            f"gamma must satisfy the L2-phase range [0, 1/2) of the main theorem, got {gamma}"
        )
    return float(gamma)


@dataclass(frozen=True)
class Band:
    """Inclusive scale range [lo, hi]; ``hi=None`` means unbounded."""

    lo: int = 0
    hi: Optional[int] = None

    def __post_init__(self):
        if self.lo < 0:
            raise ValueError("band lower end must be >= 0")
        if self.hi is not None and self.hi < self.lo:
            raise ValueError(f"empty band [{self.lo}, {self.hi}]")

    @property
    def finite(self) -> bool:
        return self.hi is not None

    def __len__(self) -> int:
        if self.hi is None:
            raise ValueError("infinite band has no length")
        return self.hi - self.lo + 1

    def scales(self) -> range:
        if self.hi is None:
            raise ValueError("cannot enumerate an infinite band")
        return range(self.lo, self.hi + 1)

    def variance(self, k: int) -> float:
        """Pointwise variance k log 2 * (#scales); diverges for infinite bands."""
        if self.hi is None:
            raise ValueError("infinite band has divergent variance")
        return k * LOG2 * len(self)


FULL = Band(0, None)


def coarse_band(r: int) -> Band:
    """Scales 0..r-1 (the smooth field phi_r)."""
    if r < 1:
        raise ValueError("coarse band needs r >= 1")
    return Band(0, r - 1)


def fine_band(r: int, w: Optional[int] = None) -> Band:
    """Scales r..w (psi_{r,w}); ``w=None`` gives psi_r."""
    return Band(r, w)


def r_zero(d: float, k: int) -> Optional[int]:
    """Largest scale index whose ball of radius 2^{-kj} reaches distance d.

    Returns the unique r0 with 2^{-k(r0+1)} < d/2 <= 2^{-k r0}, or ``None``
    when d/2 > 1 (no scale overlaps).
    """
    if not d > 0:
        raise ValueError(f"distance must be positive, got {d}")
    half = d / 2
    if half > 1:
        return None
    r0 = int(math.floor(-math.log2(half) / k))
    # guard rounding at the breakpoints
    while r0 > 0 and not half <= 2.0 ** (-k * r0):
        r0 -= 1
    while not 2.0 ** (-k * (r0 + 1)) < half:
        r0 += 1
    return r0


def scale_covariance(j: int, d, k: int):
    """g_j(d) = k log 2 * A(d; 2^{-kj})."""
    if j < 0:
        raise ValueError("scale index must be >= 0")
    return k * LOG2 * ball_overlap_fraction(d, 2.0 ** (-k * j))


def _max_active_scale(d: np.ndarray, k: int) -> int:
    dpos = d[d > 0]
    if dpos.size == 0:
        return 0
    dmin = float(dpos.min())
    r0 = r_zero(dmin, k)
    return -1 if r0 is None else r0


def band_covariance(d, k: int, band: Band = FULL):
    """Sum of g_j(d) over the scales of ``band``.

    Vectorized over ``d``. Infinite bands are rejected at d = 0, where the
    total variance diverges.
    """
    d_arr = np.asarray(d, dtype=float)
    if np.any(d_arr < 0):
        raise ValueError("distance must be non-negative")
    if not band.finite and np.any(d_arr == 0):
        raise ValueError("G(x, x) diverges: infinite band evaluated at d = 0")
    if band.finite:
        top = band.hi
    else:
        top = _max_active_scale(d_arr, k)
    total = np.zeros_like(d_arr)
    for j in range(band.lo, top + 1):
        total = total + scale_covariance(j, d_arr, k)
    return float(total) if total.ndim == 0 else total


def total_covariance(d, k: int):
    """G(d) over all scales."""
    return band_covariance(d, k, FULL)


def lambda_remainder(d, k: int):
    """lambda(d) = G(d) + log d on (0, 2]."""
    d_arr = np.asarray(d, dtype=float)
    if np.any(d_arr <= 0) or np.any(d_arr > 2):
        raise ValueError("lambda is defined for d in (0, 2]")
    out = total_covariance(d_arr, k) + np.log(d_arr)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class CovarianceBreakdown:
    d: float
    k: int
    r0: Optional[int]
    terms: tuple[float, ...] = field(repr=False)
    G: float = 0.0
    lam: float = 0.0


def covariance_breakdown(d: float, k: int) -> CovarianceBreakdown:
    r0 = r_zero(d, k)
    terms = () if r0 is None else tuple(float(scale_covariance(j, d, k)) for j in range(r0 + 1))
    G = float(sum(terms))
    return CovarianceBreakdown(d=d, k=k, r0=r0, terms=terms, G=G, lam=G + math.log(d))


def covariance_matrix(points: np.ndarray, k: int, band: Band) -> np.ndarray:
    """Covariance matrix of the band field at (m, 2) torus coordinates."""
    if not band.finite:
        raise ValueError("covariance matrices need a finite band")
    pts = np.asarray(points, dtype=float)
    dist = torus_distance_array(pts[:, None, :], pts[None, :, :])
    return band_covariance(dist, k, band)


def min_relative_eigenvalue(cov: np.ndarray) -> float:
    """Smallest eigenvalue divided by the trace."""
    return float(np.linalg.eigvalsh(cov).min() / np.trace(cov))


def increment_variance(d, k: int, band: Band):
    """E(f(x) - f(y))^2 = 2 (C(0) - C(d)) for a finite band field."""
    return 2.0 * (band.variance(k) - band_covariance(d, k, band))


def smallest_k_for_increment_bound(
    r_values: Sequence[int], ds: np.ndarray, k_max: int = 32
) -> Optional[int]:
    """Smallest k at which 2(G1_r(0) - G1_r(d)) <= 2^{kr} d holds on all inputs."""
    for k in range(1, k_max + 1):
        if all(
            np.all(increment_variance(ds, k, coarse_band(r)) <= 2.0 ** (k * r) * ds)
            for r in r_values
        ):
            return k
    return None
