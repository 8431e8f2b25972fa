"""Liouville measure on grid cells and its moment scaling."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .covariance import Band, KernelParams, check_gamma
from .field import FieldSample, GridSpec, sample_field
from .rng import as_seed
from .stats import ols_line
from .torus import Box, TorusPoint, torus_distance_array

MIN_RADII = 4
MIN_SPAN_DECADES = 0.8


class UnderdeterminedFit(ValueError):
    pass


@dataclass(frozen=True)
class LiouvilleMeasure:
    grid: GridSpec
    masses: np.ndarray
    gamma: float
    band_variance: float
    band: Band
    field_seed: object = None

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    def ball_mass(self, center: TorusPoint, eps: float) -> float:
        return float(self.masses[ball_cells(self.grid, center, eps)].sum())

    def box_mass(self, box: Box) -> float:
        centers = self.grid.cell_centers()
        return float(self.masses[box.contains(centers)].sum())


def build_measure(field: FieldSample, band: Band, gamma: float) -> LiouvilleMeasure:
    """Cell masses spacing^2 * exp(gamma h - gamma^2 sigma^2 / 2) of the band field."""
    check_gamma(gamma)
    b = field.resolve(band)
    var = field.band_variance(b)
    h = field.band_sum(b)
    masses = field.grid.spacing**2 * np.exp(gamma * h - 0.5 * gamma**2 * var)
    masses.flags.writeable = False
    return LiouvilleMeasure(field.grid, masses, gamma, var, b, field.seed)


def ball_cells(grid: GridSpec, center: TorusPoint, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Index arrays of cells whose centers lie in the open ball B(center, eps)."""
    h = grid.spacing
    m = int(math.ceil(eps / h)) + 1
    ix0, iy0, _ = grid.cell_index(np.array([center.x, center.y]))
    off = np.arange(-m, m + 1)
    IX, IY = np.meshgrid(ix0 + off, iy0 + off, indexing="ij")
    if grid.periodic:
        IX %= grid.n
        IY %= grid.n
    else:
        ok = (IX >= 0) & (IX < grid.n) & (IY >= 0) & (IY < grid.n)
        IX, IY = IX[ok], IY[ok]
    cx = grid.origin[0] + (IX + 0.5) * h
    cy = grid.origin[1] + (IY + 0.5) * h
    d = torus_distance_array(np.stack([cx, cy], axis=-1), np.array([center.x, center.y]))
    keep = d < eps
    return IX[keep], IY[keep]


def xi(q: float, gamma: float) -> float:
    """Moment exponent (2 + gamma^2/2) q - (gamma^2/2) q^2."""
    check_gamma(gamma)
    if gamma > 0 and not 0 <= q <= 4 / gamma**2:
        raise ValueError(f"q must lie in [0, 4/gamma^2] = [0, {4 / gamma**2:g}]")
    if q < 0:
        raise ValueError("q must be non-negative")
    return (2 + gamma**2 / 2) * q - gamma**2 / 2 * q**2


@dataclass(frozen=True)
class MomentEstimate:
    q: float
    gamma: float
    epsilons: tuple[float, ...]
    moments: tuple[float, ...]
    moment_se: tuple[float, ...]
    slope: float
    stderr: float
    intercept: float
    xi_theory: float
    statistic: str = "mean"


def check_radii(radii: Sequence[float], grid: GridSpec) -> np.ndarray:
    eps = np.sort(np.asarray(radii, dtype=float))
    lo, hi = 8 * grid.spacing, 0.5
    if np.any(eps <= lo) or np.any(eps >= hi):
        raise ValueError(f"radii must lie in ({lo:g}, {hi:g})")
    if len(eps) < MIN_RADII or math.log10(eps[-1] / eps[0]) < MIN_SPAN_DECADES - 1e-12:
        raise UnderdeterminedFit(
            f"underdetermined fit: need >= {MIN_RADII} radii spanning >= {MIN_SPAN_DECADES} decade(s)"
        )
    return eps


def default_radii(grid: GridSpec, count: int = 6) -> np.ndarray:
    """Log-spaced radii just inside (8 spacing, 0.5)."""
    lo, hi = 8 * grid.spacing * 1.1, 0.45
    return np.geomspace(lo, hi, count)


def ball_mass_samples(
    grid: GridSpec,
    params: KernelParams,
    radii: Sequence[float],
    gammas: Sequence[float],
    replicas: int,
    seed,
    band: Optional[Band] = None,
    centers: Optional[Sequence[TorusPoint]] = None,
    threads: int = 1,
) -> np.ndarray:
    """Ball masses, shape (len(gammas), replicas, len(centers), len(radii)).

    One field per replica; all gammas and radii reuse that field, which is
    what makes the slopes across q and gamma comparable.
    """
    seed = as_seed(seed, "ball-mass")
    radii = np.asarray(radii, dtype=float)
    centers = centers or [TorusPoint(0.0, 0.0)]
    cells = [[ball_cells(grid, c, e) for e in radii] for c in centers]
    out = np.empty((len(gammas), replicas, len(centers), len(radii)))
    for i in range(replicas):
        f = sample_field(grid, params, seed.with_replica(i), threads=threads)
        b = band or Band(0, f.w)
        for g, gamma in enumerate(gammas):
            mu = build_measure(f, b, gamma).masses
            for c, row in enumerate(cells):
                out[g, i, c] = [mu[ix, iy].sum() for ix, iy in row]
    return out


def fit_moment_scaling(
    masses: np.ndarray,
    radii: Sequence[float],
    q: float,
    gamma: float,
    statistic: str = "mean",
    n_boot: int = 200,
    seed: int = 0,
) -> MomentEstimate:
    """Fit log E[mu(B_eps)^q] (or log median) against log eps.

    ``masses`` has shape (replicas, radii) or (replicas, centers, radii);
    centers are averaged inside each replica (spatial averaging). The slope
    standard error is a bootstrap over replicas, which keeps the correlation
    between radii that share a field.
    """
    eps = np.asarray(radii, dtype=float)
    m = np.asarray(masses, dtype=float)
    if m.ndim == 2:
        m = m[:, None, :]
    R = m.shape[0]

    def stat(sample: np.ndarray) -> np.ndarray:
        if statistic == "mean":
            return (sample**q).mean(axis=(0, 1))
        if statistic == "median":
            return np.median(sample.reshape(-1, sample.shape[-1]), axis=0)
        raise ValueError(f"unknown statistic {statistic!r}")

    mom = stat(m)
    fit = ols_line(np.log(eps), np.log(mom))
    rng = np.random.default_rng(seed)
    boots = np.empty(n_boot)
    mom_boot = np.empty((n_boot, len(eps)))
    for b in range(n_boot):
        mb = stat(m[rng.integers(0, R, R)])
        mom_boot[b] = mb
        boots[b] = ols_line(np.log(eps), np.log(mb)).slope
    target = xi(q, gamma) if statistic == "mean" else 2 + gamma**2 / 2
    return MomentEstimate(
        q=q,
        gamma=gamma,
        epsilons=tuple(eps),
        moments=tuple(mom),
        moment_se=tuple(mom_boot.std(axis=0, ddof=1)),
        slope=fit.slope,
        stderr=float(boots.std(ddof=1)),
        intercept=fit.intercept,
        xi_theory=target,
        statistic=statistic,
    )


def moment_scaling_fit(
    q: float,
    gamma: float,
    radii: Sequence[float],
    replicas: int,
    grid: GridSpec,
    params: KernelParams,
    seed,
    statistic: str = "mean",
    spatial_average: bool = False,
    threads: int = 1,
) -> MomentEstimate:
    """Estimate the moment exponent from ``replicas`` independent fields.

    With ``spatial_average`` the masses of 16 balls per field (centers on a
    unit lattice) are pooled. Those balls are correlated through the coarse
    scales, so the bootstrap over replicas, not the pooled count, sets the
    error bar.
    """
    if replicas < 200:
        raise ValueError("moment fits need at least 200 field replicas")
    eps = check_radii(radii, grid)
    xi(q, gamma)
    centers = None
    if spatial_average:
        centers = [TorusPoint(float(a), float(b)) for a in range(4) for b in range(4)]
    masses = ball_mass_samples(grid, params, eps, [gamma], replicas, seed, centers=centers, threads=threads)[0]
    return fit_moment_scaling(masses, eps, q, gamma, statistic)
