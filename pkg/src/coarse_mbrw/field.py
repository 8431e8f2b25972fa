"""Sampling the per-scale fields h_j and their band sums.

Each scale is a normalized disk average of white noise,

    h_j(x) = sqrt(k log 2 / |D_j|) * sum_{cells c in D_j(x)} Z_c,

where D_j(x) is the set of grid cells whose centers lie within 2^{-kj} of
x. Normalizing by the actual cell count gives variance exactly k log 2 at
every resolution, and the covariance at lag d is k log 2 times the discrete
lens fraction, which converges to g_j(d).

Grids are either the whole torus (periodic, side 4) or a square window of the
torus. On a window, scales no coarser than the window side are convolved on a
padded grid (so no wrap-around can reach the window), and coarser scales are
drawn exactly on a small lattice from the closed-form covariance and read off
by nearest lattice point; such scales are smooth at the window scale.
"""
from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.fft as sfft

from .covariance import LOG2, Band, KernelParams, band_covariance, covariance_matrix
from .io import atomic_write_bytes
from .rng import RngSeed, as_seed
from .torus import PERIOD, TorusPoint, wrap

MIN_CELLS_PER_RADIUS = 4
EXACT_POINTS_MAX = 200
LATTICE_SIDE = 14  # 196 lattice points, inside the exact-sampler cap
JITTER = 1e-10


class ScaleResolutionError(ValueError):
    """Requested scale is finer than the grid can represent."""


class IllConditionedCovariance(np.linalg.LinAlgError):
    def __init__(self, eigenvalue: float):
        super().__init__(f"covariance matrix is not PSD: smallest eigenvalue {eigenvalue:.3e}")
        self.eigenvalue = eigenvalue


@dataclass(frozen=True)
class GridSpec:
    """An n x n cell grid on the torus or on a square window of it."""

    n: int
    side: float = PERIOD
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.n < 8 or self.n & (self.n - 1):
            raise ValueError(f"grid size must be a power of two >= 8, got {self.n}")
        if not 0 < self.side <= PERIOD:
            raise ValueError("grid side must lie in (0, 4]")
        object.__setattr__(self, "origin", (wrap(self.origin[0]), wrap(self.origin[1])))

    @classmethod
    def window(cls, center: TorusPoint, side: float, n: int) -> "GridSpec":
        return cls(n, side, (center.x - side / 2, center.y - side / 2))

    @property
    def periodic(self) -> bool:
        return self.side == PERIOD

    @property
    def spacing(self) -> float:
        return self.side / self.n

    @property
    def center(self) -> TorusPoint:
        return TorusPoint(self.origin[0] + self.side / 2, self.origin[1] + self.side / 2)

    def cell_centers(self) -> np.ndarray:
        """(n, n, 2) torus coordinates; index [ix, iy]."""
        t = (np.arange(self.n) + 0.5) * self.spacing
        gx, gy = np.meshgrid(self.origin[0] + t, self.origin[1] + t, indexing="ij")
        return wrap(np.stack([gx, gy], axis=-1))

    def cell_index(self, xy) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Nearest-cell indices of (..., 2) points and an in-grid mask."""
        xy = np.asarray(xy, dtype=float)
        rel = np.mod(xy - np.asarray(self.origin), PERIOD)
        idx = np.floor(rel / self.spacing).astype(np.int64)
        if self.periodic:
            idx %= self.n
            inside = np.ones(idx.shape[:-1], dtype=bool)
        else:
            inside = np.all((idx >= 0) & (idx < self.n), axis=-1)
        return idx[..., 0], idx[..., 1], inside

    def snap(self, xy) -> np.ndarray:
        """Move points to the center of their cell."""
        ix, iy, _ = self.cell_index(xy)
        h = self.spacing
        return wrap(np.stack([self.origin[0] + (ix + 0.5) * h, self.origin[1] + (iy + 0.5) * h], axis=-1))

    def finest_scale(self, k: int) -> int:
        """Largest j with 2^{-kj} >= 4 * spacing."""
        return int(math.floor(math.log2(1.0 / (MIN_CELLS_PER_RADIUS * self.spacing)) / k + 1e-12))


def default_truncation(n: int, k: int) -> int:
    """Finest resolvable scale on the torus grid: floor(log2(n/16)/k)."""
    return int(math.floor(math.log2(n / 16) / k + 1e-12))


def disk_offsets(radius_cells: float) -> np.ndarray:
    """Integer offsets (a, b) with a^2 + b^2 <= radius_cells^2."""
    m = int(math.floor(radius_cells))
    a = np.arange(-m, m + 1)
    A, B = np.meshgrid(a, a, indexing="ij")
    keep = A * A + B * B <= radius_cells * radius_cells * (1 + 1e-12)
    return np.stack([A[keep], B[keep]], axis=-1)


@lru_cache(maxsize=64)
def _disk_kernel_fft(N: int, radius_cells: float) -> tuple[np.ndarray, int]:
    off = disk_offsets(radius_cells)
    ker = np.zeros((N, N))
    ker[off[:, 0] % N, off[:, 1] % N] = 1.0
    return sfft.rfft2(ker), len(off)


def _check_resolvable(R: float, grid: GridSpec, j: int):
    if R < MIN_CELLS_PER_RADIUS * grid.spacing * (1 - 1e-12):
        raise ScaleResolutionError(
            f"scale j={j} (radius {R:g}) is finer than grid spacing {grid.spacing:g} allows; "
            f"refine the grid or truncate the band"
        )


def _convolve_disk(noise: np.ndarray, radius_cells: float) -> tuple[np.ndarray, int]:
    N = noise.shape[0]
    kfft, count = _disk_kernel_fft(N, radius_cells)
    return sfft.irfft2(sfft.rfft2(noise) * kfft, s=(N, N)), count


def _lattice_points(grid: GridSpec, m: int) -> np.ndarray:
    t = (np.arange(m) + 0.5) * grid.side / m
    gx, gy = np.meshgrid(grid.origin[0] + t, grid.origin[1] + t, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=-1)


def psd_factor(cov: np.ndarray) -> np.ndarray:
    """Lower factor L with L L^T = cov (+ tiny jitter)."""
    m = cov.shape[0]
    jitter = JITTER * float(np.trace(cov)) / m
    try:
        return np.linalg.cholesky(cov + jitter * np.eye(m))
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(cov)
        if vals.min() < -JITTER * float(np.trace(cov)):
            raise IllConditionedCovariance(float(vals.min())) from None
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


@lru_cache(maxsize=256)
def _lattice_factor(k: int, band: Band, side: float, m: int) -> np.ndarray:
    # the law is translation invariant, so the factor depends only on geometry
    t = (np.arange(m) + 0.5) * side / m
    gx, gy = np.meshgrid(t, t, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=-1)
    return psd_factor(covariance_matrix(pts, k, band))


def sample_scale_field(j: int, grid: GridSpec, params: KernelParams, seed: RngSeed) -> np.ndarray:
    """One realization of h_j on ``grid``."""
    R = 2.0 ** (-params.k * j)
    _check_resolvable(R, grid, j)
    rng = seed.with_scale(j).generator()
    rc = R / grid.spacing
    if grid.periodic:
        noise = rng.standard_normal((grid.n, grid.n))
        out, count = _convolve_disk(noise, rc)
    elif R <= grid.side:
        pad = int(math.ceil(rc)) + 1
        N = sfft.next_fast_len(grid.n + 2 * pad, real=True)
        noise = rng.standard_normal((N, N))
        full, count = _convolve_disk(noise, rc)
        out = full[pad : pad + grid.n, pad : pad + grid.n]
    else:
        m = min(LATTICE_SIDE, grid.n)
        L = _lattice_factor(params.k, Band(j, j), float(grid.side), m)
        vals = (L @ rng.standard_normal(m * m)).reshape(m, m)
        idx = np.floor((np.arange(grid.n) + 0.5) * m / grid.n).astype(int)
        return np.ascontiguousarray(vals[np.ix_(idx, idx)])
    return np.ascontiguousarray(out * math.sqrt(params.k * LOG2 / count))


class FieldSample:
    """Per-scale layers of one field realization on one grid.

    Layers are read-only; band sums are cached. ``layers[j]`` is an (n, n)
    array indexed [ix, iy].
    """

    def __init__(self, params: KernelParams, grid: GridSpec, layers: dict[int, np.ndarray], seed: RngSeed):
        self.params = params
        self.grid = grid
        self.seed = seed
        self.layers = {}
        for j in sorted(layers):
            arr = np.asarray(layers[j], dtype=np.float64)
            arr.flags.writeable = False
            self.layers[j] = arr
        self._bands: dict[tuple[int, int], np.ndarray] = {}

    @property
    def scales(self) -> list[int]:
        return list(self.layers)

    @property
    def lo(self) -> int:
        return min(self.layers)

    @property
    def w(self) -> int:
        return max(self.layers)

    def resolve(self, band: Band) -> Band:
        """Clip an open-ended band to the sampled scales and check coverage."""
        hi = self.w if band.hi is None else band.hi
        b = Band(band.lo, hi)
        missing = [j for j in b.scales() if j not in self.layers]
        if missing:
            raise ValueError(f"band [{b.lo}, {b.hi}] needs unsampled scales {missing}")
        return b

    def band_sum(self, band: Band) -> np.ndarray:
        b = self.resolve(band)
        key = (b.lo, b.hi)
        if key not in self._bands:
            total = np.zeros((self.grid.n, self.grid.n))
            for j in b.scales():
                total += self.layers[j]
            total.flags.writeable = False
            self._bands[key] = total
        return self._bands[key]

    def band_variance(self, band: Band) -> float:
        return self.resolve(band).variance(self.params.k)

    def coarse(self, r: int) -> np.ndarray:
        """phi_r restricted to the sampled scales."""
        return self.band_sum(Band(0, r - 1))

    def fine(self, r: int, w: Optional[int] = None) -> np.ndarray:
        """psi_{r,w}; ``w`` defaults to the finest sampled scale."""
        return self.band_sum(Band(r, w))

    def values_at(self, xy, band: Band) -> np.ndarray:
        """Nearest-cell lookup of the band field at (..., 2) points."""
        ix, iy, inside = self.grid.cell_index(xy)
        if not np.all(inside):
            raise ValueError("points outside the sampled window")
        return self.band_sum(band)[ix, iy]

    def missing_variance(self, target_hi: int) -> float:
        """Variance k log 2 * (#scales in (w, target_hi]) dropped by truncation."""
        return self.params.k * LOG2 * max(0, target_hi - self.w)


def sample_field(
    grid: GridSpec,
    params: KernelParams,
    seed,
    w: Optional[int] = None,
    lo: int = 0,
    threads: int = 1,
) -> FieldSample:
    """Sample scales lo..w on ``grid``; scales run concurrently when threads > 1."""
    seed = as_seed(seed)
    if w is None:
        w = default_truncation(grid.n, params.k) if grid.periodic else grid.finest_scale(params.k)
    if w < lo:
        raise ScaleResolutionError(f"no resolvable scale in [{lo}, {w}] on this grid")
    scales = list(range(lo, w + 1))
    job = lambda j: sample_scale_field(j, grid, params, seed)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            arrays = list(pool.map(job, scales))
    else:
        arrays = [job(j) for j in scales]
    return FieldSample(params, grid, dict(zip(scales, arrays)), seed)


def sample_exact_points(points, band: Band, params: KernelParams, seed, n_draws: Optional[int] = None) -> np.ndarray:
    """Exact centered Gaussian vector(s) with the closed-form band covariance.

    Returns shape (m,) or (n_draws, m).
    """
    pts = np.array([[p.x, p.y] for p in points]) if isinstance(points[0], TorusPoint) else np.asarray(points, float)
    if len(pts) > EXACT_POINTS_MAX:
        raise ValueError(f"at most {EXACT_POINTS_MAX} points, got {len(pts)}")
    L = psd_factor(covariance_matrix(pts, params.k, band))
    rng = as_seed(seed).generator()
    z = rng.standard_normal((1 if n_draws is None else n_draws, len(pts)))
    out = z @ L.T
    return out[0] if n_draws is None else out


# ---------------------------------------------------------------- coarse maxima


@dataclass(frozen=True)
class CoarseMaxStats:
    r: int
    ell: float
    mean_max: float
    mean_max_se: float
    fluct_freq: float
    fluct_freq_se: float
    threshold: float
    replicas: int


def _box_lattice(center: np.ndarray, side: float, m: int) -> np.ndarray:
    t = (np.arange(m) + 0.5) / m - 0.5
    gx, gy = np.meshgrid(center[0] + side * t, center[1] + side * t, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=-1)


def coarse_field_max_stats(
    r: int,
    ell: float,
    params: KernelParams,
    replicas: int,
    seed,
    delta: float = 0.5,
    lattice: int = 14,
) -> CoarseMaxStats:
    """Monte Carlo max and fluctuation statistics of phi_r.

    ``mean_max`` estimates E max_{z in B} phi_r(z) for a box of side ``ell``
    by the max over an m x m lattice (exact joint law at the lattice points).

    ``fluct_freq`` is the frequency of max_i sup_{x in B_i*} |phi_r(x) -
    phi_r(c_{B_i})| >= delta k r log 2 over four level-r boxes whose centers
    are pairwise at distance 2. Those boxes are exactly independent (the
    covariance has range 2), so the frequency estimates the four-box maximum,
    a lower bound for the all-box maximum.
    """
    seed = as_seed(seed, "coarse-max")
    band = Band(0, r - 1)
    s = 2.0 ** (-params.k * r)
    m = lattice
    pts = _box_lattice(np.array([2.0, 2.0]), ell, m)
    maxima = sample_exact_points(pts, band, params, seed.with_tag("max"), n_draws=replicas).max(axis=1)

    star = _box_lattice(np.zeros(2), 5 * s, m)
    star = np.vstack([np.zeros((1, 2)), star])  # row 0 is the box center
    threshold = delta * params.k * r * LOG2
    fl = np.zeros(replicas)
    for b, c in enumerate([(0.5, 0.5), (2.5, 0.5), (0.5, 2.5), (2.5, 2.5)]):
        pts_b = star + np.asarray(c)
        draws = sample_exact_points(pts_b, band, params, seed.with_tag(f"fluct{b}"), n_draws=replicas)
        fl = np.maximum(fl, np.abs(draws[:, 1:] - draws[:, :1]).max(axis=1))
    exceed = fl >= threshold
    p = float(exceed.mean())
    return CoarseMaxStats(
        r=r,
        ell=ell,
        mean_max=float(maxima.mean()),
        mean_max_se=float(maxima.std(ddof=1) / math.sqrt(replicas)),
        fluct_freq=p,
        fluct_freq_se=math.sqrt(max(p * (1 - p), 1.0 / replicas) / replicas),
        threshold=threshold,
        replicas=replicas,
    )


# ---------------------------------------------------------------- file format

MAGIC = b"MBRW"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQQQQ")


def field_file_bytes(sample: FieldSample) -> bytes:
    if not sample.grid.periodic or sample.lo != 0:
        raise ValueError("field files store full-torus samples with scales 0..w")
    if sample.seed.master >= 2**64:
        raise ValueError("seed does not fit in 64 bits")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, sample.params.k, sample.grid.n, sample.w, sample.seed.master)
    body = b"".join(np.ascontiguousarray(sample.layers[j], dtype="<f8").tobytes() for j in range(sample.w + 1))
    return header + body


def write_field_file(path, sample: FieldSample) -> Path:
    return atomic_write_bytes(path, field_file_bytes(sample))


def read_field_file(path, gamma: float = 0.0) -> FieldSample:
    data = Path(path).read_bytes()
    magic, version, k, n, w, seed = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported field file version {version}")
    expected = _HEADER.size + (w + 1) * n * n * 8
    if len(data) != expected:
        raise ValueError(f"field file has {len(data)} bytes, expected {expected}")
    arr = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(w + 1, n, n)
    layers = {j: arr[j].astype(np.float64) for j in range(w + 1)}
    return FieldSample(KernelParams(int(k), gamma), GridSpec(int(n)), layers, RngSeed(int(seed)))
