"""Brownian paths on the torus, PCAFs, and the Liouville time change.

Two layers live here. The trace layer (:func:`simulate_sbm`,
:func:`accumulate_pcaf`, :func:`invert_time_change`) keeps whole
trajectories and is meant for single paths and inspection. The ensemble
layer (:func:`run_paths`) pushes many paths through a compiled kernel and
keeps only stopping statistics; every estimator in the package uses it.

Standard Brownian motion has per-coordinate variance t, so E|X_t - X_0|^2 = 2t.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numba
import numpy as np

from .covariance import Band, check_gamma
from .field import FieldSample, GridSpec
from .rng import RngSeed, as_seed
from .stats import wilson_interval
from .torus import PERIOD, TorusPoint, torus_distance_array, wrap, wrap_delta

CHUNK = 4096  # paths per RNG stream; fixed so results never depend on scheduling
BLOCK = 128  # steps per block of pre-drawn normals


class CensoredPath(RuntimeError):
    pass


class PathTooShort(ValueError):
    pass


# ---------------------------------------------------------------- trace layer


@dataclass(frozen=True)
class StoppingEvent:
    kind: str  # exit_box | hit_set | exit_enlarged | exit_ball
    index: int
    position: TorusPoint


@dataclass(frozen=True)
class StoppingRule:
    """First-passage predicate evaluated on path samples.

    ``exit_box``/``exit_enlarged``: leave the open square of half-width
    ``size`` centered at ``center``; ``exit_ball``: leave the open ball of
    radius ``size``; ``hit_set``: enter the closed ball of radius ``size``.
    """

    kind: str
    center: TorusPoint
    size: float

    def triggered(self, xy: np.ndarray) -> np.ndarray:
        d = wrap_delta(xy - np.array([self.center.x, self.center.y]))
        if self.kind in ("exit_box", "exit_enlarged"):
            return np.max(np.abs(d), axis=-1) >= self.size
        if self.kind == "exit_ball":
            return np.hypot(d[..., 0], d[..., 1]) >= self.size
        if self.kind == "hit_set":
            return np.hypot(d[..., 0], d[..., 1]) <= self.size
        raise ValueError(f"unknown stopping kind {self.kind!r}")


@dataclass(frozen=True)
class BrownianPath:
    dt: float
    start: TorusPoint
    positions: np.ndarray  # (m+1, 2) wrapped coordinates
    displacement: np.ndarray  # (m+1, 2) unwrapped displacement from start
    seed: RngSeed
    censored: bool = False
    event: Optional[StoppingEvent] = None

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.positions)) * self.dt


def simulate_sbm(
    start: TorusPoint,
    dt: float,
    horizon: float,
    seed,
    stop: Optional[StoppingRule] = None,
) -> BrownianPath:
    """Euler path with i.i.d. N(0, dt) coordinate increments, wrapped to T.

    With a stopping rule the path is cut at the first sample where the rule
    holds. If the horizon passes first the path is returned with
    ``censored=True``.
    """
    if dt <= 0 or horizon <= 0:
        raise ValueError("dt and horizon must be positive")
    seed = as_seed(seed, "sbm")
    m = int(math.ceil(horizon / dt - 1e-9))
    steps = seed.generator().standard_normal((m, 2)) * math.sqrt(dt)
    disp = np.vstack([np.zeros((1, 2)), np.cumsum(steps, axis=0)])
    pos = wrap(disp + np.array([start.x, start.y]))
    event, censored = None, False
    if stop is not None:
        hits = np.flatnonzero(stop.triggered(pos))
        if hits.size:
            i = int(hits[0])
            pos, disp = pos[: i + 1], disp[: i + 1]
            event = StoppingEvent(stop.kind, i, TorusPoint(*pos[i]))
        else:
            censored = True
    return BrownianPath(dt, start, pos, disp, seed, censored, event)


@dataclass(frozen=True)
class PcafTrace:
    times: np.ndarray
    values: np.ndarray
    gamma: float
    band: Optional[Band]
    max_integrand: float
    path: BrownianPath = field(repr=False)


def integrand_array(field: Optional[FieldSample], band: Optional[Band], gamma: float) -> np.ndarray:
    """exp(gamma h - gamma^2 sigma^2 / 2) on the field grid (ones when gamma = 0)."""
    check_gamma(gamma)
    if gamma == 0 or field is None:
        n = field.grid.n if field is not None else 1
        return np.ones((n, n))
    b = field.resolve(band if band is not None else Band(0, None))
    return np.exp(gamma * field.band_sum(b) - 0.5 * gamma**2 * field.band_variance(b))


def accumulate_pcaf(path: BrownianPath, field: Optional[FieldSample], band: Optional[Band], gamma: float) -> PcafTrace:
    """Left-endpoint sums F_i = sum_{m<i} exp(gamma h(X_m) - gamma^2 sigma^2/2) dt."""
    if gamma == 0:
        vals = np.ones(len(path.positions) - 1)
    else:
        if field is None:
            raise ValueError("gamma > 0 needs a field")
        if band is not None:
            field.resolve(band)
        weights = integrand_array(field, band, gamma)
        ix, iy, inside = field.grid.cell_index(path.positions)
        if not inside.all():
            raise ValueError("path leaves the sampled window")
        jumps = np.maximum(np.abs(np.diff(ix)), np.abs(np.diff(iy)))
        jumps = np.minimum(jumps, field.grid.n - jumps) if field.grid.periodic else jumps
        if jumps.size and np.mean(jumps <= 1) < 0.99:
            raise ValueError("dt too large for the grid: fewer than 99% of steps stay within adjacent cells")
        vals = weights[ix[:-1], iy[:-1]]
    F = np.concatenate([[0.0], np.cumsum(vals) * path.dt])
    mx = float(vals.max()) if vals.size else 1.0
    return PcafTrace(path.times, F, gamma, band, mx, path)


def invert_time_change(trace: PcafTrace, t: float) -> tuple[float, TorusPoint]:
    """u = F^{-1}(t) by bisection on the monotone trace, and Y_t = X_u.

    Inside a step F is linear, so u is interpolated; Y_t is the path sample
    nearest to u.
    """
    F = trace.values
    if t < 0:
        raise ValueError("Liouville time must be non-negative")
    if t > F[-1]:
        raise PathTooShort(f"t={t:g} exceeds the accumulated F={F[-1]:g}; simulate a longer horizon")
    i = int(np.searchsorted(F, t, side="left"))
    if i == 0:
        u = 0.0
    else:
        f0, f1 = F[i - 1], F[i]
        u = trace.times[i - 1] + (t - f0) / (f1 - f0) * (trace.times[i] - trace.times[i - 1])
    nearest = int(round(u / trace.path.dt))
    nearest = min(nearest, len(trace.path.positions) - 1)
    return float(u), TorusPoint(*trace.path.positions[nearest])


# ---------------------------------------------------------------- ensemble layer

NO_REGION, BOX, BALL = 0, 1, 2


@dataclass(frozen=True)
class Region:
    """Square (half-width ``size``) or ball (radius ``size``) around ``offset``.

    ``offset`` is relative to the path's start point.
    """

    kind: int
    size: float
    offset: tuple[float, float] = (0.0, 0.0)

    @classmethod
    def box(cls, side: float, offset=(0.0, 0.0)) -> "Region":
        return cls(BOX, side / 2, tuple(offset))

    @classmethod
    def ball(cls, radius: float, offset=(0.0, 0.0)) -> "Region":
        return cls(BALL, radius, tuple(offset))


NO_EXIT = Region(NO_REGION, 0.0)


@dataclass(frozen=True)
class Target:
    """Closed ball (radius, center offset) intersected with a half-open box."""

    radius: float
    offset: tuple[float, float]
    box_anchor: tuple[float, float]  # relative to start
    box_side: float


@dataclass
class EnsembleResult:
    exit_time: np.ndarray  # nan when the exit region was never left
    exit_F: np.ndarray
    hit_time: np.ndarray  # nan when the target was never hit
    end_time: np.ndarray
    end_F: np.ndarray
    end_disp: np.ndarray  # (P, 2) unwrapped displacement at the end
    reached_target_F: np.ndarray
    out_of_window: np.ndarray
    dt: float

    @property
    def exited(self) -> np.ndarray:
        return ~np.isnan(self.exit_time)

    def __len__(self):
        return len(self.end_time)


@numba.njit(cache=True)
def _lookup(weight, x, y, ox, oy, h, n, periodic):
    rx = (x - ox) % 4.0
    ry = (y - oy) % 4.0
    ix = int(math.floor(rx / h))
    iy = int(math.floor(ry / h))
    if periodic:
        ix %= n
        iy %= n
    elif ix < 0 or ix >= n or iy < 0 or iy >= n:
        return -1.0
    return weight[ix, iy]


@numba.njit(cache=True)
def _outside(kind, a, cx, cy, x, y):
    if kind == 1:
        return abs(x - cx) >= a or abs(y - cy) >= a
    if kind == 2:
        return (x - cx) ** 2 + (y - cy) ** 2 >= a * a
    return False


@numba.njit(cache=True)
def _segment_exit_fraction(kind, a, cx, cy, x0, y0, x1, y1):
    if kind == 1:
        f = 1.0
        for u0, u1, c in ((x0, x1, cx), (y0, y1, cy)):
            v0 = u0 - c
            v1 = u1 - c
            if v1 >= a and v1 != v0:
                f = min(f, (a - v0) / (v1 - v0))
            elif v1 <= -a and v1 != v0:
                f = min(f, (-a - v0) / (v1 - v0))
        return max(0.0, min(1.0, f))
    dx = x1 - x0
    dy = y1 - y0
    px = x0 - cx
    py = y0 - cy
    A = dx * dx + dy * dy
    B = 2 * (px * dx + py * dy)
    C = px * px + py * py - a * a
    if A == 0.0:
        return 1.0
    disc = max(B * B - 4 * A * C, 0.0)
    return max(0.0, min(1.0, (-B + math.sqrt(disc)) / (2 * A)))


@numba.njit(cache=True)
def _bridge_cross_prob(kind, a, cx, cy, x0, y0, x1, y1, dt):
    # probability a Brownian bridge between two inside samples leaves the region
    if kind == 1:
        keep = 1.0
        for u0, u1, c in ((x0, x1, cx), (y0, y1, cy)):
            v0 = u0 - c
            v1 = u1 - c
            keep *= 1.0 - math.exp(-2.0 * (a - v0) * (a - v1) / dt)
            keep *= 1.0 - math.exp(-2.0 * (a + v0) * (a + v1) / dt)
        return 1.0 - keep
    if kind == 2:
        d0 = a - math.sqrt((x0 - cx) ** 2 + (y0 - cy) ** 2)
        d1 = a - math.sqrt((x1 - cx) ** 2 + (y1 - cy) ** 2)
        return math.exp(-2.0 * d0 * d1 / dt)
    return 0.0


@numba.njit(cache=True)
def _walk_block(
    sx, sy, normals, unif, dt, weight, ox, oy, h, n, periodic,
    ekind, ea, ecx, ecy, stop_on_exit, bridge,
    hr, hcx, hcy, hbx, hby, hbs,
    max_steps, f_target,
    dx, dy, F, step, done, exit_t, exit_F, hit_t, reached, oow,
):
    P = dx.shape[0]
    B = normals.shape[1]
    sq = math.sqrt(dt)
    for p in range(P):
        if done[p]:
            continue
        for b in range(B):
            x0 = dx[p]
            y0 = dy[p]
            w = _lookup(weight, sx[p] + x0, sy[p] + y0, ox, oy, h, n, periodic)
            if w < 0:
                oow[p] = True
                done[p] = True
                break
            x1 = x0 + sq * normals[p, b, 0]
            y1 = y0 + sq * normals[p, b, 1]
            frac = 1.0
            stop_now = False
            # Liouville-clock target
            if F[p] + w * dt >= f_target:
                frac = (f_target - F[p]) / (w * dt)
                reached[p] = True
                stop_now = True
            # exit region
            if ekind != 0 and math.isnan(exit_t[p]):
                crossed = False
                fe = 1.0
                if _outside(ekind, ea, ecx, ecy, x1, y1):
                    crossed = True
                    fe = _segment_exit_fraction(ekind, ea, ecx, ecy, x0, y0, x1, y1)
                elif bridge and unif[p, b] < _bridge_cross_prob(ekind, ea, ecx, ecy, x0, y0, x1, y1, dt):
                    crossed = True
                    fe = 0.5
                if crossed and (not stop_now or fe < frac):
                    exit_t[p] = (step[p] + fe) * dt
                    exit_F[p] = F[p] + w * fe * dt
                    if stop_on_exit:
                        frac = fe
                        reached[p] = False
                        stop_now = True
            # target hit (closest point of the segment to the target center)
            if hr > 0 and math.isnan(hit_t[p]):
                ux = x1 - x0
                uy = y1 - y0
                L2 = ux * ux + uy * uy
                s = 0.0
                if L2 > 0:
                    s = ((hcx - x0) * ux + (hcy - y0) * uy) / L2
                    s = max(0.0, min(1.0, s))
                if not stop_now or s <= frac:
                    qx = x0 + s * ux
                    qy = y0 + s * uy
                    if (qx - hcx) ** 2 + (qy - hcy) ** 2 <= hr * hr:
                        if hbx <= qx < hbx + hbs and hby <= qy < hby + hbs:
                            hit_t[p] = (step[p] + s) * dt
            if stop_now:
                F[p] += w * frac * dt
                dx[p] = x0 + frac * (x1 - x0)
                dy[p] = y0 + frac * (y1 - y0)
                step[p] += frac
                done[p] = True
                break
            F[p] += w * dt
            dx[p] = x1
            dy[p] = y1
            step[p] += 1.0
            if step[p] >= max_steps:
                done[p] = True
                break


def run_paths(
    starts,
    dt: float,
    horizon: float,
    seed,
    weight: Optional[np.ndarray] = None,
    grid: Optional[GridSpec] = None,
    exit_region: Region = NO_EXIT,
    stop_on_exit: bool = True,
    target: Optional[Target] = None,
    f_target: float = math.inf,
    bridge: bool = True,
) -> EnsembleResult:
    """Simulate Brownian paths from ``starts`` with PCAF integrand ``weight``.

    Each path runs until the first of: leaving ``exit_region`` (when
    ``stop_on_exit``), the accumulated F reaching ``f_target``, the time
    ``horizon``, or leaving a windowed grid (``out_of_window``).

    Exits between samples are resolved by the segment/boundary intersection,
    and with ``bridge`` also by the Brownian-bridge crossing probability, which
    removes the late-exit bias of endpoint tests.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    P = starts.shape[0]
    if weight is None:
        weight = np.ones((1, 1))
        grid = GridSpec(8)
        ox = oy = 0.0
        h, n, periodic = PERIOD, 1, True
    else:
        if grid is None or weight.shape != (grid.n, grid.n):
            raise ValueError("weight array must match the grid")
        ox, oy = grid.origin
        h, n, periodic = grid.spacing, grid.n, grid.periodic
    max_steps = int(math.ceil(horizon / dt - 1e-9))
    weight = np.ascontiguousarray(weight, dtype=np.float64)
    seed = as_seed(seed, "paths")
    t = target
    hr, hcx, hcy, hbx, hby, hbs = (-1.0, 0.0, 0.0, 0.0, 0.0, 0.0) if t is None else (
        t.radius, t.offset[0], t.offset[1], t.box_anchor[0], t.box_anchor[1], t.box_side)

    res = EnsembleResult(
        exit_time=np.full(P, np.nan), exit_F=np.full(P, np.nan), hit_time=np.full(P, np.nan),
        end_time=np.zeros(P), end_F=np.zeros(P), end_disp=np.zeros((P, 2)),
        reached_target_F=np.zeros(P, bool), out_of_window=np.zeros(P, bool), dt=dt,
    )
    for c0 in range(0, P, CHUNK):
        sl = slice(c0, min(P, c0 + CHUNK))
        m = sl.stop - sl.start
        rng = seed.substream(c0 // CHUNK)
        sx = starts[sl, 0].copy()
        sy = starts[sl, 1].copy()
        dx = np.zeros(m)
        dy = np.zeros(m)
        F = np.zeros(m)
        step = np.zeros(m)
        done = np.zeros(m, bool)
        exit_t = np.full(m, np.nan)
        exit_F = np.full(m, np.nan)
        hit_t = np.full(m, np.nan)
        reached = np.zeros(m, bool)
        oow = np.zeros(m, bool)
        taken = 0
        while not done.all() and taken < max_steps:
            B = min(BLOCK, max_steps - taken)
            normals = rng.standard_normal((m, B, 2))
            unif = rng.random((m, B))
            _walk_block(
                sx, sy, normals, unif, dt, weight, ox, oy, h, n, periodic,
                exit_region.kind, exit_region.size, exit_region.offset[0], exit_region.offset[1],
                stop_on_exit, bridge, hr, hcx, hcy, hbx, hby, hbs,
                max_steps, f_target, dx, dy, F, step, done, exit_t, exit_F, hit_t, reached, oow,
            )
            taken += B
        res.exit_time[sl] = exit_t
        res.exit_F[sl] = exit_F
        res.hit_time[sl] = hit_t
        res.end_time[sl] = step * dt
        res.end_F[sl] = F
        res.end_disp[sl, 0] = dx
        res.end_disp[sl, 1] = dy
        res.reached_target_F[sl] = reached
        res.out_of_window[sl] = oow
    return res


# ---------------------------------------------------------------- exit-time laws


def square_survival(t, half_width: float, terms: int = 200):
    """P(sigma > t) for SBM started at the center of a square of half-width a."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    k = np.arange(terms)[:, None]
    one_d = (4 / np.pi) * np.sum(
        (-1.0) ** k / (2 * k + 1) * np.exp(-((2 * k + 1) ** 2) * np.pi**2 * t[None, :] / (8 * half_width**2)),
        axis=0,
    )
    one_d = np.where(t <= 0, 1.0, np.clip(one_d, 0.0, 1.0))
    return one_d**2


def disk_survival(t, radius: float, terms: int = 200):
    """P(tau > t) for SBM started at the center of a disk."""
    from scipy.special import j1, jn_zeros

    t = np.atleast_1d(np.asarray(t, dtype=float))
    z = jn_zeros(0, terms)[:, None]
    s = np.sum(2.0 / (z * j1(z)) * np.exp(-(z**2) * t[None, :] / (2 * radius**2)), axis=0)
    return np.where(t <= 0, 1.0, np.clip(s, 0.0, 1.0))


def exit_constant(half_width_ratio: float = 3.0) -> float:
    """E^0(1 ∧ sigma) for the square [-a, a]^2 with a = half_width_ratio."""
    from scipy.integrate import quad

    val, _ = quad(lambda u: float(square_survival(u, half_width_ratio)[0]), 0.0, 1.0, limit=200)
    return val


def default_dt(*lengths: float, factor: float = 1e-4) -> float:
    """Time step min(length)^2 * factor."""
    return min(lengths) ** 2 * factor


def stopped_mean(
    s: float, paths: int, seed, dt_factor: float = 1e-4, box_ratio: float = 6.0
) -> tuple[float, float]:
    """Monte Carlo E^z(s^2 ∧ sigma_{z, box_ratio * s}) / s^2 with its standard error."""
    res = run_paths(
        np.zeros((paths, 2)), dt=default_dt(s, factor=dt_factor), horizon=s * s, seed=seed,
        exit_region=Region.box(box_ratio * s),
    )
    x = res.end_time / (s * s)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(paths))


# ---------------------------------------------------------------- heat kernel proxy


@dataclass(frozen=True)
class HeatKernelEstimate:
    estimate: Optional[float]
    ci_lo: float
    ci_hi: float
    hit_fraction: float
    mean_ball_mass: float
    fields: int
    paths_per_field: int


def heat_kernel_proxy(
    x: TorusPoint,
    y: TorusPoint,
    t: float,
    eps: float,
    fields: Sequence[FieldSample],
    gamma: float,
    paths_per_field: int,
    seed,
    band: Optional[Band] = None,
    dt: Optional[float] = None,
    horizon: Optional[float] = None,
) -> HeatKernelEstimate:
    """Smoothed density P^x(Y_t in B(y, eps)) / mu(B(y, eps)).

    A ratio of means over field replicas with a delta-method 95% interval. It
    is the heat kernel averaged over the ball, exact only as eps -> 0.
    """
    from .gmc import build_measure

    seed = as_seed(seed, "heat-kernel")
    grid = fields[0].grid
    if eps <= 8 * grid.spacing:
        raise ValueError("eps must exceed 8 grid cells")
    dt = dt or default_dt(eps, math.sqrt(t), factor=1e-3)
    horizon = horizon or 50 * t
    hits, masses = [], []
    for i, f in enumerate(fields):
        b = band if band is not None else Band(0, f.w)
        w = integrand_array(f, b, gamma)
        res = run_paths(np.tile([x.x, x.y], (paths_per_field, 1)), dt, horizon, seed.with_replica(i),
                        weight=w, grid=f.grid, f_target=t)
        if not res.reached_target_F.all():
            raise CensoredPath("some paths did not reach Liouville time t within the horizon")
        end = wrap(np.array([x.x, x.y]) + res.end_disp)
        d = torus_distance_array(end, np.array([y.x, y.y]))
        hits.append(float(np.mean(d < eps)))
        masses.append(build_measure(f, b, gamma).ball_mass(y, eps))
    hits = np.asarray(hits)
    masses = np.asarray(masses)
    n = len(fields)
    mh, mm = hits.mean(), masses.mean()
    total_paths = n * paths_per_field
    if hits.sum() == 0:
        upper = 3.0 / total_paths / mm  # one-sided 95% (rule of three)
        return HeatKernelEstimate(None, 0.0, upper, 0.0, mm, n, paths_per_field)
    R = mh / mm
    if n == 1:
        lo, hi = wilson_interval(int(round(mh * paths_per_field)), paths_per_field)
        return HeatKernelEstimate(R, lo / mm, hi / mm, mh, mm, n, paths_per_field)
    # delta method for a ratio of means; the per-field hit fractions already carry the binomial noise
    cov = np.cov(hits, masses, ddof=1)
    var_R = (cov[0, 0] - 2 * R * cov[0, 1] + R * R * cov[1, 1]) / (n * mm * mm)
    se = math.sqrt(max(var_R, 0.0))
    return HeatKernelEstimate(R, R - 1.96 * se, R + 1.96 * se, mh, mm, n, paths_per_field)


def wrapped_gaussian_density(x: TorusPoint, y: TorusPoint, t: float, images: int = 1) -> float:
    """2D BM transition density on the torus, summed over (2 images + 1)^2 copies."""
    d = wrap_delta(np.array([y.x - x.x, y.y - x.y]))
    total = 0.0
    for a in range(-images, images + 1):
        for b in range(-images, images + 1):
            r2 = (d[0] + PERIOD * a) ** 2 + (d[1] + PERIOD * b) ** 2
            total += math.exp(-r2 / (2 * t)) / (2 * math.pi * t)
    return total
