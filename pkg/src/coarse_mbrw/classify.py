"""Fast, slow and very-fast points and boxes, fast crossings and slow blocking.

Every classification is a nested Monte Carlo estimate: an inner ensemble of
Brownian paths runs through one fixed fine-field realization. The inner
probability comes with a Wilson interval, and a decision is only made when
that interval clears the threshold; otherwise the result is ``undecided``.
"""
from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .covariance import LOG2, Band, KernelParams, check_gamma
from .field import FieldSample, GridSpec, sample_field
from .lbm import Region, Target, default_dt, integrand_array, run_paths
from .rng import as_seed
from .stats import wilson_interval
from .torus import Box, TorusPoint, box_from_index, box_index, boxes_per_side, wrap, wrap_delta

MODES = ("fast", "slow", "very_fast")
MIN_CONDITIONING = 50
DEFAULT_C3 = 0.36  # scripts/calibrate_c3.py: mean slow probability 0.083 over 400 fields


class InsufficientConditioning(RuntimeError):
    pass


@dataclass(frozen=True)
class FastSlowParams:
    """Thresholds for one scale s = 2^{-kr}.

    The delta and eps schedules are properties, so they always follow
    (delta, s). The ``*_override`` fields pin a single threshold for
    coupled comparisons and degenerate checks.
    """

    k: int
    r: int
    delta: float
    gamma: float = 0.0
    inner: int = 400
    confidence: float = 0.95
    C3: float = DEFAULT_C3
    c: float = 2.0
    beta_prime: float = 0.5
    dt_factor: float = 1e-4
    delta1_override: Optional[float] = None
    eps2_override: Optional[float] = None
    eps3_override: Optional[float] = None

    def __post_init__(self):
        if self.k < 1 or self.r < 1:
            raise ValueError("k and r must be positive integers")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        check_gamma(self.gamma)
        if self.inner < 1:
            raise ValueError("inner replicas must be positive")

    @property
    def s(self) -> float:
        return 2.0 ** (-self.k * self.r)

    @property
    def delta1(self) -> float:
        return self.delta1_override if self.delta1_override is not None else self.s ** (3 * self.delta)

    @property
    def delta2(self) -> float:
        return self.s ** (2 * self.delta)

    @property
    def delta3(self) -> float:
        return self.s**self.delta

    @property
    def eps1(self) -> float:
        return self.s**self.delta

    @property
    def eps2(self) -> float:
        if self.eps2_override is not None:
            return self.eps2_override
        return self.C3 * math.exp(-6 * self.k * self.gamma**2)

    @property
    def eps3(self) -> float:
        if self.eps3_override is not None:
            return self.eps3_override
        return self.C3**2 * math.exp(-12 * self.k * self.gamma**2)

    @property
    def kernel(self) -> KernelParams:
        return KernelParams(self.k, self.gamma)

    @property
    def dt(self) -> float:
        return default_dt(self.s, factor=self.dt_factor)

    @property
    def fine_band(self) -> Band:
        return Band(self.r, None)


@dataclass(frozen=True)
class ClassificationResult:
    target: object  # TorusPoint or box index
    mode: str
    p_hat: float
    ci_lo: float
    ci_hi: float
    threshold: float
    decision: Optional[bool]  # None means undecided
    n: int

    @property
    def label(self) -> str:
        return {True: "true", False: "false", None: "undecided"}[self.decision]


def decide(p_hat: float, lo: float, hi: float, threshold: float) -> Optional[bool]:
    """``p >= threshold`` when the interval clears it, None when it straddles or ties."""
    if p_hat == threshold:
        return None
    if lo >= threshold:
        return True
    if hi < threshold:
        return False
    return None


def _result(target, mode, successes, n, threshold, confidence) -> ClassificationResult:
    lo, hi = wilson_interval(successes, n, confidence)
    p = successes / n
    return ClassificationResult(target, mode, p, lo, hi, threshold, decide(p, lo, hi, threshold), n)


# ---------------------------------------------------------------- fields


def local_field(center: TorusPoint, side: float, params: FastSlowParams, seed, depth: int = 1, n: Optional[int] = None) -> FieldSample:
    """Scales 0..r+depth on a window around ``center``.

    The default resolution puts 4 cells across the finest radius. Scales
    wider than the window come from the exact lattice sampler.
    """
    w = params.r + depth
    if n is None:
        need = side / (2.0 ** (-params.k * w) / 4)
        n = max(8, 1 << int(math.ceil(math.log2(need) - 1e-9)))
    return sample_field(GridSpec.window(center, side, n), params.kernel, seed, w=w, lo=0)


def box_window(box: Box, params: FastSlowParams, seed, depth: int = 1, margin_boxes: float = 3.25) -> FieldSample:
    """Window of side (1 + 2 * margin) s around ``box``.

    The default margin covers the 6s exit box of every point in ``box`` and
    the enlarged box B*.
    """
    side = box.side * (1 + 2 * margin_boxes)
    return local_field(box.center, side, params, seed, depth)


def fine_weights(field: FieldSample, params: FastSlowParams) -> np.ndarray:
    return integrand_array(field, params.fine_band, params.gamma)


# ---------------------------------------------------------------- points


def classify_point(
    z: TorusPoint,
    mode: str,
    field: FieldSample,
    params: FastSlowParams,
    seed,
    sets: Optional[tuple[Box, TorusPoint]] = None,
    weights: Optional[np.ndarray] = None,
) -> ClassificationResult:
    """Estimate the inner probability for one point and compare to its threshold.

    fast: P(F_r(s^2 ∧ sigma_{z,6s}) <= s^2/delta1) >= 1 - delta2
    slow: P(F_r(sigma_{z,s}) >= eps1 s^2) >= eps2
    very_fast: P(F_r(s^2) <= s^{2-delta} | tau_A <= s^2 <= tau*) >= 1/2, with
    ``sets = (B, y)``, A = B ∩ B(y, s^{1+beta'}) and tau* the exit from 5B.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    seed = as_seed(seed, f"classify-{mode}")
    w = fine_weights(field, params) if weights is None else weights
    s, dt, P = params.s, params.dt, params.inner
    starts = np.tile([z.x, z.y], (P, 1))
    common = dict(weight=w, grid=field.grid)

    if mode == "fast":
        res = run_paths(starts, dt, s * s, seed, exit_region=Region.box(6 * s), **common)
        ok = res.end_F <= s * s / params.delta1
        return _result(z, mode, int(ok.sum()), P, 1 - params.delta2, params.confidence)

    if mode == "slow":
        target = params.eps1 * s * s
        res = run_paths(starts, dt, 50 * s * s, seed, exit_region=Region.box(s), f_target=target, **common)
        ok = res.reached_target_F & ~res.out_of_window
        return _result(z, mode, int(ok.sum()), P, params.eps2, params.confidence)

    if sets is None:
        raise ValueError("very_fast needs the box B and the point y")
    box, y = sets
    star = box.enlarged(5)
    zc = np.array([z.x, z.y])
    off_star = tuple(wrap_delta(np.array([star.center.x, star.center.y]) - zc))
    off_y = tuple(wrap_delta(np.array([y.x, y.y]) - zc))
    anchor = tuple(wrap_delta(np.array([box.anchor.x, box.anchor.y]) - zc))
    tgt = Target(s ** (1 + params.beta_prime), off_y, anchor, box.side)
    res = run_paths(starts, dt, s * s, seed, exit_region=Region.box(star.side, off_star), target=tgt, **common)
    cond = ~np.isnan(res.hit_time) & ~res.exited & ~res.out_of_window
    m = int(cond.sum())
    if m < MIN_CONDITIONING:
        raise InsufficientConditioning(
            f"insufficient conditioning events: {m} < {MIN_CONDITIONING} paths hit A before s^2 inside B*"
        )
    ok = res.end_F[cond] <= s ** (2 - params.delta)
    return _result(z, mode, int(ok.sum()), m, 0.5, params.confidence)


# ---------------------------------------------------------------- boxes


def stratified_points(box: Box, m: int, seed) -> np.ndarray:
    """One uniform point in each cell of an m x m split of ``box``."""
    if m < 8:
        raise ValueError("box classification needs m >= 8")
    rng = as_seed(seed, "strata").generator()
    i, j = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    u = rng.random((m, m, 2))
    h = box.side / m
    pts = np.stack([box.anchor.x + (i + u[..., 0]) * h, box.anchor.y + (j + u[..., 1]) * h], axis=-1)
    return wrap(pts.reshape(-1, 2))


def classify_box(
    box: Box,
    mode: str,
    field: FieldSample,
    params: FastSlowParams,
    m: int,
    seed,
    weights: Optional[np.ndarray] = None,
) -> ClassificationResult:
    """Box is fast (slow) when the fast (slow) fraction of its area reaches delta3 (eps3).

    The area fraction is read off an m x m stratified grid. The interval runs
    from the Wilson lower bound of the decided-true count to the Wilson upper
    bound of the true-or-undecided count.
    """
    if mode not in ("fast", "slow"):
        raise ValueError("box modes are fast and slow")
    seed = as_seed(seed, f"box-{mode}")
    w = fine_weights(field, params) if weights is None else weights
    pts = stratified_points(box, m, seed)
    decisions = [
        classify_point(TorusPoint(*p), mode, field, params, seed.nested(i), weights=w).decision
        for i, p in enumerate(pts)
    ]
    n = len(pts)
    yes = sum(d is True for d in decisions)
    maybe = sum(d is None for d in decisions)
    lo = wilson_interval(yes, n, params.confidence)[0]
    hi = wilson_interval(yes + maybe, n, params.confidence)[1]
    thr = params.delta3 if mode == "fast" else params.eps3
    frac = yes / n
    dec = None if maybe and lo < thr <= hi else decide(frac, lo, hi, thr)
    return ClassificationResult(box, mode, frac, lo, hi, thr, dec, n)


# ---------------------------------------------------------------- box lattices


def _coarse_at(field: FieldSample, params: FastSlowParams, box: Box) -> float:
    c = box.center
    return float(field.values_at(np.array([c.x, c.y]), Band(0, params.r - 1)))


def _neighbors(ix: int, iy: int, N: int):
    for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        yield (ix + dx) % N, (iy + dy) % N


@dataclass(frozen=True)
class CrossingPath:
    boxes: tuple[tuple[int, int], ...]
    bound: float  # s^{-(1+delta)}

    @property
    def length(self) -> int:
        return len(self.boxes)

    @property
    def within_bound(self) -> bool:
        return self.length <= self.bound


def _index_rect(a: tuple[int, int], b: tuple[int, int], margin: int, N: int) -> set:
    # rectangle spanned by the shorter wrapped offsets, plus a margin
    cells = set()
    d = [((b[i] - a[i] + N // 2) % N) - N // 2 for i in range(2)]
    xs = range(min(0, d[0]) - margin, max(0, d[0]) + margin + 1)
    ys = range(min(0, d[1]) - margin, max(0, d[1]) + margin + 1)
    for u in xs:
        for v in ys:
            cells.add(((a[0] + u) % N, (a[1] + v) % N))
    return cells


def find_fast_crossing(
    field: FieldSample,
    x: TorusPoint,
    y: TorusPoint,
    params: FastSlowParams,
    is_fast: Optional[Callable[[Box], bool]] = None,
    margin: int = 2,
    m: int = 8,
    seed=0,
) -> Optional[CrossingPath]:
    """Shortest chain of adjacent level-r boxes from BD_r(x) to BD_r(y).

    Admissible boxes have coarse field phi_r(center) <= (c-1) delta k r log 2
    and are fast. The search stays inside the index rectangle of the two end
    boxes widened by ``margin``. Fastness is evaluated lazily and cached.
    Returns None when no admissible chain exists.
    """
    k, r = params.k, params.r
    N = boxes_per_side(r, k)
    start, goal = box_index(x, r, k), box_index(y, r, k)
    region = _index_rect(start, goal, margin, N)
    ceiling = (params.c - 1) * params.delta * k * r * LOG2
    seed = as_seed(seed, "crossing")
    weights = fine_weights(field, params)
    cache: dict = {}

    def admissible(idx) -> bool:
        if idx not in cache:
            box = box_from_index(*idx, r, k)
            ok = _coarse_at(field, params, box) <= ceiling
            if ok:
                if is_fast is not None:
                    ok = bool(is_fast(box))
                else:
                    sd = seed.with_replica(idx[0] * N + idx[1])
                    ok = classify_box(box, "fast", field, params, m, sd, weights=weights).decision is True
            cache[idx] = ok
        return cache[idx]

    if not (admissible(start) and admissible(goal)):
        return None
    prev = {start: None}
    queue = deque([start])
    while queue:
        cur = queue.popleft()
        if cur == goal:
            chain = []
            while cur is not None:
                chain.append(cur)
                cur = prev[cur]
            return CrossingPath(tuple(reversed(chain)), params.s ** (-(1 + params.delta)))
        for nb in _neighbors(*cur, N):
            if nb in region and nb not in prev and admissible(nb):
                prev[nb] = cur
                queue.append(nb)
    return None


@dataclass(frozen=True)
class BlockingScore:
    score: int  # non-slow boxes on the cheapest path
    slow_on_path: int
    path_length: int


def slow_blocking_score(
    field: FieldSample,
    x: TorusPoint,
    radius: float,
    params: FastSlowParams,
    is_slow: Optional[Callable[[Box], bool]] = None,
    m: int = 8,
    seed=0,
) -> BlockingScore:
    """Fewest non-slow boxes a box path from BD_r(x) to distance ``radius`` must cross.

    A box costs 0 when it is slow and its coarse field is at least
    -c delta k r log 2, and 1 otherwise. Ties in cost go to the shorter
    path. The box field must cover the disk of ``radius`` around x.
    """
    k, r, s = params.k, params.r, params.s
    N = boxes_per_side(r, k)
    start = box_index(x, r, k)
    reach = int(math.ceil(radius / s)) + 1
    floor = -params.c * params.delta * k * r * LOG2
    seed = as_seed(seed, "blocking")
    weights = None
    cost: dict = {}

    def box_cost(idx) -> int:
        nonlocal weights
        if idx not in cost:
            box = box_from_index(*idx, r, k)
            free = _coarse_at(field, params, box) >= floor
            if free:
                if is_slow is not None:
                    free = bool(is_slow(box))
                else:
                    if weights is None:
                        weights = fine_weights(field, params)
                    sd = seed.with_replica(idx[0] * N + idx[1])
                    free = classify_box(box, "slow", field, params, m, sd, weights=weights).decision is True
            cost[idx] = 0 if free else 1
        return cost[idx]

    def offset(idx):
        d = [((idx[i] - start[i] + N // 2) % N) - N // 2 for i in range(2)]
        return d

    def is_goal(idx) -> bool:
        d = offset(idx)
        return math.hypot(*d) * s >= radius

    heap = [(box_cost(start), 1, start)]
    best = {start: (box_cost(start), 1)}
    while heap:
        c, L, cur = heapq.heappop(heap)
        if best[cur] < (c, L):
            continue
        if is_goal(cur):
            return BlockingScore(c, L - c, L)
        for nb in _neighbors(*cur, N):
            if max(abs(v) for v in offset(nb)) > reach:
                continue
            key = (c + box_cost(nb), L + 1)
            if nb not in best or key < best[nb]:
                best[nb] = key
                heapq.heappush(heap, (key[0], key[1], nb))
    raise RuntimeError("radius exceeds the searchable region")


# ---------------------------------------------------------------- constructed example


def constant_field(params: FastSlowParams, center: TorusPoint, side: float, level: float, n: int = 64) -> FieldSample:
    """Field realization with every fine layer equal to ``level / (#fine scales)``.

    Handy for deterministic sanity checks: the fine integrand is then the
    constant exp(gamma * level - gamma^2 sigma^2 / 2).
    """
    grid = GridSpec.window(center, side, n)
    w = params.r + 1
    layers = {j: np.zeros((n, n)) for j in range(w + 1)}
    for j in range(params.r, w + 1):
        layers[j] = np.full((n, n), level / (w - params.r + 1))
    return FieldSample(params.kernel, grid, layers, as_seed(0, "constructed"))


def fast_and_slow_example(params: FastSlowParams, seed=0, integrand: float = 3.0):
    """Classify one point of a constructed field as fast and as slow.

    The fine integrand is the constant ``integrand``: F_r(u) = integrand * u.
    With integrand < 1/delta1 every path is fast, and with integrand well
    above eps1 the exit-time tail makes the point slow as well.
    """
    if params.gamma == 0:
        raise ValueError("the constructed example needs gamma > 0")
    var = Band(params.r, params.r + 1).variance(params.k)
    level = (math.log(integrand) + 0.5 * params.gamma**2 * var) / params.gamma
    z = TorusPoint(1.0, 1.0)
    f = constant_field(params, z, 8 * params.s, level)
    fast = classify_point(z, "fast", f, params, as_seed(seed).with_tag("fast"))
    slow = classify_point(z, "slow", f, params, as_seed(seed).with_tag("slow"))
    return fast, slow


def with_overrides(params: FastSlowParams, **kw) -> FastSlowParams:
    return replace(params, **kw)
