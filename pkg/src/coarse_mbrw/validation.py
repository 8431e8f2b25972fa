"""Acceptance checks c1..c13 at a quick and a full budget.

Each check returns a :class:`Criterion` holding a pass flag, a one-line
summary and the table it was decided on. :func:`validate_suite` writes one
CSV per check plus ``report.json``. CSVs hold only seeded results, never
timings, so two runs with one seed are byte-identical at any thread count.
"""
from __future__ import annotations

import filecmp
import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .classify import FastSlowParams, box_window, classify_point, fast_and_slow_example
from .covariance import Band, KernelParams, band_covariance, lambda_remainder, total_covariance
from .exponents import crossing_target, crossing_time_experiment, exponent_comparison
from .field import GridSpec, default_truncation, sample_field
from .gmc import ball_cells, ball_mass_samples, build_measure, check_radii, default_radii, fit_moment_scaling, xi
from .io import write_csv, write_json
from .lbm import accumulate_pcaf, exit_constant, integrand_array, run_paths, simulate_sbm, stopped_mean
from .rng import RngSeed
from .stats import mean_se
from .torus import TorusPoint, dyadic_box, torus_distance_array, wrap

LEVELS = ("quick", "full")


@dataclass
class Criterion:
    cid: str
    title: str
    passed: bool
    summary: str
    header: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    seconds: float = 0.0


def _budget(level: str, quick, full):
    return quick if level == "quick" else full


# ---------------------------------------------------------------- covariance


def c1_lambda_bound(level: str, seed: int, threads: int) -> Criterion:
    d = np.geomspace(1e-6, 2.0, 10_000)
    rows, ok = [], True
    t0 = time.perf_counter()
    for k in (1, 2, 4, 8):
        lam = np.abs(lambda_remainder(d, k))
        rows.append([k, float(lam.max()), 6.0 * k, bool(lam.max() <= 6 * k)])
        ok &= bool(lam.max() <= 6 * k)
    dt = time.perf_counter() - t0
    ok &= dt < 1.0
    return Criterion("c1", "|lambda(d)| <= 6k", ok, f"max |lambda| per k within 6k; {dt:.2f}s",
                     ["k", "max_abs_lambda", "bound", "pass"], rows)


def c2_self_similarity(level: str, seed: int, threads: int) -> Criterion:
    rng = RngSeed(seed, tag="c2").generator()
    a = rng.random((1000, 2)) * 4
    b = rng.random((1000, 2)) * 4
    d = torus_distance_array(a, b)
    rows, worst = [], 0.0
    for k in (2, 4):
        G = total_covariance(d, k)
        for r in (1, 2, 3):
            eps = 2.0 ** (-k * r)
            diff = float(np.max(np.abs(band_covariance(eps * d, k, Band(r, None)) - G)))
            worst = max(worst, diff)
            rows.append([k, r, diff])
    return Criterion("c2", "self-similarity of the fine covariance", worst <= 1e-10,
                     f"max deviation {worst:.2e}", ["k", "r", "max_abs_diff"], rows)


def c3_increment_bound(level: str, seed: int, threads: int) -> Criterion:
    rng = RngSeed(seed, tag="c3").generator()
    d = np.exp(rng.uniform(math.log(1e-8), math.log(2.0), 1000))
    k, rows, ok = 8, [], True
    for r in (1, 2, 3):
        band = Band(0, r - 1)
        lhs = 2 * (band_covariance(np.zeros(1), k, band)[0] - band_covariance(d, k, band))
        slack = float(np.min(2.0 ** (k * r) * d - lhs))
        rows.append([r, slack, bool(slack >= 0)])
        ok &= slack >= 0
    return Criterion("c3", "coarse increment bound", ok, "min of 2^{kr} d - 2(G(0)-G(d)) per r",
                     ["r", "min_slack", "pass"], rows)


# ---------------------------------------------------------------- field and measure


def c4_sampler_fidelity(level: str, seed: int, threads: int) -> Criterion:
    n = _budget(level, 256, 512)
    reps = _budget(level, 300, 2000)
    k = 2
    grid = GridSpec(n)
    params = KernelParams(k)
    w = default_truncation(n, k)
    band = Band(0, w)
    rng = RngSeed(seed, tag="c4-pairs").generator()
    lags = np.round(np.geomspace(1, n / 4, 20)).astype(int)
    ia = rng.integers(0, n, (20, 2))
    diag = rng.random(20) < 0.5
    ib = ia.copy()
    ib[:, 0] += lags
    ib[diag, 1] += lags[diag]
    ib %= n
    h = grid.spacing
    d = h * np.where(diag, lags * math.sqrt(2), lags)
    xa = np.empty((reps, 20))
    xb = np.empty((reps, 20))
    for i in range(reps):
        f = sample_field(grid, params, RngSeed(seed, i, tag="c4"), w=w, threads=threads)
        hsum = f.band_sum(band)
        xa[i] = hsum[ia[:, 0], ia[:, 1]]
        xb[i] = hsum[ib[:, 0], ib[:, 1]]
    prod = (xa - xa.mean(0)) * (xb - xb.mean(0))
    emp = prod.mean(0) * reps / (reps - 1)
    se = prod.std(0, ddof=1) / math.sqrt(reps)
    theory = band_covariance(d, k, band)
    z = (emp - theory) / se
    good = np.abs(z) <= 4
    rows = [[float(d[j]), float(emp[j]), float(theory[j]), float(se[j]), float(z[j]), bool(good[j])] for j in range(20)]
    return Criterion("c4", "sampler covariance vs closed form", int(good.sum()) >= 18,
                     f"{int(good.sum())}/20 pairs within 4 SE ({reps} replicas, {n}^2)",
                     ["d", "empirical", "theory", "se", "z", "pass"], rows)


def c5_normalization(level: str, seed: int, threads: int) -> Criterion:
    n = _budget(level, 256, 512)
    reps = _budget(level, 100, 500)
    gamma, eps = 0.4, 0.25
    grid = GridSpec(n)
    params = KernelParams(1, gamma)
    cells = ball_cells(grid, TorusPoint(0.0, 0.0), eps)
    total, ball = np.empty(reps), np.empty(reps)
    for i in range(reps):
        f = sample_field(grid, params, RngSeed(seed, i, tag="c5"), threads=threads)
        mu = build_measure(f, Band(0, f.w), gamma).masses
        total[i] = mu.sum()
        ball[i] = mu[cells].sum()
    mt, st = mean_se(total)
    mb, sb = mean_se(ball)
    ok_t = abs(mt - 16) <= 3 * st
    ok_b = abs(mb - math.pi * eps**2) <= 3 * sb
    rows = [["total", mt, st, 16.0, bool(ok_t)], ["ball", mb, sb, math.pi * eps**2, bool(ok_b)]]
    return Criterion("c5", "first-moment normalization", bool(ok_t and ok_b),
                     f"total {mt:.3f}+/-{st:.3f}, ball {mb:.4f}+/-{sb:.4f}",
                     ["quantity", "mean", "se", "target", "pass"], rows)


_MOMENT_CACHE: dict = {}


def _moment_masses(level: str, seed: int, threads: int):
    key = (level, seed)
    if key not in _MOMENT_CACHE:
        n = _budget(level, 512, 1024)
        reps = _budget(level, 200, 500)
        grid = GridSpec(n)
        radii = default_radii(grid)
        check_radii(radii, grid)
        m = ball_mass_samples(grid, KernelParams(1), radii, [0.3, 0.4], reps, RngSeed(seed, tag="c6"), threads=threads)
        _MOMENT_CACHE.clear()
        _MOMENT_CACHE[key] = (radii, m, n, reps)
    return _MOMENT_CACHE[key]


def c6_multifractal_slope(level: str, seed: int, threads: int) -> Criterion:
    radii, m, n, reps = _moment_masses(level, seed, threads)
    rows, ok = [], True
    for q in (0.5, 1.0, 1.5):
        est = fit_moment_scaling(m[1], radii, q, 0.4, "mean", seed=seed)
        good = abs(est.slope - xi(q, 0.4)) <= 0.15
        ok &= good
        rows.append([q, est.slope, est.stderr, xi(q, 0.4), bool(good)])
    return Criterion("c6", "moment slope vs xi(q) at gamma=0.4", bool(ok),
                     f"{reps} replicas on {n}^2", ["q", "slope", "stderr", "xi", "pass"], rows)


def c7_median_slope(level: str, seed: int, threads: int) -> Criterion:
    radii, m, n, reps = _moment_masses(level, seed, threads)
    rows, ok = [], True
    for g, gamma in enumerate((0.3, 0.4)):
        est = fit_moment_scaling(m[g], radii, 1.0, gamma, "median", seed=seed)
        good = abs(est.slope - (2 + gamma**2 / 2)) <= 0.1
        ok &= good
        rows.append([gamma, est.slope, est.stderr, 2 + gamma**2 / 2, bool(good)])
    return Criterion("c7", "median ball-mass slope", bool(ok), f"{reps} replicas on {n}^2",
                     ["gamma", "slope", "stderr", "target", "pass"], rows)


# ---------------------------------------------------------------- paths


def c8_pcaf_identity(level: str, seed: int, threads: int) -> Criterion:
    path = simulate_sbm(TorusPoint(0.3, 0.7), 1e-4, 0.05, RngSeed(seed, tag="c8-trace"))
    trace = accumulate_pcaf(path, None, None, 0.0)
    exact = bool(np.array_equal(trace.values, np.arange(len(path.positions)) * path.dt))
    reps = _budget(level, 400, 2000)
    gamma, v, n = 0.3, 0.01, 256
    grid = GridSpec(n)
    params = KernelParams(1, gamma)
    F = np.empty(reps)
    for i in range(reps):
        f = sample_field(grid, params, RngSeed(seed, i, tag="c8-field"), threads=threads)
        wts = integrand_array(f, Band(0, f.w), gamma)
        res = run_paths(np.array([[1.0, 1.0]]), 1e-5, v, RngSeed(seed, i, tag="c8-path"), weight=wts, grid=grid)
        F[i] = res.end_F[0]
    m, se = mean_se(F)
    ok = abs(m - v) <= 3 * se
    rows = [["gamma0_exact", float(exact), 1.0, 0.0, exact], ["mean_F", m, v, se, bool(ok)]]
    return Criterion("c8", "PCAF identity and normalization", bool(exact and ok),
                     f"gamma=0 exact: {exact}; E F(v) = {m:.5f} +/- {se:.5f} vs {v}",
                     ["quantity", "value", "target", "se", "pass"], rows)


def c9_exit_constant(level: str, seed: int, threads: int) -> Criterion:
    paths = _budget(level, 20_000, 100_000)
    factor = _budget(level, 1e-3, 1e-4)
    vals = {}
    rows = []
    oracle = exit_constant(3.0)
    for e in (4, 6):
        s = 2.0**-e
        m, se = stopped_mean(s, paths, RngSeed(seed, e, tag="c9"), dt_factor=factor)
        vals[e] = m
        rows.append([s, m, se, oracle])
    ratio = vals[4] / vals[6]
    ok = abs(ratio - 1) <= 0.05
    rows.append(["ratio", ratio, 0.0, 1.0])
    return Criterion("c9", "E(s^2 ∧ sigma_6s)/s^2 constant in s", bool(ok),
                     f"ratio {ratio:.4f}; analytic constant {oracle:.5f}", ["s", "estimate", "se", "oracle"], rows)


def c10_crossing_exponent(level: str, seed: int, threads: int) -> Criterion:
    reps = _budget(level, 40, 200)
    paths = _budget(level, 50, 100)
    gamma = 0.3
    res = crossing_time_experiment(gamma, 4, [1, 2, 3], reps, paths, seed=RngSeed(seed, tag="c10"))
    rep = exponent_comparison(gamma, 4, res)
    target = crossing_target(gamma)
    ok = abs(res.fit.slope - target) <= 0.15 and bool(rep.consistent)
    rows = [[row.r, row.s, row.median_F, row.log_median_se] for row in res.rows]
    rows.append(["slope", res.fit.slope, res.fit.stderr, target])
    rows.append(["2/slope", rep.derived_exponent, rep.derived_stderr, rep.theorem_exponent])
    rows.append(["1/(slope-1)", rep.chained_exponent, rep.chained_stderr, rep.theorem_exponent])
    return Criterion("c10", "crossing-time exponent", bool(ok),
                     f"slope {res.fit.slope:.4f}+/-{res.fit.stderr:.4f} (target {target}); "
                     f"2/slope {rep.derived_exponent:.4f}+/-{rep.derived_stderr:.4f} vs {rep.theorem_exponent:.4f}; "
                     f"1/(slope-1) {rep.chained_exponent:.4f}+/-{rep.chained_stderr:.4f}",
                     ["r", "s", "median_F", "log_median_se"], rows)


def c11_fast_fraction(level: str, seed: int, threads: int) -> Criterion:
    reps = _budget(level, 20, 100)
    inner = _budget(level, 200, 400)
    params = FastSlowParams(k=4, r=2, delta=0.2, gamma=0.3, inner=inner)
    C1 = exit_constant(3.0)
    bound = 1 - C1 * params.delta1 / params.delta2
    rng = RngSeed(seed, tag="c11-z").generator()
    fast = undecided = 0
    rows = []
    for i in range(reps):
        center = TorusPoint(*(rng.random(2) * 4))
        box = dyadic_box(center, params.r, params.k)
        f = box_window(box, params, RngSeed(seed, i, tag="c11-field"))
        z = TorusPoint(*wrap(np.array([box.anchor.x, box.anchor.y]) + rng.random(2) * box.side))
        res = classify_point(z, "fast", f, params, RngSeed(seed, i, tag="c11-paths"))
        fast += res.decision is True
        undecided += res.decision is None
        rows.append([i, res.p_hat, res.ci_lo, res.ci_hi, res.label])
    frac = fast / reps
    ok = frac >= bound
    rows.append(["fraction", frac, bound, undecided / reps, str(ok)])
    return Criterion("c11", "fast-point probability bound", bool(ok),
                     f"P(fast) = {frac:.3f} vs bound {bound:.3f} ({undecided} undecided)",
                     ["replica", "p_hat", "ci_lo", "ci_hi", "decision"], rows)


def c12_fast_and_slow(level: str, seed: int, threads: int) -> Criterion:
    params = FastSlowParams(k=4, r=2, delta=0.2, gamma=0.3)
    fast, slow = fast_and_slow_example(params, seed=seed)
    ok = fast.decision is True and slow.decision is True
    rows = [[r.mode, r.p_hat, r.ci_lo, r.ci_hi, r.threshold, r.label] for r in (fast, slow)]
    return Criterion("c12", "one point both fast and slow", bool(ok), f"fast={fast.label}, slow={slow.label}",
                     ["mode", "p_hat", "ci_lo", "ci_hi", "threshold", "decision"], rows)


DETERMINISM_SUBSET = ("c2", "c5", "c8")


def c13_determinism(level: str, seed: int, threads: int) -> Criterion:
    """Re-run a field-using subset at 1 and 2 threads and compare CSV bytes."""
    rows, ok = [], True
    with tempfile.TemporaryDirectory() as tmp:
        dirs = []
        for t in (1, 2):
            out = Path(tmp) / f"t{t}"
            _run(out, "quick", seed, t, only=DETERMINISM_SUBSET, write_report=False)
            dirs.append(out)
        for cid in DETERMINISM_SUBSET:
            name = f"{cid}.csv"
            same = filecmp.cmp(dirs[0] / name, dirs[1] / name, shallow=False)
            rows.append([name, bool(same)])
            ok &= same
    return Criterion("c13", "byte-identical CSVs across thread counts", bool(ok),
                     "subset " + ",".join(DETERMINISM_SUBSET) + " at threads 1 and 2", ["file", "identical"], rows)


CHECKS: dict[str, Callable[[str, int, int], Criterion]] = {
    "c1": c1_lambda_bound,
    "c2": c2_self_similarity,
    "c3": c3_increment_bound,
    "c4": c4_sampler_fidelity,
    "c5": c5_normalization,
    "c6": c6_multifractal_slope,
    "c7": c7_median_slope,
    "c8": c8_pcaf_identity,
    "c9": c9_exit_constant,
    "c10": c10_crossing_exponent,
    "c11": c11_fast_fraction,
    "c12": c12_fast_and_slow,
    "c13": c13_determinism,
}


def _run(out: Path, level: str, seed: int, threads: int, only=None, write_report=True) -> list[Criterion]:
    if level not in LEVELS:
        raise ValueError(f"level must be one of {LEVELS}")
    out = Path(out)
    results = []
    for cid, fn in CHECKS.items():
        if only is not None and cid not in only:
            continue
        t0 = time.perf_counter()
        crit = fn(level, seed, threads)
        crit.seconds = time.perf_counter() - t0
        write_csv(out / f"{cid}.csv", crit.header, crit.rows)
        results.append(crit)
    _MOMENT_CACHE.clear()
    if write_report:
        write_json(
            out / "report.json",
            {
                "level": level,
                "seed": seed,
                "criteria": [
                    {"id": c.cid, "title": c.title, "passed": c.passed, "summary": c.summary, "seconds": round(c.seconds, 3)}
                    for c in results
                ],
            },
        )
    return results


def validate_suite(level: str, out, seed: int = 0, threads: int = 1, only=None) -> list[Criterion]:
    """Run the checks and write ``c*.csv`` and ``report.json`` into ``out``."""
    return _run(Path(out), level, seed, threads, only=only)


def format_report(results: list[Criterion]) -> str:
    return "\n".join(f"{c.cid:>4} {'PASS' if c.passed else 'FAIL'}  {c.title}: {c.summary}" for c in results)
