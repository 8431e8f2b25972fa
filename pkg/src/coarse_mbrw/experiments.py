"""Registered experiments behind the CLI subcommands."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .classify import FastSlowParams, classify_point, stratified_points
from .covariance import Band, KernelParams, covariance_breakdown, lambda_remainder
from .exponents import crossing_time_experiment, exponent_comparison
from .field import GridSpec, sample_field, write_field_file
from .gmc import ball_mass_samples, check_radii, default_radii, fit_moment_scaling
from .io import write_csv, write_json
from .lbm import integrand_array, run_paths
from .rng import RngSeed
from .runner import ExperimentOutput, RunConfig, register
from .torus import TorusPoint, dyadic_box, wrap
from .validation import format_report, validate_suite


def _out(cfg: RunConfig) -> Path:
    return Path(cfg.out)


@register("validate-covariance")
def validate_covariance(cfg: RunConfig) -> ExperimentOutput:
    d = np.geomspace(1e-6, 2.0, 10_000)
    lam = lambda_remainder(d, cfg.k)
    rows = []
    for x, l in zip(d, lam):
        b = covariance_breakdown(float(x), cfg.k)
        rows.append([float(x), b.r0, b.G, float(l), bool(abs(l) <= 6 * cfg.k)])
    path = write_csv(_out(cfg) / "covariance.csv", ["d", "r0", "G", "lambda", "within_6k"], rows)
    ok = bool(np.all(np.abs(lam) <= 6 * cfg.k))
    return ExperimentOutput([path], {}, "ok" if ok else "failed_checks",
                            [f"max |lambda| = {np.abs(lam).max():.4f} (bound {6 * cfg.k})"])


@register("sample-field")
def sample_field_exp(cfg: RunConfig) -> ExperimentOutput:
    grid = GridSpec(cfg.grid)
    params = KernelParams(cfg.k, cfg.gamma)
    seed = RngSeed(cfg.seed, tag="sample-field")
    f = sample_field(grid, params, seed, threads=cfg.threads)
    fpath = write_field_file(_out(cfg) / "field.mbrw", f)
    rows = [[j, float(f.layers[j].mean()), float(f.layers[j].var()), params.scale_variance] for j in f.scales]
    cpath = write_csv(_out(cfg) / "field_scales.csv", ["scale", "mean", "variance", "target_variance"], rows)
    return ExperimentOutput([fpath, cpath], {"field": [cfg.seed, seed.tag]}, "ok", [f"{len(f.scales)} scales on {cfg.grid}^2"])


@register("fit-moments")
def fit_moments(cfg: RunConfig) -> ExperimentOutput:
    grid = GridSpec(cfg.grid)
    radii = default_radii(grid)
    check_radii(radii, grid)
    seed = RngSeed(cfg.seed, tag="fit-moments")
    masses = ball_mass_samples(grid, KernelParams(cfg.k), radii, [cfg.gamma], cfg.replicas, seed, threads=cfg.threads)[0]
    rows, fits, poor = [], [], False
    for stat, qs in (("mean", cfg.q), ("median", (1.0,))):
        for q in qs:
            est = fit_moment_scaling(masses, radii, q, cfg.gamma, stat, seed=cfg.seed)
            for e, m, se in zip(est.epsilons, est.moments, est.moment_se):
                rows.append([stat, q, e, m, se])
            fits.append([stat, q, est.slope, est.stderr, est.xi_theory])
            tol = cfg.tolerances.get("slope", 0.15)
            poor |= abs(est.slope - est.xi_theory) > tol
    p1 = write_csv(_out(cfg) / "moments.csv", ["statistic", "q", "eps", "moment", "moment_se"], rows)
    p2 = write_csv(_out(cfg) / "fits.csv", ["statistic", "q", "slope", "stderr", "target"], fits)
    return ExperimentOutput([p1, p2], {"fields": [cfg.seed, seed.tag]}, "poor_fit" if poor else "ok")


@register("simulate-lbm")
def simulate_lbm(cfg: RunConfig) -> ExperimentOutput:
    """Y_t from (1, 1): one Brownian path per field, stopped when F reaches t."""
    grid = GridSpec(cfg.grid)
    params = KernelParams(cfg.k, cfg.gamma)
    dt = min(cfg.t * 1e-3, grid.spacing**2)
    horizon = 50 * cfg.t
    seed = RngSeed(cfg.seed, tag="simulate-lbm")
    rows = []
    for i in range(cfg.replicas):
        f = sample_field(grid, params, seed.with_replica(i).with_tag("lbm-field"), threads=cfg.threads)
        w = integrand_array(f, Band(0, f.w), cfg.gamma)
        res = run_paths(np.array([[1.0, 1.0]]), dt, horizon, seed.with_replica(i), weight=w, grid=grid, f_target=cfg.t)
        y = wrap(np.array([1.0, 1.0]) + res.end_disp[0])
        rows.append([i, cfg.t, float(y[0]), float(y[1]), float(res.end_F[0]), bool(not res.reached_target_F[0])])
    path = write_csv(_out(cfg) / "lbm.csv", ["replica", "t", "Yx", "Yy", "F_total", "censored"], rows)
    censored = sum(r[-1] for r in rows)
    return ExperimentOutput([path], {"paths": [cfg.seed, seed.tag]}, "ok", [f"{censored} censored paths"])


@register("classify")
def classify_exp(cfg: RunConfig) -> ExperimentOutput:
    """Classify an m x m stratified grid of points in the level-r box at (1, 1).

    ``grid`` sets the window resolution; ``points`` sets m.
    """
    params = FastSlowParams(cfg.k, cfg.r, cfg.delta, cfg.gamma, inner=cfg.paths, C3=cfg.C3, c=cfg.c)
    box = dyadic_box(TorusPoint(1.0, 1.0), cfg.r, cfg.k)
    seed = RngSeed(cfg.seed, tag="classify")
    side = box.side * 7.5
    f = sample_field(GridSpec.window(box.center, side, cfg.grid), params.kernel, seed.with_tag("classify-field"),
                     w=cfg.r + 1)
    rows, undecided = [], 0
    sets = (box, box.center) if cfg.mode == "very_fast" else None
    for i, p in enumerate(stratified_points(box, cfg.points, seed)):
        res = classify_point(TorusPoint(*p), cfg.mode, f, params, seed.nested(i), sets=sets)
        undecided += res.decision is None
        rows.append([float(p[0]), float(p[1]), res.p_hat, res.ci_lo, res.ci_hi, res.label])
    path = write_csv(_out(cfg) / "classify.csv", ["point_x", "point_y", "p_hat", "ci_lo", "ci_hi", "decision"], rows)
    status = "undecided" if undecided > len(rows) / 2 else "ok"
    return ExperimentOutput([path], {"classify": [cfg.seed, seed.tag]}, status, [f"{undecided}/{len(rows)} undecided"])


@register("estimate-exponent")
def estimate_exponent(cfg: RunConfig) -> ExperimentOutput:
    seed = RngSeed(cfg.seed, tag="estimate-exponent")
    files = []
    res = crossing_time_experiment(cfg.gamma, cfg.k, cfg.scales, cfg.replicas, cfg.paths, seed=seed)
    for r, F in sorted(res.samples.items()):
        rows = [[i, j, float(F[i, j])] for i in range(F.shape[0]) for j in range(F.shape[1])]
        files.append(write_csv(_out(cfg) / f"crossing_r{r}.csv", ["replica", "path", "F_exit"], rows))
    rep = exponent_comparison(cfg.gamma, cfg.k, res, tolerance=cfg.tolerances.get("slope", 0.15))
    summary = [[row.r, row.s, row.median_F, row.log_median_se] for row in res.rows]
    files.append(write_csv(_out(cfg) / "crossing_summary.csv", ["r", "s", "median_F", "log_median_se"], summary))
    files.append(write_json(_out(cfg) / "report.json", rep.to_dict()))
    return ExperimentOutput(files, {"crossing": [cfg.seed, seed.tag]}, "poor_fit" if res.fit.poor_fit else "ok", rep.lines())


@register("validate-suite")
def validate_suite_exp(cfg: RunConfig) -> ExperimentOutput:
    results = validate_suite(cfg.level, _out(cfg), cfg.seed, cfg.threads)
    files = [_out(cfg) / f"{c.cid}.csv" for c in results] + [_out(cfg) / "report.json"]
    ok = all(c.passed for c in results)
    return ExperimentOutput(files, {"suite": [cfg.seed, cfg.level]}, "ok" if ok else "failed_checks",
                            format_report(results).splitlines())
