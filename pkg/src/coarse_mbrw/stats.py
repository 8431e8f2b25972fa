"""Small statistics helpers shared by the estimators."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps


def mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two samples for a standard error")
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def wilson_interval(successes: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        return 0.0, 1.0
    z = float(sps.norm.ppf(0.5 + confidence / 2))
    p = successes / n
    denom = 1 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def median_se(x, n_boot: int = 200, seed: int = 0) -> float:
    """Bootstrap standard error of the sample median."""
    x = np.asarray(x, dtype=float)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, x.size, size=(n_boot, x.size))
    return float(np.median(x[idx], axis=1).std(ddof=1))


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    slope_se: float
    intercept_se: float
    r2: float
    n: int


def ols_line(x, y, sigma=None) -> LineFit:
    """Least-squares line y = a + b x; weighted when ``sigma`` is given.

    With weights the reported standard errors are the propagated ones
    (absolute sigma); without weights they come from the residual scatter.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("need at least two points for a line fit")
    w = np.ones(n) if sigma is None else 1.0 / np.asarray(sigma, dtype=float) ** 2
    X = np.column_stack([np.ones(n), x])
    XtW = X.T * w
    cov = np.linalg.inv(XtW @ X)
    a, b = cov @ (XtW @ y)
    resid = y - (a + b * x)
    if sigma is None:
        dof = max(n - 2, 1)
        cov = cov * float(resid @ resid) / dof
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return LineFit(float(b), float(a), float(math.sqrt(cov[1, 1])), float(math.sqrt(cov[0, 0])), r2, n)
