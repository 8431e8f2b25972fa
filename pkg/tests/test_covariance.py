import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coarse_mbrw.covariance import (
    FULL,
    LOG2,
    Band,
    KernelParams,
    band_covariance,
    coarse_band,
    covariance_breakdown,
    covariance_matrix,
    lambda_remainder,
    min_relative_eigenvalue,
    r_zero,
    scale_covariance,
    smallest_k_for_increment_bound,
    total_covariance,
)

# mpmath quadrature of the lens overlap, 30 digits
G_ORACLE = {
    (0.3, 1): 1.191053755841413,
    (0.3, 2): 1.517284874742624,
    (0.05, 1): 2.864919496237817,
    (0.05, 2): 3.251820250263528,
    (1.7, 1): 0.04723620592103930,
    (1.7, 2): 0.09447241184207860,
}


def test_params_validation():
    with pytest.raises(ValueError, match="L2-phase"):
        KernelParams(1, 0.5)
    with pytest.raises(ValueError):
        KernelParams(0, 0.1)
    assert KernelParams(3).scale_variance == pytest.approx(3 * LOG2)


@pytest.mark.parametrize("d, k, r0", [(1.0, 1, 1), (2.0, 1, 0), (0.25, 2, 1)])
def test_r_zero_examples(d, k, r0):
    assert r_zero(d, k) == r0


def test_r_zero_rejects_nonpositive():
    with pytest.raises(ValueError):
        r_zero(0.0, 1)


def test_scale_covariance_examples():
    assert scale_covariance(5, 0.0, 2) == pytest.approx(2 * LOG2)
    assert scale_covariance(2, 1.0, 1) == 0.0
    assert scale_covariance(0, 1.0, 1) == pytest.approx(0.2710220856618747, abs=1e-13)


@pytest.mark.parametrize("key", sorted(G_ORACLE))
def test_total_covariance_matches_quadrature(key):
    d, k = key
    assert total_covariance(d, k) == pytest.approx(G_ORACLE[key], abs=1e-12)


def test_band_examples():
    assert band_covariance(2.0, 1, FULL) == 0.0
    for r in (1, 2, 4):
        assert band_covariance(0.0, 3, coarse_band(r)) == pytest.approx(3 * r * LOG2)
    with pytest.raises(ValueError):
        band_covariance(0.0, 1, FULL)


@given(st.floats(1e-6, 2.0), st.sampled_from([2, 4]), st.integers(1, 3))
def test_self_similarity(d, k, r):
    eps = 2.0 ** (-k * r)
    assert abs(band_covariance(d * eps, k, Band(r, None)) - total_covariance(d, k)) <= 1e-10


def test_lambda_examples_and_bound():
    assert lambda_remainder(2.0, 1) == pytest.approx(math.log(2))
    d = np.geomspace(1e-6, 2, 10_000)
    for k in (1, 2, 4, 8):
        assert np.max(np.abs(lambda_remainder(d, k))) <= 6 * k
    with pytest.raises(ValueError):
        lambda_remainder(2.5, 1)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_continuity_at_dyadic_breakpoints(k):
    for m in range(0, 5):
        d = 2 * 2.0 ** (-k * m)
        lo = total_covariance(d * (1 - 1e-10), k)
        hi = total_covariance(d * (1 + 1e-10), k) if d < 2 else 0.0
        assert lo == pytest.approx(hi, abs=1e-6)


def test_breakdown_consistency():
    b = covariance_breakdown(0.3, 2)
    assert b.G == pytest.approx(sum(b.terms))
    assert b.lam == pytest.approx(b.G + math.log(0.3))
    assert all(t >= 0 for t in b.terms)
    assert len(b.terms) == b.r0 + 1


def test_total_covariance_non_increasing():
    d = np.linspace(1e-4, 3, 1000)
    assert np.all(np.diff(total_covariance(d, 2)) <= 1e-12)


def test_positive_semidefinite_on_random_sets():
    rng = np.random.default_rng(3)
    for _ in range(30):
        n = rng.integers(2, 41)
        pts = rng.random((n, 2)) * 4
        C = covariance_matrix(pts, 2, Band(0, 3))
        assert min_relative_eigenvalue(C) >= -1e-8


def test_increment_bound_at_k8():
    rng = np.random.default_rng(4)
    d = np.exp(rng.uniform(math.log(1e-8), math.log(2), 1000))
    for r in (1, 2, 3):
        band = coarse_band(r)
        lhs = 2 * (band_covariance(np.zeros(1), 8, band)[0] - band_covariance(d, 8, band))
        assert np.all(lhs <= 2.0 ** (8 * r) * d)
    k = smallest_k_for_increment_bound([1, 2, 3], d)
    assert k is not None and k <= 8
