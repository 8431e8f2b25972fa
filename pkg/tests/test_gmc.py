import math

import numpy as np
import pytest

from coarse_mbrw.covariance import Band, KernelParams
from coarse_mbrw.field import GridSpec, sample_field
from coarse_mbrw.gmc import (
    UnderdeterminedFit,
    ball_mass_samples,
    build_measure,
    check_radii,
    default_radii,
    fit_moment_scaling,
    moment_scaling_fit,
    xi,
)
from coarse_mbrw.rng import RngSeed
from coarse_mbrw.torus import TorusPoint, box_from_index, dyadic_box


@pytest.fixture(scope="module")
def field():
    return sample_field(GridSpec(128), KernelParams(1, 0.3), RngSeed(5))


def test_gamma_zero_gives_lebesgue(field):
    mu = build_measure(field, Band(0, None), 0.0)
    assert np.allclose(mu.masses, field.grid.spacing**2)
    assert mu.total_mass == pytest.approx(16.0)


def test_small_gamma_is_continuous(field):
    mu = build_measure(field, Band(0, None), 1e-3)
    assert np.allclose(mu.masses, field.grid.spacing**2, rtol=1e-2)


@pytest.mark.parametrize("q, gamma, value", [(0, 0.3, 0.0), (1, 0.3, 2.0), (1, 0.0, 2.0), (2, 0.4, 3.84)])
def test_xi_examples(q, gamma, value):
    assert xi(q, gamma) == pytest.approx(value)


def test_xi_rejects_out_of_range_q():
    with pytest.raises(ValueError):
        xi(4 / 0.09 + 1, 0.3)
    with pytest.raises(ValueError):
        xi(-1, 0.0)
    with pytest.raises(ValueError):
        xi(1, 0.6)


def test_ball_mass_monotone_and_box_additive(field):
    mu = build_measure(field, Band(0, None), 0.3)
    c = TorusPoint(1.3, 2.7)
    masses = [mu.ball_mass(c, e) for e in (0.05, 0.1, 0.2, 0.4)]
    assert all(a <= b for a, b in zip(masses, masses[1:]))
    parent = dyadic_box(TorusPoint(0.1, 0.1), 1, 1)
    a0, b0 = int(parent.anchor.x / 0.25), int(parent.anchor.y / 0.25)
    kids = [box_from_index(2 * a0 + i, 2 * b0 + j, 1, 2) for i in (0, 1) for j in (0, 1)]
    assert parent.side == 0.5 and all(k.side == 0.25 for k in kids)
    assert sum(mu.box_mass(k) for k in kids) == pytest.approx(mu.box_mass(parent))


def test_mean_total_mass_is_area():
    tot = [build_measure(sample_field(GridSpec(64), KernelParams(1), RngSeed(i)), Band(0, None), 0.3).total_mass
           for i in range(60)]
    assert np.mean(tot) == pytest.approx(16.0, rel=0.05)


def test_radii_checks():
    g = GridSpec(256)
    with pytest.raises(UnderdeterminedFit):
        check_radii(default_radii(g), g)
    with pytest.raises(ValueError):
        check_radii([0.01, 0.1, 0.2, 0.3], g)
    g = GridSpec(512)
    assert len(check_radii(default_radii(g), g)) == 6


def test_moment_fit_needs_replicas():
    g = GridSpec(512)
    with pytest.raises(ValueError, match="200"):
        moment_scaling_fit(1.0, 0.3, default_radii(g), 10, g, KernelParams(1), RngSeed(0))


def test_gamma_zero_ball_masses_scale_like_area():
    g = GridSpec(512)
    radii = default_radii(g)
    m = ball_mass_samples(g, KernelParams(1), radii, [0.0], 3, RngSeed(0))[0]
    assert np.allclose(m[:, 0, :], np.pi * radii**2, rtol=0.05)
    for q in (0.5, 1.0, 2.0):
        est = fit_moment_scaling(m, radii, q, 0.0, n_boot=20)
        assert est.slope == pytest.approx(2 * q, abs=0.01 * 2 * q + 0.01)
        assert est.xi_theory == pytest.approx(2 * q)


def test_fit_recovers_synthetic_power_law():
    rng = np.random.default_rng(0)
    eps = np.geomspace(0.02, 0.4, 6)
    noise = np.exp(0.1 * rng.standard_normal((500, 1)))
    masses = noise * eps[None, :] ** 2.1
    est = fit_moment_scaling(masses, eps, 1.0, 0.3, n_boot=50)
    assert est.slope == pytest.approx(2.1, abs=1e-9)
    med = fit_moment_scaling(masses, eps, 1.0, 0.3, statistic="median", n_boot=50)
    assert med.slope == pytest.approx(2.1, abs=1e-9) and med.xi_theory == pytest.approx(2.045)
    with pytest.raises(ValueError):
        fit_moment_scaling(masses, eps, 1.0, 0.3, statistic="mode")
    assert math.isfinite(est.stderr)
