import math

import numpy as np
import pytest

from coarse_mbrw.covariance import LOG2, Band, KernelParams, band_covariance, scale_covariance
from coarse_mbrw.field import (
    EXACT_POINTS_MAX,
    GridSpec,
    ScaleResolutionError,
    coarse_field_max_stats,
    default_truncation,
    disk_offsets,
    read_field_file,
    sample_exact_points,
    sample_field,
    sample_scale_field,
    write_field_file,
)
from coarse_mbrw.rng import RngSeed
from coarse_mbrw.torus import TorusPoint, ball_overlap_fraction, torus_distance_array


def test_grid_geometry():
    g = GridSpec(64)
    assert g.spacing == 1 / 16 and g.periodic
    assert default_truncation(128, 1) == 3
    ix, iy, inside = g.cell_index(np.array([[3.99, 0.01], [-0.01, 4.01]]))
    assert list(ix) == [63, 63] and list(iy) == [0, 0] and inside.all()
    w = GridSpec.window(TorusPoint(1, 1), 0.5, 32)
    assert not w.periodic and w.spacing == 0.5 / 32
    assert not w.cell_index(np.array([2.0, 2.0]))[2]


@pytest.mark.parametrize("lag", [0, 4, 8, 12, 16, 24, 31])
def test_discrete_disk_overlap_matches_lens(lag):
    rc = 16.0
    off = {tuple(o) for o in disk_offsets(rc)}
    shifted = {(a + lag, b) for a, b in off}
    frac = len(off & shifted) / len(off)
    assert frac == pytest.approx(ball_overlap_fraction(lag / rc, 1.0), abs=0.02)


def test_layer_variance_is_exact_per_cell():
    g = GridSpec(128)
    params = KernelParams(1)
    vals = np.array([sample_scale_field(2, g, params, RngSeed(i))[5, 7] for i in range(400)])
    # variance k log 2, checked at one cell across replicas
    assert vals.var() == pytest.approx(LOG2, rel=0.2)
    assert abs(vals.mean()) < 4 * math.sqrt(LOG2 / 400)


def test_layer_covariance_matches_kernel():
    g = GridSpec(128)
    params = KernelParams(1)
    lags = [0, 4, 8, int(round(8 * math.sqrt(2))), 16]
    acc = np.zeros(len(lags))
    n = 40
    for i in range(n):
        h = sample_scale_field(2, g, params, RngSeed(i, tag="cov"))
        acc += [np.mean(h * np.roll(h, -L, axis=0)) for L in lags]
    emp = acc / n
    for L, e in zip(lags, emp):
        assert e == pytest.approx(scale_covariance(2, L / 32, 1), abs=0.08)
    assert emp[-1] == pytest.approx(0.0, abs=0.08)  # distance 2R
    assert emp[3] == pytest.approx(LOG2 * (0.5 - 1 / math.pi), abs=0.08)


def test_band_additivity_and_caching():
    f = sample_field(GridSpec(64), KernelParams(1, 0.3), RngSeed(3))
    total = f.band_sum(Band(0, None))
    assert np.allclose(total, f.coarse(1) + f.fine(1))
    assert f.band_sum(Band(0, None)) is total
    assert f.band_variance(Band(0, 1)) == pytest.approx(2 * LOG2)
    with pytest.raises(ValueError):
        total[0, 0] = 1.0
    with pytest.raises(ValueError):
        f.band_sum(Band(0, f.w + 1))


def test_determinism_across_threads():
    g = GridSpec(128)
    a = sample_field(g, KernelParams(1), RngSeed(9), threads=1)
    b = sample_field(g, KernelParams(1), RngSeed(9), threads=3)
    for j in a.scales:
        assert np.array_equal(a.layers[j], b.layers[j])
    c = sample_field(g, KernelParams(1), RngSeed(10))
    assert not np.array_equal(a.layers[0], c.layers[0])


def test_layers_are_independent():
    f = sample_field(GridSpec(256), KernelParams(1), RngSeed(2))
    x, y = f.layers[2].ravel(), f.layers[3].ravel()
    assert abs(np.corrcoef(x, y)[0, 1]) < 0.1


def test_too_fine_scale_is_rejected():
    with pytest.raises(ScaleResolutionError):
        sample_scale_field(3, GridSpec(64), KernelParams(1), RngSeed(0))
    with pytest.raises(ScaleResolutionError):
        sample_field(GridSpec(64), KernelParams(1), RngSeed(0), w=3)


def test_window_layers_have_target_variance():
    params = KernelParams(2)
    grid = GridSpec.window(TorusPoint(1.0, 1.0), 0.25, 64)
    vals = []
    for i in range(200):
        f = sample_field(grid, params, RngSeed(i, tag="win"))
        vals.append([f.layers[j][32, 32] for j in f.scales])
    vals = np.array(vals)
    assert f.scales == [0, 1, 2, 3]
    assert np.allclose(vals.var(axis=0), 2 * LOG2, rtol=0.25)


def test_window_coarse_scale_covariance():
    # scale 0 is wider than the window and comes from the exact 14 x 14 lattice
    params = KernelParams(2)
    grid = GridSpec.window(TorusPoint(1.0, 1.0), 0.5, 32)
    pairs = np.array([
        (h[0, 16], h[31, 16])
        for h in (sample_scale_field(0, grid, params, RngSeed(i, tag="lat")) for i in range(2000))
    ])
    d = 0.5 * 13 / 14  # cells 0 and 31 read lattice nodes 0 and 13
    cov = np.cov(pairs.T)
    assert cov[0, 1] == pytest.approx(scale_covariance(0, d, 2), abs=0.12)
    assert cov[0, 0] == pytest.approx(2 * LOG2, abs=0.15)


def test_exact_points_covariance():
    pts = [TorusPoint(0, 0), TorusPoint(0.3, 0), TorusPoint(3.9, 0.2)]
    band = Band(0, 2)
    draws = sample_exact_points(pts, band, KernelParams(2), RngSeed(1), n_draws=20_000)
    emp = np.cov(draws.T)
    xy = np.array([[p.x, p.y] for p in pts])
    d = torus_distance_array(xy[:, None, :], xy[None, :, :])
    # variance 3 * 2 log 2 ~ 4.2 gives a covariance SE near 0.04
    assert np.allclose(emp, band_covariance(d, 2, band), atol=0.2)
    with pytest.raises(ValueError):
        sample_exact_points(np.zeros((EXACT_POINTS_MAX + 1, 2)), band, KernelParams(2), RngSeed(0))


def test_field_file_round_trip(tmp_path):
    f = sample_field(GridSpec(64), KernelParams(1, 0.2), RngSeed(12))
    p = write_field_file(tmp_path / "f.mbrw", f)
    g = read_field_file(p, gamma=0.2)
    assert g.scales == f.scales and g.params == f.params and g.seed.master == 12
    for j in f.scales:
        assert np.array_equal(f.layers[j], g.layers[j])
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(ValueError):
        read_field_file(p)


def test_missing_variance():
    f = sample_field(GridSpec(64), KernelParams(1), RngSeed(0))
    assert f.missing_variance(f.w) == 0
    assert f.missing_variance(f.w + 3) == pytest.approx(3 * LOG2)


def test_coarse_max_stats_smoke():
    params = KernelParams(1)
    st = coarse_field_max_stats(2, 0.5, params, 200, RngSeed(0), delta=0.5)
    assert st.threshold == pytest.approx(0.5 * 2 * LOG2)
    assert 0 <= st.fluct_freq <= 1 and st.replicas == 200
    # the max of a centered vector is positive in mean and below a union bound
    assert 0 < st.mean_max < math.sqrt(2 * 2 * LOG2 * math.log(196)) + 4 * st.mean_max_se
