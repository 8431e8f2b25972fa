import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coarse_mbrw.torus import (
    Box,
    TorusPoint,
    are_neighbors,
    ball_overlap_fraction,
    box_from_index,
    box_index,
    boxes_per_side,
    dyadic_box,
    torus_distance,
    torus_distance_array,
    wrap,
    wrap_delta,
)

coord = st.floats(-20, 20, allow_nan=False)


def test_points_wrap_on_construction():
    p = TorusPoint(-0.5, 9.0)
    assert (p.x, p.y) == (3.5, 1.0)
    assert 0 <= TorusPoint(-1e-18, 4.0).x < 4


@pytest.mark.parametrize(
    "a, b, d",
    [((0, 0), (0, 0), 0.0), ((0, 0), (3.5, 0), 0.5), ((0, 0), (2, 2), 2 * math.sqrt(2))],
)
def test_distance_examples(a, b, d):
    assert torus_distance(TorusPoint(*a), TorusPoint(*b)) == pytest.approx(d, abs=1e-15)


def test_wrap_delta_range():
    v = wrap_delta(np.linspace(-9, 9, 1001))
    assert np.all(v >= -2) and np.all(v < 2)


def test_distance_is_a_metric_on_random_triples():
    rng = np.random.default_rng(0)
    a, b, c = (rng.random((10_000, 2)) * 4 for _ in range(3))
    ab, bc, ac = torus_distance_array(a, b), torus_distance_array(b, c), torus_distance_array(a, c)
    assert np.all(ab >= 0)
    assert np.allclose(ab, torus_distance_array(b, a))
    assert np.all(ac <= ab + bc + 1e-12)


@given(coord, coord, coord, coord)
def test_distance_invariant_under_period_shifts(x1, y1, x2, y2):
    d0 = torus_distance(TorusPoint(x1, y1), TorusPoint(x2, y2))
    d1 = torus_distance(TorusPoint(x1 + 4, y1 - 8), TorusPoint(x2, y2 + 4))
    assert d0 == pytest.approx(d1, abs=1e-9)
    assert d0 <= 2 * math.sqrt(2) + 1e-12


@pytest.mark.parametrize(
    "d, R, expected",
    [(0.0, 0.5, 1.0), (1.0, 0.5, 0.0), (0.25 * math.sqrt(2), 0.25, 0.5 - 1 / math.pi)],
)
def test_lens_examples(d, R, expected):
    assert ball_overlap_fraction(d, R) == pytest.approx(expected, abs=1e-12)


@given(st.floats(0, 3), st.floats(1e-3, 1.0))
def test_lens_depends_only_on_ratio(d, R):
    assert ball_overlap_fraction(d, R) == pytest.approx(ball_overlap_fraction(d / R, 1.0), abs=1e-12)


def test_lens_rejects_bad_inputs():
    with pytest.raises(ValueError):
        ball_overlap_fraction(0.1, 1.5)
    with pytest.raises(ValueError):
        ball_overlap_fraction(-0.1, 0.5)


def test_lens_is_monotone_and_vanishes_past_2R():
    d = np.linspace(0, 1.5, 500)
    a = ball_overlap_fraction(d, 0.5)
    assert np.all(np.diff(a) <= 1e-15)
    assert np.all(a[d >= 1.0] == 0)


def test_dyadic_box_examples():
    b = dyadic_box(TorusPoint(0.1, 0.1), 0, 1)
    assert (b.anchor.x, b.anchor.y, b.side) == (0.0, 0.0, 1.0)
    b = dyadic_box(TorusPoint(3.99, 0), 1, 2)
    assert (b.anchor.x, b.anchor.y, b.side) == (3.75, 0.0, 0.25)


def test_boxes_tile_the_torus():
    r, k = 1, 2
    N = boxes_per_side(r, k)
    assert N * N == 2 ** (2 * (k * r + 2))
    pts = np.random.default_rng(1).random((2000, 2)) * 4
    for p in pts[:200]:
        owners = [box_from_index(a, b, r, k).contains(p) for a in range(N) for b in range(N)]
        assert sum(owners) == 1
    for p in pts:
        assert dyadic_box(TorusPoint(*p), r, k).contains(p)


def test_half_open_membership():
    b = Box(TorusPoint(1.0, 1.0), 0.5)
    assert b.contains(TorusPoint(1.0, 1.0))
    assert not b.contains(TorusPoint(1.5, 1.0))


def test_enlarged_box_is_concentric_and_wraps():
    b = dyadic_box(TorusPoint(0.1, 0.1), 2, 1)
    star = b.enlarged(5)
    assert star.side == pytest.approx(5 * b.side)
    assert torus_distance(star.center, b.center) < 1e-12
    assert star.contains(TorusPoint(3.9, 3.9))  # wraps across the origin
    big = dyadic_box(TorusPoint(0.1, 0.1), 0, 1).enlarged(5)
    assert big.side == 5 and big.contains(TorusPoint(2.0, 2.0))


def test_neighbors_and_indices():
    r, k = 1, 1
    b = box_from_index(0, 0, r, k)
    assert are_neighbors(b, box_from_index(1, 0, r, k))
    assert are_neighbors(b, box_from_index(7, 0, r, k))  # across the seam
    assert not are_neighbors(b, box_from_index(1, 1, r, k))
    assert box_index(TorusPoint(3.9, 0.1), r, k) == (7, 0)


def test_wrap_array():
    assert np.allclose(wrap(np.array([-1.0, 4.0, 5.5])), [3.0, 0.0, 1.5])
