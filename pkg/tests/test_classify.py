import math

import numpy as np
import pytest

from coarse_mbrw.classify import (
    FastSlowParams,
    InsufficientConditioning,
    classify_box,
    classify_point,
    constant_field,
    decide,
    fast_and_slow_example,
    find_fast_crossing,
    local_field,
    slow_blocking_score,
    stratified_points,
    with_overrides,
)
from coarse_mbrw.lbm import square_survival
from coarse_mbrw.rng import RngSeed
from coarse_mbrw.torus import TorusPoint, box_from_index, box_index, dyadic_box

Z = TorusPoint(1.03, 1.01)


def test_threshold_schedule_reference_values():
    p = FastSlowParams(4, 2, 0.2, 0.3)
    assert p.s == 2.0**-8
    assert p.delta1 == pytest.approx(0.0359, abs=1e-4)
    assert p.delta2 == pytest.approx(0.1088, abs=1e-4)
    assert p.delta3 == pytest.approx(0.3299, abs=1e-4)
    assert p.eps1 == p.delta3
    assert p.eps2 == pytest.approx(p.C3 * math.exp(-6 * 4 * 0.09))
    assert p.eps3 == pytest.approx(p.C3**2 * math.exp(-12 * 4 * 0.09))
    assert with_overrides(p, delta1_override=0.5).delta1 == 0.5
    with pytest.raises(ValueError):
        FastSlowParams(4, 2, 1.2)
    with pytest.raises(ValueError):
        FastSlowParams(4, 2, 0.2, 0.55)


def test_decision_rule():
    assert decide(0.9, 0.85, 0.95, 0.8) is True
    assert decide(0.1, 0.05, 0.15, 0.8) is False
    assert decide(0.8, 0.7, 0.9, 0.75) is None
    assert decide(0.5, 0.5, 0.5, 0.5) is None  # exact tie


def test_gamma_zero_points_are_fast():
    p = FastSlowParams(2, 2, 0.2, 0.0, inner=200, dt_factor=1e-3)
    f = local_field(Z, 14 * p.s, p, RngSeed(0))
    for i in range(3):
        res = classify_point(Z, "fast", f, p, RngSeed(i))
        assert res.p_hat == 1.0 and res.decision is True and res.label == "true"


def test_gamma_zero_slow_probability_matches_exit_oracle():
    p = FastSlowParams(2, 2, 0.5, 0.0, inner=3000, dt_factor=1e-3)
    f = local_field(Z, 4 * p.s, p, RngSeed(0))
    res = classify_point(Z, "slow", f, p, RngSeed(1))
    oracle = square_survival(p.eps1, 0.5)[0]
    se = math.sqrt(oracle * (1 - oracle) / p.inner)
    assert res.p_hat == pytest.approx(oracle, abs=4 * se + 0.01)
    assert res.ci_lo <= res.p_hat <= res.ci_hi


def test_fast_probability_monotone_in_delta1_under_coupling():
    p = FastSlowParams(2, 2, 0.2, 0.3, inner=300, dt_factor=1e-3)
    f = local_field(Z, 14 * p.s, p, RngSeed(2))
    probs = [classify_point(Z, "fast", f, with_overrides(p, delta1_override=d), RngSeed(3)).p_hat
             for d in (0.1, 0.3, 0.6, 0.9)]
    assert all(a >= b for a, b in zip(probs, probs[1:]))
    assert probs[0] > probs[-1]


def test_very_fast_needs_conditioning_events():
    p = FastSlowParams(2, 2, 0.2, 0.0, inner=20, dt_factor=1e-3)
    box = dyadic_box(Z, 2, 2)
    f = local_field(box.center, 8 * p.s, p, RngSeed(0))
    with pytest.raises(InsufficientConditioning):
        classify_point(box.center, "very_fast", f, p, RngSeed(0), sets=(box, box.center))
    with pytest.raises(ValueError):
        classify_point(box.center, "very_fast", f, p, RngSeed(0))


def test_very_fast_at_gamma_zero_from_inside_A():
    p = FastSlowParams(2, 2, 0.2, 0.0, inner=200, dt_factor=1e-3)
    box = dyadic_box(Z, 2, 2)
    f = local_field(box.center, 8 * p.s, p, RngSeed(0))
    res = classify_point(box.center, "very_fast", f, p, RngSeed(0), sets=(box, box.center))
    assert res.n >= 50 and res.p_hat == 1.0 and res.decision is True


def test_stratified_points_cover_each_cell():
    box = dyadic_box(Z, 2, 2)
    pts = stratified_points(box, 8, RngSeed(0))
    h = box.side / 8
    cells = {(int((x - box.anchor.x) // h), int((y - box.anchor.y) // h)) for x, y in pts}
    assert len(cells) == 64 and all(box.contains(q) for q in pts)
    with pytest.raises(ValueError):
        stratified_points(box, 4, RngSeed(0))


def test_gamma_zero_box_is_fast():
    p = FastSlowParams(2, 2, 0.2, 0.0, inner=50, dt_factor=1e-3)
    box = dyadic_box(Z, 2, 2)
    f = local_field(box.center, 7.5 * p.s, p, RngSeed(0))
    res = classify_box(box, "fast", f, p, 8, RngSeed(0))
    assert res.p_hat == 1.0 and res.decision is True
    with pytest.raises(ValueError):
        classify_box(box, "very_fast", f, p, 8, RngSeed(0))


def _flat(p, center, side):
    return constant_field(p, center, side, 0.0)


def test_crossing_is_manhattan_when_every_box_is_fast():
    p = FastSlowParams(2, 2, 0.2, 0.0)
    x, y = TorusPoint(1.01, 1.01), TorusPoint(1.01 + 5 * p.s, 1.01 + 3 * p.s)
    f = _flat(p, TorusPoint(1.2, 1.2), 20 * p.s)
    path = find_fast_crossing(f, x, y, p, is_fast=lambda b: True)
    a, b = box_index(x, 2, 2), box_index(y, 2, 2)
    assert path.length == abs(a[0] - b[0]) + abs(a[1] - b[1]) + 1
    assert path.boxes[0] == a and path.boxes[-1] == b
    for u, v in zip(path.boxes, path.boxes[1:]):
        assert abs(u[0] - v[0]) + abs(u[1] - v[1]) == 1
    assert path.within_bound


def test_crossing_detours_around_and_fails_on_walls():
    p = FastSlowParams(2, 2, 0.2, 0.0)
    x, y = TorusPoint(1.01, 1.01), TorusPoint(1.01 + 4 * p.s, 1.01)
    f = _flat(p, TorusPoint(1.1, 1.0), 24 * p.s)
    a = box_index(x, 2, 2)
    wall_x = a[0] + 2

    def partial_wall(b):
        i, j = box_index(b.center, 2, 2)
        return not (i == wall_x and abs(j - a[1]) <= 1)

    detour = find_fast_crossing(f, x, y, p, is_fast=partial_wall, margin=2)
    assert detour.length == 4 + 1 + 4

    def full_wall(b):
        return box_index(b.center, 2, 2)[0] != wall_x

    assert find_fast_crossing(f, x, y, p, is_fast=full_wall, margin=2) is None


def test_blocking_score_extremes():
    p = FastSlowParams(2, 2, 0.2, 0.0)
    x = TorusPoint(1.01, 1.01)
    f = _flat(p, x, 16 * p.s)
    free = slow_blocking_score(f, x, 3 * p.s, p, is_slow=lambda b: True)
    assert free.score == 0 and free.slow_on_path == free.path_length
    blocked = slow_blocking_score(f, x, 3 * p.s, p, is_slow=lambda b: False)
    assert blocked.score == blocked.path_length == 4


def test_blocking_score_monotone_in_eps3():
    p = FastSlowParams(2, 2, 0.2, 0.0)
    x = TorusPoint(1.01, 1.01)
    f = _flat(p, x, 24 * p.s)
    frac = np.random.default_rng(0).random((64, 64))  # fixed slow-area fraction per box

    def score(eps3):
        return slow_blocking_score(f, x, 5 * p.s, p, is_slow=lambda b: frac[box_index(b.center, 2, 2)] >= eps3).score

    scores = [score(e) for e in (0.0, 0.2, 0.4, 0.6, 0.8, 1.01)]
    assert scores[0] == 0
    assert all(a <= b for a, b in zip(scores, scores[1:]))


def test_blocking_score_zero_when_eps2_is_zero():
    p = FastSlowParams(2, 2, 0.5, 0.0, inner=30, dt_factor=1e-3, eps2_override=0.0)
    x = TorusPoint(1.01, 1.01)
    f = _flat(p, x, 10 * p.s)
    assert slow_blocking_score(f, x, 1.5 * p.s, p, seed=RngSeed(0)).score == 0


def test_constructed_point_is_fast_and_slow():
    p = FastSlowParams(2, 2, 0.5, 0.3, inner=400, dt_factor=1e-3)
    fast, slow = fast_and_slow_example(p, RngSeed(0), integrand=3.0)
    assert fast.decision is True and slow.decision is True
    with pytest.raises(ValueError):
        fast_and_slow_example(with_overrides(p, gamma=0.0))


def test_box_index_round_trip():
    for a, b in [(0, 0), (5, 9), (63, 63)]:
        box = box_from_index(a, b, 2, 2)
        assert box_index(box.center, 2, 2) == (a, b)
