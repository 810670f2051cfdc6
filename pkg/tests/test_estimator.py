import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from merge_planner.estimator import (AccelBounds, BoundEstimator, EstimatorError, InformationSet,
                                     init_bounds, predict_occupancy, predict_reachable,
                                     rollout_positions, update_bounds, worst_case_bounds)
from merge_planner.models import Footprint, SvState, VehicleGeometry
from merge_planner.polytope import Polytope2, from_box, project_axis

GEOM = VehicleGeometry()
MUG = 0.71 * 9.8


def test_init_bounds_examples():
    assert init_bounds(InformationSet([-0.3, 0.2, 1.1])) == AccelBounds(-0.3, 1.1)
    assert init_bounds(InformationSet([0.0])) == AccelBounds(0, 0)
    with pytest.raises(EstimatorError):
        init_bounds(InformationSet([]))


def test_init_bounds_uniform_order_statistics():
    rng = np.random.default_rng(0)
    hits = 0
    for _ in range(200):
        b = init_bounds(InformationSet(list(rng.uniform(-2, 2, 1000))))
        assert -2 <= b.a_min <= b.a_max <= 2
        hits += max(b.a_min + 2, 2 - b.a_max) < 0.02
    assert hits / 200 >= 0.99


def test_update_bounds_examples():
    assert update_bounds(AccelBounds(-1, 1), -2) == AccelBounds(-2, 1)
    assert update_bounds(AccelBounds(-1, 1), 0.5) == AccelBounds(-1, 1)
    b = AccelBounds(0, 0)
    for a in (0.3, -0.7, 2.1, 0):
        b = update_bounds(b, a)
    assert b == AccelBounds(-0.7, 2.1)
    with pytest.raises(EstimatorError):
        update_bounds(b, math.nan)


def test_worst_case_examples():
    b = worst_case_bounds(0.71, 9.8)
    assert (b.a_min, b.a_max) == pytest.approx((-6.958, 6.958))
    assert worst_case_bounds(1, 1) == AccelBounds(-1, 1)
    with pytest.raises(EstimatorError):
        worst_case_bounds(0, 9.8)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-MUG, MUG), min_size=1, max_size=60))
def test_monotone_growth_and_containment(stream):
    est = BoundEstimator([0.0])
    prev = est.bounds
    wc = worst_case_bounds(0.71, 9.8)
    for a in stream:
        cur = est.observe(a)
        assert prev.is_subset(cur)
        assert cur.is_subset(wc)
        assert cur.contains(a)
        prev = cur


def test_bound_estimator_keeps_samples():
    est = BoundEstimator([0.5, -0.5], keep_samples=True)
    est.observe(1.0)
    assert est.info.samples == [0.5, -0.5, 1.0]
    assert BoundEstimator([0.0]).info is None


# --- reachability ----------------------------------------------------------

def test_reachable_one_step_segment():
    R = predict_reachable(SvState(0, 30), AccelBounds(-1, 1), 1, 50, 0.25)[0]
    got = {tuple(np.round(v, 12)) for v in R.vertices}
    assert got == {(7.46875, 29.75), (7.53125, 30.25)}


def test_reachable_speed_clip():
    R = predict_reachable(SvState(0, 49.9), AccelBounds(0, 2), 1, 50, 0.25)[0]
    assert project_axis(R, 1) == pytest.approx((49.9, 50.0))


def test_reachable_zero_bounds_is_point_rollout():
    R = predict_reachable(SvState(100, 30), AccelBounds(0, 0), 20, 50, 0.25)
    for i, r in enumerate(R, start=1):
        np.testing.assert_allclose(r.vertices, [[100 + 7.5 * i, 30]])


def test_reachable_speed_inside_admissible():
    rng = np.random.default_rng(1)
    for _ in range(50):
        b = sorted(rng.uniform(-MUG, MUG, 2))
        x = SvState(0, rng.uniform(0, 50))
        for r in predict_reachable(x, AccelBounds(*b), 20, 50, 0.25):
            lo, hi = project_axis(r, 1)
            assert lo >= -1e-9 and hi <= 50 + 1e-9


def test_predict_occupancy_examples():
    seg = Polytope2.from_vertices([(7.46875, 29.75), (7.53125, 30.25)])
    occ = predict_occupancy([seg], GEOM, 6.0)[0]
    assert project_axis(occ, 0) == pytest.approx((5.31875, 9.68125))
    assert project_axis(occ, 1) == pytest.approx((5.1, 6.9))
    occ = predict_occupancy([Polytope2.point((100, 30))], GEOM, 6.0)[0]
    assert project_axis(occ, 0) == pytest.approx((97.85, 102.15))
    occ = predict_occupancy([seg], Footprint(0, 0), 6.0)[0]
    assert project_axis(occ, 0) == pytest.approx((7.46875, 7.53125))
    assert project_axis(occ, 1) == (6.0, 6.0)


def _soundness_run(x, bounds, rng, n_rollouts=1000, N=20, v_adm=50.0, T=0.25):
    reach = predict_reachable(x, bounds, N, v_adm, T)
    occ = predict_occupancy(reach, GEOM, 6.0)
    violations = 0
    for _ in range(n_rollouts):
        accels = rng.uniform(bounds.a_min, bounds.a_max, N)
        states = rollout_positions(x, accels, v_adm, T)
        for i, s in enumerate(states):
            if not reach[i].contains(s, 1e-9):
                violations += 1
            if not from_box((s[0], 6.0), (GEOM.l_veh / 2, GEOM.w_veh / 2)).is_subset(occ[i], 1e-9):
                violations += 1
    return violations


@pytest.mark.parametrize("x,bounds", [
    (SvState(812.5, 30.0), AccelBounds(-0.8, 0.9)),
    (SvState(0.0, 49.0), AccelBounds(-0.5, 3.0)),      # hits v_adm
    (SvState(0.0, 1.0), AccelBounds(-4.0, 0.2)),       # hits zero speed
    (SvState(0.0, 30.0), worst_case_bounds(0.71, 9.8)),
])
def test_reachability_soundness(x, bounds):
    assert _soundness_run(x, bounds, np.random.default_rng(2)) == 0


def test_containment_under_inclusion():
    rng = np.random.default_rng(3)
    wc = worst_case_bounds(0.71, 9.8)
    for _ in range(30):
        lo, hi = sorted(rng.uniform(-3, 3, 2))
        x = SvState(0, rng.uniform(0, 50))
        small = predict_reachable(x, AccelBounds(lo, hi), 20, 50, 0.25)
        big = predict_reachable(x, wc, 20, 50, 0.25)
        assert all(s.is_subset(b, 1e-9) for s, b in zip(small, big))
