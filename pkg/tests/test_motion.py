import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import integrate_velocity, trapezoid_times
from urstack.motion import SyncSegment, parameterize_path, plan_trapezoid, sample_profile, servo_step


def test_full_trapezoid():
    p = plan_trapezoid(2, 1, 1)
    assert (p.t_acc, p.t_cruise, p.t_total, p.v_peak) == (1.0, 1.0, 3.0, 1.0)
    assert p.t_total == pytest.approx(trapezoid_times(2, 1, 1)[2], abs=1e-12)


def test_triangular_profile():
    p = plan_trapezoid(0.5, 1, 1)
    assert p.t_cruise == 0.0
    assert p.v_peak == pytest.approx(math.sqrt(0.5), abs=1e-12)
    assert p.t_total == pytest.approx(2 * math.sqrt(0.5), abs=1e-12)


def test_zero_distance():
    assert plan_trapezoid(0, 1, 1).t_total == 0.0


@pytest.mark.parametrize("v, a", [(0, 1), (1, 0), (-1, 1)])
def test_non_positive_limits(v, a):
    with pytest.raises(ValueError, match="positive"):
        plan_trapezoid(1, v, a)


def test_sample_profile_examples():
    p = plan_trapezoid(2, 1, 1)
    assert sample_profile(p, 1.0) == (0.5, 1.0)
    assert sample_profile(p, 0.0) == (0.0, 0.0)
    assert sample_profile(p, p.t_total + 5) == (2, 0.0)


def test_negative_distance_carries_sign():
    p = plan_trapezoid(-2, 1, 1)
    assert p.t_total == 3.0
    assert sample_profile(p, 1.5) == (-1.0, -1.0)


def check_profile(distance, v_max, a_max):
    p = plan_trapezoid(distance, v_max, a_max)
    t_acc, t_cruise, t_total = trapezoid_times(distance, v_max, a_max)
    assert p.t_total == pytest.approx(t_total, abs=1e-9)
    assert p.t_total == pytest.approx(2 * p.t_acc + p.t_cruise, abs=1e-12)
    assert p.v_peak <= v_max + 1e-12
    travelled = integrate_velocity(lambda t: sample_profile(p, t)[1], [0.0, t_acc, t_acc + t_cruise, t_total])
    assert abs(travelled - abs(distance)) < 1e-9
    dt = 1e-3
    ts = np.arange(0.0, p.t_total + dt, dt)
    vs = np.array([sample_profile(p, t)[1] for t in ts])
    assert np.max(np.abs(vs)) <= v_max + 1e-12
    assert np.max(np.abs(np.diff(vs))) / dt <= a_max + 1e-6


@given(st.floats(-5, 5).filter(lambda d: abs(d) > 1e-6), st.floats(0.05, 3), st.floats(0.05, 5))
def test_profile_properties(distance, v_max, a_max):
    check_profile(distance, v_max, a_max)


def test_one_dof_path_examples():
    traj = parameterize_path([[0.0], [1.0]], 1.0, 1.0, 0.002)
    assert traj.duration == pytest.approx(2.0, abs=1e-12)
    assert max(abs(v[0]) for v in traj.velocities) == pytest.approx(1.0, abs=1e-9)
    assert traj.points[-1][0] == 1.0


def test_degenerate_path():
    traj = parameterize_path([[0.3, 0.2], [0.3, 0.2]], 1.0, 1.0, 0.002)
    assert traj.duration == 0.0
    np.testing.assert_array_equal(traj.points[-1], [0.3, 0.2])


def test_two_dof_joints_finish_together():
    seg = SyncSegment([0, 0], [1, 0.1], 1.0, 1.0)
    q, qd = seg.sample(seg.duration - 1e-12)
    np.testing.assert_allclose(q, [1, 0.1], atol=1e-9)
    assert seg.duration == pytest.approx(2.0, abs=1e-12)
    # neither joint arrives early
    q_mid, _ = seg.sample(0.9 * seg.duration)
    assert q_mid[0] < 1 and q_mid[1] < 0.1
    assert q_mid[1] == pytest.approx(0.1 * q_mid[0], abs=1e-12)


def test_path_argument_errors():
    with pytest.raises(ValueError, match="two waypoints"):
        parameterize_path([[0.0]], 1, 1, 0.002)
    with pytest.raises(ValueError, match="dimension"):
        parameterize_path([[0.0], [0.0, 1.0]], 1, 1, 0.002)
    with pytest.raises(ValueError, match="dt"):
        parameterize_path([[0.0], [1.0]], 1, 1, 0)


waypoint_lists = st.integers(1, 4).flatmap(
    lambda dim: st.lists(st.lists(st.floats(-2, 2), min_size=dim, max_size=dim), min_size=2, max_size=5))


@given(waypoint_lists, st.floats(0.2, 2), st.floats(0.2, 4))
def test_path_invariants(waypoints, v_max, a_max):
    dt = 0.01
    traj = parameterize_path(waypoints, v_max, a_max, dt)
    pts = np.array(traj.points)
    assert np.all(np.abs(np.diff(pts, axis=0)) <= v_max * dt + 1e-9)
    assert not np.any(traj.velocities[0]) and not np.any(traj.velocities[-1])
    for wp, idx in zip(waypoints, traj.waypoint_indices):
        np.testing.assert_allclose(traj.points[idx], wp, atol=1e-9)
        assert not np.any(traj.velocities[idx])
    assert np.all(np.diff(traj.times) >= 0)


def test_subnormal_segment_reaches_waypoint():
    traj = parameterize_path([[0.0], [5e-324]], 1.0, 1.0, 0.002)
    assert traj.points[-1][0] == 5e-324
    assert math.isfinite(traj.duration)


def test_servo_step_examples():
    assert servo_step([0.0], [1.0], 0.5, 0.1)[0] == pytest.approx(0.05, abs=1e-15)
    assert servo_step([0.99], [1.0], 0.5, 0.1)[0] == 1.0
    np.testing.assert_array_equal(servo_step([0.4, -0.2], [0.4, -0.2], 1.0, 0.002), [0.4, -0.2])


@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3), st.just(0.0) | st.floats(1e-3, 2)), min_size=1,
                max_size=6),
       st.floats(1e-4, 0.1))
def test_servo_step_contracts(joints, dt):
    q, target, v_max = (np.array(c) for c in zip(*joints))
    q_next = servo_step(q, target, v_max, dt)
    before = np.max(np.abs(q - target))
    after = np.max(np.abs(q_next - target))
    assert after <= before
    if after == before and before > 0:
        # steps are far above rounding, so equality means a zero rate stalled the farthest joint
        worst = np.abs(q - target) == before
        assert np.any(v_max[worst] == 0)


def test_servo_step_rejects_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        servo_step([0.0], [0.0, 1.0], 1.0, 0.1)
