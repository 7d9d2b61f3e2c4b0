"""Trapezoidal velocity profiles, waypoint path time-parameterization and the
servo rate-clamp law."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class TrapProfile:
    """Rest-to-rest profile over ``distance``; the sign is carried by ``distance``.

    Triangular profiles have ``t_cruise == 0`` and ``v_peak < v_max``.
    """

    distance: float
    v_peak: float
    accel: float
    t_acc: float
    t_cruise: float
    t_total: float

    @property
    def sign(self) -> float:
        return -1.0 if self.distance < 0 else 1.0


def plan_trapezoid(distance: float, v_max: float, a_max: float) -> TrapProfile:
    if v_max <= 0 or a_max <= 0:
        raise ValueError(f"limits must be positive (v_max={v_max}, a_max={a_max})")
    d = abs(distance)
    if d == 0.0:
        return TrapProfile(distance, 0.0, a_max, 0.0, 0.0, 0.0)
    if d >= v_max * v_max / a_max:
        t_acc = v_max / a_max
        t_cruise = (d - v_max * v_max / a_max) / v_max
        return TrapProfile(distance, v_max, a_max, t_acc, t_cruise, 2.0 * t_acc + t_cruise)
    v_peak = math.sqrt(d * a_max)
    t_acc = v_peak / a_max
    return TrapProfile(distance, v_peak, a_max, t_acc, 0.0, 2.0 * t_acc)


def sample_profile(profile: TrapProfile, t: float) -> tuple[float, float]:
    """Position and velocity at time ``t`` (clamped to the final rest state)."""
    if t < 0:
        raise ValueError("t must be non-negative")
    p = profile
    if t >= p.t_total:
        return p.distance, 0.0
    a, v = p.accel, p.v_peak
    if t < p.t_acc:
        s, sd = 0.5 * a * t * t, a * t
    elif t < p.t_acc + p.t_cruise:
        s, sd = 0.5 * a * p.t_acc ** 2 + v * (t - p.t_acc), v
    else:
        tr = p.t_total - t
        s, sd = abs(p.distance) - 0.5 * a * tr * tr, a * tr
    return p.sign * s, p.sign * sd


_LIMIT_CAP = 1e150


class SyncSegment:
    """Straight joint-space segment from ``q0`` to ``q1``.

    All joints share one normalized trapezoid, so the path stays a straight
    line, and every joint respects its own velocity/acceleration limit.
    """

    def __init__(self, q0, q1, v_max, a_max):
        self.q0 = np.asarray(q0, dtype=float)
        self.q1 = np.asarray(q1, dtype=float)
        if self.q0.shape != self.q1.shape:
            raise ValueError("segment endpoints differ in dimension")
        self.delta = self.q1 - self.q0
        v_max = np.broadcast_to(np.asarray(v_max, dtype=float), self.delta.shape)
        a_max = np.broadcast_to(np.asarray(a_max, dtype=float), self.delta.shape)
        moving = self.delta != 0.0
        if not moving.any():
            self.profile = plan_trapezoid(0.0, 1.0, 1.0)
        else:
            span = np.abs(self.delta[moving])
            # subnormal spans would overflow the normalized limits; cap keeps v*v finite
            with np.errstate(over="ignore"):
                v = min(float(np.min(v_max[moving] / span)), _LIMIT_CAP)
                a = min(float(np.min(a_max[moving] / span)), _LIMIT_CAP)
            self.profile = plan_trapezoid(1.0, v, a)

    @property
    def duration(self) -> float:
        return self.profile.t_total

    def sample(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        if t >= self.duration:
            return self.q1.copy(), np.zeros_like(self.q1)
        s, sd = sample_profile(self.profile, t)
        return self.q0 + self.delta * s, self.delta * sd


@dataclass
class SampledTrajectory:
    dt: float
    points: list[np.ndarray]
    velocities: list[np.ndarray]
    times: list[float]
    # index into ``points`` of every waypoint
    waypoint_indices: list[int] = field(default_factory=list)

    @property
    def duration(self) -> float:
        return self.times[-1]


def parameterize_path(waypoints, v_max, a_max, dt: float) -> SampledTrajectory:
    """Time-parameterize a joint-space waypoint path with a full stop at every waypoint.

    Samples fall on multiples of ``dt`` within each segment; the final sample of
    a segment is the waypoint itself even when the segment time is not a
    multiple of ``dt``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if len(waypoints) == 0:
        raise ValueError("empty path")
    wps = [np.asarray(w, dtype=float).reshape(-1) for w in waypoints]
    if len(wps) < 2:
        raise ValueError("a path needs at least two waypoints")
    dim = wps[0].shape[0]
    if any(w.shape[0] != dim for w in wps):
        raise ValueError("waypoints differ in dimension")
    v_max = np.broadcast_to(np.asarray(v_max, dtype=float), (dim,))
    a_max = np.broadcast_to(np.asarray(a_max, dtype=float), (dim,))
    if np.any(v_max <= 0) or np.any(a_max <= 0):
        raise ValueError("limits must be positive")

    traj = SampledTrajectory(dt, [wps[0].copy()], [np.zeros(dim)], [0.0], [0])
    t_offset = 0.0
    for q0, q1 in zip(wps[:-1], wps[1:]):
        seg = SyncSegment(q0, q1, v_max, a_max)
        steps = max(1, math.ceil(seg.duration / dt - 1e-9)) if seg.duration > 0 else 0
        for k in range(1, steps + 1):
            t = min(k * dt, seg.duration)
            q, qd = seg.sample(t) if k < steps else (q1.copy(), np.zeros(dim))
            traj.points.append(q)
            traj.velocities.append(qd)
            traj.times.append(t_offset + t)
        t_offset += seg.duration
        traj.waypoint_indices.append(len(traj.points) - 1)
    return traj


def servo_step(q, q_target, v_max, dt: float) -> np.ndarray:
    """Move each joint toward its target by at most ``v_max * dt``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    q = np.asarray(q, dtype=float)
    q_target = np.asarray(q_target, dtype=float)
    if q.shape != q_target.shape:
        raise ValueError(f"dimension mismatch: {q.shape} vs {q_target.shape}")
    limit = np.broadcast_to(np.asarray(v_max, dtype=float), q.shape) * dt
    return q + np.clip(q_target - q, -limit, limit)
