"""Motion commands integrated one control tick at a time.

Each command owns its progress; ``step`` moves the controller's joint state
by one tick and returns an ``Outcome`` once finished, ``None`` otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..kinematics import Chain, Pose6, dls_step, fk_matrix, matrix_to_rotvec, rotvec_to_matrix
from ..layout import ErrorCode
from ..motion import SyncSegment, plan_trapezoid, sample_profile, servo_step

# MOVEL completion: per-tick IK residual accepted as arrived
ARRIVAL_TOL = 1e-6
# MOVEL completion after the reference has stopped: ticks allowed to settle, residual required
SETTLE_TICKS = 250
SETTLE_TOL = 1e-4
# MOVEL divergence: position error above this for DIVERGE_TICKS consecutive ticks
DIVERGE_DISTANCE = 0.05
DIVERGE_TICKS = 100
# moveUntilContact internals; deliberately not parameters
CONTACT_THRESHOLD = 10.0
CONTACT_DECEL = 2.0
CONTACT_TRACKING_LIMIT = 0.01


@dataclass
class Outcome:
    ok: bool
    code: ErrorCode = ErrorCode.NONE
    result: int = 0


class JointState:
    """Mutable joint position/velocity owned by the control loop."""

    def __init__(self, chain: Chain, q):
        self.chain = chain
        self.q = np.array(q, dtype=float)
        self.qd = np.zeros(chain.n)

    def move_to(self, q_next: np.ndarray, dt: float) -> None:
        q_next = np.clip(q_next, self.chain.q_min, self.chain.q_max)
        self.qd = (q_next - self.q) / dt
        self.q = q_next

    def hold(self) -> None:
        self.qd = np.zeros_like(self.q)


def rate_limited(chain: Chain, q: np.ndarray, q_next: np.ndarray, dt: float) -> np.ndarray:
    """Scale the step uniformly so no joint exceeds its velocity limit."""
    dq = q_next - q
    limit = chain.v_max * dt
    big = np.abs(dq) > limit
    if not big.any():
        return q_next
    scale = float(np.min(limit[big] / np.abs(dq[big])))
    return q + dq * scale


class Command:
    def __init__(self, seq: int, sync: bool = True):
        self.seq = seq
        self.sync = sync

    def step(self, js: JointState, dt: float, wrench: np.ndarray) -> Outcome | None:
        raise NotImplementedError


class MoveJ(Command):
    def __init__(self, seq, sync, js: JointState, target, speed, accel):
        super().__init__(seq, sync)
        chain = js.chain
        v = np.minimum(speed, chain.v_max)
        a = np.minimum(accel, chain.a_max)
        self.segment = SyncSegment(js.q, target, v, a)
        self.t = 0.0

    def step(self, js, dt, wrench):
        self.t += dt
        q, qd = self.segment.sample(self.t)
        js.q = np.clip(q, js.chain.q_min, js.chain.q_max)
        js.qd = qd
        if self.t >= self.segment.duration:
            js.hold()
            return Outcome(True)
        return None


class _Tracking(Command):
    """Cartesian reference tracked by one damped-least-squares iteration per tick."""

    def track(self, js: JointState, T_ref: np.ndarray, dt: float) -> np.ndarray:
        q_next, e = dls_step(js.chain, js.q, T_ref)
        js.move_to(rate_limited(js.chain, js.q, q_next, dt), dt)
        return e


class MoveL(_Tracking):
    def __init__(self, seq, sync, js: JointState, target: Pose6, speed, accel):
        super().__init__(seq, sync)
        T0 = fk_matrix(js.chain, js.q)
        self.p0 = T0[:3, 3].copy()
        self.R0 = T0[:3, :3].copy()
        self.dp = target.position - self.p0
        self.dw = matrix_to_rotvec(target.as_matrix()[:3, :3] @ self.R0.T)
        self.T_target = target.as_matrix()
        length = float(np.linalg.norm(self.dp))
        # pure reorientation is timed on the angle
        if length < 1e-9:
            length = float(np.linalg.norm(self.dw))
        self.length = length
        self.profile = plan_trapezoid(length, speed, accel)
        self.t = 0.0
        self.settle = 0
        self.far_ticks = 0

    def reference(self, t: float) -> np.ndarray:
        if self.length == 0.0 or t >= self.profile.t_total:
            return self.T_target
        s, _ = sample_profile(self.profile, t)
        f = s / self.length
        T = np.eye(4)
        T[:3, :3] = rotvec_to_matrix(f * self.dw) @ self.R0
        T[:3, 3] = self.p0 + f * self.dp
        return T

    def step(self, js, dt, wrench):
        self.t += dt
        T_ref = self.reference(self.t)
        q_before = js.q
        e = self.track(js, T_ref, dt)
        err = float(np.linalg.norm(e))
        self.far_ticks = self.far_ticks + 1 if np.linalg.norm(e[:3]) > DIVERGE_DISTANCE else 0
        if self.far_ticks >= DIVERGE_TICKS:
            js.hold()
            return Outcome(False, ErrorCode.TRACKING_DIVERGED)
        if self.t < self.profile.t_total:
            return None
        if err <= ARRIVAL_TOL:
            # residual measured before this tick's correction; keep the converged joints
            js.q = q_before
            js.hold()
            return Outcome(True)
        self.settle += 1
        if self.settle >= SETTLE_TICKS:
            js.hold()
            if err < SETTLE_TOL:
                return Outcome(True)
            return Outcome(False, ErrorCode.TRACKING_DIVERGED)
        return None


class ServoJ(Command):
    """Streaming target; never completes on its own."""

    def __init__(self, seq, target):
        super().__init__(seq, sync=False)
        self.target = np.asarray(target, dtype=float)

    def step(self, js, dt, wrench):
        js.move_to(servo_step(js.q, self.target, js.chain.v_max, dt), dt)
        return None


class StopJ(Command):
    """Linear per-joint velocity ramp to zero at ``decel``."""

    def __init__(self, seq, js: JointState, decel: float, result: int = 0):
        super().__init__(seq, sync=True)
        self.decel = decel
        self.result = result
        self.v0 = js.qd.copy()
        self.ticks_needed = None
        self.k = 0

    def step(self, js, dt, wrench):
        if self.ticks_needed is None:
            self.ticks_needed = np.array(
                [math.ceil(abs(v) / (self.decel * dt) - 1e-9) if v != 0.0 else 0 for v in self.v0])
        if not self.ticks_needed.any():
            js.hold()
            return Outcome(True, result=self.result)
        v_prev = np.sign(self.v0) * np.maximum(0.0, np.abs(self.v0) - self.decel * dt * self.k)
        self.k += 1
        v_next = np.sign(self.v0) * np.maximum(0.0, np.abs(self.v0) - self.decel * dt * self.k)
        q_next = np.clip(js.q + 0.5 * (v_prev + v_next) * dt, js.chain.q_min, js.chain.q_max)
        js.q = q_next
        js.qd = v_next
        if self.k >= self.ticks_needed.max():
            js.hold()
            return Outcome(True, result=self.result)
        return None


class MoveUntilContact(_Tracking):
    """Constant base-frame twist until the sensed wrench norm trips the fixed threshold."""

    def __init__(self, seq, sync, js: JointState, twist):
        super().__init__(seq, sync)
        twist = np.asarray(twist, dtype=float)
        self.v = twist[:3]
        self.w = twist[3:]
        T = fk_matrix(js.chain, js.q)
        self.T_ref = T
        self.stop: StopJ | None = None

    def step(self, js, dt, wrench):
        if self.stop is not None:
            return self.stop.step(js, dt, wrench)
        if float(np.linalg.norm(wrench)) > CONTACT_THRESHOLD:
            return self._brake(js, dt, wrench, contact=True)
        T = self.T_ref.copy()
        T[:3, 3] = T[:3, 3] + self.v * dt
        T[:3, :3] = rotvec_to_matrix(self.w * dt) @ T[:3, :3]
        self.T_ref = T
        e = self.track(js, T, dt)
        at_limit = np.any(js.q <= js.chain.q_min) or np.any(js.q >= js.chain.q_max)
        if at_limit or float(np.linalg.norm(e)) > CONTACT_TRACKING_LIMIT:
            return self._brake(js, dt, wrench, contact=False)
        return None

    def _brake(self, js, dt, wrench, contact: bool) -> Outcome | None:
        self.stop = StopJ(self.seq, js, CONTACT_DECEL, result=int(contact))
        return self.stop.step(js, dt, wrench)
