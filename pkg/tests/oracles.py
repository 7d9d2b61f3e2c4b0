"""Independent reference computations used by the tests.

Nothing here imports the package under test; each function re-derives its
answer from closed-form geometry, kinematics or plain numeric integration.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial.transform import Rotation


def trapezoid_times(distance: float, v_max: float, a_max: float) -> tuple[float, float, float]:
    """(t_acc, t_cruise, t_total) from the rest-to-rest bang-coast-bang equations."""
    d = abs(distance)
    if d == 0:
        return 0.0, 0.0, 0.0
    if d * a_max >= v_max * v_max:
        t_acc = v_max / a_max
        return t_acc, d / v_max - t_acc, d / v_max + t_acc
    t_acc = math.sqrt(d / a_max)
    return t_acc, 0.0, 2 * t_acc


def integrate_velocity(velocity, breakpoints, n: int = 201) -> float:
    """Composite Simpson integral of |velocity(t)| taken piece by piece.

    ``breakpoints`` must include every kink of the velocity curve so each
    piece is smooth; on the linear pieces of a trapezoid Simpson is exact.
    """
    if n % 2 == 0:
        n += 1
    total = 0.0
    for t0, t1 in zip(breakpoints, breakpoints[1:]):
        if t1 <= t0:
            continue
        ts = np.linspace(t0, t1, n)
        vs = np.array([abs(velocity(t)) for t in ts])
        h = (t1 - t0) / (n - 1)
        total += h / 3 * (vs[0] + vs[-1] + 4 * vs[1:-1:2].sum() + 2 * vs[2:-1:2].sum())
    return float(total)


def dh_matrix(a, alpha, d, theta) -> np.ndarray:
    ca, sa, ct, st = math.cos(alpha), math.sin(alpha), math.cos(theta), math.sin(theta)
    return np.array([
        [ct, -st * ca, st * sa, a * ct],
        [st, ct * ca, -ct * sa, a * st],
        [0.0, sa, ca, d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def pose_matrix(vec6) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = Rotation.from_rotvec(vec6[3:6]).as_matrix()
    T[:3, 3] = vec6[:3]
    return T


def chain_fk(dh_rows, q, base=None, tool=None) -> np.ndarray:
    """Standard DH product; ``dh_rows`` is a list of (a, alpha, d, theta_offset)."""
    T = pose_matrix(base) if base is not None else np.eye(4)
    for (a, alpha, d, off), qi in zip(dh_rows, q):
        T = T @ dh_matrix(a, alpha, d, qi + off)
    if tool is not None:
        T = T @ pose_matrix(tool)
    return T


def finite_difference_jacobian(fk_matrix, q, h: float = 1e-6) -> np.ndarray:
    """Central differences: position rows from translation, angular rows from dR R^T."""
    q = np.asarray(q, dtype=float)
    J = np.zeros((6, q.size))
    for i in range(q.size):
        dq = np.zeros(q.size)
        dq[i] = h
        Tp, Tm = fk_matrix(q + dq), fk_matrix(q - dq)
        J[:3, i] = (Tp[:3, 3] - Tm[:3, 3]) / (2 * h)
        # angular velocity from the skew part of dR/dq R^T
        W = (Tp[:3, :3] - Tm[:3, :3]) / (2 * h) @ fk_matrix(q)[:3, :3].T
        J[3:, i] = [W[2, 1], W[0, 2], W[1, 0]]
    return J


def spring_force(plane_z: float, stiffness: float, z: float) -> float:
    return stiffness * max(0.0, plane_z - z)


def stopping_distance(v: float, decel: float) -> float:
    return v * v / (2 * decel)


def planar_two_link(q1: float, q2: float, a1: float = 1.0, a2: float = 1.0) -> tuple[float, float]:
    return a1 * math.cos(q1) + a2 * math.cos(q1 + q2), a1 * math.sin(q1) + a2 * math.sin(q1 + q2)
