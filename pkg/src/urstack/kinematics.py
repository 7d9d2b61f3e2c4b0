"""Serial-chain kinematics: standard DH forward kinematics, geometric Jacobian,
rotation-vector poses and damped-least-squares inverse kinematics."""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_DAMPING = 0.05
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 200


@dataclass(frozen=True)
class Pose6:
    """Position (m) plus rotation vector (axis * angle, rad)."""

    position: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3))

    @classmethod
    def from_vector(cls, v) -> "Pose6":
        v = np.asarray(v, dtype=float)
        return cls(v[:3], v[3:6])

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Pose6":
        return cls(T[:3, 3].copy(), matrix_to_rotvec(T[:3, :3]))

    @classmethod
    def identity(cls) -> "Pose6":
        return cls(np.zeros(3), np.zeros(3))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.rotation])

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = rotvec_to_matrix(self.rotation)
        T[:3, 3] = self.position
        return T


@dataclass(frozen=True)
class DHJoint:
    a: float
    alpha: float
    d: float
    theta_offset: float = 0.0
    q_min: float = -2 * math.pi
    q_max: float = 2 * math.pi
    v_max: float = math.pi
    a_max: float = 10.0

    def __post_init__(self):
        if not self.q_min < self.q_max:
            raise ValueError(f"joint limits inverted: {self.q_min} >= {self.q_max}")
        if self.v_max <= 0 or self.a_max <= 0:
            raise ValueError("joint velocity and acceleration limits must be positive")


@dataclass(frozen=True)
class Chain:
    joints: tuple[DHJoint, ...]
    base: Pose6 = field(default_factory=Pose6.identity)
    tool: Pose6 = field(default_factory=Pose6.identity)
    name: str = "chain"
    home: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        if not self.joints:
            raise ValueError("a chain needs at least one joint")
        if self.home is not None and len(self.home) != len(self.joints):
            raise ValueError("home configuration does not match joint count")

    @property
    def n(self) -> int:
        return len(self.joints)

    @property
    def q_min(self) -> np.ndarray:
        return np.array([j.q_min for j in self.joints])

    @property
    def q_max(self) -> np.ndarray:
        return np.array([j.q_max for j in self.joints])

    @property
    def v_max(self) -> np.ndarray:
        return np.array([j.v_max for j in self.joints])

    @property
    def a_max(self) -> np.ndarray:
        return np.array([j.a_max for j in self.joints])

    @property
    def reach(self) -> float:
        """Upper bound on TCP distance from the base origin."""
        return (sum(abs(j.a) + abs(j.d) for j in self.joints)
                + float(np.linalg.norm(self.tool.position)))

    def home_q(self) -> np.ndarray:
        return np.array(self.home if self.home is not None else np.zeros(self.n), dtype=float)


# ---------------------------------------------------------------------------
# Rotations

def _skew(w: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def rotvec_to_matrix(rv) -> np.ndarray:
    rv = np.asarray(rv, dtype=float)
    theta = float(np.linalg.norm(rv))
    if theta < 1e-12:
        return np.eye(3) + _skew(rv)
    k = _skew(rv / theta)
    return np.eye(3) + math.sin(theta) * k + (1.0 - math.cos(theta)) * (k @ k)


def matrix_to_rotvec(R: np.ndarray) -> np.ndarray:
    """Rotation vector with angle in [0, pi]."""
    R = np.asarray(R, dtype=float)
    cos_t = min(1.0, max(-1.0, (np.trace(R) - 1.0) / 2.0))
    vee = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    sin_t = 0.5 * float(np.linalg.norm(vee))
    theta = math.atan2(sin_t, cos_t)
    if theta < 1e-6:
        # series of theta / (2 sin theta)
        return 0.5 * (1.0 + theta * theta / 6.0) * vee
    if theta < math.pi - 1e-3:
        return theta / (2.0 * sin_t) * vee
    # near pi the skew part vanishes; take the axis from the symmetric part,
    # using the column of its largest diagonal element
    S = (R + R.T) / 2.0 - cos_t * np.eye(3)
    i = int(np.argmax(np.diag(S)))
    axis = S[:, i] / math.sqrt(S[i, i] * (1.0 - cos_t))
    axis /= np.linalg.norm(axis)
    if np.dot(axis, vee) < 0:
        axis = -axis
    return theta * axis


def canonical_rotvec(rv) -> np.ndarray:
    return matrix_to_rotvec(rotvec_to_matrix(rv))


# ---------------------------------------------------------------------------
# Forward kinematics

def _dh(a: float, alpha: float, d: float, theta: float) -> np.ndarray:
    ct, st = math.cos(theta), math.sin(theta)
    ca, sa = math.cos(alpha), math.sin(alpha)
    return np.array([
        [ct, -st * ca, st * sa, a * ct],
        [st, ct * ca, -ct * sa, a * st],
        [0.0, sa, ca, d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def _check_q(chain: Chain, q) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(-1)
    if q.shape[0] != chain.n:
        raise ValueError(f"expected {chain.n} joint values, got {q.shape[0]}")
    return q


def frames(chain: Chain, q) -> list[np.ndarray]:
    """Base frame, each joint frame in turn, and finally the TCP frame."""
    q = _check_q(chain, q)
    T = chain.base.as_matrix()
    out = [T]
    for joint, qi in zip(chain.joints, q):
        T = T @ _dh(joint.a, joint.alpha, joint.d, qi + joint.theta_offset)
        out.append(T)
    out.append(T @ chain.tool.as_matrix())
    return out


def fk_matrix(chain: Chain, q) -> np.ndarray:
    return frames(chain, q)[-1]


def fk(chain: Chain, q) -> Pose6:
    return Pose6.from_matrix(fk_matrix(chain, q))


def jacobian(chain: Chain, q) -> np.ndarray:
    """Geometric Jacobian about the TCP point in the base frame (6 x n)."""
    return _jacobian_from_frames(chain, frames(chain, q))


def pose_error(target: Pose6, current: Pose6) -> np.ndarray:
    """Twist taking ``current`` onto ``target``: position delta, then base-frame rotation vector."""
    lin = target.position - current.position
    if np.array_equal(target.rotation, current.rotation):
        return np.concatenate([lin, np.zeros(3)])
    R = rotvec_to_matrix(target.rotation) @ rotvec_to_matrix(current.rotation).T
    return np.concatenate([lin, matrix_to_rotvec(R)])


def _pose_error_matrix(T_target: np.ndarray, T_current: np.ndarray) -> np.ndarray:
    lin = T_target[:3, 3] - T_current[:3, 3]
    return np.concatenate([lin, matrix_to_rotvec(T_target[:3, :3] @ T_current[:3, :3].T)])


# ---------------------------------------------------------------------------
# Inverse kinematics

@dataclass
class IKResult:
    q: np.ndarray
    converged: bool
    iterations: int
    error: float
    error_history: list[float] = field(default_factory=list)


def dls_step(chain: Chain, q, T_target: np.ndarray, damping: float = DEFAULT_DAMPING):
    """One clamped damped-least-squares update. Returns (q_next, error twist at q)."""
    q = _check_q(chain, q)
    Ts = frames(chain, q)
    e = _pose_error_matrix(T_target, Ts[-1])
    J = _jacobian_from_frames(chain, Ts)
    dq = np.linalg.solve(J.T @ J + damping ** 2 * np.eye(chain.n), J.T @ e)
    return np.clip(q + dq, chain.q_min, chain.q_max), e


def _jacobian_from_frames(chain: Chain, Ts: list[np.ndarray]) -> np.ndarray:
    stack = np.stack(Ts[:chain.n])
    z = stack[:, :3, 2]
    r = Ts[-1][:3, 3] - stack[:, :3, 3]
    J = np.empty((6, chain.n))
    # explicit cross product; np.cross dominates the per-tick cost otherwise
    J[0] = z[:, 1] * r[:, 2] - z[:, 2] * r[:, 1]
    J[1] = z[:, 2] * r[:, 0] - z[:, 0] * r[:, 2]
    J[2] = z[:, 0] * r[:, 1] - z[:, 1] * r[:, 0]
    J[3:] = z.T
    return J


def ik_dls(chain: Chain, q_seed, target: Pose6, tol: float = DEFAULT_TOL,
           max_iter: int = DEFAULT_MAX_ITER, damping: float = DEFAULT_DAMPING) -> IKResult:
    """Damped-least-squares IK from ``q_seed``.

    Non-convergence is reported through ``IKResult.converged``; it never raises.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if damping <= 0:
        raise ValueError("damping must be positive")
    q = _check_q(chain, q_seed).copy()
    T_target = target.as_matrix()
    history = []
    for it in range(max_iter + 1):
        Ts = frames(chain, q)
        e = _pose_error_matrix(T_target, Ts[-1])
        err = float(np.linalg.norm(e))
        history.append(err)
        if err <= tol:
            return IKResult(q, True, it, err, history)
        if it == max_iter:
            break
        J = _jacobian_from_frames(chain, Ts)
        dq = np.linalg.solve(J.T @ J + damping ** 2 * np.eye(chain.n), J.T @ e)
        q = np.clip(q + dq, chain.q_min, chain.q_max)
    return IKResult(q, False, max_iter, history[-1], history)


# ---------------------------------------------------------------------------
# Chain configuration files

CHAIN_DIR = Path(__file__).parent / "chains"


def _floats(text: str, n: int | None = None) -> list[float]:
    vals = [float(_eval_angle(t)) for t in text.replace(",", " ").split()]
    if n is not None and len(vals) != n:
        raise ValueError(f"expected {n} numbers, got {text!r}")
    return vals


def _eval_angle(token: str) -> float:
    """Numbers may carry a ``pi`` factor, e.g. ``pi/2``, ``-pi`` or ``0.5pi``."""
    t = token.strip().lower().replace("*", "")
    if "pi" not in t:
        return float(t)
    num, _, den = t.partition("/")
    coeff = num.replace("pi", "")
    coeff = -1.0 if coeff == "-" else 1.0 if coeff in ("", "+") else float(coeff)
    value = coeff * math.pi
    return value / float(den) if den else value


def load_chain(path: str | Path) -> Chain:
    """Read a chain from an INI file with a ``[chain]`` section and ``[joint N]`` sections."""
    path = Path(path)
    if not path.exists() and (CHAIN_DIR / path.name).exists():
        path = CHAIN_DIR / path.name
    cfg = configparser.ConfigParser()
    if not cfg.read(path):
        raise FileNotFoundError(f"chain file not found: {path}")
    head = cfg["chain"] if cfg.has_section("chain") else {}
    joints = []
    for section in cfg.sections():
        if not section.startswith("joint"):
            continue
        s = cfg[section]
        joints.append(DHJoint(
            a=_eval_angle(s.get("a", "0")),
            alpha=_eval_angle(s.get("alpha", "0")),
            d=_eval_angle(s.get("d", "0")),
            theta_offset=_eval_angle(s.get("theta_offset", "0")),
            q_min=_eval_angle(s.get("q_min", "-2pi")),
            q_max=_eval_angle(s.get("q_max", "2pi")),
            v_max=_eval_angle(s.get("v_max", "pi")),
            a_max=_eval_angle(s.get("a_max", "10")),
        ))
    base = Pose6.from_vector(_floats(head.get("base", "0 0 0 0 0 0"), 6))
    tool = Pose6.from_vector(_floats(head.get("tool", "0 0 0 0 0 0"), 6))
    home = tuple(_floats(head["home"], len(joints))) if "home" in head else None
    return Chain(tuple(joints), base, tool, head.get("name", path.stem), home)
