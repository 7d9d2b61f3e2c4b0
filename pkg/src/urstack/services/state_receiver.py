"""Robot state publisher: joint, TCP pose, wrench and IO topics plus last-value services."""

from __future__ import annotations

import logging
import threading

from ..client import STATE_FIELDS, NoDataError, ReceiveSession, RobotSnapshot
from .jsonlines import JsonLinesService, ServiceError

log = logging.getLogger(__name__)

UR_JOINT_NAMES = ("shoulder_pan_joint", "shoulder_lift_joint", "elbow_joint",
                  "wrist_1_joint", "wrist_2_joint", "wrist_3_joint")

TOPICS = ("joint_states", "tcp_pose", "wrench", "io_state")
SERVICES = ("get_joint_state", "get_tcp_pose", "get_wrench", "get_io_state")
FAKE_TOPIC = "fake_joint_states"
PAUSE_SERVICE = "pause_joint_updates"


def joint_names(dof: int) -> list[str]:
    return list(UR_JOINT_NAMES) if dof == 6 else [f"joint_{i}" for i in range(dof)]


class StateReceiver(JsonLinesService):
    """Reads state through a receive-only connection; needs no control script on the robot.

    Call ``step`` to publish whatever packages have arrived, or ``start`` to
    do so from a background thread.
    """

    topics = TOPICS
    input_topics = (FAKE_TOPIC,)

    def __init__(self, transport, frequency: float = 100.0, dof: int = 6):
        super().__init__()
        self.dof = dof
        self.names = joint_names(dof)
        self.session = ReceiveSession(transport, STATE_FIELDS, frequency, dof=dof)
        self._state_lock = threading.Lock()
        self._last: dict[str, tuple[float, dict]] = {}
        self._paused = False
        self._frozen: tuple[list, list] | None = None
        self._thread = None
        self._stop = threading.Event()
        for topic, service in zip(TOPICS, SERVICES):
            self.add_service(service, self._getter(topic))
        self.add_service(PAUSE_SERVICE, self._pause, advertised=False)

    # -- state handling ------------------------------------------------------

    def _getter(self, topic: str):
        def get(_args=None):
            with self._state_lock:
                if topic not in self._last:
                    raise ServiceError("no data yet")
                stamp, body = self._last[topic]
            return {"stamp": stamp, "body": body}
        return get

    def _pause(self, args) -> dict:
        pause = args.get("pause", True) if isinstance(args, dict) else bool(args)
        with self._state_lock:
            self._paused = bool(pause)
            if self._paused:
                last = self._last.get("joint_states")
                self._frozen = (last[1]["position"], [0.0] * self.dof) if last else None
            else:
                self._frozen = None
        return {"paused": self._paused}

    @property
    def paused(self) -> bool:
        return self._paused

    def on_publish(self, topic: str, body) -> None:
        positions = body.get("position") if isinstance(body, dict) else body
        try:
            positions = [float(v) for v in positions]
        except (TypeError, ValueError):
            raise ServiceError("fake_joint_states needs a list of joint positions") from None
        if len(positions) != self.dof:
            raise ServiceError(f"fake_joint_states needs {self.dof} positions, got {len(positions)}")
        with self._state_lock:
            if not self._paused:
                raise ServiceError("joint updates are not paused")
            self._frozen = (positions, [0.0] * self.dof)

    def bodies(self, snap: RobotSnapshot) -> dict[str, dict]:
        position, velocity = [float(v) for v in snap.q], [float(v) for v in snap.qd]
        with self._state_lock:
            if self._paused:
                if self._frozen is None:
                    self._frozen = (position, [0.0] * self.dof)
                position, velocity = list(self._frozen[0]), list(self._frozen[1])
        pose = snap.tcp_pose
        force = snap.tcp_force
        return {
            "joint_states": {"name": list(self.names), "position": position, "velocity": velocity},
            "tcp_pose": {"position": [float(v) for v in pose.position],
                         "rotation": [float(v) for v in pose.rotation]},
            "wrench": {"force": [float(v) for v in force[:3]], "torque": [float(v) for v in force[3:]]},
            "io_state": {"digital_in": int(snap.digital_in), "digital_out": int(snap.digital_out)},
        }

    def handle_snapshot(self, snap: RobotSnapshot) -> None:
        bodies = self.bodies(snap)
        with self._state_lock:
            for topic, body in bodies.items():
                self._last[topic] = (snap.timestamp, body)
        for topic in TOPICS:
            self.publish(topic, snap.timestamp, bodies[topic])

    def step(self) -> int:
        """Publish every package received since the last call."""
        snaps = self.session.drain()
        for snap in snaps:
            self.handle_snapshot(snap)
        return len(snaps)

    # -- background operation -------------------------------------------------

    def start(self) -> "StateReceiver":
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()
        return self

    def _run(self) -> None:
        while not self._stop.is_set():
            try:
                snap = self.session.wait(timeout=0.2)
            except NoDataError:
                # local virtual-time sessions return at once; avoid a hot spin
                self._stop.wait(0.001)
                continue
            except (ConnectionError, OSError) as exc:
                log.warning("state receiver lost the controller: %s", exc)
                for topic in TOPICS:
                    self.publish(topic, None, {"stopped": True})
                return
            self.handle_snapshot(snap)

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)
        self.session.close()
        self.shutdown()
