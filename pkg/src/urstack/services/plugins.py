"""Built-in plugins and the plugin registry.

A plugin is constructed from its manifest entry and exposes its action
through ``start_action_server(ctx)``. Command and extension plugins share the
host's single control session; dashboard plugins see only the dashboard.
Extension plugins additionally contribute script text (a preamble and the
body of their ``ext_<ID>`` snippet).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .. import layout
from ..client import CommandError, ControlSession, DashboardSession, ExtensionError, ExtensionTimeout
from ..kinematics import Chain
from ..motion import parameterize_path
from .actions import ActionError, ActionHost, GoalHandle
from .manifest import ManifestError, PluginEntry

DEFAULT_CANCEL_DECEL = 2.0
FEEDBACK_EVERY_TICKS = 50


class Cancelled(Exception):
    pass


@dataclass
class PluginContext:
    host: ActionHost
    name: str
    control: ControlSession | None = None
    dashboard: DashboardSession | None = None
    io_factory: Callable | None = None
    chain: Chain | None = None
    frequency: float = 500.0
    extension_id: int | None = None
    cancel_decel: float = DEFAULT_CANCEL_DECEL

    @property
    def dt(self) -> float:
        return 1.0 / self.frequency


def snapshot_body(ctrl: ControlSession) -> dict:
    s = ctrl.state
    return {
        "time": s.timestamp,
        "q": [float(v) for v in s.q],
        "qd": [float(v) for v in s.qd],
        "tcp_pose": [float(v) for v in s.tcp_pose.as_vector()],
        "wrench": [float(v) for v in s.tcp_force],
        "digital_out": int(s.digital_out),
    }


def _vector(value, n: int, what: str) -> np.ndarray:
    try:
        v = np.asarray(value, dtype=float).reshape(-1)
    except (TypeError, ValueError):
        raise ActionError(f"{what} must be a list of {n} numbers") from None
    if v.shape != (n,):
        raise ActionError(f"{what} must have {n} values, got {v.size}")
    return v


def _number(args: dict, key: str, default=None) -> float:
    value = args.get(key, default)
    if value is None:
        raise ActionError(f"missing parameter: {key}")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ActionError(f"parameter {key} must be a number")
    return float(value)


class Plugin:
    kind = "command"

    def __init__(self, entry: PluginEntry):
        self.name = entry.name
        self.params = dict(entry.parameters)

    def args(self, goal: GoalHandle) -> dict:
        if not isinstance(goal.body, dict):
            raise ActionError("goal body must be an object")
        return {**self.params, **goal.body}

    def start_action_server(self, ctx: PluginContext) -> None:
        if "cancel_decel" in self.params:
            decel = self.params["cancel_decel"]
            if isinstance(decel, bool) or not isinstance(decel, (int, float)) or decel <= 0:
                raise ManifestError(f"plugin '{self.name}': cancel_decel must be a positive number")
            ctx.cancel_decel = float(decel)

        def callback(goal: GoalHandle) -> dict:
            try:
                return self.execute(ctx, goal, self.args(goal))
            except Cancelled:
                body = {"success": False, "cancelled": True}
                if ctx.control is not None:
                    body["snapshot"] = snapshot_body(ctx.control)
                return body
            except CommandError as exc:
                raise ActionError(str(exc)) from None
        ctx.host.register_action(self.name, callback)

    def execute(self, ctx: PluginContext, goal: GoalHandle, args: dict) -> dict:
        raise NotImplementedError


def await_command(ctx: PluginContext, goal: GoalHandle, seq: int, timeout_ticks: int | None = None):
    """Step the control session until ``seq`` completes; a cancel request stops the arm."""
    ctrl = ctx.control
    limit = ctrl.timeout_ticks if timeout_ticks is None else timeout_ticks
    for tick in range(limit + 1):
        outcome = ctrl.poll(seq)
        if outcome is not None:
            return outcome
        if goal.cancelled:
            ctrl.stop_j(ctx.cancel_decel)
            raise Cancelled()
        ctrl.step()
        if tick and tick % FEEDBACK_EVERY_TICKS == 0:
            goal.feedback({"ticks": tick, "q": [float(v) for v in ctrl.state.q]})
    raise ActionError(f"command {seq} did not finish within {limit} ticks")


# ---------------------------------------------------------------------------
# Command plugins


class MoveJPlugin(Plugin):
    def execute(self, ctx, goal, args):
        q = _vector(args.get("q"), ctx.control.dof, "q")
        seq = ctx.control.move_j(q, _number(args, "speed", 1.05), _number(args, "accel", 1.4), asynchronous=True)
        await_command(ctx, goal, seq)
        return {"success": True, "snapshot": snapshot_body(ctx.control)}


class MoveLPlugin(Plugin):
    def execute(self, ctx, goal, args):
        pose = _vector(args.get("pose"), 6, "pose")
        seq = ctx.control.move_l(pose, _number(args, "speed", 0.25), _number(args, "accel", 1.2),
                                 asynchronous=True)
        await_command(ctx, goal, seq)
        return {"success": True, "snapshot": snapshot_body(ctx.control)}


class MoveUntilContactPlugin(Plugin):
    def execute(self, ctx, goal, args):
        twist = _vector(args.get("twist"), 6, "twist")
        seq = ctx.control.move_until_contact(twist, asynchronous=True)
        outcome = await_command(ctx, goal, seq)
        return {"success": True, "contact": outcome.contact, "snapshot": snapshot_body(ctx.control)}


class SetDigitalOutPlugin(Plugin):
    def execute(self, ctx, goal, args):
        pin = args.get("pin")
        if isinstance(pin, bool) or not isinstance(pin, int):
            raise ActionError("parameter pin must be an integer")
        value = bool(args.get("value", True))
        try:
            ctx.io_factory().set_standard_digital_out(pin, value)
        except ValueError as exc:
            raise ActionError(str(exc)) from None
        # the controller mirrors IO writes on its next tick
        for _ in range(10):
            ctx.control.step()
            if bool(ctx.control.state.digital_out >> pin & 1) == value:
                return {"success": True, "digital_out": int(ctx.control.state.digital_out)}
        raise ActionError(f"digital output {pin} did not change")


class ExecuteTrajectoryPlugin(Plugin):
    """Plans a stop-at-every-waypoint path and streams it with one servo target per tick."""

    def execute(self, ctx, goal, args):
        ctrl = ctx.control
        chain = ctx.chain
        n = ctrl.dof
        raw = args.get("waypoints")
        if not isinstance(raw, list) or len(raw) < 2:
            raise ActionError("waypoints must be a list of at least two joint vectors")
        wps = [_vector(w, n, f"waypoint {i}") for i, w in enumerate(raw)]
        v_scale = _number(args, "v_scale", 1.0)
        a_scale = _number(args, "a_scale", 1.0)
        if not (0 < v_scale <= 1 and 0 < a_scale <= 1):
            raise ActionError("v_scale and a_scale must be in (0, 1]")
        for i, w in enumerate(wps):
            if np.any(w < chain.q_min) or np.any(w > chain.q_max):
                raise ActionError(f"waypoint {i} is outside the joint limits")
        start = ctrl.state.q.copy()
        if not np.array_equal(start, wps[0]):
            wps.insert(0, start)
        traj = parameterize_path(wps, chain.v_max * v_scale, chain.a_max * a_scale, ctx.dt)
        # interior waypoints are streamed twice so the full stop shows as a zero-velocity tick
        hold = set(traj.waypoint_indices[:-1]) - {0}
        total = len(traj.points) - 1
        max_err = 0.0
        ticks = 0
        waypoint_speeds = []
        for k in range(1, len(traj.points)):
            target = traj.points[k]
            for _ in range(2 if k in hold else 1):
                if goal.cancelled:
                    ctrl.stop_j(ctx.cancel_decel)
                    raise Cancelled()
                ctrl.servo_j(target)
                ticks += 1
                max_err = max(max_err, float(np.max(np.abs(ctrl.state.q - target))))
                if ticks % FEEDBACK_EVERY_TICKS == 0:
                    goal.feedback({"progress": k / total, "ticks": ticks})
            if k in hold:
                waypoint_speeds.append(float(np.max(np.abs(ctrl.state.qd))))
        # settle: one more tick on the final target zeroes the commanded velocity, then stop
        final = traj.points[-1]
        ctrl.servo_j(final)
        ctrl.stop_j(ctx.cancel_decel)
        terminal = float(np.max(np.abs(ctrl.state.q - final)))
        return {
            "success": True,
            "duration": ticks * ctx.dt,
            "ticks": ticks,
            "planned_duration": traj.duration,
            "max_tracking_error": max_err,
            "terminal_error": terminal,
            "interior_waypoint_speeds": waypoint_speeds,
            "snapshot": snapshot_body(ctrl),
        }


class MoveDownUntilForcePlugin(Plugin):
    """Descends along base -Z and stops once the vertical force exceeds a configurable threshold."""

    def execute(self, ctx, goal, args):
        ctrl = ctx.control
        threshold = _number(args, "threshold_n", 20.0)
        speed = _number(args, "speed", 0.1)
        accel = _number(args, "accel", 0.1)
        decel = _number(args, "decel", 5.0)
        descent = _number(args, "descent_m", 1.0)
        poll = _number(args, "poll", 0.002)
        poll_ticks = max(1, round(poll * ctx.frequency))
        ctrl.zero_ft_sensor()
        goal_pose = ctrl.state.tcp_pose.as_vector()
        goal_pose[2] -= descent
        seq = ctrl.move_l(goal_pose, speed, accel, asynchronous=True)
        ticks = 0
        while True:
            force = ctrl.state.tcp_force
            if abs(force[2]) > threshold:
                trip = {"wrench": [float(v) for v in force], "time": ctrl.state.timestamp,
                        "tcp_pose": [float(v) for v in ctrl.state.tcp_pose.as_vector()]}
                ctrl.stop_j(decel)
                return {"success": True, "contact": True, "trigger": trip,
                        "wrench": [float(v) for v in ctrl.state.tcp_force],
                        "tcp_pose": [float(v) for v in ctrl.state.tcp_pose.as_vector()],
                        "snapshot": snapshot_body(ctrl)}
            if ctrl.poll(seq) is not None:
                return {"success": True, "contact": False,
                        "wrench": [float(v) for v in ctrl.state.tcp_force],
                        "tcp_pose": [float(v) for v in ctrl.state.tcp_pose.as_vector()],
                        "snapshot": snapshot_body(ctrl)}
            if goal.cancelled:
                ctrl.stop_j(ctx.cancel_decel)
                raise Cancelled()
            ctrl.wait_ticks(poll_ticks)
            ticks += poll_ticks
            if ticks % FEEDBACK_EVERY_TICKS < poll_ticks:
                goal.feedback({"z": float(ctrl.state.tcp_pose.position[2]), "fz": float(ctrl.state.tcp_force[2])})


# ---------------------------------------------------------------------------
# Extension plugins


class ExtensionPlugin(Plugin):
    kind = "extension"
    preamble = ""
    snippet = ""

    def script_parts(self, ext_id: int) -> tuple[str, str]:
        body = "\n".join("  " + line if line.strip() else line for line in self.snippet.strip("\n").splitlines())
        return self.preamble, f"def ext_{ext_id}():\n{body}\nend\n"


class GripperGripPlugin(ExtensionPlugin):
    """Closes a simulated soft gripper to a requested width (mm) through a controller-side snippet."""

    preamble = """\
# simulated gripper instruction: clamps the request to the 0-100 mm stroke and reports it
def sg_grip(width):
  if width > 100:
    width = 100
  elif width < 0:
    width = 0
  end
  return width
end
"""
    snippet = """\
target = read_input_integer_register(19)
reached = sg_grip(target)
write_output_integer_register(19, reached)
"""

    def execute(self, ctx, goal, args):
        width = _number(args, "width")
        try:
            (reached,) = ctx.control.trigger_extension(
                ctx.extension_id, {("input_int", layout.EXTENSION_PARAM): round(width)},
                [("output_int", layout.EXTENSION_PARAM)])
        except (ExtensionTimeout, ExtensionError) as exc:
            raise ActionError(str(exc)) from None
        return {"success": True, "width": reached}


# ---------------------------------------------------------------------------
# Dashboard plugins


class DashboardPlugin(Plugin):
    kind = "dashboard"
    line = ""

    def execute(self, ctx, goal, args):
        line = str(args.get("line", self.line))
        return {"success": True, "reply": ctx.dashboard.send(line)}


class DashboardPlayPlugin(DashboardPlugin):
    line = "play"


class DashboardStopPlugin(DashboardPlugin):
    line = "stop"


class DashboardQueryPlugin(DashboardPlugin):
    line = "running?"


PLUGINS: dict[str, type[Plugin]] = {
    "move_j": MoveJPlugin,
    "move_l": MoveLPlugin,
    "move_until_contact": MoveUntilContactPlugin,
    "set_digital_out": SetDigitalOutPlugin,
    "execute_trajectory": ExecuteTrajectoryPlugin,
    "move_down_until_force": MoveDownUntilForcePlugin,
    "gripper_grip": GripperGripPlugin,
    "dashboard_play": DashboardPlayPlugin,
    "dashboard_stop": DashboardStopPlugin,
    "dashboard_query": DashboardQueryPlugin,
}


def create_plugin(entry: PluginEntry, registry: dict[str, type[Plugin]] | None = None) -> Plugin:
    registry = PLUGINS if registry is None else registry
    cls = registry.get(entry.plugin)
    if cls is None:
        raise ManifestError(f"plugin '{entry.name}': unknown implementation '{entry.plugin}'")
    if cls.kind != entry.kind:
        raise ManifestError(f"plugin '{entry.name}': '{entry.plugin}' is a {cls.kind!r} plugin, not {entry.kind!r}")
    return cls(entry)


def ticks_for(seconds: float, frequency: float) -> int:
    return max(1, math.ceil(round(seconds * frequency, 9)))
