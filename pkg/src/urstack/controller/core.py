"""The simulated control loop.

State is owned by the loop. Network-side writers post into an ordered mailbox
that ``tick`` drains first; readers use the immutable snapshot published at the
end of every tick.
"""

from __future__ import annotations

import logging
import math
import re
import threading
from collections import deque
from dataclasses import dataclass

import numpy as np

from .. import layout
from ..kinematics import Pose6, fk_matrix, matrix_to_rotvec
from ..layout import ErrorCode, Opcode
from ..script import Env, Execution, ScriptRuntimeError, ScriptSyntaxError, parse_source, register_builtins
from ..script import ast
from ..wire import RecipeError, RegisterFile, pack_values, parse_register_name
from .commands import JointState, MoveJ, MoveL, MoveUntilContact, ServoJ, StopJ
from .config import ControllerConfig

log = logging.getLogger(__name__)

CONTROL_FIELD = "input_int_register_0"
_EXT_NAME = re.compile(r"^ext_(\d+)$")


class ScriptInstallError(ValueError):
    """Control script rejected; the message names the offending line."""


class ExclusivityError(RecipeError):
    pass


@dataclass(frozen=True)
class Snapshot:
    time: float
    tick: int
    q: tuple
    qd: tuple
    tcp_pose: tuple
    wrench: tuple
    digital_in_bits: int
    digital_out_bits: int
    registers: dict

    def output_value(self, name: str):
        if name == "timestamp":
            return self.time
        if name in ("actual_q", "actual_qd"):
            v = self.q if name == "actual_q" else self.qd
            return tuple(v) + (0.0,) * (6 - len(v))
        if name == "actual_TCP_pose":
            return self.tcp_pose
        if name == "actual_TCP_force":
            return self.wrench
        if name == "actual_digital_input_bits":
            return self.digital_in_bits
        if name == "actual_digital_output_bits":
            return self.digital_out_bits
        bank, idx = parse_register_name(name)
        return self.registers[bank][idx]


class Subscriber:
    """A started output recipe attached to the loop."""

    def __init__(self, recipe, decimation: int, deliver):
        self.recipe = recipe
        self.decimation = decimation
        self.deliver = deliver
        self.counter = 0


class Controller:
    def __init__(self, config: ControllerConfig | None = None):
        self.config = config or ControllerConfig()
        self.chain = self.config.chain
        if self.chain.n > 6:
            raise ValueError("joint vectors travel as 6-vectors; chains above 6 joints are unsupported")
        self.frequency = float(self.config.frequency)
        self.dt = 1.0 / self.frequency
        self.force = self.config.force
        self.lock = threading.RLock()
        self.registers = RegisterFile()
        self.js = JointState(self.chain, self.config.initial_q())
        self.ticks = 0
        self.sim_time = 0.0
        self.active = None
        self.last_seq = 0
        self.wrench_bias = np.zeros(6)
        self.raw_wrench = np.zeros(6)
        self.wrench = np.zeros(6)
        self._zero_seq: int | None = None
        self.program_running = False
        self.log: list[str] = []
        self._mailbox: deque = deque()
        self._mailbox_lock = threading.Lock()
        self._subscribers: list[Subscriber] = []
        # input field name -> owning connection key
        self._input_owners: dict[str, object] = {}
        self.control_owner = None
        self.control_claims = 0
        # extension table and snippet state
        self.extensions: dict[int, ast.FuncDef] = {}
        self.script_env: Env | None = None
        self._ext_state = "idle"
        self._ext_id = 0
        self._ext_gen = None
        self._ext_resume = 0
        self.install_control_script("")
        self._compute_wrench()
        self.snapshot = self._make_snapshot()

    @property
    def q(self) -> np.ndarray:
        return self.js.q.copy()

    @property
    def qd(self) -> np.ndarray:
        return self.js.qd.copy()

    # -- mailbox ------------------------------------------------------------

    def post_register(self, bank: str, index: int, value) -> None:
        with self._mailbox_lock:
            self._mailbox.append(("reg", bank, index, value))

    def post_digital_out(self, mask: int, value: int) -> None:
        with self._mailbox_lock:
            self._mailbox.append(("dout", mask, value))

    def _drain_mailbox(self) -> None:
        with self._mailbox_lock:
            items = list(self._mailbox)
            self._mailbox.clear()
        for item in items:
            if item[0] == "reg":
                self.registers.set(item[1], item[2], item[3])
            elif item[0] == "dout":
                mask, value = item[1], item[2]
                bits = (self.registers.digital_out_bits & ~mask) | (value & mask)
                self.registers.digital_out_bits = bits & 0xFFFFFFFFFFFFFFFF
            elif item[0] == "release":
                for i in (layout.OPCODE, layout.SEQUENCE, layout.ASYNC_FLAG):
                    self.registers.set("input_int", i, 0)
                self.last_seq = 0

    # -- the loop -----------------------------------------------------------

    def tick(self) -> None:
        with self.lock:
            self._drain_mailbox()
            self.process_cmd()
            self._integrate()
            self._advance_snippet()
            self._compute_wrench()
            self._publish()
            self.ticks += 1
            self.sim_time = self.ticks * self.dt

    def run_ticks(self, n: int) -> None:
        for _ in range(n):
            self.tick()

    def process_cmd(self) -> None:
        regs = self.registers
        seq = regs.get("input_int", layout.SEQUENCE)
        if seq != self.last_seq:
            self.last_seq = seq
            opcode = regs.get("input_int", layout.OPCODE)
            if opcode != Opcode.NOOP:
                self._dispatch(opcode, seq)
        trigger = regs.get("input_float", layout.EXTENSION_TRIGGER)
        if self._ext_state == "idle":
            if trigger.is_integer() and int(trigger) in self.extensions:
                self._start_snippet(int(trigger))
        elif self._ext_state == "done" and trigger == 0.0:
            regs.set("output_float", layout.EXTENSION_TRIGGER, 0.0)
            self._ext_state = "idle"

    def _fail(self, seq: int, code: ErrorCode, message: str) -> None:
        self.log.append(f"command {seq}: {message}")
        log.info("command %d rejected: %s", seq, message)
        self.registers.set("output_int", layout.ERROR_CODE, int(code))
        self.registers.set("output_int", layout.ERROR_SEQUENCE, seq)

    def _finish(self, seq: int, result: int = 0) -> None:
        self.registers.set("output_int", layout.RESULT_FLAG, result)
        self.registers.set("output_int", layout.DONE_SEQUENCE, seq)

    def _dispatch(self, opcode: int, seq: int) -> None:
        regs = self.registers
        try:
            op = Opcode(opcode)
        except ValueError:
            self._fail(seq, ErrorCode.UNKNOWN_OPCODE, f"unknown opcode {opcode}")
            return
        if op == Opcode.ZERO_FT:
            self._zero_seq = seq
            return
        floats = [regs.get("input_float", i) for i in layout.TARGET]
        speed = regs.get("input_float", layout.SPEED)
        accel = regs.get("input_float", layout.ACCEL)
        sync = regs.get("input_int", layout.ASYNC_FLAG) == 0
        if op == Opcode.STOPJ:
            if not accel > 0:
                self._fail(seq, ErrorCode.BAD_PARAMETER, f"deceleration must be positive, got {accel}")
                return
            self.active = StopJ(seq, self.js, accel)
            return
        if self.active is not None and self.active.sync:
            self._fail(seq, ErrorCode.BUSY, f"busy with command {self.active.seq}")
            return
        n = self.chain.n
        if op in (Opcode.MOVEJ, Opcode.SERVOJ):
            target = np.array(floats[:n])
            if np.any(target < self.chain.q_min) or np.any(target > self.chain.q_max):
                self._fail(seq, ErrorCode.TARGET_OUT_OF_LIMITS, "joint target outside limits")
                return
            if op == Opcode.SERVOJ:
                if isinstance(self.active, ServoJ):
                    self.active.target = target
                    self.active.seq = seq
                else:
                    self.active = ServoJ(seq, target)
                return
        if op in (Opcode.MOVEJ, Opcode.MOVEL) and not (speed > 0 and accel > 0):
            self._fail(seq, ErrorCode.BAD_PARAMETER, f"speed and acceleration must be positive ({speed}, {accel})")
            return
        if op == Opcode.MOVEJ:
            self.active = MoveJ(seq, sync, self.js, target, speed, accel)
        elif op == Opcode.MOVEL:
            self.active = MoveL(seq, sync, self.js, Pose6.from_vector(floats), speed, accel)
        elif op == Opcode.MOVE_UNTIL_CONTACT:
            self.active = MoveUntilContact(seq, sync, self.js, floats)

    def _integrate(self) -> None:
        if self.active is None:
            self.js.hold()
            return
        cmd = self.active
        try:
            outcome = cmd.step(self.js, self.dt, self.wrench)
        except Exception as exc:  # internal fault: abort the command, keep the loop alive
            log.exception("command %d aborted", cmd.seq)
            self.js.hold()
            self.active = None
            self._fail(cmd.seq, ErrorCode.BAD_PARAMETER, f"aborted: {exc}")
            return
        if outcome is None:
            return
        self.active = None
        if outcome.ok:
            self._finish(cmd.seq, outcome.result)
        else:
            self._fail(cmd.seq, outcome.code, outcome.code.name.lower())

    def _compute_wrench(self) -> None:
        T = fk_matrix(self.chain, self.js.q)
        self._tcp = T
        self.raw_wrench = self.force.raw_wrench(float(T[2, 3]), self.sim_time)
        if self._zero_seq is not None:
            self.wrench_bias = self.raw_wrench.copy()
            self._finish(self._zero_seq)
            self._zero_seq = None
        self.wrench = self.raw_wrench - self.wrench_bias

    def compute_wrench(self) -> np.ndarray:
        """Reported wrench for the current state."""
        with self.lock:
            self._compute_wrench()
            return self.wrench.copy()

    def zero_ft(self) -> None:
        with self.lock:
            self.wrench_bias = self.raw_wrench.copy()
            self.wrench = self.raw_wrench - self.wrench_bias

    def _make_snapshot(self) -> Snapshot:
        T = self._tcp
        pose = tuple(float(v) for v in T[:3, 3]) + tuple(float(v) for v in matrix_to_rotvec(T[:3, :3]))
        regs = self.registers
        return Snapshot(
            time=self.sim_time,
            tick=self.ticks,
            q=tuple(float(v) for v in self.js.q),
            qd=tuple(float(v) for v in self.js.qd),
            tcp_pose=pose,
            wrench=tuple(float(v) for v in self.wrench),
            digital_in_bits=regs.digital_in_bits,
            digital_out_bits=regs.digital_out_bits,
            registers=regs.snapshot(),
        )

    def _publish(self) -> None:
        snap = self._make_snapshot()
        self.snapshot = snap
        for sub in list(self._subscribers):
            # a decimated recipe publishes once each full period, so N ticks give floor(N / decimation)
            sub.counter += 1
            if sub.counter % sub.decimation == 0:
                values = [snap.output_value(name) for name in sub.recipe.names]
                sub.deliver(pack_values(sub.recipe, values))

    # -- data subscriptions and input ownership -----------------------------

    def decimation(self, frequency: float) -> int:
        return max(1, round(self.frequency / frequency))

    def subscribe(self, recipe, deliver) -> Subscriber:
        with self.lock:
            sub = Subscriber(recipe, self.decimation(recipe.frequency), deliver)
            self._subscribers.append(sub)
            return sub

    def unsubscribe(self, sub: Subscriber) -> None:
        with self.lock:
            if sub in self._subscribers:
                self._subscribers.remove(sub)

    def claim_inputs(self, owner, names) -> None:
        """Reserve input fields for ``owner``; the opcode register makes it the control owner."""
        with self.lock:
            if CONTROL_FIELD in names and self.control_owner not in (None, owner):
                raise ExclusivityError("control interface already connected")
            for name in names:
                holder = self._input_owners.get(name)
                if holder is not None and holder is not owner:
                    raise RecipeError(f"input field in use: {name}")
            self._release_fields(owner)
            for name in names:
                self._input_owners[name] = owner
            if CONTROL_FIELD in names and self.control_owner is None:
                self.control_owner = owner
                self.control_claims += 1

    def _release_fields(self, owner) -> None:
        for name in [n for n, o in self._input_owners.items() if o is owner]:
            del self._input_owners[name]

    def release(self, owner) -> None:
        with self.lock:
            self._release_fields(owner)
            if self.control_owner is owner:
                self.control_owner = None
                with self._mailbox_lock:
                    self._mailbox.append(("release",))

    # -- control script and extension snippets ------------------------------

    def install_control_script(self, text: str) -> list[int]:
        """Parse and install a control script; returns the extension IDs it defines."""
        try:
            program = parse_source(text)
        except ScriptSyntaxError as exc:
            raise ScriptInstallError(str(exc)) from None
        seen: dict[str, int] = {}
        table: dict[int, ast.FuncDef] = {}
        for stmt in program.body:
            if not isinstance(stmt, ast.FuncDef):
                continue
            if stmt.name in seen:
                raise ScriptInstallError(
                    f"line {stmt.line}: duplicate definition of '{stmt.name}' (first at line {seen[stmt.name]})")
            seen[stmt.name] = stmt.line
            m = _EXT_NAME.match(stmt.name)
            if m:
                ext_id = int(m.group(1))
                if ext_id < layout.FIRST_EXTENSION_ID:
                    raise ScriptInstallError(
                        f"line {stmt.line}: extension id {ext_id} is below {layout.FIRST_EXTENSION_ID}")
                if stmt.params:
                    raise ScriptInstallError(f"line {stmt.line}: extension '{stmt.name}' takes no parameters")
                table[ext_id] = stmt
        env = register_builtins(Env(log=self.log), self.registers, self.config.extras, self.frequency)
        try:
            gen = Execution(env).run_program(program)
            for _ in gen:
                pass  # preamble suspensions cost no controller time
        except ScriptRuntimeError as exc:
            raise ScriptInstallError(str(exc)) from None
        with self.lock:
            if self._ext_state == "running":
                self._ext_gen.close()
                self.log.append(f"extension {self._ext_id} aborted by script upload")
            self._ext_state = "idle"
            self._ext_gen = None
            self.script_env = env
            self.extensions = table
        return sorted(table)

    def _start_snippet(self, ext_id: int) -> None:
        fn = self.extensions[ext_id]
        self._ext_id = ext_id
        self._ext_gen = Execution(self.script_env).call_function(fn.name, [], fn.line)
        self._ext_state = "running"
        self._ext_resume = self.ticks

    def _advance_snippet(self) -> None:
        if self._ext_state != "running" or self.ticks < self._ext_resume:
            return
        try:
            while True:
                seconds = next(self._ext_gen)
                # rounding guards ceil against float noise such as 0.01 * 500
                n = math.ceil(round(seconds * self.frequency, 9))
                if n > 0:
                    self._ext_resume = self.ticks + n
                    return
        except StopIteration:
            self.registers.set("output_float", layout.EXTENSION_TRIGGER, float(self._ext_id))
        except ScriptRuntimeError as exc:
            self.log.append(f"extension {self._ext_id} failed: {exc}")
            log.warning("extension %d failed: %s", self._ext_id, exc)
            self.registers.set("output_float", layout.EXTENSION_TRIGGER, -float(self._ext_id))
        self._ext_gen = None
        self._ext_state = "done"

    @property
    def extension_state(self) -> str:
        return self._ext_state

    # -- dashboard ----------------------------------------------------------

    def dashboard_handle_line(self, line: str) -> str:
        text = line.strip()
        fixed = {
            "play": "Starting program",
            "stop": "Stopped",
            "pause": "Pausing program",
            "robotmode": "Robotmode: RUNNING",
            "power on": "Powering on",
            "power off": "Powering off",
            "brake release": "Brake releasing",
        }
        with self.lock:
            if text == "running?":
                return f"Program running: {'true' if self.program_running else 'false'}"
            if text in fixed:
                if text == "play":
                    self.program_running = True
                elif text in ("stop", "pause"):
                    self.program_running = False
                return fixed[text]
            if text.startswith("load "):
                return f"Loading program: {text[5:].strip()}"
        return f"could not understand: {text}"

