"""Client SDK: control, receive, IO and dashboard sessions.

Sessions talk to a controller through a transport. ``TcpTransport`` reaches a
``SimulatorServer`` over sockets; ``LocalTransport`` wires the same protocol
to an in-process ``Controller`` without any ports, which keeps virtual-time
runs single-threaded and deterministic.

Timeouts are counted in controller ticks (data packages received), not in
wall time.
"""

from __future__ import annotations

import queue
import socket
import threading
from dataclasses import dataclass, field

import numpy as np

from . import layout
from .controller.core import Controller, ExclusivityError, ScriptInstallError
from .controller.endpoint import RtdeEndpoint
from .kinematics import Pose6
from .layout import Opcode
from .wire import (
    REGISTER_COUNT,
    FrameReader,
    PacketType,
    ProtocolError,
    RecipeError,
    build_input_recipe,
    build_output_recipe,
    decode_setup_reply,
    encode_frame,
    encode_setup_inputs,
    encode_setup_outputs,
    encode_version_request,
    pack_values,
    register_field_name,
    unpack_values,
)

DEFAULT_TIMEOUT_TICKS = 500 * 300


class CommandError(RuntimeError):
    def __init__(self, code: int, seq: int):
        name = layout.ErrorCode(code).name if code in layout.ErrorCode._value2member_map_ else str(code)
        super().__init__(f"command {seq} failed: {name.lower()}")
        self.code = code
        self.seq = seq


class CommandTimeout(TimeoutError):
    pass


class ExtensionTimeout(TimeoutError):
    pass


class ExtensionError(RuntimeError):
    pass


class NoDataError(RuntimeError):
    def __init__(self, message: str = "no data yet"):
        super().__init__(message)


class ScriptUploadError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Transports


class FrameTap:
    """Records every frame a client sends, tagged with the connection label."""

    def __init__(self):
        self.records: list[tuple[str, bytes]] = []
        self._lock = threading.Lock()

    def record(self, label: str, frame: bytes) -> None:
        with self._lock:
            self.records.append((label, frame))

    def frames(self, label: str | None = None) -> list[tuple[PacketType, bytes]]:
        reader = FrameReader()
        out = []
        with self._lock:
            records = list(self.records)
        for lab, frame in records:
            if label is None or lab == label:
                out.extend(reader.feed(frame))
        return out


class _Connection:
    label = "rtde"
    tap: FrameTap | None = None

    def send(self, frame: bytes) -> None:
        if self.tap is not None:
            self.tap.record(self.label, frame)
        self._send(frame)

    def _send(self, frame: bytes) -> None:
        raise NotImplementedError

    def recv_frame(self, timeout: float | None):
        """Next frame, or ``None`` if none arrives within ``timeout`` (0 polls)."""
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError


class LocalConnection(_Connection):
    def __init__(self, controller: Controller, label: str, tap: FrameTap | None):
        self.label = label
        self.tap = tap
        self.inbox: queue.Queue = queue.Queue()
        self.reader = FrameReader()
        self.endpoint = RtdeEndpoint(controller, self._receive, name=label)
        # virtual time: nothing arrives unless this process ticks, so never block
        self.blocking = not controller.config.virtual_time

    def _receive(self, data: bytes) -> None:
        for frame in self.reader.feed(data):
            self.inbox.put(frame)

    def _send(self, frame: bytes) -> None:
        self.endpoint.feed(frame)

    def recv_frame(self, timeout):
        try:
            if timeout == 0 or not self.blocking:
                return self.inbox.get_nowait()
            return self.inbox.get(timeout=timeout)
        except queue.Empty:
            return None

    def close(self) -> None:
        self.endpoint.close()


class TcpConnection(_Connection):
    def __init__(self, host: str, port: int, label: str, tap: FrameTap | None, connect_timeout: float = 5.0):
        self.label = label
        self.tap = tap
        self.sock = socket.create_connection((host, port), timeout=connect_timeout)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.reader = FrameReader()
        self.pending: list = []

    def _send(self, frame: bytes) -> None:
        self.sock.sendall(frame)

    def recv_frame(self, timeout):
        while not self.pending:
            self.sock.settimeout(timeout if timeout != 0 else 0.0)
            try:
                data = self.sock.recv(65536)
            except (socket.timeout, BlockingIOError):
                return None
            if not data:
                raise ConnectionError("controller closed the connection")
            self.pending.extend(self.reader.feed(data))
        return self.pending.pop(0)

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class LocalTransport:
    """In-process access to a ``Controller``."""

    def __init__(self, controller: Controller, tap: FrameTap | None = None):
        self.controller = controller
        self.tap = tap
        self._count = 0

    @property
    def virtual_time(self) -> bool:
        return self.controller.config.virtual_time

    def open_rtde(self, label: str | None = None) -> LocalConnection:
        self._count += 1
        return LocalConnection(self.controller, label or f"rtde{self._count}", self.tap)

    def dashboard(self, line: str) -> str:
        return self.controller.dashboard_handle_line(line)

    def upload_script(self, text: str) -> list[int]:
        try:
            return self.controller.install_control_script(text)
        except ScriptInstallError as exc:
            raise ScriptUploadError(str(exc)) from None


class TcpTransport:
    def __init__(self, host: str = "127.0.0.1", rtde_port: int = 30004, dashboard_port: int = 29999,
                 script_port: int = 30002, tap: FrameTap | None = None, timeout: float = 5.0):
        self.host = host
        self.rtde_port = rtde_port
        self.dashboard_port = dashboard_port
        self.script_port = script_port
        self.tap = tap
        self.timeout = timeout
        self._count = 0
        self._dash = None
        self._dash_lock = threading.Lock()
        # over sockets the controller may tick on its own clock; callers wait on packages
        self.virtual_time = False

    def open_rtde(self, label: str | None = None) -> TcpConnection:
        self._count += 1
        return TcpConnection(self.host, self.rtde_port, label or f"rtde{self._count}", self.tap, self.timeout)

    def dashboard(self, line: str) -> str:
        with self._dash_lock:
            if self._dash is None:
                sock = socket.create_connection((self.host, self.dashboard_port), timeout=self.timeout)
                self._dash = (sock, sock.makefile("rwb"))
            _, f = self._dash
            f.write((line.rstrip("\n") + "\n").encode("utf-8"))
            f.flush()
            reply = f.readline()
            if not reply:
                self._dash = None
                raise ConnectionError("dashboard connection closed")
            return reply.decode("utf-8").rstrip("\r\n")

    def upload_script(self, text: str) -> list[int]:
        with socket.create_connection((self.host, self.script_port), timeout=self.timeout) as sock:
            sock.sendall(text.encode("utf-8"))
            sock.shutdown(socket.SHUT_WR)
            reply = sock.makefile("rb").readline().decode("utf-8").strip()
        if reply.startswith("OK"):
            ids = reply[2:].strip()
            return [int(i) for i in ids.split(",")] if ids else []
        raise ScriptUploadError(reply.removeprefix("ERROR").strip() or "script upload failed")

    def close(self) -> None:
        with self._dash_lock:
            if self._dash is not None:
                self._dash[0].close()
                self._dash = None


# ---------------------------------------------------------------------------
# Frame-level client


class RtdeClient:
    def __init__(self, conn: _Connection, timeout: float = 5.0):
        self.conn = conn
        self.timeout = timeout
        self.output_recipe = None
        self.input_recipe = None
        self._backlog: list[bytes] = []

    def _request(self, ptype: PacketType, payload: bytes = b"") -> bytes:
        self.conn.send(encode_frame(ptype, payload))
        while True:
            frame = self.conn.recv_frame(self.timeout)
            if frame is None:
                raise ConnectionError(f"no reply to {ptype.name}")
            rtype, rpayload = frame
            if rtype == ptype:
                return rpayload
            if rtype == PacketType.DATA_PACKAGE:
                self._backlog.append(rpayload)
                continue
            raise ProtocolError(f"unexpected {rtype.name} while waiting for {ptype.name}")

    def negotiate_version(self) -> None:
        if self._request(PacketType.PROTOCOL_VERSION, encode_version_request()) != b"\x01":
            raise ProtocolError("protocol version refused")

    def setup_outputs(self, names, frequency: float):
        rid, kinds = decode_setup_reply(self._request(PacketType.SETUP_OUTPUTS,
                                                      encode_setup_outputs(names, frequency)))
        if rid == 0:
            raise RecipeError(kinds)
        self.output_recipe = build_output_recipe(list(names), frequency, rid)
        return self.output_recipe

    def setup_inputs(self, names):
        rid, kinds = decode_setup_reply(self._request(PacketType.SETUP_INPUTS, encode_setup_inputs(names)))
        if rid == 0:
            if "already connected" in kinds:
                raise ExclusivityError(kinds)
            raise RecipeError(kinds)
        self.input_recipe = build_input_recipe(list(names), rid)
        return self.input_recipe

    def start(self) -> None:
        if self._request(PacketType.START) != b"\x01":
            raise ProtocolError("START refused")

    def pause(self) -> None:
        self._request(PacketType.PAUSE)

    def send_inputs(self, values) -> None:
        self.conn.send(encode_frame(PacketType.DATA_PACKAGE, pack_values(self.input_recipe, values)))

    def recv_data(self, timeout: float | None):
        if self._backlog:
            return unpack_values(self.output_recipe, self._backlog.pop(0))
        while True:
            frame = self.conn.recv_frame(timeout)
            if frame is None:
                return None
            ptype, payload = frame
            if ptype == PacketType.DATA_PACKAGE:
                return unpack_values(self.output_recipe, payload)

    def close(self) -> None:
        self.conn.close()


# ---------------------------------------------------------------------------
# Snapshots

STATE_FIELDS = ("timestamp", "actual_q", "actual_qd", "actual_TCP_pose", "actual_TCP_force",
                "actual_digital_input_bits", "actual_digital_output_bits")
REGISTER_FIELDS = tuple(register_field_name("output_int", i) for i in range(REGISTER_COUNT)) + \
    tuple(register_field_name("output_float", i) for i in range(REGISTER_COUNT))
OUTPUT_FIELDS = STATE_FIELDS + REGISTER_FIELDS
INPUT_FIELDS = tuple(register_field_name("input_int", i) for i in range(REGISTER_COUNT)) + \
    tuple(register_field_name("input_float", i) for i in range(REGISTER_COUNT))


@dataclass(frozen=True)
class RobotSnapshot:
    """One data package; every field comes from the same controller tick."""

    timestamp: float
    q: np.ndarray
    qd: np.ndarray
    tcp_pose: Pose6 | None = None
    tcp_force: np.ndarray | None = None
    digital_in: int = 0
    digital_out: int = 0
    output_int: tuple = field(default_factory=lambda: (0,) * REGISTER_COUNT)
    output_float: tuple = field(default_factory=lambda: (0.0,) * REGISTER_COUNT)

    @classmethod
    def from_values(cls, names, values, dof: int = 6) -> "RobotSnapshot":
        data = dict(zip(names, values))
        ints = [0] * REGISTER_COUNT
        floats = [0.0] * REGISTER_COUNT
        for name, v in data.items():
            if name.startswith("output_int_register_"):
                ints[int(name.rsplit("_", 1)[1])] = v
            elif name.startswith("output_double_register_"):
                floats[int(name.rsplit("_", 1)[1])] = v
        pose = data.get("actual_TCP_pose")
        force = data.get("actual_TCP_force")
        return cls(
            timestamp=data.get("timestamp", float("nan")),
            q=np.array(data.get("actual_q", (0.0,) * 6)[:dof]),
            qd=np.array(data.get("actual_qd", (0.0,) * 6)[:dof]),
            tcp_pose=Pose6.from_vector(pose) if pose is not None else None,
            tcp_force=np.array(force) if force is not None else None,
            digital_in=data.get("actual_digital_input_bits", 0),
            digital_out=data.get("actual_digital_output_bits", 0),
            output_int=tuple(ints),
            output_float=tuple(floats),
        )


@dataclass
class CommandOutcome:
    seq: int
    result: int = 0

    @property
    def contact(self) -> bool:
        return bool(self.result)


# ---------------------------------------------------------------------------
# Sessions


class ReceiveSession:
    """Pure consumer: after setup it never sends a data package."""

    def __init__(self, transport, names=OUTPUT_FIELDS, frequency: float = 500.0, dof: int = 6,
                 timeout: float = 5.0):
        self.names = tuple(names)
        self.dof = dof
        self.timeout = timeout
        self.client = RtdeClient(transport.open_rtde(), timeout)
        self.client.negotiate_version()
        self.client.setup_outputs(self.names, frequency)
        self.client.start()
        self.last: RobotSnapshot | None = None
        self.received = 0

    def drain(self) -> list[RobotSnapshot]:
        """Every package delivered since the last call, oldest first."""
        out = []
        while True:
            values = self.client.recv_data(0)
            if values is None:
                break
            out.append(RobotSnapshot.from_values(self.names, values, self.dof))
        if out:
            self.last = out[-1]
            self.received += len(out)
        return out

    def poll(self) -> int:
        """Consume every package already delivered; returns how many arrived."""
        return len(self.drain())

    def wait(self, timeout: float | None = None) -> RobotSnapshot:
        """Block for the next package; in local virtual time this never blocks."""
        values = self.client.recv_data(self.timeout if timeout is None else timeout)
        if values is None:
            raise NoDataError("no data package within timeout")
        self.last = RobotSnapshot.from_values(self.names, values, self.dof)
        self.received += 1
        return self.last

    def get_snapshot(self) -> RobotSnapshot:
        self.poll()
        if self.last is None:
            raise NoDataError()
        return self.last

    def get_actual_q(self) -> np.ndarray:
        return self.get_snapshot().q

    def get_actual_tcp_pose(self) -> Pose6:
        return self.get_snapshot().tcp_pose

    def get_actual_tcp_force(self) -> np.ndarray:
        return self.get_snapshot().tcp_force

    def close(self) -> None:
        self.client.close()


class ControlSession:
    """Exclusive command interface.

    Every ``step`` sends the full input-register mirror and waits for the next
    data package; in virtual time that package is the tick the send caused.
    """

    def __init__(self, transport, script: str | None = None, dof: int = 6, timeout: float = 5.0,
                 timeout_ticks: int = DEFAULT_TIMEOUT_TICKS):
        self.transport = transport
        self.dof = dof
        self.timeout = timeout
        self.timeout_ticks = timeout_ticks
        self.client = RtdeClient(transport.open_rtde("control"), timeout)
        self.inputs = {"input_int": [0] * REGISTER_COUNT, "input_float": [0.0] * REGISTER_COUNT}
        self.state: RobotSnapshot | None = None
        self.installed: list[int] = []
        self._ext_lock = threading.Lock()
        try:
            self.client.negotiate_version()
            self.client.setup_outputs(OUTPUT_FIELDS, 500.0)
            self.client.setup_inputs(INPUT_FIELDS)
            if script is not None:
                self.installed = transport.upload_script(script)
            self.client.start()
            self.step()
        except BaseException:
            self.client.close()
            raise
        self.next_seq = max(self.state.output_int[layout.DONE_SEQUENCE],
                            self.state.output_int[layout.ERROR_SEQUENCE], 0) + 1

    # -- low level ------------------------------------------------------------

    def write_input(self, bank: str, index: int, value) -> None:
        if bank not in self.inputs:
            raise ValueError(f"not an input bank: {bank!r}")
        if not 0 <= index < REGISTER_COUNT:
            raise IndexError(f"register index out of range: {index}")
        self.inputs[bank][index] = int(value) if bank == "input_int" else float(value)

    def step(self) -> RobotSnapshot:
        self.client.send_inputs(self.inputs["input_int"] + self.inputs["input_float"])
        values = self.client.recv_data(self.timeout)
        if values is None:
            raise ConnectionError("no data package from controller")
        # drain any backlog so the state is the freshest tick
        while True:
            more = self.client.recv_data(0)
            if more is None:
                break
            values = more
        self.state = RobotSnapshot.from_values(OUTPUT_FIELDS, values, self.dof)
        return self.state

    def wait_ticks(self, n: int) -> RobotSnapshot:
        for _ in range(n):
            self.step()
        return self.state

    def _issue(self, opcode: Opcode, floats=(), speed: float = 0.0, accel: float = 0.0,
               asynchronous: bool = False) -> int:
        seq = self.next_seq
        self.next_seq += 1
        for i, v in enumerate(floats):
            self.write_input("input_float", layout.TARGET[i], v)
        self.write_input("input_float", layout.SPEED, speed)
        self.write_input("input_float", layout.ACCEL, accel)
        self.write_input("input_int", layout.ASYNC_FLAG, int(bool(asynchronous)))
        self.write_input("input_int", layout.OPCODE, int(opcode))
        self.write_input("input_int", layout.SEQUENCE, seq)
        self.step()
        return seq

    def _check(self, seq: int) -> CommandOutcome | None:
        s = self.state
        if s.output_int[layout.DONE_SEQUENCE] == seq:
            return CommandOutcome(seq, s.output_int[layout.RESULT_FLAG])
        if s.output_int[layout.ERROR_SEQUENCE] == seq:
            raise CommandError(s.output_int[layout.ERROR_CODE], seq)
        return None

    def wait_for(self, seq: int, timeout_ticks: int | None = None) -> CommandOutcome:
        """Step until ``seq`` completes; raises ``CommandError`` if the controller rejects it."""
        limit = self.timeout_ticks if timeout_ticks is None else timeout_ticks
        for _ in range(limit + 1):
            outcome = self._check(seq)
            if outcome is not None:
                return outcome
            self.step()
        raise CommandTimeout(f"command {seq} did not finish within {limit} ticks")

    def poll(self, seq: int) -> CommandOutcome | None:
        """Non-blocking completion check against the latest state."""
        return self._check(seq)

    def _run(self, seq: int, asynchronous: bool):
        if asynchronous:
            self._check(seq)
            return seq
        return self.wait_for(seq)

    # -- commands ---------------------------------------------------------------

    def move_j(self, q, speed: float = 1.05, accel: float = 1.4, asynchronous: bool = False):
        q = np.asarray(q, dtype=float)
        if q.shape != (self.dof,):
            raise ValueError(f"joint target needs {self.dof} values")
        return self._run(self._issue(Opcode.MOVEJ, q, speed, accel, asynchronous), asynchronous)

    def move_l(self, pose, speed: float = 0.25, accel: float = 1.2, asynchronous: bool = False):
        vec = pose.as_vector() if isinstance(pose, Pose6) else np.asarray(pose, dtype=float)
        if vec.shape != (6,):
            raise ValueError("pose target needs 6 values")
        return self._run(self._issue(Opcode.MOVEL, vec, speed, accel, asynchronous), asynchronous)

    def servo_j(self, q) -> int:
        q = np.asarray(q, dtype=float)
        if q.shape != (self.dof,):
            raise ValueError(f"joint target needs {self.dof} values")
        seq = self._issue(Opcode.SERVOJ, q, asynchronous=True)
        self._check(seq)
        return seq

    def stop_j(self, decel: float = 2.0, asynchronous: bool = False):
        return self._run(self._issue(Opcode.STOPJ, accel=decel, asynchronous=asynchronous), asynchronous)

    def zero_ft_sensor(self) -> CommandOutcome:
        return self.wait_for(self._issue(Opcode.ZERO_FT))

    def move_until_contact(self, twist, asynchronous: bool = False):
        twist = np.asarray(twist, dtype=float)
        if twist.shape != (6,):
            raise ValueError("twist needs 6 values")
        return self._run(self._issue(Opcode.MOVE_UNTIL_CONTACT, twist, asynchronous=asynchronous),
                         asynchronous)

    def trigger_extension(self, ext_id: int, pre_writes: dict | None = None, result_reads=(),
                          timeout_ticks: int = 5000) -> list:
        """Run the register handshake for extension ``ext_id`` and return ``result_reads``.

        ``pre_writes`` maps ``(bank, index)`` to values; ``result_reads`` lists
        ``(bank, index)`` of output registers to read once the snippet is done.
        """
        if ext_id < layout.FIRST_EXTENSION_ID:
            raise ValueError(f"extension ids start at {layout.FIRST_EXTENSION_ID}")
        trig = layout.EXTENSION_TRIGGER
        with self._ext_lock:
            for (bank, index), value in (pre_writes or {}).items():
                self.write_input(bank, index, value)
            # parameters travel in an earlier message than the trigger
            self.step()
            self.write_input("input_float", trig, float(ext_id))
            done = None
            for _ in range(timeout_ticks):
                self.step()
                flag = self.state.output_float[trig]
                if flag in (float(ext_id), -float(ext_id)):
                    done = flag
                    break
            if done is None:
                self.write_input("input_float", trig, 0.0)
                self.step()
                raise ExtensionTimeout(f"extension {ext_id} did not finish within {timeout_ticks} ticks")
            results = []
            for bank, index in result_reads:
                regs = self.state.output_int if bank == "output_int" else self.state.output_float
                results.append(regs[index])
            self.write_input("input_float", trig, 0.0)
            for _ in range(timeout_ticks):
                self.step()
                if self.state.output_float[trig] == 0.0:
                    break
            else:
                raise ExtensionTimeout(f"extension {ext_id} was not acknowledged")
            if done < 0:
                raise ExtensionError(f"extension {ext_id} failed on the controller")
            return results

    def close(self) -> None:
        self.client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class IOSession:
    def __init__(self, transport, timeout: float = 5.0):
        self.client = RtdeClient(transport.open_rtde("io"), timeout)
        self.client.negotiate_version()
        self.client.setup_inputs(["standard_digital_output_mask", "standard_digital_output"])
        self.client.start()

    def set_standard_digital_out(self, pin: int, value: bool) -> None:
        if not 0 <= pin <= 7:
            raise ValueError(f"digital output pin out of range: {pin}")
        mask = 1 << pin
        self.client.send_inputs([mask, mask if value else 0])

    def close(self) -> None:
        self.client.close()


class DashboardSession:
    def __init__(self, transport):
        self.transport = transport

    def send(self, line: str) -> str:
        return self.transport.dashboard(line)


def connect_control(transport, script: str | None = None, **kwargs) -> ControlSession:
    return ControlSession(transport, script, **kwargs)


def connect_receive(transport, names=OUTPUT_FIELDS, frequency: float = 500.0, **kwargs) -> ReceiveSession:
    return ReceiveSession(transport, names, frequency, **kwargs)
