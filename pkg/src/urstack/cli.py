"""Command-line entry points.

Exit codes: 0 success, 1 the action finished with an error result,
2 usage or configuration error, 3 transport failure or refused connection.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import socket
import sys
import threading
import time
from pathlib import Path

from .client import LocalTransport, ScriptUploadError, TcpTransport
from .controller import ConfigError, Controller, ControllerConfig, ExclusivityError, ForceEnv, ForceEvent
from .controller import ScriptInstallError, SimulatorServer, load_config
from .kinematics import CHAIN_DIR, load_chain
from .recorder import RecordError, TraceRecorder, check_topics
from .services import CommandServer, DashboardServer, ManifestError, StateReceiver, load_manifest, parse_manifest
from .services.jsonlines import JsonLinesClient, LocalPeer, ServiceError
from .wire import ProtocolError

EXIT_OK, EXIT_ACTION_ERROR, EXIT_CONFIG, EXIT_TRANSPORT = 0, 1, 2, 3

DEMO_PLANE_Z = 0.2
DEMO_STIFFNESS = 1000.0
DEMO_INJECTIONS = ("1.0,1.5,15,0,0,0,0,0", "2.0,2.5,0,15,0,0,0,0")

log = logging.getLogger("urstack")


class UsageError(Exception):
    pass


def split_address(text: str, default_port: int | None = None) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        host, port = text, None
    if port is None:
        if default_port is None:
            raise UsageError(f"address needs a port: {text!r}")
        return host or "127.0.0.1", default_port
    try:
        return host or "127.0.0.1", int(port)
    except ValueError:
        raise UsageError(f"bad port in address {text!r}") from None


def _wait_for_interrupt(alive=lambda: True) -> bool:
    """Block until SIGINT/SIGTERM (True) or until ``alive`` turns false (False)."""
    stop = threading.Event()
    previous = signal.signal(signal.SIGTERM, lambda *_: stop.set())
    try:
        while not stop.wait(0.2):
            if not alive():
                return False
    except KeyboardInterrupt:
        pass
    finally:
        signal.signal(signal.SIGTERM, previous)
    return True


def _robot_transport(args) -> TcpTransport:
    if not args.robot:
        raise UsageError("--robot is required (or set UR_STACK_ROBOT)")
    host, rtde_port = split_address(args.robot, 30004)
    return TcpTransport(host, rtde_port, args.dashboard_port, args.script_port, timeout=args.timeout)


# ---------------------------------------------------------------------------
# subcommands


def cmd_sim(args) -> int:
    overrides = dict(frequency=args.freq, rtde_port=args.port, dashboard_port=args.dashboard_port,
                     script_port=args.script_port, host=args.host)
    if args.chain:
        overrides["chain"] = load_chain(args.chain)
    if args.virtual_time is not None:
        overrides["virtual_time"] = args.virtual_time
    if args.config:
        config = load_config(args.config, **overrides)
    else:
        config = ControllerConfig(**{k: v for k, v in overrides.items() if v is not None})
    if args.plane_z is not None or args.stiffness is not None or args.inject:
        events = [ForceEvent.parse(s) for s in args.inject] or config.force.injected
        config.force = ForceEnv(config.force.plane_z if args.plane_z is None else args.plane_z,
                                config.force.stiffness if args.stiffness is None else args.stiffness, events)
    with SimulatorServer(Controller(config)) as server:
        ports = server.ports
        mode = "virtual" if config.virtual_time else "wall-clock"
        print(f"simulator on {server.host}: rtde {ports['rtde']}, dashboard {ports['dashboard']}, "
              f"script {ports['script']} at {config.frequency:g} Hz ({mode} time)", flush=True)
        _wait_for_interrupt()
    return EXIT_OK


def cmd_state_receiver(args) -> int:
    transport = _robot_transport(args)
    receiver = StateReceiver(transport, args.freq, dof=args.dof)
    host, port = receiver.serve(args.host, args.port)
    receiver.start()
    print(f"state receiver on {host}:{port} at {args.freq:g} Hz", flush=True)
    lost = not _wait_for_interrupt(lambda: receiver._thread.is_alive())
    receiver.stop()
    if lost:
        print("error: lost the controller connection", file=sys.stderr)
        return EXIT_TRANSPORT
    return EXIT_OK


def cmd_command_server(args) -> int:
    manifest = load_manifest(args.plugins)
    transport = _robot_transport(args)
    chain = load_chain(args.chain)
    server = CommandServer(manifest, transport, chain, args.freq)
    host, port = server.serve(args.host, args.port)
    print(f"command server on {host}:{port} with actions: {', '.join(server.actions) or '(none)'}", flush=True)
    if server.extension_ids:
        print("extensions: " + ", ".join(f"{n}={i}" for n, i in server.extension_ids.items()), flush=True)
    _wait_for_interrupt()
    server.close()
    return EXIT_OK


def cmd_dashboard_server(args) -> int:
    manifest = load_manifest(args.plugins)
    transport = _robot_transport(args)
    server = DashboardServer(manifest, transport)
    host, port = server.serve(args.host, args.port)
    print(f"dashboard server on {host}:{port} with actions: {', '.join(server.actions) or '(none)'}", flush=True)
    _wait_for_interrupt()
    server.close()
    return EXIT_OK


def cmd_send(args) -> int:
    try:
        goal = json.loads(args.goal)
    except json.JSONDecodeError as exc:
        raise UsageError(f"goal is not valid JSON: {exc.msg}") from None
    host, port = split_address(args.server)
    with JsonLinesClient(host, port, timeout=args.timeout) as client:
        client.send({"id": 1, "phase": "goal", "action": args.action, "body": goal})
        while True:
            msg = client.recv()
            if msg.get("id") != 1:
                continue
            print(json.dumps(msg), flush=True)
            if msg.get("phase") == "result":
                return EXIT_OK if msg.get("body", {}).get("success") else EXIT_ACTION_ERROR
            if not args.wait:
                return EXIT_OK


def cmd_record(args) -> int:
    topics = check_topics(t.strip().lstrip("/") for t in args.topics.split(",") if t.strip())
    recorder = TraceRecorder(topics)
    host, port = split_address(args.server)
    with JsonLinesClient(host, port, timeout=args.timeout) as client:
        for topic in topics:
            client.subscribe(topic)
        deadline = time.monotonic() + args.duration
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                break
            client.sock.settimeout(remaining)
            try:
                recorder.add(client.recv())
            except socket.timeout:
                break
    rows = recorder.write(args.csv)
    print(f"wrote {rows} rows to {args.csv}", flush=True)
    return EXIT_OK


def run_demo_contact(out: str | Path, stiffness: float = DEMO_STIFFNESS, plane_z: float = DEMO_PLANE_Z,
                     injections=DEMO_INJECTIONS) -> dict:
    """Run the contact scenario in virtual time and write its wrench and joint trace."""
    config = ControllerConfig(force=ForceEnv(plane_z, stiffness, [ForceEvent.parse(s) for s in injections]),
                              virtual_time=True)
    controller = Controller(config)
    transport = LocalTransport(controller)
    receiver = StateReceiver(transport, frequency=config.frequency, dof=config.chain.n)
    peer = LocalPeer("recorder")
    topics = ["wrench", "joint_states"]
    for topic in topics:
        receiver.subscribe(topic, peer)
    manifest = parse_manifest("[MoveDownUntilForce]\nkind = command\n", "<demo>")
    server = CommandServer(manifest, transport, config.chain, config.frequency)
    try:
        result = server.run_goal("move_down_until_force", {})
        receiver.step()
    finally:
        server.close()
        receiver.stop()
    recorder = TraceRecorder(topics, dof=config.chain.n)
    for msg in peer.drain():
        recorder.add(msg)
    rows = recorder.write(out)
    return {"result": result, "rows": rows, "ticks": controller.ticks}


def cmd_demo_contact(args) -> int:
    t0 = time.monotonic()
    summary = run_demo_contact(args.out, args.stiffness, args.plane_z)
    result = summary["result"]
    if not result.get("success"):
        print(f"error: {result.get('error')}", file=sys.stderr)
        return EXIT_ACTION_ERROR
    fz = result["wrench"][2]
    print(f"contact={str(result['contact']).lower()} fz={fz:.3f} N z={result['tcp_pose'][2]:.4f} m "
          f"ticks={summary['ticks']} rows={summary['rows']} wall={time.monotonic() - t0:.2f}s -> {args.out}",
          flush=True)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_robot_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--robot", default=os.environ.get("UR_STACK_ROBOT"),
                   help="controller address host[:rtde_port] (default: $UR_STACK_ROBOT)")
    p.add_argument("--dashboard-port", type=int, default=29999)
    p.add_argument("--script-port", type=int, default=30002)
    p.add_argument("--timeout", type=float, default=5.0, help="socket timeout in seconds")
    p.add_argument("--host", default="127.0.0.1", help="address the service listens on")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="urstack", description="Simulated arm controller, client and services.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sim", help="run the simulated controller")
    p.add_argument("--config", help="INI file with a [controller] section; flags override it")
    p.add_argument("--host")
    p.add_argument("--port", type=int, help="data-exchange port (default 30004)")
    p.add_argument("--dashboard-port", type=int)
    p.add_argument("--script-port", type=int)
    p.add_argument("--freq", type=float, help="control frequency in Hz (default 500)")
    p.add_argument("--chain", help="chain configuration file")
    p.add_argument("--plane-z", type=float)
    p.add_argument("--stiffness", type=float)
    p.add_argument("--inject", action="append", default=[], metavar="T0,T1,FX,FY,FZ,TX,TY,TZ")
    p.add_argument("--virtual-time", action=argparse.BooleanOptionalAction, default=None,
                   help="tick only on control-client packages (default) or on the wall clock")
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("state-receiver", help="publish robot state topics")
    _add_robot_flags(p)
    p.add_argument("--port", type=int, default=0, help="listening port (default: any free port)")
    p.add_argument("--freq", type=float, default=100.0)
    p.add_argument("--dof", type=int, default=6)
    p.set_defaults(func=cmd_state_receiver)

    for name, func, help_text in (("command-server", cmd_command_server, "host command and extension plugins"),
                                  ("dashboard-server", cmd_dashboard_server, "host dashboard plugins")):
        p = sub.add_parser(name, help=help_text)
        _add_robot_flags(p)
        p.add_argument("--port", type=int, default=0, help="listening port (default: any free port)")
        p.add_argument("--plugins", required=True, help="plugin manifest file")
        if name == "command-server":
            p.add_argument("--chain", default=str(CHAIN_DIR / "six_dof_example.cfg"))
            p.add_argument("--freq", type=float, default=500.0, help="controller frequency in Hz")
        p.set_defaults(func=func)

    p = sub.add_parser("send", help="send one action goal and print feedback and result")
    p.add_argument("--server", required=True, help="host:port of a command or dashboard server")
    p.add_argument("action")
    p.add_argument("goal", nargs="?", default="{}")
    p.add_argument("--wait", action=argparse.BooleanOptionalAction, default=True,
                   help="wait for the result (default) or return once accepted")
    p.add_argument("--timeout", type=float, default=60.0)
    p.set_defaults(func=cmd_send)

    p = sub.add_parser("record", help="record topics to CSV")
    p.add_argument("--server", required=True, help="host:port of a state receiver")
    p.add_argument("--topics", required=True, help="comma-separated topic names")
    p.add_argument("--csv", required=True)
    p.add_argument("--duration", type=float, default=1.0, help="seconds of wall time")
    p.add_argument("--timeout", type=float, default=5.0)
    p.set_defaults(func=cmd_record)

    p = sub.add_parser("demo-contact", help="run the force-guarded descent scenario and write its trace")
    p.add_argument("--out", default="demo_contact.csv")
    p.add_argument("--stiffness", type=float, default=DEMO_STIFFNESS)
    p.add_argument("--plane-z", type=float, default=DEMO_PLANE_Z)
    p.set_defaults(func=cmd_demo_contact)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, ManifestError, RecordError, ScriptUploadError, ScriptInstallError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ExclusivityError as exc:
        print(f"error: controller refused control: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (ConnectionError, OSError, ProtocolError, ServiceError) as exc:
        print(f"error: transport failure: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT


if __name__ == "__main__":
    sys.exit(main())
