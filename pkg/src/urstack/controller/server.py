"""TCP front ends for the simulated controller: RTDE-style, dashboard and script-upload ports."""

from __future__ import annotations

import logging
import queue
import socket
import socketserver
import threading
import time

from ..wire import ProtocolError
from .core import Controller, ScriptInstallError
from .endpoint import RtdeEndpoint

log = logging.getLogger(__name__)


class _Server(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address, handler, controller: Controller):
        self.controller = controller
        self.handlers: set = set()
        super().__init__(address, handler)


class _RtdeHandler(socketserver.BaseRequestHandler):
    def setup(self):
        self.request.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        # outbound frames go through a writer thread so a slow reader never stalls the loop
        self.outbox: queue.Queue = queue.Queue()
        self.writer = threading.Thread(target=self._write, daemon=True)
        self.writer.start()
        self.endpoint = RtdeEndpoint(self.server.controller, self.outbox.put,
                                     name=f"rtde:{self.client_address[1]}")
        self.server.handlers.add(self)

    def _write(self):
        while True:
            frame = self.outbox.get()
            if frame is None:
                return
            try:
                self.request.sendall(frame)
            except OSError:
                return

    def handle(self):
        while True:
            try:
                data = self.request.recv(65536)
            except OSError:
                break
            if not data:
                break
            try:
                self.endpoint.feed(data)
            except ProtocolError as exc:
                log.warning("%s: closing after protocol error: %s", self.endpoint.name, exc)
                break

    def finish(self):
        self.endpoint.close()
        self.outbox.put(None)
        self.writer.join(timeout=1.0)
        self.server.handlers.discard(self)


class _DashboardHandler(socketserver.StreamRequestHandler):
    def handle(self):
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace").rstrip("\r\n")
            reply = self.server.controller.dashboard_handle_line(line)
            try:
                self.wfile.write((reply + "\n").encode("utf-8"))
                self.wfile.flush()
            except OSError:
                return


class _ScriptHandler(socketserver.StreamRequestHandler):
    """Reads a whole script (until the client shuts down writing) and replies with one line."""

    def handle(self):
        text = self.rfile.read().decode("utf-8", errors="replace")
        ctrl = self.server.controller
        if ctrl.control_owner is None:
            reply = "ERROR no control connection holds the upload right"
        else:
            try:
                ids = ctrl.install_control_script(text)
                reply = "OK " + ",".join(str(i) for i in ids)
            except ScriptInstallError as exc:
                reply = f"ERROR {exc}"
        self.wfile.write((reply + "\n").encode("utf-8"))


class SimulatorServer:
    """Controller plus its three listening ports; drives wall-clock ticking when not in virtual time."""

    def __init__(self, controller: Controller, host: str | None = None, rtde_port: int | None = None,
                 dashboard_port: int | None = None, script_port: int | None = None):
        cfg = controller.config
        self.controller = controller
        host = cfg.host if host is None else host
        self.rtde = _Server((host, cfg.rtde_port if rtde_port is None else rtde_port), _RtdeHandler, controller)
        self.dashboard = _Server((host, cfg.dashboard_port if dashboard_port is None else dashboard_port),
                                 _DashboardHandler, controller)
        self.script = _Server((host, cfg.script_port if script_port is None else script_port),
                              _ScriptHandler, controller)
        self._threads: list[threading.Thread] = []
        self._stop = threading.Event()

    @property
    def host(self) -> str:
        return self.rtde.server_address[0]

    @property
    def ports(self) -> dict[str, int]:
        return {"rtde": self.rtde.server_address[1], "dashboard": self.dashboard.server_address[1],
                "script": self.script.server_address[1]}

    def start(self) -> "SimulatorServer":
        for srv in (self.rtde, self.dashboard, self.script):
            t = threading.Thread(target=srv.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)
            t.start()
            self._threads.append(t)
        if not self.controller.config.virtual_time:
            t = threading.Thread(target=self._clock, daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def _clock(self) -> None:
        period = self.controller.dt
        next_t = time.monotonic()
        while not self._stop.is_set():
            self.controller.tick()
            next_t += period
            delay = next_t - time.monotonic()
            if delay > 0:
                self._stop.wait(delay)
            else:
                # fell behind; resynchronize instead of bursting
                next_t = time.monotonic()

    def stop(self) -> None:
        self._stop.set()
        for srv in (self.rtde, self.dashboard, self.script):
            srv.shutdown()
            srv.server_close()
        for h in list(self.rtde.handlers):
            try:
                h.request.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
        for t in self._threads:
            t.join(timeout=2.0)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
