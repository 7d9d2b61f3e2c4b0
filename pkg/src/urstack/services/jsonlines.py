"""JSON-lines transport shared by the services: one JSON object per line over TCP.

Requests understood by every service:

* ``{"subscribe": topic}`` then a stream of ``{"topic", "stamp", "body"}``
* ``{"publish": topic, "body": ...}`` for input topics
* ``{"service": name, "args": ...}`` answered by ``{"result": ...}`` or ``{"error": msg}``
* ``{"describe": true}`` answered with the advertised surface
* action envelopes ``{"id", "phase", "action", "body"}`` (see ``actions``)
"""

from __future__ import annotations

import json
import logging
import queue
import socket
import socketserver
import threading
from typing import Callable

log = logging.getLogger(__name__)


class ServiceError(Exception):
    pass


class Peer:
    """One client connection; ``send`` is safe from any thread."""

    def __init__(self, wfile, name: str = "peer"):
        self._wfile = wfile
        self._lock = threading.Lock()
        self.name = name
        self.closed = False

    def send(self, obj: dict) -> None:
        line = (json.dumps(obj, separators=(",", ":")) + "\n").encode("utf-8")
        with self._lock:
            if self.closed:
                return
            try:
                self._wfile.write(line)
                self._wfile.flush()
            except (OSError, ValueError):
                self.closed = True


class LocalPeer(Peer):
    """In-process peer collecting messages in a queue."""

    def __init__(self, name: str = "local"):
        super().__init__(None, name)
        self.messages: queue.Queue = queue.Queue()

    def send(self, obj: dict) -> None:
        # round-trip through JSON so local callers see exactly what the wire carries
        self.messages.put(json.loads(json.dumps(obj)))

    def get(self, timeout: float | None = None) -> dict:
        return self.messages.get(timeout=timeout)

    def drain(self) -> list[dict]:
        out = []
        while True:
            try:
                out.append(self.messages.get_nowait())
            except queue.Empty:
                return out


class JsonLinesService:
    """Topic fan-out, request/reply services and a TCP front end."""

    topics: tuple[str, ...] = ()
    input_topics: tuple[str, ...] = ()

    def __init__(self):
        self._subs: dict[str, set] = {}
        self._subs_lock = threading.Lock()
        self._services: dict[str, Callable] = {}
        # callable but kept out of the advertised service list
        self._controls: set[str] = set()
        self._server = None
        self._thread = None

    # -- surface ----------------------------------------------------------------

    def add_service(self, name: str, fn: Callable, advertised: bool = True) -> None:
        self._services[name] = fn
        if not advertised:
            self._controls.add(name)

    def advertised_services(self) -> list[str]:
        return [n for n in self._services if n not in self._controls]

    def describe(self) -> dict:
        return {"topics": list(self.topics), "services": self.advertised_services(),
                "controls": sorted(self._controls), "input_topics": list(self.input_topics)}

    def call_service(self, name: str, args=None):
        fn = self._services.get(name.lstrip("/"))
        if fn is None:
            raise ServiceError(f"unknown service: {name}")
        return fn(args)

    def subscribe(self, topic: str, peer: Peer) -> None:
        topic = topic.lstrip("/")
        if topic not in self.topics:
            raise ServiceError(f"unknown topic: {topic}")
        with self._subs_lock:
            self._subs.setdefault(topic, set()).add(peer)

    def unsubscribe_all(self, peer: Peer) -> None:
        with self._subs_lock:
            for peers in self._subs.values():
                peers.discard(peer)

    def publish(self, topic: str, stamp: float, body) -> None:
        with self._subs_lock:
            peers = list(self._subs.get(topic, ()))
        msg = {"topic": topic, "stamp": stamp, "body": body}
        for peer in peers:
            peer.send(msg)
            if peer.closed:
                self.unsubscribe_all(peer)

    def on_publish(self, topic: str, body) -> None:
        raise ServiceError(f"topic does not accept messages: {topic}")

    def on_action(self, peer: Peer, msg: dict) -> None:
        peer.send({"id": msg.get("id"), "phase": "result", "action": msg.get("action"),
                   "body": {"success": False, "error": "this service hosts no actions"}})

    def on_disconnect(self, peer: Peer) -> None:
        self.unsubscribe_all(peer)

    # -- dispatch ---------------------------------------------------------------

    def handle_message(self, peer: Peer, msg) -> None:
        if not isinstance(msg, dict):
            peer.send({"error": "expected a JSON object"})
            return
        try:
            if "subscribe" in msg:
                self.subscribe(str(msg["subscribe"]), peer)
                peer.send({"subscribed": msg["subscribe"].lstrip("/")})
            elif "publish" in msg:
                topic = str(msg["publish"]).lstrip("/")
                if topic not in self.input_topics:
                    raise ServiceError(f"topic does not accept messages: {topic}")
                self.on_publish(topic, msg.get("body"))
                peer.send({"published": topic})
            elif "service" in msg:
                peer.send({"result": self.call_service(str(msg["service"]), msg.get("args"))})
            elif "describe" in msg:
                peer.send({"result": self.describe()})
            elif "phase" in msg:
                self.on_action(peer, msg)
            else:
                raise ServiceError("unrecognized request")
        except ServiceError as exc:
            peer.send({"error": str(exc)})

    # -- TCP front end ----------------------------------------------------------

    def serve(self, host: str = "127.0.0.1", port: int = 0) -> tuple[str, int]:
        service = self

        class Handler(socketserver.StreamRequestHandler):
            def handle(self):
                peer = Peer(self.wfile, f"{self.client_address[0]}:{self.client_address[1]}")
                try:
                    for raw in self.rfile:
                        if not raw.strip():
                            continue
                        try:
                            msg = json.loads(raw)
                        except json.JSONDecodeError as exc:
                            peer.send({"error": f"bad JSON: {exc.msg}"})
                            continue
                        service.handle_message(peer, msg)
                except OSError:
                    pass
                finally:
                    peer.closed = True
                    service.on_disconnect(peer)

        class Server(socketserver.ThreadingTCPServer):
            daemon_threads = True
            allow_reuse_address = True

        self._server = Server((host, port), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, kwargs={"poll_interval": 0.05},
                                        daemon=True)
        self._thread.start()
        return self._server.server_address[:2]

    @property
    def address(self) -> tuple[str, int] | None:
        return None if self._server is None else self._server.server_address[:2]

    def shutdown(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None


class JsonLinesClient:
    """Blocking client for the JSON-lines services."""

    def __init__(self, host: str, port: int, timeout: float = 10.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.rfile = self.sock.makefile("rb")
        self.timeout = timeout
        self._lock = threading.Lock()

    def send(self, obj: dict) -> None:
        with self._lock:
            self.sock.sendall((json.dumps(obj) + "\n").encode("utf-8"))

    def recv(self) -> dict:
        raw = self.rfile.readline()
        if not raw:
            raise ConnectionError("service closed the connection")
        return json.loads(raw)

    def request(self, obj: dict) -> dict:
        """Send and return the first reply that is not a topic message (topic messages are dropped)."""
        self.send(obj)
        while True:
            msg = self.recv()
            if "topic" not in msg:
                return msg

    def call(self, service: str, args=None):
        reply = self.request({"service": service, "args": args})
        if "error" in reply:
            raise ServiceError(reply["error"])
        return reply["result"]

    def subscribe(self, topic: str) -> None:
        reply = self.request({"subscribe": topic})
        if "error" in reply:
            raise ServiceError(reply["error"])

    def publish(self, topic: str, body) -> None:
        self.send({"publish": topic, "body": body})

    def close(self) -> None:
        try:
            self.rfile.close()
            self.sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
