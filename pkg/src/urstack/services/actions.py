"""Long-running actions over JSON lines.

Envelope: ``{"id", "phase", "action", "body"}`` with phase one of goal,
feedback, result, cancel. Goals run one at a time in arrival order; every goal
gets exactly one result and no feedback after it.
"""

from __future__ import annotations

import logging
import queue
import threading
from typing import Callable

from .jsonlines import JsonLinesService, LocalPeer, Peer

log = logging.getLogger(__name__)


class ActionError(Exception):
    """Raised by an action callback to finish the goal with ``success: false``."""


class GoalHandle:
    def __init__(self, peer: Peer, goal_id, action: str, body):
        self.peer = peer
        self.id = goal_id
        self.action = action
        self.body = body if body is not None else {}
        self._cancel = threading.Event()
        self._lock = threading.Lock()
        self.finished = False
        self.result: dict | None = None

    @property
    def cancelled(self) -> bool:
        return self._cancel.is_set()

    def request_cancel(self) -> None:
        self._cancel.set()

    def _send(self, phase: str, body) -> None:
        self.peer.send({"id": self.id, "phase": phase, "action": self.action, "body": body})

    def feedback(self, body) -> None:
        with self._lock:
            if not self.finished:
                self._send("feedback", body)

    def finish(self, body: dict) -> bool:
        with self._lock:
            if self.finished:
                return False
            self.finished = True
            self.result = body
            self._send("result", body)
            return True


ActionCallback = Callable[[GoalHandle], dict]


class ActionHost(JsonLinesService):
    """Registry of named actions executed by a single FIFO worker."""

    def __init__(self):
        super().__init__()
        self.actions: dict[str, ActionCallback] = {}
        self._queue: queue.Queue = queue.Queue()
        self._goals: dict[tuple[int, object], GoalHandle] = {}
        self._goals_lock = threading.Lock()
        self._worker = threading.Thread(target=self._work, daemon=True)
        self._worker_started = False
        self.current: GoalHandle | None = None

    def register_action(self, name: str, callback: ActionCallback) -> None:
        if name in self.actions:
            raise ValueError(f"action already registered: {name}")
        self.actions[name] = callback

    def describe(self) -> dict:
        desc = super().describe()
        desc["actions"] = list(self.actions)
        return desc

    def on_action(self, peer: Peer, msg: dict) -> None:
        phase = msg.get("phase")
        goal_id = msg.get("id")
        action = msg.get("action")
        key = (id(peer), goal_id)
        if phase == "goal":
            handle = GoalHandle(peer, goal_id, action, msg.get("body"))
            with self._goals_lock:
                if key in self._goals:
                    peer.send({"id": goal_id, "phase": "result", "action": action,
                               "body": {"success": False, "error": f"duplicate goal id: {goal_id}"}})
                    return
                self._goals[key] = handle
            if action not in self.actions:
                handle.finish({"success": False, "error": f"unknown action: {action}"})
                return
            handle.feedback({"state": "accepted"})
            self._ensure_worker()
            self._queue.put(handle)
        elif phase == "cancel":
            with self._goals_lock:
                handle = self._goals.get(key)
            if handle is None:
                peer.send({"id": goal_id, "phase": "cancel", "action": action,
                           "body": {"acknowledged": True, "noop": True, "reason": "unknown goal"}})
                return
            if handle.finished:
                peer.send({"id": goal_id, "phase": "cancel", "action": handle.action,
                           "body": {"acknowledged": True, "noop": True, "reason": "goal already finished"}})
                return
            handle.request_cancel()
            peer.send({"id": goal_id, "phase": "cancel", "action": handle.action,
                       "body": {"acknowledged": True, "noop": False}})
        else:
            peer.send({"id": goal_id, "phase": "result", "action": action,
                       "body": {"success": False, "error": f"bad phase: {phase}"}})

    def _ensure_worker(self) -> None:
        if not self._worker_started:
            self._worker_started = True
            self._worker.start()

    def _work(self) -> None:
        while True:
            handle = self._queue.get()
            if handle is None:
                return
            self.execute(handle)

    def execute(self, handle: GoalHandle) -> dict:
        """Run one goal to its result on the calling thread."""
        if handle.cancelled:
            handle.finish({"success": False, "cancelled": True})
            return handle.result
        self.current = handle
        try:
            body = self.actions[handle.action](handle)
            if not isinstance(body, dict):
                body = {"value": body}
            body.setdefault("success", True)
        except ActionError as exc:
            body = {"success": False, "error": str(exc)}
        except Exception as exc:
            log.exception("action %s failed", handle.action)
            body = {"success": False, "error": f"{type(exc).__name__}: {exc}"}
        finally:
            self.current = None
        handle.finish(body)
        return handle.result

    def run_goal(self, action: str, body=None, peer: Peer | None = None) -> dict:
        """Execute a goal synchronously (in-process callers and tests)."""
        peer = peer or LocalPeer()
        handle = GoalHandle(peer, None, action, body)
        if action not in self.actions:
            handle.finish({"success": False, "error": f"unknown action: {action}"})
            return handle.result
        return self.execute(handle)

    def stop_worker(self) -> None:
        if self._worker_started:
            self._queue.put(None)
            self._worker.join(timeout=5.0)
