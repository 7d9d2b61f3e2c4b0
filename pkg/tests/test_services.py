import threading

import numpy as np
import pytest

from urstack.client import LocalTransport, connect_control
from urstack.controller import ExclusivityError
from urstack.layout import FIRST_EXTENSION_ID
from urstack.services import plugins as plugin_mod
from urstack.services.actions import ActionError, ActionHost
from urstack.services.command_server import CommandServer, DashboardServer, compose_script
from urstack.services.jsonlines import JsonLinesClient, LocalPeer, ServiceError
from urstack.services.manifest import (
    ManifestError,
    PluginEntry,
    PluginManifest,
    load_manifest,
    parse_manifest,
    snake_case,
)
from urstack.services.state_receiver import SERVICES, TOPICS, StateReceiver

MANIFEST = """\
[MoveDownUntilForce]
kind = command
threshold_n = 20

[GripperGrip]
kind = extension

[DashboardPlay]
kind = dashboard
"""


def goal(peer, host, goal_id, action, body=None):
    host.handle_message(peer, {"id": goal_id, "phase": "goal", "action": action, "body": body or {}})


def wait_result(peer, goal_id, timeout=30.0):
    seen = []
    while True:
        msg = peer.get(timeout=timeout)
        seen.append(msg)
        if msg.get("id") == goal_id and msg.get("phase") == "result":
            return msg["body"], seen


# -- state receiver ----------------------------------------------------------


def test_state_receiver_surface(local):
    transport, _, _ = local
    sr = StateReceiver(transport)
    desc = sr.describe()
    assert desc["topics"] == list(TOPICS) and len(desc["topics"]) == 4
    assert desc["services"] == list(SERVICES) and len(desc["services"]) == 4
    assert "pause_joint_updates" not in desc["services"]
    assert desc["input_topics"] == ["fake_joint_states"]


def test_state_receiver_no_data_yet(local):
    transport, _, _ = local
    sr = StateReceiver(transport)
    peer = LocalPeer()
    sr.handle_message(peer, {"service": "get_joint_state"})
    assert peer.get(timeout=1) == {"error": "no data yet"}


def test_state_receiver_publishes_every_topic(local):
    transport, ctrl, _ = local
    sr = StateReceiver(transport, frequency=100)
    peer = LocalPeer()
    for t in TOPICS:
        sr.handle_message(peer, {"subscribe": "/" + t})
    assert [m["subscribed"] for m in peer.drain()] == list(TOPICS)
    with connect_control(transport) as control:
        control.wait_ticks(9)
    # 10 ticks at 500 Hz, 100 Hz stream: 2 packages
    assert sr.step() == 2
    msgs = peer.drain()
    assert [m["topic"] for m in msgs] == list(TOPICS) * 2
    joint = msgs[-4]["body"]
    assert joint["name"][0] == "shoulder_pan_joint"
    np.testing.assert_array_equal(joint["position"], ctrl.chain.home_q())
    got = sr.call_service("get_joint_state")
    assert got["body"] == joint and got["stamp"] == msgs[-4]["stamp"]
    assert sr.call_service("/get_io_state")["body"] == {"digital_in": 0, "digital_out": 0}


def test_pause_fake_unpause(local):
    transport, ctrl, _ = local
    sr = StateReceiver(transport, frequency=500)
    peer = LocalPeer()
    control = connect_control(transport)
    sr.step()
    sr.handle_message(peer, {"publish": "fake_joint_states", "body": [0.0] * 6})
    assert "not paused" in peer.get(timeout=1)["error"]

    sr.handle_message(peer, {"service": "pause_joint_updates", "args": {"pause": True}})
    assert peer.get(timeout=1) == {"result": {"paused": True}}
    fake = [0.1, -0.2, 0.3, -0.4, 0.5, -0.6]
    sr.handle_message(peer, {"publish": "fake_joint_states", "body": {"position": fake}})
    assert peer.get(timeout=1) == {"published": "fake_joint_states"}
    sr.handle_message(peer, {"publish": "fake_joint_states", "body": [1.0]})
    assert "6 positions" in peer.get(timeout=1)["error"]

    target = ctrl.q + 0.05
    control.move_j(target)
    sr.step()
    assert sr.call_service("get_joint_state")["body"]["position"] == fake
    # the pose keeps tracking the real arm while joints are faked
    live = sr.call_service("get_tcp_pose")["body"]["position"]
    np.testing.assert_allclose(live, control.state.tcp_pose.position, atol=1e-12)

    sr.call_service("pause_joint_updates", {"pause": False})
    control.step()
    sr.step()
    np.testing.assert_allclose(sr.call_service("get_joint_state")["body"]["position"], target, atol=1e-12)
    control.close()


def test_two_state_receivers_both_stream(local):
    transport, _, _ = local
    a, b = StateReceiver(transport, frequency=500), StateReceiver(transport, frequency=250)
    with connect_control(transport) as control:
        control.wait_ticks(19)
    assert a.step() == 20
    assert b.step() == 10


def test_state_receiver_unknown_requests(local):
    transport, _, _ = local
    sr = StateReceiver(transport)
    peer = LocalPeer()
    sr.handle_message(peer, {"subscribe": "nope"})
    sr.handle_message(peer, {"service": "nope"})
    sr.handle_message(peer, {"publish": "joint_states", "body": []})
    sr.handle_message(peer, {"id": 1, "phase": "goal", "action": "x"})
    sr.handle_message(peer, [1, 2])
    replies = peer.drain()
    assert replies[0] == {"error": "unknown topic: nope"}
    assert replies[1] == {"error": "unknown service: nope"}
    assert "does not accept" in replies[2]["error"]
    assert replies[3]["body"]["success"] is False
    assert replies[4] == {"error": "expected a JSON object"}


# -- action semantics ----------------------------------------------------------


def test_goals_run_in_arrival_order():
    host = ActionHost()
    gate = threading.Event()
    order = []

    def slow(handle):
        gate.wait(5)
        order.append(handle.body["n"])
        return {"n": handle.body["n"]}

    def fast(handle):
        order.append(handle.body["n"])
        return {"n": handle.body["n"]}

    host.register_action("slow", slow)
    host.register_action("fast", fast)
    peer = LocalPeer()
    goal(peer, host, 1, "slow", {"n": 1})
    goal(peer, host, 2, "fast", {"n": 2})
    goal(peer, host, 3, "fast", {"n": 3})
    gate.set()
    body, _ = wait_result(peer, 3)
    assert order == [1, 2, 3]
    assert body == {"n": 3, "success": True}
    host.stop_worker()


def test_result_is_final_and_unique():
    host = ActionHost()

    def chatty(handle):
        handle.feedback({"k": 1})
        handle.finish({"early": True})
        handle.feedback({"k": 2})
        return {"late": True}

    host.register_action("chatty", chatty)
    peer = LocalPeer()
    goal(peer, host, "a", "chatty")
    body, seen = wait_result(peer, "a")
    host.stop_worker()
    assert body == {"early": True}
    assert [m["phase"] for m in seen] == ["feedback", "feedback", "result"]
    assert peer.drain() == []


def test_duplicate_unknown_and_bad_phase():
    host = ActionHost()
    gate = threading.Event()
    host.register_action("wait", lambda h: gate.wait(5) and {})
    peer = LocalPeer()
    goal(peer, host, 7, "wait")
    goal(peer, host, 7, "wait")
    goal(peer, host, 8, "missing")
    host.handle_message(peer, {"id": 9, "phase": "pause", "action": "wait"})
    msgs = [peer.get(timeout=1) for _ in range(4)]
    assert msgs[0]["body"] == {"state": "accepted"}
    assert msgs[1]["body"] == {"success": False, "error": "duplicate goal id: 7"}
    assert msgs[2]["body"] == {"success": False, "error": "unknown action: missing"}
    assert msgs[3]["body"]["error"] == "bad phase: pause"
    gate.set()
    body, _ = wait_result(peer, 7)
    assert body["success"] is True
    with pytest.raises(ValueError, match="already registered"):
        host.register_action("wait", lambda h: {})
    host.stop_worker()


def test_same_goal_id_on_two_peers_is_not_duplicate():
    host = ActionHost()
    host.register_action("echo", lambda h: {"v": h.body.get("v")})
    p1, p2 = LocalPeer("one"), LocalPeer("two")
    goal(p1, host, 1, "echo", {"v": 1})
    goal(p2, host, 1, "echo", {"v": 2})
    assert wait_result(p1, 1)[0]["v"] == 1
    assert wait_result(p2, 1)[0]["v"] == 2
    host.stop_worker()


def test_action_errors_become_failed_results():
    host = ActionHost()

    def refuse(h):
        raise ActionError("not today")

    def crash(h):
        raise KeyError("boom")

    host.register_action("refuse", refuse)
    host.register_action("crash", crash)
    assert host.run_goal("refuse") == {"success": False, "error": "not today"}
    assert host.run_goal("crash")["error"].startswith("KeyError")
    assert host.run_goal("absent")["error"] == "unknown action: absent"


def test_cancel_queued_goal_before_it_runs():
    host = ActionHost()
    gate = threading.Event()
    host.register_action("wait", lambda h: gate.wait(5) and {})
    peer = LocalPeer()
    goal(peer, host, 1, "wait")
    goal(peer, host, 2, "wait")
    host.handle_message(peer, {"id": 2, "phase": "cancel", "action": "wait"})
    gate.set()
    body, seen = wait_result(peer, 2)
    assert body == {"success": False, "cancelled": True}
    ack = [m for m in seen if m["phase"] == "cancel"]
    assert ack[0]["body"] == {"acknowledged": True, "noop": False}
    host.stop_worker()


# -- command server -----------------------------------------------------------


@pytest.fixture
def server(local):
    transport, ctrl, tap = local
    srv = CommandServer(parse_manifest(MANIFEST), transport, ctrl.chain)
    yield srv, ctrl, transport
    srv.close()


def test_command_server_composition(server):
    srv, ctrl, transport = server
    assert srv.describe()["actions"] == ["move_down_until_force", "gripper_grip", "dashboard_play"]
    assert srv.extension_ids == {"gripper_grip": FIRST_EXTENSION_ID}
    assert ctrl.control_claims == 1
    assert "def ext_256():" in srv.script and "def sg_grip(width):" in srv.script
    with pytest.raises(ExclusivityError):
        CommandServer(parse_manifest(MANIFEST), transport, ctrl.chain)


def test_command_server_runs_each_kind(server):
    srv, ctrl, _ = server
    assert srv.run_goal("gripper_grip", {"width": 150}) == {"success": True, "width": 100}
    assert srv.run_goal("dashboard_play") == {"success": True, "reply": "Starting program"}
    res = srv.run_goal("move_down_until_force")
    assert res["contact"] is True and abs(res["wrench"][2]) >= 20


def test_cancel_during_move_then_noop(local):
    transport, ctrl, _ = local
    manifest = parse_manifest("[MoveL]\nkind = command\n")
    srv = CommandServer(manifest, transport, ctrl.chain)
    peer = LocalPeer()
    pose = srv.control.state.tcp_pose.as_vector()
    pose[0] += 0.3
    goal(peer, srv, "m", "move_l", {"pose": list(pose), "speed": 0.1, "accel": 0.5})
    while "ticks" not in peer.get(timeout=10)["body"]:
        pass
    srv.handle_message(peer, {"id": "m", "phase": "cancel", "action": "move_l"})
    body, seen = wait_result(peer, "m")
    assert body["success"] is False and body["cancelled"] is True
    assert max(abs(v) for v in body["snapshot"]["qd"]) == 0.0
    assert body["snapshot"]["tcp_pose"][0] < pose[0] - 0.1
    srv.handle_message(peer, {"id": "m", "phase": "cancel", "action": "move_l"})
    late = peer.get(timeout=1)
    assert late["phase"] == "cancel" and late["body"]["noop"] is True
    srv.close()


def test_cancel_decel_from_manifest(local, monkeypatch):
    transport, ctrl, _ = local
    seen = []
    real = plugin_mod.ControlSession.stop_j

    def spy(self, decel=2.0, asynchronous=False):
        seen.append(decel)
        return real(self, decel, asynchronous)

    monkeypatch.setattr(plugin_mod.ControlSession, "stop_j", spy)
    srv = CommandServer(parse_manifest("[MoveJ]\nkind = command\ncancel_decel = 7.5\n"), transport, ctrl.chain)
    peer = LocalPeer()
    goal(peer, srv, 1, "move_j", {"q": list(ctrl.q + 1.0), "speed": 0.5})
    while "ticks" not in peer.get(timeout=10)["body"]:
        pass
    srv.handle_message(peer, {"id": 1, "phase": "cancel", "action": "move_j"})
    assert wait_result(peer, 1)[0]["cancelled"] is True
    assert seen == [7.5]
    srv.close()


@pytest.mark.parametrize("value", ["0", "-1", "true", "\"fast\""])
def test_cancel_decel_must_be_positive(make_controller, value):
    ctrl = make_controller()
    with pytest.raises(ManifestError, match="cancel_decel"):
        CommandServer(parse_manifest(f"[MoveJ]\nkind = command\ncancel_decel = {value}\n"),
                      LocalTransport(ctrl), ctrl.chain)


def test_empty_manifest_is_valid(local):
    transport, ctrl, _ = local
    srv = CommandServer(PluginManifest([]), transport, ctrl.chain)
    assert srv.describe()["actions"] == []
    assert srv.control is None and ctrl.control_claims == 0
    srv.close()


def test_bad_snippet_names_the_plugin(local, monkeypatch):
    class Broken(plugin_mod.ExtensionPlugin):
        snippet = "x = = 1\n"

    monkeypatch.setitem(plugin_mod.PLUGINS, "broken", Broken)
    transport, ctrl, _ = local
    with pytest.raises(ManifestError, match="plugin 'broken' snippet: .*line 2"):
        CommandServer(parse_manifest("[Broken]\nkind = extension\n"), transport, ctrl.chain)
    # nothing was claimed, so a good server can still connect
    CommandServer(parse_manifest(MANIFEST), transport, ctrl.chain).close()


def test_compose_script_orders_extensions():
    grip = plugin_mod.GripperGripPlugin(PluginEntry("grip_a", "extension", "gripper_grip"))
    other = plugin_mod.GripperGripPlugin(PluginEntry("grip_b", "extension", "gripper_grip"))
    text = compose_script([(256, grip), (257, other)])
    assert text.index("# grip_a") < text.index("def ext_256") < text.index("# grip_b") < text.index("def ext_257")


def test_dashboard_server_rejects_command_plugins(local):
    transport, ctrl, _ = local
    with pytest.raises(ManifestError, match="dashboard plugins only"):
        DashboardServer(parse_manifest(MANIFEST), transport)
    srv = DashboardServer(parse_manifest("[DashboardQuery]\nkind = dashboard\n"), transport)
    assert srv.run_goal("dashboard_query")["success"] is True
    assert ctrl.control_claims == 0
    srv.close()


def test_actions_over_tcp(server):
    srv, ctrl, _ = server
    host, port = srv.serve()
    with JsonLinesClient(host, port) as client:
        assert client.request({"describe": True})["result"]["actions"][1] == "gripper_grip"
        client.send({"id": 5, "phase": "goal", "action": "gripper_grip", "body": {"width": 40}})
        msgs = [client.recv(), client.recv()]
        assert msgs[0]["phase"] == "feedback" and msgs[0]["body"] == {"state": "accepted"}
        assert msgs[1] == {"id": 5, "phase": "result", "action": "gripper_grip",
                           "body": {"success": True, "width": 40}}
        with pytest.raises(ServiceError, match="unknown service"):
            client.call("nothing")
        client.send({"id": 6})
        assert client.recv() == {"error": "unrecognized request"}


def test_state_receiver_over_tcp(local):
    transport, _, _ = local
    sr = StateReceiver(transport, frequency=500)
    host, port = sr.serve()
    with JsonLinesClient(host, port) as client:
        with pytest.raises(ServiceError, match="no data yet"):
            client.call("get_wrench")
        client.subscribe("wrench")
        with connect_control(transport) as control:
            control.step()
        sr.step()
        msg = client.recv()
        assert msg["topic"] == "wrench" and msg["body"]["force"] == [0.0, 0.0, 0.0]
        assert client.call("get_wrench")["body"] == msg["body"]
    sr.stop()


# -- manifest ------------------------------------------------------------------


def test_manifest_parsing():
    m = parse_manifest(MANIFEST + "\n[Grip2]\nkind = extension\nplugin = GripperGrip\nnote = soft jaws\n")
    assert [e.name for e in m.entries] == ["move_down_until_force", "gripper_grip", "dashboard_play", "grip2"]
    assert m.entries[0].parameters == {"threshold_n": 20}
    assert m.entries[3].plugin == "gripper_grip"
    assert m.entries[3].parameters == {"note": "soft jaws"}
    assert [e.name for e in m.of_kind("extension")] == ["gripper_grip", "grip2"]
    assert snake_case("MoveDownUntilForce") == "move_down_until_force"


@pytest.mark.parametrize("text,match", [
    ("[A]\nplugin = move_j\n", "missing kind"),
    ("[A]\nkind = motor\n", "kind must be one of"),
    ("[MoveJ]\nkind = command\n[move_j]\nkind = command\n", "duplicate plugin names: move_j"),
    ("kind = command\n", "<manifest>"),
])
def test_manifest_errors(text, match):
    with pytest.raises(ManifestError, match=match):
        parse_manifest(text)


def test_unknown_or_mismatched_plugin(make_controller):
    ctrl = make_controller()
    with pytest.raises(ManifestError, match="unknown implementation 'teleport'"):
        CommandServer(parse_manifest("[Teleport]\nkind = command\n"), LocalTransport(ctrl), ctrl.chain)
    with pytest.raises(ManifestError, match="is a 'extension' plugin, not 'command'"):
        CommandServer(parse_manifest("[GripperGrip]\nkind = command\n"), LocalTransport(ctrl), ctrl.chain)


def test_bundled_manifests_load(local):
    transport, ctrl, _ = local
    manifest = load_manifest("default.cfg")
    srv = CommandServer(manifest, transport, ctrl.chain)
    assert len(srv.actions) == len(manifest.entries) == 9
    assert srv.extension_ids == {"gripper_grip": 256}
    srv.close()
    dash = DashboardServer(load_manifest("dashboard.cfg"), transport)
    assert list(dash.actions) == ["dashboard_play", "dashboard_stop", "dashboard_query"]
    dash.close()
    with pytest.raises(ManifestError, match="cannot read manifest"):
        load_manifest("missing.cfg")
