"""Host-side services: state publishing and plugin-driven action servers over JSON lines."""

from .actions import ActionError, ActionHost, GoalHandle
from .command_server import CommandServer, DashboardServer, compose_script
from .jsonlines import JsonLinesClient, JsonLinesService, LocalPeer, ServiceError
from .manifest import ManifestError, PluginEntry, PluginManifest, load_manifest, parse_manifest
from .plugins import PLUGINS, Plugin, PluginContext, create_plugin
from .state_receiver import SERVICES, TOPICS, StateReceiver

__all__ = [
    "PLUGINS", "SERVICES", "TOPICS", "ActionError", "ActionHost", "CommandServer", "DashboardServer",
    "GoalHandle", "JsonLinesClient", "JsonLinesService", "LocalPeer", "ManifestError", "Plugin",
    "PluginContext", "PluginEntry", "PluginManifest", "ServiceError", "StateReceiver", "compose_script",
    "create_plugin", "load_manifest", "parse_manifest",
]
