"""Action hosts built from a plugin manifest.

``CommandServer`` loads command, extension and dashboard plugins. It composes
one control script from the extension plugins and drives every plugin
through a single shared control session. ``DashboardServer`` loads dashboard
plugins only and never touches the control interface.
"""

from __future__ import annotations

from ..client import ControlSession, DashboardSession, IOSession
from ..kinematics import Chain
from ..layout import FIRST_EXTENSION_ID
from ..script import ScriptSyntaxError, parse_source
from .actions import ActionHost
from .manifest import ManifestError, PluginManifest
from .plugins import ExtensionPlugin, Plugin, PluginContext, create_plugin


def compose_script(extensions: list[tuple[int, ExtensionPlugin]]) -> str:
    """Concatenate each extension's preamble and ``ext_<ID>`` snippet.

    Each plugin's text is parsed on its own first, so a syntax error names
    the plugin that caused it.
    """
    parts = []
    for ext_id, plugin in extensions:
        preamble, snippet = plugin.script_parts(ext_id)
        for label, text in (("preamble", preamble), ("snippet", snippet)):
            try:
                parse_source(text)
            except ScriptSyntaxError as exc:
                raise ManifestError(f"plugin '{plugin.name}' {label}: {exc}") from None
        parts.append(f"# {plugin.name}\n{preamble.rstrip()}\n{snippet}")
    return "\n".join(parts)


class CommandServer(ActionHost):
    def __init__(self, manifest: PluginManifest, transport, chain: Chain, frequency: float = 500.0,
                 cancel_decel: float | None = None, timeout_ticks: int | None = None):
        super().__init__()
        self.transport = transport
        self.chain = chain
        self.frequency = frequency
        self.plugins: list[Plugin] = [create_plugin(e) for e in manifest.entries]
        self.extension_ids: dict[str, int] = {}
        extensions = []
        for plugin in self.plugins:
            if plugin.kind == "extension":
                ext_id = FIRST_EXTENSION_ID + len(extensions)
                self.extension_ids[plugin.name] = ext_id
                extensions.append((ext_id, plugin))
        self.script = compose_script(extensions) if extensions else None

        self.control: ControlSession | None = None
        self._io: IOSession | None = None
        self.dashboard = DashboardSession(transport)
        if any(p.kind != "dashboard" for p in self.plugins):
            kwargs = {} if timeout_ticks is None else {"timeout_ticks": timeout_ticks}
            self.control = ControlSession(transport, self.script, dof=chain.n, **kwargs)
        for plugin in self.plugins:
            ctx = PluginContext(host=self, name=plugin.name, control=self.control, dashboard=self.dashboard,
                                io_factory=self.io, chain=chain, frequency=frequency,
                                extension_id=self.extension_ids.get(plugin.name))
            if cancel_decel is not None:
                ctx.cancel_decel = cancel_decel
            plugin.start_action_server(ctx)

    def io(self) -> IOSession:
        if self._io is None:
            self._io = IOSession(self.transport)
        return self._io

    def close(self) -> None:
        self.stop_worker()
        self.shutdown()
        if self._io is not None:
            self._io.close()
        if self.control is not None:
            self.control.close()


class DashboardServer(ActionHost):
    def __init__(self, manifest: PluginManifest, transport):
        super().__init__()
        self.dashboard = DashboardSession(transport)
        self.plugins: list[Plugin] = []
        for entry in manifest.entries:
            if entry.kind != "dashboard":
                raise ManifestError(f"plugin '{entry.name}': the dashboard server loads dashboard plugins only")
            self.plugins.append(create_plugin(entry))
        for plugin in self.plugins:
            plugin.start_action_server(PluginContext(host=self, name=plugin.name, dashboard=self.dashboard))

    def close(self) -> None:
        self.stop_worker()
        self.shutdown()
