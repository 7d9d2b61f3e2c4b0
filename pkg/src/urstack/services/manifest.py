"""Plugin manifest: an INI file whose sections, in file order, are plugin entries.

::

    [MoveDownUntilForce]
    kind = command
    threshold_n = 20

    [GripperGrip]
    kind = extension
    plugin = gripper_grip

Section names are the action names (CamelCase is converted to snake_case).
``plugin`` selects the implementation and defaults to the action name; every
other key is a parameter, parsed as JSON when possible and kept as text
otherwise.
"""

from __future__ import annotations

import configparser
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

KINDS = ("command", "extension", "dashboard")
MANIFEST_DIR = Path(__file__).resolve().parent.parent / "plugins"


class ManifestError(ValueError):
    pass


@dataclass
class PluginEntry:
    name: str
    kind: str
    plugin: str
    parameters: dict = field(default_factory=dict)


@dataclass
class PluginManifest:
    entries: list[PluginEntry] = field(default_factory=list)

    def __post_init__(self):
        names = [e.name for e in self.entries]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ManifestError(f"duplicate plugin names: {', '.join(dupes)}")
        for e in self.entries:
            if e.kind not in KINDS:
                raise ManifestError(f"plugin '{e.name}': kind must be one of {', '.join(KINDS)}, got {e.kind!r}")

    def of_kind(self, kind: str) -> list[PluginEntry]:
        return [e for e in self.entries if e.kind == kind]


def snake_case(name: str) -> str:
    s = re.sub(r"(?<=[a-z0-9])([A-Z])", r"_\1", name.strip())
    return s.replace("-", "_").replace(" ", "_").lower()


def _value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_manifest(text: str, source: str = "<manifest>") -> PluginManifest:
    cfg = configparser.ConfigParser(interpolation=None)
    cfg.optionxform = str
    try:
        cfg.read_string(text, source=source)
    except configparser.Error as exc:
        raise ManifestError(f"{source}: {exc}") from None
    entries = []
    for section in cfg.sections():
        name = snake_case(section)
        params = {k: _value(v) for k, v in cfg[section].items()}
        kind = params.pop("kind", None)
        if kind is None:
            raise ManifestError(f"plugin '{name}': missing kind")
        plugin = snake_case(str(params.pop("plugin", name)))
        entries.append(PluginEntry(name, str(kind), plugin, params))
    return PluginManifest(entries)


def load_manifest(path: str | Path) -> PluginManifest:
    """Read a manifest file; a bare name that does not exist locally falls back to the bundled ones."""
    path = Path(path)
    if not path.exists() and (MANIFEST_DIR / path.name).exists():
        path = MANIFEST_DIR / path.name
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc.strerror}") from None
    return parse_manifest(text, str(path))
