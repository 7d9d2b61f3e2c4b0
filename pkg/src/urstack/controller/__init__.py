"""Simulated robot controller: control loop, RTDE-style endpoint and TCP servers."""

from .commands import CONTACT_DECEL, CONTACT_THRESHOLD, Outcome
from .config import ConfigError, ControllerConfig, ForceEnv, ForceEvent, load_config
from .core import Controller, ExclusivityError, ScriptInstallError, Snapshot
from .endpoint import RtdeEndpoint
from .server import SimulatorServer

__all__ = [
    "CONTACT_DECEL", "CONTACT_THRESHOLD", "ConfigError", "Controller", "ControllerConfig",
    "ExclusivityError", "ForceEnv", "ForceEvent", "Outcome", "RtdeEndpoint", "ScriptInstallError",
    "SimulatorServer", "Snapshot", "load_config",
]
