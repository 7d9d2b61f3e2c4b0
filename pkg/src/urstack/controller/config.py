from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..kinematics import CHAIN_DIR, Chain, load_chain


class ConfigError(ValueError):
    pass


@dataclass
class ForceEvent:
    t_start: float
    t_end: float
    wrench: tuple[float, ...]

    def __post_init__(self):
        self.wrench = tuple(float(w) for w in self.wrench)
        if len(self.wrench) != 6:
            raise ConfigError("an injected wrench needs 6 components")
        if self.t_end < self.t_start:
            raise ConfigError(f"injection ends before it starts: {self.t_start} > {self.t_end}")

    @classmethod
    def parse(cls, text: str) -> "ForceEvent":
        """Parse ``"t0,t1,fx,fy,fz,tx,ty,tz"``."""
        try:
            vals = [float(v) for v in text.replace(" ", "").split(",") if v]
        except ValueError:
            raise ConfigError(f"bad injection {text!r}") from None
        if len(vals) != 8:
            raise ConfigError(f"injection needs 8 numbers (t0,t1,fx,fy,fz,tx,ty,tz), got {text!r}")
        return cls(vals[0], vals[1], tuple(vals[2:]))


@dataclass
class ForceEnv:
    """Spring contact plane plus scheduled external wrenches."""

    plane_z: float = 0.0
    stiffness: float = 0.0
    injected: list[ForceEvent] = field(default_factory=list)

    def __post_init__(self):
        if self.stiffness < 0:
            raise ConfigError("stiffness must be non-negative")
        self.injected = sorted(self.injected, key=lambda e: e.t_start)

    def raw_wrench(self, tcp_z: float, t: float) -> np.ndarray:
        w = np.zeros(6)
        w[2] = self.stiffness * max(0.0, self.plane_z - tcp_z)
        for ev in self.injected:
            if ev.t_start <= t < ev.t_end:
                w += ev.wrench
        return w


@dataclass
class ControllerConfig:
    chain: Chain = None
    frequency: float = 500.0
    force: ForceEnv = field(default_factory=ForceEnv)
    home_q: tuple[float, ...] | None = None
    virtual_time: bool = True
    host: str = "127.0.0.1"
    rtde_port: int = 30004
    dashboard_port: int = 29999
    script_port: int = 30002
    # host functions offered to extension snippets, e.g. device instructions
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.chain is None:
            self.chain = load_chain(CHAIN_DIR / "six_dof_example.cfg")
        if not 0 < self.frequency <= 500:
            raise ConfigError(f"frequency must be in (0, 500] Hz, got {self.frequency}")
        if self.home_q is not None and len(self.home_q) != self.chain.n:
            raise ConfigError("home configuration does not match the chain")

    @property
    def dt(self) -> float:
        return 1.0 / self.frequency

    def initial_q(self) -> np.ndarray:
        if self.home_q is not None:
            return np.array(self.home_q, dtype=float)
        return self.chain.home_q()


def load_config(path: str | Path, **overrides) -> ControllerConfig:
    """Read a ``[controller]`` INI section; keyword overrides win over the file."""
    cfg = configparser.ConfigParser()
    if not cfg.read(path):
        raise ConfigError(f"config file not found: {path}")
    if not cfg.has_section("controller"):
        raise ConfigError(f"{path}: missing [controller] section")
    s = cfg["controller"]
    try:
        kwargs = dict(
            frequency=s.getfloat("frequency", 500.0),
            virtual_time=s.get("time_mode", "virtual").strip() == "virtual",
            host=s.get("host", "127.0.0.1"),
            rtde_port=s.getint("rtde_port", 30004),
            dashboard_port=s.getint("dashboard_port", 29999),
            script_port=s.getint("script_port", 30002),
        )
        if "chain" in s:
            chain_path = Path(s["chain"])
            if not chain_path.is_absolute() and not chain_path.exists():
                chain_path = Path(path).parent / chain_path
            kwargs["chain"] = load_chain(chain_path)
        events = [ForceEvent.parse(line) for line in s.get("inject", "").splitlines() if line.strip()]
        kwargs["force"] = ForceEnv(s.getfloat("plane_z", 0.0), s.getfloat("stiffness", 0.0), events)
        if "home" in s:
            kwargs["home_q"] = tuple(float(v) for v in s["home"].replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return ControllerConfig(**kwargs)
