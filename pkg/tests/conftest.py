import numpy as np
import pytest
from hypothesis import settings

from urstack.client import FrameTap, LocalTransport
from urstack.controller import Controller, ControllerConfig, ForceEnv
from urstack.kinematics import load_chain

settings.register_profile("default", deadline=None)
settings.load_profile("default")


@pytest.fixture
def six_dof():
    return load_chain("six_dof_example.cfg")


@pytest.fixture
def one_joint():
    return load_chain("one_joint.cfg")


@pytest.fixture
def planar2():
    return load_chain("planar2.cfg")


@pytest.fixture
def make_controller():
    def make(**kwargs):
        return Controller(ControllerConfig(**kwargs))
    return make


@pytest.fixture
def contact_controller():
    """Six-joint arm above a 1000 N/m plane at z = 0.2 m (home TCP at z = 0.5 m)."""
    return Controller(ControllerConfig(force=ForceEnv(plane_z=0.2, stiffness=1000.0)))


@pytest.fixture
def local(contact_controller):
    tap = FrameTap()
    return LocalTransport(contact_controller, tap), contact_controller, tap


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(LINES):
            terminalreporter.write_line(LINES[number])
