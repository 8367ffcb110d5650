import numpy as np
import pytest
from hypothesis import settings

from fishinteract.trajio import Trajectory

settings.register_profile("default", deadline=None, max_examples=200)
settings.load_profile("default")


def circle_track(r0=20.0, speed=10.0, dt=0.12, steps=10_000, phase=0.0, n_agents=1):
    """Uniform counterclockwise circular motion whose backward-difference speed is ``speed``."""
    omega = 2 * np.arcsin(speed * dt / (2 * r0)) / dt
    ang = phase + omega * dt * np.arange(steps)
    pos = np.stack([r0 * np.cos(ang), r0 * np.sin(ang)], axis=-1)
    pos = np.repeat(pos[:, None], n_agents, axis=1)
    return Trajectory(pos, dt), omega


@pytest.fixture
def circle():
    return circle_track()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
