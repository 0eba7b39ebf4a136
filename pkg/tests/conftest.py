import numpy as np
import pytest

from rydcav.cavity import CavityMode
from rydcav.config import default_config
from rydcav.dispersive import AtomEnsemble, DetuningProfile

TWO_PI = 2 * np.pi
MHZ = TWO_PI * 1e6
KHZ = TWO_PI * 1e3


@pytest.fixture
def cavity():
    return CavityMode(omega_c=TWO_PI * 21.532e9, kappa=4.1 * MHZ, kappa_out=2.05 * MHZ)


@pytest.fixture
def ensemble():
    return AtomEnsemble.ground_state(3300, g1_peak=17.5 * KHZ)


@pytest.fixture
def profile():
    return DetuningProfile(curvature=6.65 * MHZ / 1e-12, t_min=3.96e-6, delta_min=20.07 * MHZ,
                           ac_stark_peak=2.4 * MHZ)


@pytest.fixture
def cfg():
    return default_config()


@pytest.fixture
def quiet_cfg():
    return default_config(noise={"enabled": False})


# PASS/FAIL lines of the acceptance suite, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
