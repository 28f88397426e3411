import numpy as np
import pytest
from hypothesis import settings

from soliton_lab.lattice import PotentialSpec
from soliton_lab.profiles import WaveFamily

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture(scope="session")
def fpu():
    return PotentialSpec.fpu()


@pytest.fixture(scope="session")
def toda_V():
    return PotentialSpec.toda()


@pytest.fixture(scope="session")
def family02():
    return WaveFamily(0.2, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][2:])):
            terminalreporter.write_line(line)
