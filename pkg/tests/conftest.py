import numpy as np
import pytest
from hypothesis import settings

from sqfn.grid import Grid
from sqfn.potential import PotentialProfile
from sqfn.semigroup import decompose

settings.register_profile("sqfn", max_examples=40, deadline=None)
settings.load_profile("sqfn")

# Independent high-precision values (mpmath, 30 digits), frozen here.
RHO_CONSTANT_ONE = 0.488602511902919921586  # (3 / 4 pi)^(1/2)
RHO_HARMONIC_ORIGIN = 0.794218565953377856480  # (5 / 4 pi)^(1/4)
EIGEN_CONSTANT = {2: 0.5, 3: 0.419973683298291054922, 4: 0.391271145018321829146}
PT_DERIV_CONSTANT = {(2, 1): 0.129949466872279351318,
                     (2, 3): 0.0320405715533982558,
                     (3, 3): 0.0271383117202932084}


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: runs for more than a few seconds")


@pytest.fixture(scope="session")
def grid12():
    return Grid(3, 1.5, 12)


@pytest.fixture(scope="session")
def const_profile(grid12):
    return PotentialProfile(grid12, "constant", 1.0)


@pytest.fixture(scope="session")
def harmonic_profile(grid12):
    return PotentialProfile(grid12, "power", 1.0, 2.0)


@pytest.fixture(scope="session")
def const_dec(const_profile):
    return decompose(const_profile)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# One verdict line per acceptance criterion, repeated at the end of the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
