import numpy as np
import pytest

from obsv import fixtures
from obsv.model import basis_vectors, fluid_to_system, kernel_Q


@pytest.fixture(scope="session")
def lorenz():
    return fixtures.lorenz()


@pytest.fixture(scope="session")
def mfe_model():
    return fixtures.mfe9_model()


@pytest.fixture(scope="session")
def mfe(mfe_model):
    return fluid_to_system(mfe_model)


@pytest.fixture(scope="session")
def lorenz_Q(lorenz):
    return kernel_Q(lorenz, basis_vectors(3, [1, 2])).Q


@pytest.fixture(scope="session")
def mfe_Q(mfe):
    return kernel_Q(mfe, basis_vectors(9, [0])).Q


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
