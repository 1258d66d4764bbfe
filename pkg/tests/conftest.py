import warnings

import numpy as np
import pytest

from hessrb.affine_pde import make_lognormal_problem, make_uniform_piecewise_problem

KAPPA0 = np.sqrt(3.0) + 0.01


@pytest.fixture(scope="session")
def uniform16():
    """K=16 piecewise problem on a 9x9 mesh."""
    return make_uniform_piecewise_problem(9, 16, KAPPA0, 1.0)


@pytest.fixture(scope="session")
def uniform64():
    return make_uniform_piecewise_problem(17, 64, KAPPA0, 1.0)


@pytest.fixture(scope="session")
def lognormal9():
    return make_lognormal_problem(9)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _quiet_support_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", "parameter lies outside")
        yield


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
