import numpy as np
import pytest

from nbplab.cross_sections import gw3_model, rod_model
from nbplab.rod import Grid, RodOperator, power_iteration, solve_w
from nbplab.skeleton import constant_survival


@pytest.fixture(scope="session")
def rod():
    return rod_model()


@pytest.fixture(scope="session")
def rod_grid(rod):
    return Grid.for_model(rod, 128)


@pytest.fixture(scope="session")
def rod_op(rod, rod_grid):
    return RodOperator(rod, rod_grid)


@pytest.fixture(scope="session")
def rod_eig(rod, rod_grid, rod_op):
    return power_iteration(rod, rod_grid, op=rod_op)


@pytest.fixture(scope="session")
def rod_sf(rod, rod_grid):
    return solve_w(rod, rod_grid)


@pytest.fixture(scope="session")
def gw3():
    return gw3_model()


@pytest.fixture(scope="session")
def gw3_sf(gw3):
    return constant_survival(gw3, 1.0 / 3.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config.stash.setdefault(ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
