import numpy as np
import pytest

from ndopfe.forcing import Forcing
from ndopfe.grid import desk_grid, make_grid
from ndopfe.params import ParameterSet
from ndopfe.scenario import load_scenario
from ndopfe.solvers import Simulator


@pytest.fixture(scope="session")
def grid():
    return desk_grid()


@pytest.fixture(scope="session")
def scenario():
    return load_scenario()


@pytest.fixture(scope="session")
def transport(scenario, grid):
    return scenario.build_transport(grid)


@pytest.fixture(scope="session")
def sim(grid, transport):
    return Simulator(grid, transport, Forcing(), ParameterSet())


@pytest.fixture(scope="session")
def small_grid():
    # 3 x 2 columns, one shallow (Gamma1) column
    depths = [[80.0, 300.0, 650.0], [200.0, 450.0, 120.0]]
    return make_grid(depths, (0.0, 40.0, 80.0, 120.0, 200.0, 300.0, 450.0, 650.0), area=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


@pytest.fixture
def verdict(request, capsys):
    """Print one PASS/FAIL line for an acceptance criterion and assert it."""

    def report(number: int, passed: bool, detail: str) -> None:
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
        request.config.stash[ACCEPTANCE_LINES].append(line)
        with capsys.disabled():
            print("\n" + line)
        assert passed, line

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
