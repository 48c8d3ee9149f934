import numpy as np
import pytest

from aoqkd.field import GridSpec

# Lines recorded by the acceptance suite, echoed once at the end of the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def grid():
    return GridSpec.default()


@pytest.fixture(scope="session")
def small_grid():
    return GridSpec.default(n=128)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
