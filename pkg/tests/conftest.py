import numpy as np
import pytest

from rbsde_lab.tree import ScenarioTree

ACCEPTANCE_LINES = []


@pytest.fixture
def binary2():
    return ScenarioTree.from_kernel(2, [0.5, 0.5])


@pytest.fixture
def ternary2():
    return ScenarioTree.from_kernel(2, [0.5, 0.25, 0.25])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
