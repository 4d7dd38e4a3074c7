import numpy as np
import pytest

from exitrate.model import Box, DiffusionSpec


@pytest.fixture
def interval():
    return Box([-1.0], [1.0])


@pytest.fixture
def unit_noise():
    return DiffusionSpec([[1.0]])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
