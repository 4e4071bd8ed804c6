import numpy as np
import pytest

from qplab.potential import random_potential, sample_frequencies

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def desk_potential():
    """d=2, l=3, Q=1 desk potential with the default seeds."""
    return random_potential(sample_frequencies(7, 2, 3), 1, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
