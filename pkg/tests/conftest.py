import numpy as np
import pytest

from latthresh.model import Potential, laplacian_dispersion, pair_dispersion


@pytest.fixture(scope="session")
def lap3():
    return laplacian_dispersion(3)


@pytest.fixture(scope="session")
def pair3(lap3):
    return pair_dispersion(lap3, np.zeros(3))


@pytest.fixture(scope="session")
def delta3():
    return Potential.delta(3, 1.0)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
