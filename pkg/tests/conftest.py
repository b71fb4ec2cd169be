import numpy as np
import pytest

from biolstm.body_model import default_model


@pytest.fixture(scope="session")
def model():
    return default_model(with_mesh=True)


@pytest.fixture(scope="session")
def bare_model():
    return default_model(with_mesh=False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
