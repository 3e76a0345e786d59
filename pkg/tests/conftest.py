import numpy as np
import pytest

from rsslvs import ChannelParams, default_scenario


@pytest.fixture
def scenario():
    return default_scenario()


@pytest.fixture
def params():
    return ChannelParams()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
