import numpy as np
import pytest

from mmheat.mmspace import Disk, Rect

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def unit_disk():
    return Disk((0.0, 0.0), 1.0)


@pytest.fixture(scope="session")
def unit_square():
    return Rect((0.0, 0.0), 1.0, 1.0)


@pytest.fixture(scope="session")
def disk_trace_256():
    """Unit disk heat content at h = 1/256 on the standard sample schedule (grid dropped)."""
    from mmheat.acceptance import disk_trace

    return disk_trace(1 / 256)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
