import sys

import numpy as np
import pytest

from mpcrange.config import ScenarioConfig
from mpcrange.geom import Room


@pytest.fixture
def room():
    return Room.box(7.0, 6.0, 3.0)


@pytest.fixture
def cfg():
    return ScenarioConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def interior_points(rng, n, size=(7.0, 6.0, 3.0), margin=0.05):
    lo = np.full(3, margin)
    hi = np.asarray(size) - margin
    return lo + (hi - lo) * rng.random((n, 3))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
