import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from helpers import ACCEPTANCE_LINES

from ssnanomaly.network import Segment, SitePlacement, build_network

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def line_net():
    """A -> B, lengths 1 and 1, weights 1 and 2, one site at each upstream end."""
    segs = [Segment("A", "B", 1.0, 1.0), Segment("B", None, 1.0, 2.0)]
    sites = [SitePlacement("a", "A", 0.0, (0.0, 1.0)), SitePlacement("b", "B", 0.0, (0.0, 0.0))]
    return build_network(segs, sites)


@pytest.fixture
def y_net():
    """Two headwaters L and R joining into an outlet O."""
    segs = [
        Segment("L", "O", 2.0, 1.0),
        Segment("R", "O", 3.0, 1.0),
        Segment("O", None, 1.0, 2.0),
    ]
    sites = [
        SitePlacement("l", "L", 0.5, (-1.0, 2.0)),
        SitePlacement("r", "R", 1.0, (1.0, 2.0)),
        SitePlacement("o", "O", 0.25, (0.0, 0.0)),
    ]
    return build_network(segs, sites)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
