import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dssflow.dss_core import build_grid, make_test_data
from dssflow.picard import CellSpec

settings.register_profile("dss", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("dss")


@pytest.fixture(scope="session")
def grid():
    return build_grid(2.0, 16, 96, interp_order=3)


@pytest.fixture(scope="session")
def swirl(grid):
    return make_test_data("swirl", grid)


@pytest.fixture(scope="session")
def spike6(grid):
    return make_test_data("point_singular", grid, q=6)


@pytest.fixture(scope="session")
def tiny_spec():
    """Smallest cell layout the quadratures accept; keeps B-based tests fast."""
    return CellSpec(n_radial=2, n_angular=24, interp_order=1, n_time=2, shell=(1.0, 4.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys
    lines = []
    for name, mod in list(sys.modules.items()):
        if name.endswith("test_acceptance"):
            lines = getattr(mod, "RESULTS", []) or lines
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
