import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=25)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def cantilever_bc(nelx, nely, load=-1.0):
    """Left edge clamped, vertical load at the bottom-right node."""
    from toporeparam.fem import BoundaryConditions, Grid

    grid = Grid(nelx, nely)
    left = grid.node_index(0, np.arange(nely + 1))
    fixed = np.concatenate([2 * left, 2 * left + 1])
    tip = int(grid.node_index(nelx, nely))
    return BoundaryConditions(grid, fixed, {2 * tip + 1: load})


@pytest.fixture
def small_task():
    from toporeparam.tasks import parse_task

    return parse_task(
        """
name: small_cantilever
nelx: 8
nely: 8
volfrac: 0.4
supports:
  - {nodes: "edge(left)", axes: xy}
loads:
  - {nodes: "point(8, 4)", fy: -1.0}
"""
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
    config._criteria = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    status = "PASS" if report.passed else "FAIL"
    item.config._criteria.append((number, title, status, detail))


def pytest_terminal_summary(terminalreporter, config):
    if not config._criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, detail in sorted(config._criteria):
        line = f"criterion {number} [{status}] {title}"
        terminalreporter.write_line(f"{line}: {detail}" if detail else line)
