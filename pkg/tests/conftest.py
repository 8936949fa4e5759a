import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from threatirl.fieldgen import GridSpec, ThreatField, generate_dynamic_field, generate_static_field  # noqa: E402
from threatirl.mdp import Goal  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--full-scale", action="store_true", default=False,
                     help="also run the 25x25 full-scale acceptance experiment")


def pytest_configure(config):
    config.addinivalue_line("markers", "full_scale: half-hour 25x25 experiment")
    config.addinivalue_line("markers", "slow: minutes-long training run")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--full-scale"):
        return
    skip = pytest.mark.skip(reason="needs --full-scale")
    for item in items:
        if "full_scale" in item.keywords:
            item.add_marker(skip)


def quantized(field: ThreatField, step=2.0**-10) -> ThreatField:
    """Copy of ``field`` with values on a dyadic lattice so path sums are exact."""
    return ThreatField(field.grid, np.round(field.values / step) * step, seed=field.seed)


def uniform_field(rows, cols, value=1.0, n_time_steps=1) -> ThreatField:
    grid = GridSpec(rows, cols, n_time_steps=n_time_steps)
    return ThreatField(grid, np.full((n_time_steps, rows * cols), value))


@pytest.fixture
def grid3():
    return GridSpec(3, 3)


@pytest.fixture
def field3(grid3):
    return uniform_field(3, 3)


@pytest.fixture
def goal3(grid3):
    return Goal.at(grid3)


@pytest.fixture
def small_static():
    grid = GridSpec(5, 5)
    return generate_static_field(3, grid, n_rbf=4), Goal.at(grid)


@pytest.fixture
def small_dynamic():
    grid = GridSpec(4, 4, n_time_steps=6)
    return generate_dynamic_field(5, grid, n_rbf=3), Goal.at(grid)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
