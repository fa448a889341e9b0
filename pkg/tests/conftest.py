import warnings

import numpy as np
import pytest

from msdeim.coeff import generate_permeability
from msdeim.gmsfem import build_multiscale_space
from msdeim.grid import build_grids, build_neighborhoods, build_partition_of_unity
from msdeim.interp import DeimWarning


class Small:
    """(3, 4) grids, case1 at eta=4, three offline functions per node."""

    def __init__(self, n_coarse=3, n_sub=4, preset="case1", eta=4.0, m_off=3):
        self.mesh, self.coarse = build_grids(n_coarse, n_sub)
        self.nbs = build_neighborhoods(self.coarse, self.mesh)
        self.pu = build_partition_of_unity(self.coarse, self.mesh, self.nbs)
        self.field = generate_permeability(preset, eta, self.mesh)
        self.basis, self.spaces = build_multiscale_space(self.mesh, self.coarse, self.field, m_off, self.pu, self.nbs)


@pytest.fixture(scope="session")
def small():
    return Small()


@pytest.fixture(scope="session")
def paper_grid():
    """(10, 10) grids, case1, eta=4, m_off=3."""
    return Small(10, 10)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _quiet_deim():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DeimWarning)
        yield


# shared experiment runs and the acceptance report -------------------------------------

_RUNS = {}
GATE = []
"""(criterion number, passed, detail) recorded by the acceptance tests."""


def cached_run(experiment, **overrides):
    """``(tables, seconds)`` for a default-config run, computed once per session."""
    import time

    from msdeim.config import default_config
    from msdeim.experiments import run_experiment

    key = (experiment, tuple(sorted(overrides.items())))
    if key not in _RUNS:
        t0 = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            tables = run_experiment(default_config(experiment, **overrides))
        _RUNS[key] = (tables, time.perf_counter() - t0)
    return _RUNS[key]


def pytest_terminal_summary(terminalreporter):
    if not GATE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(GATE, key=lambda g: g[0]):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
