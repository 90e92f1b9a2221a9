import numpy as np
import pytest

from loggas.equilibrium import catalog_measure, solve_equilibrium
from loggas.potentials import catalog

CATALOG_NAMES = ["gaussian", "bulk_critical_quartic", "edge_critical_quartic", "two_cut_quartic(1.5)"]

_solved = {}


def solved(name):
    """Solver output, cached for the whole session."""
    if name not in _solved:
        _solved[name] = solve_equilibrium(catalog(name), nodes=2048)
    return _solved[name]


@pytest.fixture(scope="session")
def gauss():
    return catalog("gaussian"), catalog_measure("gaussian")


@pytest.fixture(scope="session")
def bulk():
    return catalog("bulk_critical_quartic"), catalog_measure("bulk_critical_quartic")


@pytest.fixture(scope="session")
def two_cut():
    return catalog("two_cut_quartic(1.5)"), catalog_measure("two_cut_quartic(1.5)")


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
