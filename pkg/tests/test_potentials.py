import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from loggas.errors import CatalogError, FormatError
from loggas.potentials import (Potential, catalog, check_growth, eval_potential, from_polynomial,
                               load_potential, parse_name, resolve, save_potential)

from conftest import CATALOG_NAMES


@pytest.mark.parametrize("name, x, expected", [
    ("gaussian", 0.0, 0.0),
    ("bulk_critical_quartic", 0.0, 0.0),
    ("edge_critical_quartic", 2.0, 8 / 3),
    ("gaussian", 3.0, 4.5),
    ("bulk_critical_quartic", 2.0, 0.0),
])
def test_eval_known_values(name, x, expected):
    assert eval_potential(catalog(name), x) == pytest.approx(expected, abs=1e-14)


def test_catalog_closed_forms():
    x = np.linspace(-3, 3, 41)
    assert np.allclose(catalog("bulk_critical_quartic")(x), x ** 4 / 4 - x ** 2)
    assert np.allclose(catalog("edge_critical_quartic")(x),
                       x ** 4 / 20 - 4 * x ** 3 / 15 + x ** 2 / 5 + 8 * x / 5)
    assert np.allclose(catalog("two_cut_quartic(1.5)")(x), x ** 4 / 4 - 1.5 * x ** 2)


@pytest.mark.parametrize("name", CATALOG_NAMES)
@pytest.mark.parametrize("k", [1, 2, 3])
def test_derivatives_match_finite_differences(name, k):
    V = catalog(name)
    x = np.linspace(-2.5, 2.5, 100)
    h = 1e-3
    f = V.deriv(k - 1)
    fd = (8 * (f(x + h) - f(x - h)) - (f(x + 2 * h) - f(x - 2 * h))) / (12 * h)
    exact = V.deriv(k)(x)
    tol = 1e-8 if k == 1 else 1e-6
    assert np.all(np.abs(fd - exact) <= tol * (1 + np.abs(exact)))


@pytest.mark.parametrize("name", CATALOG_NAMES)
def test_catalog_growth(name):
    assert check_growth(catalog(name))["passes"]


def test_growth_fails_for_log_potential():
    f = lambda x: np.log1p(np.asarray(x, dtype=float) ** 2)
    V = Potential("log1p", (f,), 0, (-1.0, 1.0))
    rep = check_growth(V)
    assert not rep["passes"]
    assert rep["liminf_estimate"] < 1.2


def test_catalog_errors():
    with pytest.raises(CatalogError):
        catalog("no_such_potential")
    with pytest.raises(CatalogError):
        catalog("two_cut_quartic(0.5)")
    with pytest.raises(CatalogError):
        catalog("gaussian(2)")
    with pytest.raises(KeyError):
        catalog("nope")
    assert parse_name("two_cut_quartic(1.5)") == ("two_cut_quartic", 1.5)


def test_polynomial_regularity_unbounded():
    assert math.isinf(catalog("gaussian").regularity)


def test_sampled_potential_round_trip(tmp_path):
    x = np.linspace(-3, 3, 121)
    v = x ** 4 / 4 - x ** 2
    path = tmp_path / "quartic.txt"
    save_potential(path, x, v)
    V = load_potential(path)
    assert isinstance(V, Potential)
    assert V.regularity >= 3
    grid = np.linspace(-2.5, 2.5, 57)
    assert np.max(np.abs(V(grid) - (grid ** 4 / 4 - grid ** 2))) < 1e-6
    assert np.max(np.abs(V.deriv(1)(grid) - (grid ** 3 - 2 * grid))) < 1e-4
    assert resolve(str(path)).name == V.name


def test_bad_potential_file(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("1 2\n3 4\n")
    with pytest.raises(FormatError):
        load_potential(p)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=1, max_size=3), st.floats(0.1, 2.0))
def test_even_quartic_derivative_property(extra, lead):
    coef = [0.0] + list(extra) + [lead]
    V = from_polynomial("p", coef)
    x = np.linspace(-2, 2, 9)
    h = 1e-5
    assert np.allclose((V(x + h) - V(x - h)) / (2 * h), V.deriv(1)(x), rtol=1e-6, atol=1e-6)
