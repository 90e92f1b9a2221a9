import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from loggas.equilibrium import catalog_measure, entropy
from loggas.errors import DivergenceError, FormatError, StepSizeError
from loggas.master_operator import invert_master_operator, polynomial
from loggas.potentials import catalog, from_polynomial
from loggas.sampler import (Configuration, anisotropy, autocorrelation, chain_rng, default_workers, energy,
                            energy_delta, integrated_autocorr_time, mcmc_sample, next_order_energy,
                            pushforward_measure, read_binary, read_csv, splitting_gap, transport_configuration,
                            tridiagonal_power_sums, tridiagonal_sample, write_binary, write_csv)

from conftest import CATALOG_NAMES

FLAT = from_polynomial("flat", [0.0])


# ---- energies --------------------------------------------------------------

@pytest.mark.parametrize("V, x, expected", [
    (catalog("gaussian"), [-1, 1], 2 - 2 * math.log(2)),
    (FLAT, [0, 1], 0.0),
    (FLAT, [-1, 0, 1], -2 * math.log(2)),
])
def test_energy_values(V, x, expected):
    assert energy(V, Configuration(x, 2.0)) == pytest.approx(expected, abs=1e-14)


def test_energy_coincident_points():
    assert energy(FLAT, Configuration([0.3, 0.3], 2.0)) == math.inf


def test_next_order_single_particle(gauss):
    assert next_order_energy(Configuration([0.0], 2.0), gauss[1]) == pytest.approx(-0.75, abs=1e-12)


def test_next_order_two_particles(gauss):
    _, m = gauss
    rho = lambda y: np.sqrt(4 - y * y) / (2 * np.pi)
    h = lambda x: -integrate.quad(lambda y: np.log(abs(x - y)) * rho(y), -2, 2, points=[x], limit=200)[0]
    oracle = -2 * math.log(2) - 2 * 2 * (h(-1.0) + h(1.0)) + 4 * 0.25
    assert next_order_energy(Configuration([-1, 1], 2.0), m) == pytest.approx(oracle, abs=1e-6)


def test_splitting_single_particle(gauss):
    V, m = gauss
    assert splitting_gap(Configuration([0.0], 2.0), V, m) < 1e-12


@pytest.mark.parametrize("name", CATALOG_NAMES)
@pytest.mark.parametrize("N", [8, 64])
def test_splitting_identity(name, N, rng):
    V, m = catalog(name), catalog_measure(name)
    lo, hi = m.support[0][0], m.support[-1][1]
    gaps = [splitting_gap(Configuration(rng.uniform(lo - 1, hi + 1, N), 2.0), V, m) for _ in range(100)]
    assert max(gaps) < 1e-5 * N ** 2


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2 ** 32 - 1), st.sampled_from(CATALOG_NAMES))
def test_energy_delta_matches_recomputation(N, seed, name):
    V = catalog(name)
    r = np.random.default_rng(seed)
    x = r.normal(size=N) * 1.5
    i = int(r.integers(N))
    y = float(r.normal() * 1.5)
    new = x.copy()
    new[i] = y
    full = energy(V, Configuration(new, 2.0)) - energy(V, Configuration(x, 2.0))
    # the Metropolis ratio uses exp(-beta/2 * delta); compare the log-ratios
    assert energy_delta(V, x, i, y) == pytest.approx(full, abs=1e-10 * (1 + abs(full)) * N)


def test_energy_delta_sampled_potential():
    from loggas.potentials import from_samples
    s = np.linspace(-4, 4, 81)
    V = from_samples(s, s ** 4 / 4 - s ** 2)
    x = np.array([-1.2, 0.1, 0.9, 2.0])
    new = x.copy()
    new[1] = -0.4
    full = energy(V, Configuration(new, 2.0)) - energy(V, Configuration(x, 2.0))
    assert energy_delta(V, x, 1, -0.4) == pytest.approx(full, abs=1e-10)


# ---- anisotropy ------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.lists(st.floats(-3, 3), min_size=2, max_size=20))
def test_anisotropy_affine_vanishes(a, b, x):
    m = catalog_measure("gaussian", n_nodes=64)
    assert anisotropy(Configuration(x, 2.0), polynomial([a, b]), m) == pytest.approx(0, abs=1e-9 * len(x) ** 2)


def test_anisotropy_cubic_oracle(gauss):
    # kernel x^2 + xy + y^2 against a mass-zero measure leaves (int x dfluct)^2
    _, m = gauss
    c = Configuration([-1.0, 0.5], 2.0)
    assert anisotropy(c, polynomial([0, 0, 0, 1]), m) == pytest.approx(0.25, abs=1e-12)
    assert anisotropy(Configuration([-1.0, 1.0], 2.0), polynomial([0, 0, 1]), m) == pytest.approx(0, abs=1e-12)


# ---- exact sampler ---------------------------------------------------------

@pytest.mark.parametrize("beta", [1.0, 2.0, 4.0])
def test_tridiagonal_trace_law(beta):
    r = np.random.default_rng(7)
    s = np.array([tridiagonal_sample(beta, 16, r).positions.sum() for _ in range(4000)])
    assert stats.kstest(s, "norm", args=(0, math.sqrt(2 / beta))).pvalue > 0.01


@pytest.mark.parametrize("beta, N", [(1.0, 8), (2.0, 32), (4.0, 16)])
def test_tridiagonal_second_moment(beta, N):
    r = np.random.default_rng(3)
    s2 = np.array([np.sum(tridiagonal_sample(beta, N, r).positions ** 2) for _ in range(4000)])
    assert abs(s2.mean() - (N - 1 + 2 / beta)) < 4 * s2.std() / math.sqrt(s2.size)


def test_tridiagonal_spectral_measure(gauss):
    _, m = gauss
    x = np.concatenate([tridiagonal_sample(2.0, 256, s).positions for s in range(20)])
    hist, edges = np.histogram(x, bins=40, range=(-2.2, 2.2), density=True)
    mid = (edges[1:] + edges[:-1]) / 2
    l1 = np.sum(np.abs(hist - m.density(mid))) * (edges[1] - edges[0])
    assert l1 < 0.05


@pytest.mark.parametrize("beta", [1.0, 2.0])
def test_power_sums_agree_with_eigenvalues(beta):
    N = 12
    s1, s2 = tridiagonal_power_sums(beta, N, 4000, 1)
    r = np.random.default_rng(2)
    eig = np.array([tridiagonal_sample(beta, N, r).positions for _ in range(4000)])
    assert stats.ks_2samp(s1, eig.sum(1)).pvalue > 0.01
    assert stats.ks_2samp(s2, (eig ** 2).sum(1)).pvalue > 0.01


# ---- Metropolis ------------------------------------------------------------

def test_mcmc_gaussian_sum(gauss):
    V, m = gauss
    res = mcmc_sample(V, 2.0, 64, sweeps=100000, burn_in=2000, seed=3, measure=m)
    s = res[0].positions.sum(axis=1)
    ess = res[0].diagnostics.ess
    assert ess >= 1000
    assert abs(s.mean()) < 3 * s.std() / math.sqrt(ess)
    assert s.var() == pytest.approx(1.0, rel=0.1)
    assert res[0].diagnostics.outside_U_fraction < 1e-3
    assert res[0].diagnostics.adapted
    # F_N + N log N stays O(N) along the chain
    F = [next_order_energy(Configuration(p, 2.0), m) + 64 * math.log(64) for p in res[0].positions[::2000]]
    assert min(F) > -10 * 64


def test_mcmc_matches_tridiagonal(gauss):
    V, m = gauss
    N = 32
    passes = 0
    for trial in range(5):
        res = mcmc_sample(V, 2.0, N, sweeps=300000, burn_in=2000, seed=100 + trial, measure=m)
        s = res[0].positions.sum(axis=1)
        tau = integrated_autocorr_time(s)
        thin = s[::int(math.ceil(tau))]
        exact, _ = tridiagonal_power_sums(2.0, N, 5000, 200 + trial)
        assert s.size / tau >= 5000
        passes += stats.ks_2samp(thin, exact).pvalue > 0.01
    assert passes == 5


def test_mcmc_worker_independence(gauss):
    V, m = gauss
    a = mcmc_sample(V, 1.0, 10, sweeps=500, burn_in=200, seed=9, chains=3, workers=1, measure=m)
    b = mcmc_sample(V, 1.0, 10, sweeps=500, burn_in=200, seed=9, chains=3, workers=3, measure=m)
    for ra, rb in zip(a, b):
        assert np.array_equal(ra.positions, rb.positions)
    assert not np.array_equal(a[0].positions, a[1].positions)


def test_mcmc_thinning(gauss):
    V, m = gauss
    res = mcmc_sample(V, 2.0, 8, sweeps=1000, burn_in=200, thinning=10, seed=1, measure=m)
    assert res[0].positions.shape == (100, 8)
    assert np.all(np.diff(res[0].sweeps) == 10)
    assert np.all(np.diff(res[0].positions, axis=1) >= 0)


def test_mcmc_window_excludes_support(gauss):
    V, m = gauss
    with pytest.raises(DivergenceError):
        mcmc_sample(V, 2.0, 8, sweeps=10, burn_in=0, window=(-1.0, 1.0), measure=m)


def test_chain_streams_distinct():
    assert chain_rng(1, 0).random() != chain_rng(1, 1).random()
    assert chain_rng(1, 0).random() == chain_rng(1, 0).random()


def test_default_workers(monkeypatch):
    monkeypatch.setenv("LOGGAS_WORKERS", "4")
    assert default_workers() == 4
    monkeypatch.delenv("LOGGAS_WORKERS")
    assert default_workers() == 1


@pytest.mark.parametrize("phi", [0.0, 0.5, 0.8])
def test_autocorr_time_ar1(phi):
    r = np.random.default_rng(11)
    n = 200000
    e = r.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0]
    for i in range(1, n):
        x[i] = phi * x[i - 1] + e[i]
    assert integrated_autocorr_time(x) == pytest.approx((1 + phi) / (1 - phi), rel=0.1)
    assert autocorrelation(x)[0] == 1


# ---- transport -------------------------------------------------------------

def test_transport_configuration(gauss):
    V, m = gauss
    c = Configuration(np.linspace(-1.5, 1.5, 11), 2.0)
    t_shift = invert_master_operator(polynomial([0, 1]), m, V)
    assert np.array_equal(transport_configuration(c, t_shift, 0.0).positions, c.positions)
    assert np.allclose(transport_configuration(c, t_shift, 0.1).positions, c.positions - 0.1)
    t2 = invert_master_operator(polynomial([0, 0, 0, 1]), m, V)
    moved = transport_configuration(Configuration(np.linspace(-4, 4, 200), 2.0), t2, 0.99 * t2.t_max)
    assert np.all(np.diff(moved.positions) > 0)
    with pytest.raises(StepSizeError):
        transport_configuration(c, t2, 2 * t2.t_max)


@pytest.mark.parametrize("coef, tt", [([0, 1], 0.0), ([0, 1], 0.1), ([0, 0, 1], 0.1)])
def test_pushforward_entropy(gauss, coef, tt):
    V, m = gauss
    tm = invert_master_operator(polynomial(coef), m, V)
    pushed, gap = pushforward_measure(m, tm, tt)
    assert gap < 1e-6
    assert pushed.mass == pytest.approx(1, abs=1e-8)
    if coef == [0, 0, 1]:
        assert entropy(pushed) - entropy(m) == pytest.approx(-math.log(0.9), abs=1e-6)
        assert pushed.support[0] == pytest.approx((-1.8, 1.8))


# ---- files -----------------------------------------------------------------

@pytest.fixture(scope="module")
def small_chains():
    return mcmc_sample(catalog("gaussian"), 2.0, 5, sweeps=50, burn_in=10, seed=4, chains=2,
                       measure=catalog_measure("gaussian"))


def test_csv_round_trip(tmp_path, small_chains):
    path = tmp_path / "s.csv"
    write_csv(path, small_chains, {"config_hash": "abc", "tool_version": "0.1"})
    sweeps, chains, pos = read_csv(path)
    assert np.array_equal(pos, np.concatenate([r.positions for r in small_chains]))
    assert set(chains) == {0, 1}
    assert path.read_text().startswith("# config_hash abc\n")


def test_binary_round_trip(tmp_path, small_chains):
    path = tmp_path / "s.lgs"
    write_binary(path, small_chains, {"config_hash": "abc"})
    sweeps, chains, pos, prov = read_binary(path)
    assert np.array_equal(pos, np.concatenate([r.positions for r in small_chains]))
    assert np.array_equal(sweeps, np.concatenate([r.sweeps for r in small_chains]))
    assert prov == {"config_hash": "abc"}


def test_bad_sample_files(tmp_path):
    (tmp_path / "a.csv").write_text("x,y\n1,2\n")
    (tmp_path / "b.lgs").write_bytes(b"NOPE")
    with pytest.raises(FormatError):
        read_csv(tmp_path / "a.csv")
    with pytest.raises(FormatError):
        read_binary(tmp_path / "b.lgs")
