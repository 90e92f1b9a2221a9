"""Sampling the Gibbs measure and the energy functionals of a configuration.

Gibbs density on R^N:  exp(-beta/2 * H_N(x)),  H_N = sum_{i != j} -log|x_i - x_j| + N sum V(x_i).
"""
from __future__ import annotations

import io
import json
import math
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from numba import njit
from scipy.linalg import eigvalsh_tridiagonal

from .equilibrium import EquilibriumMeasure, synthetic_measure, zeta
from .errors import DivergenceError, FormatError, StepSizeError
from .potentials import Potential

MAGIC = b"LGS1"


@dataclass
class Configuration:
    positions: np.ndarray
    beta: float
    seed: Optional[int] = None
    chain: int = 0
    sweep: int = 0

    def __post_init__(self):
        self.positions = np.sort(np.asarray(self.positions, dtype=float))

    @property
    def N(self) -> int:
        return self.positions.size


def _pair_sum(x: np.ndarray) -> float:
    """``sum_{i != j} -log|x_i - x_j|`` (inf for coincident points)."""
    d = np.abs(x[:, None] - x[None, :])
    iu = np.triu_indices(x.size, 1)
    d = d[iu]
    if np.any(d == 0):
        return math.inf
    return float(-2 * np.sum(np.log(d)))


def energy(V: Potential, c: Configuration) -> float:
    x = c.positions
    return _pair_sum(x) + c.N * float(np.sum(V(x)))


def next_order_energy(c: Configuration, m: EquilibriumMeasure) -> float:
    """``-iint_{x != y} log|x - y| d(fluct)(x) d(fluct)(y)`` with ``fluct = sum delta - N mu``."""
    x, N = c.positions, c.N
    pairs = _pair_sum(x)
    h = m.log_potential(x)
    self_energy = float(np.sum(m.weights * m.log_potential(m.nodes)))
    return pairs - 2 * N * float(np.sum(h)) + N * N * self_energy


def splitting_gap(c: Configuration, V: Potential, m: EquilibriumMeasure) -> float:
    """``|H_N - N^2 I_V - 2N sum zeta(x_i) - F_N|``; zero up to quadrature error."""
    N = c.N
    H = energy(V, c)
    return abs(H - N * N * m.I_V - 2 * N * float(np.sum(zeta(m, V, c.positions))) - next_order_energy(c, m))


def anisotropy(c: Configuration, t, m: EquilibriumMeasure) -> float:
    """``iint (psi(x) - psi(y)) / (x - y) dfluct dfluct`` (diagonal via ``psi'``)."""
    x, N = c.positions, c.N
    Y, W = m.flat_nodes, m.flat_weights
    dpsi = t.deriv(1) if hasattr(t, "deriv") else (lambda u: (t(u + 1e-6) - t(u - 1e-6)) / 2e-6)
    tol = 1e-7 * m.width
    px, dx, pY, dY = t(x), dpsi(x), t(Y), dpsi(Y)

    def dq(a, pa, da, b, pb):
        d = b[None, :] - a[:, None]
        close = np.abs(d) < tol
        return np.where(close, da[:, None], (pb[None, :] - pa[:, None]) / np.where(close, 1.0, d))

    xx = dq(x, px, dx, x, px).sum()
    xm = (dq(x, px, dx, Y, pY) @ W).sum()
    mm = W @ dq(Y, pY, dY, Y, pY) @ W
    return float(xx - 2 * N * xm + N * N * mm)


# ---------------------------------------------------------------------------
# Metropolis kernel


@njit(cache=True)
def _ppoly_eval(x, breaks, coefs):
    n = breaks.size - 1
    j = 0
    while j < n - 1 and x >= breaks[j + 1]:
        j += 1
    base = breaks[j] if np.isfinite(breaks[j]) else 0.0
    d = x - base
    acc = 0.0
    for i in range(coefs.shape[0]):
        acc = acc * d + coefs[i, j]
    return acc


@njit(cache=True)
def _delta(x, i, y, N, breaks, coefs):
    """``H_N(x with x_i -> y) - H_N(x)``; +inf when ``y`` hits another particle."""
    acc = 0.0
    xi = x[i]
    for j in range(x.size):
        if j == i:
            continue
        dn = abs(y - x[j])
        if dn == 0.0:
            return np.inf
        acc += math.log(dn) - math.log(abs(xi - x[j]))
    return -2.0 * acc + N * (_ppoly_eval(y, breaks, coefs) - _ppoly_eval(xi, breaks, coefs))


@njit(cache=True)
def _run_block(x, n_sweeps, scale, beta, breaks, coefs, lo, hi, normals, uniforms):
    N = x.size
    accepted = 0
    outside = 0
    for s in range(n_sweeps):
        for i in range(N):
            y = x[i] + scale * normals[s, i]
            if y <= lo or y >= hi:
                outside += 1
                continue
            dH = _delta(x, i, y, N, breaks, coefs)
            if dH == np.inf:
                continue
            if dH <= 0.0 or uniforms[s, i] < math.exp(-0.5 * beta * dH):
                x[i] = y
                accepted += 1
    return accepted, outside


def energy_delta(V: Potential, x: np.ndarray, i: int, y: float) -> float:
    """O(N) energy change of a single-particle move (the quantity the kernel uses)."""
    breaks, coefs = V.ppoly()
    return float(_delta(np.asarray(x, dtype=float), i, float(y), x.size, breaks, coefs))


@dataclass
class ChainDiagnostics:
    acceptance_rate: float
    tau: float
    ess: float
    outside_U_fraction: float
    proposal_scale: float
    adapted: bool
    window_rejections: float = 0.0

    def as_dict(self) -> dict:
        return {k: (float(v) if not isinstance(v, bool) else v) for k, v in self.__dict__.items()}


@dataclass
class ChainResult:
    positions: np.ndarray  # (records, N), each row sorted
    sweeps: np.ndarray
    chain: int
    beta: float
    seed: int
    diagnostics: ChainDiagnostics

    def configurations(self):
        for row, sw in zip(self.positions, self.sweeps):
            yield Configuration(row, self.beta, self.seed, self.chain, int(sw))


def chain_rng(seed: int, chain: int) -> np.random.Generator:
    """Per-chain stream: PCG64 seeded from ``SeedSequence(seed, spawn_key=(chain,))``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(chain,))))


def measure_quantiles(m: EquilibriumMeasure, N: int) -> np.ndarray:
    """Positions at the quantiles ``(i + 1/2)/N`` of ``m``."""
    xs = np.concatenate([np.linspace(a, b, 4001) for a, b in m.support])
    dens = m.density(xs)
    cdf = np.concatenate([[0.0], np.cumsum((dens[1:] + dens[:-1]) / 2 * np.diff(xs))])
    cdf /= cdf[-1]
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    return np.interp((np.arange(N) + 0.5) / N, cdf[keep], xs[keep])


def _chain_worker(args):
    (breaks, coefs, beta, N, x0, sweeps, burn_in, thinning, window, seed, chain, U, scale0, block) = args
    rng = chain_rng(seed, chain)
    x = x0.copy()
    lo, hi = window
    scale = scale0
    adapted = True
    acc_hist = []
    # burn-in with adaptation every 50 sweeps, then frozen
    done = 0
    while done < burn_in:
        n = min(50, burn_in - done)
        a, _ = _run_block(x, n, scale, beta, breaks, coefs, lo, hi,
                          rng.standard_normal((n, N)), rng.random((n, N)))
        rate = a / (n * N)
        acc_hist.append(rate)
        if rate > 0.5:
            scale *= 1.25
        elif rate < 0.3:
            scale /= 1.25
        done += n
    if burn_in >= 200:
        adapted = 0.2 <= float(np.mean(acc_hist[-4:])) <= 0.6
    n_rec = sweeps // thinning
    out = np.empty((n_rec, N))
    sweep_idx = np.empty(n_rec, dtype=np.int64)
    accepted = outside = 0
    rec = 0
    done = 0
    while done < sweeps:
        n = min(block - block % thinning or thinning, sweeps - done)
        normals = rng.standard_normal((n, N))
        uniforms = rng.random((n, N))
        # run sweep by sweep inside the block so records can be taken
        for s0 in range(0, n, thinning):
            k = min(thinning, n - s0)
            a, o = _run_block(x, k, scale, beta, breaks, coefs, lo, hi, normals[s0:s0 + k], uniforms[s0:s0 + k])
            accepted += a
            outside += o
            if k == thinning and rec < n_rec:
                out[rec] = np.sort(x)
                sweep_idx[rec] = burn_in + done + s0 + k
                rec += 1
        done += n
    out, sweep_idx = out[:rec], sweep_idx[:rec]
    total = max(sweeps * N, 1)
    outside_U = 0.0
    if rec:
        inU = np.zeros(out.shape, dtype=bool)
        for a, b in U:
            inU |= (out >= a) & (out <= b)
        outside_U = float(np.mean(~inU.all(axis=1)))
    tau = integrated_autocorr_time(out.sum(axis=1)) if rec > 8 else 1.0
    diag = ChainDiagnostics(accepted / total, tau, rec / tau, outside_U, scale, adapted, outside / total)
    return out, sweep_idx, diag


def mcmc_sample(V: Potential, beta: float, N: int, sweeps: int = 10000, burn_in: int = 2000, thinning: int = 1,
                window=None, seed: int = 0, chains: int = 1, workers: int = 1,
                measure: Optional[EquilibriumMeasure] = None, U_dilation: float = 0.2) -> list[ChainResult]:
    """Single-particle Metropolis chains targeting the Gibbs measure.

    Chain ``c`` draws from its own stream (see :func:`chain_rng`), so results do
    not depend on ``workers``.  Proposals leaving ``window`` are rejected.
    """
    if N < 2 or not beta > 0:
        raise ValueError("need N >= 2 and beta > 0")
    from .potentials import check_growth
    if not check_growth(V)["passes"]:
        raise ValueError(f"{V.name}: growth condition fails")
    if measure is None:
        from .equilibrium import solve_equilibrium
        measure = solve_equilibrium(V)
    lo_s, hi_s = measure.support[0][0], measure.support[-1][1]
    w = hi_s - lo_s
    if window is None:
        window = (lo_s - w, hi_s + w)
    if window[0] > lo_s or window[1] < hi_s:
        raise DivergenceError(f"window {window} excludes the equilibrium support [{lo_s:.4g}, {hi_s:.4g}]")
    U = [(a - U_dilation * (b - a) / 2, b + U_dilation * (b - a) / 2) for a, b in measure.support]
    breaks, coefs = V.ppoly()
    x0 = measure_quantiles(measure, N)
    scale0 = 0.5 * w / N
    jobs = [(breaks, coefs, float(beta), N, x0, int(sweeps), int(burn_in), int(thinning), tuple(window), int(seed),
             c, U, scale0, 1000) for c in range(chains)]
    if workers > 1 and chains > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_chain_worker, jobs))
    else:
        results = [_chain_worker(j) for j in jobs]
    out = []
    for c, (pos, sw, diag) in enumerate(results):
        if diag.window_rejections > 0.05:
            raise DivergenceError(f"chain {c}: {diag.window_rejections:.1%} of proposals left the window")
        out.append(ChainResult(pos, sw, c, float(beta), int(seed), diag))
    return out


def default_workers() -> int:
    env = os.environ.get("LOGGAS_WORKERS")
    return int(env) if env else 1


# ---------------------------------------------------------------------------
# autocorrelation


def autocorrelation(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float) - np.mean(x)
    n = x.size
    f = np.fft.rfft(x, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    return acf / acf[0] if acf[0] > 0 else np.zeros(n)


def integrated_autocorr_time(x: np.ndarray, c: float = 5.0) -> float:
    """Integrated autocorrelation time with automatic windowing.

    The window doubles until the estimate moves by less than 2% or the window
    exceeds ``c`` times the estimate.
    """
    rho = autocorrelation(x)
    n = rho.size
    if not np.isfinite(rho).all() or rho[0] == 0:
        return 1.0
    cums = 1 + 2 * np.cumsum(rho[1:])
    prev = None
    W = 4
    while W < n - 1:
        tau = max(float(cums[W - 1]), 1.0)
        if W >= c * tau or (prev is not None and abs(tau - prev) < 0.02 * tau):
            return tau
        prev = tau
        W *= 2
    return max(float(cums[-1]), 1.0)


def effective_sample_size(x: np.ndarray) -> float:
    return len(x) / integrated_autocorr_time(x)


# ---------------------------------------------------------------------------
# exact oracle for V = x^2/2


def _tridiagonal(beta: float, N: int, rng: np.random.Generator):
    diag = rng.standard_normal(N)  # N(0, 2) scaled by 1/sqrt(2)
    off = np.sqrt(rng.chisquare(beta * np.arange(N - 1, 0, -1))) / np.sqrt(2)
    return diag, off


def tridiagonal_sample(beta: float, N: int, seed=None) -> Configuration:
    """Exact draw from the Gibbs measure of ``V(x) = x^2/2``.

    Eigenvalues of the tridiagonal beta-Hermite matrix, rescaled by
    ``1/sqrt(beta N / 2)``.  ``seed`` may be an int or a Generator.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    d, e = _tridiagonal(beta, N, rng)
    lam = eigvalsh_tridiagonal(d, e)
    return Configuration(lam / math.sqrt(beta * N / 2), beta, seed if isinstance(seed, int) else None)


def tridiagonal_power_sums(beta: float, N: int, draws: int, seed=None) -> tuple[np.ndarray, np.ndarray]:
    """``(sum x_i, sum x_i^2)`` for ``draws`` exact samples, without diagonalising.

    ``sum lambda = tr H`` and ``sum lambda^2 = ||H||_F^2``.  With the diagonal
    split into its mean direction and the orthogonal complement this is
    ``tr H = sqrt(N) Z`` and ``||H||_F^2 = Z^2 + chi2(N - 1 + beta N (N - 1) / 2)``,
    one normal and one chi-square per draw.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    scale = beta * N / 2
    z = rng.standard_normal(draws)
    rest = rng.chisquare(N - 1 + beta * N * (N - 1) / 2, size=draws)
    return math.sqrt(N) * z / math.sqrt(scale), (z * z + rest) / scale


# ---------------------------------------------------------------------------
# transport


def transport_configuration(c: Configuration, t, tt: float) -> Configuration:
    if abs(tt) > t.t_max:
        raise StepSizeError(f"|t| = {abs(tt):.4g} exceeds t_max = {t.t_max:.4g}")
    x = c.positions
    return Configuration(x + tt * t(x), c.beta, c.seed, c.chain, c.sweep)


def _invert_monotone(phi, y, lo, hi, iters: int = 80):
    a = np.full_like(y, lo)
    b = np.full_like(y, hi)
    for _ in range(iters):
        mid = (a + b) / 2
        below = phi(mid) < y
        a = np.where(below, mid, a)
        b = np.where(below, b, mid)
    return (a + b) / 2


def pushforward_measure(m: EquilibriumMeasure, t, tt: float):
    """Push ``m`` forward by ``phi = id + tt * psi``; returns ``(measure, entropy_gap)``.

    ``entropy_gap = |int log phi' dmu - (Ent(mu) - Ent(phi # mu))|``.
    """
    from .equilibrium import entropy
    if abs(tt) > t.t_max:
        raise StepSizeError(f"|t| = {abs(tt):.4g} exceeds t_max = {t.t_max:.4g}")
    dpsi = t.deriv(1)
    phi = lambda x: x + tt * t(x)
    dphi = lambda x: 1 + tt * dpsi(x)
    support = [(float(phi(np.array(a))), float(phi(np.array(b)))) for a, b in m.support]

    def density(y):
        y = np.asarray(y, dtype=float)
        out = np.zeros_like(y)
        for (a, b), (pa, pb) in zip(m.support, support):
            sel = (y >= pa) & (y <= pb)
            if np.any(sel):
                x = _invert_monotone(phi, y[sel], a, b)
                out[sel] = m.density(x) / dphi(x)
        return out

    sing = [(float(phi(np.array(s))), k) for s, k in m.singular_points]
    pushed = synthetic_measure(support, density, m.n_nodes, name=f"{m.name} pushed by {tt:g}", singular_points=sing)
    X, W = m.nodes, m.weights
    lhs = float(np.sum(W * np.log(dphi(X))))
    gap = abs(lhs - (entropy(m) - entropy(pushed)))
    return pushed, gap


# ---------------------------------------------------------------------------
# files


def write_csv(path, results: list[ChainResult], provenance: Optional[dict] = None) -> None:
    N = results[0].positions.shape[1] if results else 0
    with open(path, "w") as fh:
        for k, v in (provenance or {}).items():
            fh.write(f"# {k} {v}\n")
        fh.write(",".join(["sweep", "chain"] + [f"x_{i + 1}" for i in range(N)]) + "\n")
        for r in results:
            for row, sw in zip(r.positions, r.sweeps):
                fh.write(f"{sw},{r.chain}," + ",".join(f"{v:.17g}" for v in row) + "\n")


def read_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns ``(sweeps, chains, positions)``."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    if not lines or not lines[0].startswith("sweep,chain"):
        raise FormatError(f"{path}: missing 'sweep,chain,x_1..' header")
    data = np.loadtxt(io.StringIO("\n".join(lines[1:])), delimiter=",", ndmin=2)
    return data[:, 0].astype(np.int64), data[:, 1].astype(np.int64), data[:, 2:]


def write_binary(path, results: list[ChainResult], provenance: Optional[dict] = None) -> None:
    """``LGS1`` | u32 len | provenance JSON | u64 N | u64 rows | rows of (u64 sweep, u64 chain, N x f64), little-endian."""
    N = results[0].positions.shape[1] if results else 0
    rows = sum(len(r.sweeps) for r in results)
    prov = json.dumps(provenance or {}, sort_keys=True).encode()
    rec = np.dtype([("sweep", "<u8"), ("chain", "<u8"), ("x", "<f8", (N,))])
    arr = np.empty(rows, dtype=rec)
    i = 0
    for r in results:
        n = len(r.sweeps)
        arr["sweep"][i:i + n] = r.sweeps
        arr["chain"][i:i + n] = r.chain
        arr["x"][i:i + n] = r.positions
        i += n
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<I", len(prov)) + prov + struct.pack("<QQ", N, rows))
        fh.write(arr.tobytes())


def read_binary(path):
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic")
    (plen,) = struct.unpack_from("<I", raw, 4)
    prov = json.loads(raw[8:8 + plen].decode())
    off = 8 + plen
    N, rows = struct.unpack_from("<QQ", raw, off)
    rec = np.dtype([("sweep", "<u8"), ("chain", "<u8"), ("x", "<f8", (N,))])
    arr = np.frombuffer(raw, dtype=rec, count=rows, offset=off + 16)
    return arr["sweep"].astype(np.int64), arr["chain"].astype(np.int64), np.array(arr["x"]), prov
