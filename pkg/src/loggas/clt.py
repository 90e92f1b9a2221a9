"""Fluctuations of linear statistics and their comparison with the CLT predictions."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .equilibrium import EquilibriumMeasure
from .errors import StepSizeError
from .sampler import Configuration, anisotropy, integrated_autocorr_time

VERDICT_COLUMNS = ("potential", "xi", "N", "beta", "m_pred", "m_emp", "m_err", "v_pred", "v_emp", "v_err", "ks_p")


def fluctuation(xi, c: Configuration, m: EquilibriumMeasure) -> float:
    """``sum xi(x_i) - N int xi dmu``."""
    x = c.positions
    return float(np.sum(xi(x)) - c.N * m.integrate(xi))


def fluctuations(xi, positions: np.ndarray, m: EquilibriumMeasure) -> np.ndarray:
    """Row-wise :func:`fluctuation` for an array of configurations."""
    positions = np.atleast_2d(positions)
    return xi(positions).sum(axis=1) - positions.shape[1] * m.integrate(xi)


@dataclass
class FluctuationSample:
    values: np.ndarray
    N: int
    beta: float
    provenance: dict = field(default_factory=dict)
    ess: Optional[float] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.ess is None:
            self.ess = float(self.values.size) / integrated_autocorr_time(self.values) if self.values.size > 8 \
                else float(self.values.size)

    @classmethod
    def iid(cls, values, N, beta, **prov):
        values = np.asarray(values, dtype=float)
        return cls(values, N, beta, dict(prov), float(values.size))

    @classmethod
    def from_chains(cls, xi, results, m: EquilibriumMeasure, **prov):
        """Concatenate chains; the effective count is the sum of per-chain counts."""
        vals, ess = [], 0.0
        for r in results:
            f = fluctuations(xi, r.positions, m)
            vals.append(f)
            ess += f.size / integrated_autocorr_time(f) if f.size > 8 else f.size
        N = results[0].positions.shape[1]
        return cls(np.concatenate(vals), N, results[0].beta, dict(prov), ess)

    @property
    def tau(self) -> float:
        return self.values.size / self.ess

    def thinned(self) -> np.ndarray:
        """Every ``ceil(tau)``-th value: close to independent draws."""
        return self.values[:: max(1, int(math.ceil(self.tau)))]

    def batches(self, n_batches: Optional[int] = None) -> list[np.ndarray]:
        B = n_batches or max(2, int(math.sqrt(self.ess)))
        B = min(B, self.values.size)
        size = self.values.size // B
        return [self.values[i * size:(i + 1) * size] for i in range(B)]


@dataclass
class CLTVerdict:
    mean: float
    mean_err: float
    var: float
    var_err: float
    ks_stat: float
    ks_p: float
    m_pred: float
    v_pred: float
    n: int
    ess: float
    conclusive: bool
    laplace: list = field(default_factory=list)

    def mean_ok(self, k: float = 3.0) -> bool:
        return abs(self.mean - self.m_pred) <= k * self.mean_err

    def var_ok(self, rel: float) -> bool:
        return abs(self.var - self.v_pred) <= rel * self.v_pred

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def empirical_clt(samples: FluctuationSample, pred) -> CLTVerdict:
    """Batch-means moments and a KS test against ``Normal(m_xi, v_xi)``.

    Fewer than 100 effective samples gives an inconclusive verdict.
    """
    vals = samples.values
    batches = samples.batches()
    B = len(batches)
    bm = np.array([b.mean() for b in batches])
    bv = np.array([b.var(ddof=1) for b in batches])
    mean, var = float(vals.mean()), float(vals.var(ddof=1))
    mean_err = float(bm.std(ddof=1) / math.sqrt(B))
    var_err = float(bv.std(ddof=1) / math.sqrt(B))
    thin = samples.thinned()
    if pred.v_xi > 0:
        ks = stats.kstest(thin, "norm", args=(pred.m_xi, math.sqrt(pred.v_xi)))
        ks_stat, ks_p = float(ks.statistic), float(ks.pvalue)
    else:
        ks_stat, ks_p = float("nan"), float("nan")
    return CLTVerdict(mean, mean_err, var, var_err, ks_stat, ks_p, pred.m_xi, pred.v_xi, int(vals.size),
                      float(samples.ess), bool(samples.ess > 100))


def default_s_grid(t, beta: float, N: int) -> list[float]:
    """``{+-0.25, +-0.5, +-1}``, shrunk so ``|s| 2/(beta N) <= t_max / 2``."""
    base = np.array([-1.0, -0.5, -0.25, 0.25, 0.5, 1.0])
    s_max = t.t_max * beta * N / 2 / 2
    if s_max < 1:
        base = base * s_max
    return [float(s) for s in base]


def predicted_log_laplace(s: float, t, m: EquilibriumMeasure, beta: float) -> float:
    """``-(1 - beta/2)(2s/beta) int psi' dmu - (s^2/beta) int xi' psi dmu``."""
    X, W = m.flat_nodes, m.flat_weights
    dpsi = float(np.sum(W * t.deriv(1)(X)))
    xipsi = float(np.sum(W * t.xi.deriv(1)(X) * t(X)))
    return -(1 - beta / 2) * (2 * s / beta) * dpsi - s * s / beta * xipsi


def log_laplace_gap(samples: FluctuationSample, pred, t, m: EquilibriumMeasure,
                    s_grid: Optional[Sequence[float]] = None, n_batches: int = 50) -> list[dict]:
    """Empirical minus predicted ``log E exp(s Fluct)`` on ``s_grid``, with delete-one-batch jackknife errors."""
    beta, N = samples.beta, samples.N
    if s_grid is None:
        s_grid = default_s_grid(t, beta, N)
    tmax = t.t_max
    for s in s_grid:
        if abs(s) * 2 / (beta * N) > tmax:
            raise StepSizeError(f"s = {s} violates |s| 2/(beta N) <= t_max = {tmax:.4g}")
    vals = samples.values
    B = min(n_batches, vals.size)
    size = vals.size // B
    vals = vals[:B * size].reshape(B, size)
    rows = []
    for s in s_grid:
        pred_val = predicted_log_laplace(s, t, m, beta)
        if s == 0:
            rows.append({"s": 0.0, "empirical": 0.0, "predicted": 0.0, "gap": 0.0, "err": 0.0, "unstable": False})
            continue
        lse = logsumexp(s * vals, axis=1)  # per batch
        total = logsumexp(lse) - math.log(B * size)
        loo = np.array([logsumexp(np.delete(lse, b)) - math.log((B - 1) * size) for b in range(B)])
        err = math.sqrt((B - 1) / B * np.sum((loo - loo.mean()) ** 2))
        rel = err / max(abs(total), abs(pred_val), 1e-300)
        rows.append({"s": float(s), "empirical": float(total), "predicted": float(pred_val),
                     "gap": float(total - pred_val), "err": float(err), "unstable": bool(rel > 0.5)})
    return rows


def anisotropy_decay(chains: dict, t, m: EquilibriumMeasure, N_list: Optional[Sequence[int]] = None) -> list[dict]:
    """Mean of ``|A[X_N, psi]| / N`` per ``N``; ``chains[N]`` is an array of configurations (rows)."""
    N_list = sorted(chains) if N_list is None else list(N_list)
    if len(N_list) < 2:
        raise ValueError("need at least two values of N")
    rows = []
    for N in N_list:
        pos = np.atleast_2d(chains[N])
        a = np.array([abs(anisotropy(Configuration(p, 2.0), t, m)) / N for p in pos])
        rows.append({"N": int(N), "mean_abs_A_over_N": float(a.mean()),
                     "stderr": float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else float("nan")})
    return rows


# ---------------------------------------------------------------------------
# files


def verdict_row(potential: str, xi_name: str, N: int, beta: float, v: CLTVerdict) -> list:
    return [potential, xi_name, N, beta, v.m_pred, v.mean, v.mean_err, v.v_pred, v.var, v.var_err, v.ks_p]


def write_verdicts(path, rows: list, provenance: Optional[dict] = None) -> None:
    with open(path, "w") as fh:
        for k, val in (provenance or {}).items():
            fh.write(f"# {k} {val}\n")
        fh.write(",".join(VERDICT_COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join(f"{x:.17g}" if isinstance(x, float) else str(x) for x in r) + "\n")


def histogram(values: np.ndarray, m_xi: float, v_xi: float, bins: int = 40) -> np.ndarray:
    """Rows ``(bin_left, bin_right, count, gaussian_pdf_at_center)``."""
    counts, edges = np.histogram(values, bins=bins)
    centres = (edges[:-1] + edges[1:]) / 2
    pdf = stats.norm.pdf(centres, m_xi, math.sqrt(v_xi)) if v_xi > 0 else np.full(bins, np.nan)
    return np.column_stack([edges[:-1], edges[1:], counts, pdf])


def write_histogram(path, table: np.ndarray, provenance: Optional[dict] = None) -> None:
    with open(path, "w") as fh:
        for k, val in (provenance or {}).items():
            fh.write(f"# {k} {val}\n")
        fh.write("bin_left,bin_right,count,gaussian_pdf_at_center\n")
        for a, b, c, p in table:
            fh.write(f"{a:.17g},{b:.17g},{int(c)},{p:.17g}\n")


def write_summary(path, summary: dict) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True, default=float) + "\n")
