"""Equilibrium measures of logarithmic potentials.

A measure is stored as its density on first-kind Chebyshev nodes of each
support interval.  On interval ``l`` with centre ``m`` and half-width ``r`` we
write ``y = m + r u`` and carry the smooth function

    q_l(u) = mu(y) * r * sqrt(1 - u^2),     so that   mu(y) dy = q_l(u) du / sqrt(1 - u^2).

Gauss-Chebyshev quadrature, log potentials, Stieltjes transforms and principal
values then all follow from the Chebyshev coefficients of ``q_l``.

Throughout, ``sigma`` is the unsigned edge factor prod_l sqrt(|x - a_l||x - b_l|)
and ``S = density / sigma``.  For several intervals the inversion formulas use
the boundary value of the analytic square root, which equals ``sign_l * sigma``
on interval ``l`` with ``sign_l = (-1)**(number of intervals to the right)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy.optimize import least_squares

from . import chebyshev as cheb
from .errors import (CatalogError, CertificationError, ConvergenceError, FormatError, ProximityError,
                     WindowTooSmallError)
from .potentials import Potential, catalog, check_growth, parse_name

MEASURE_HEADER = "# loggas-measure v1"
DEFAULT_CHEB_NODES = 256


@dataclass
class ZetaReport:
    max_abs_on_support: float
    min_off_support: float
    dyson_residual: float

    def certified(self, c_V: float = 0.0, tol: float = 1e-4) -> bool:
        return self.max_abs_on_support < tol * (1 + abs(c_V)) and self.min_off_support > 0


@dataclass
class EquilibriumMeasure:
    """Density ``S * sigma`` on a finite union of intervals.

    ``S_values[l, k]`` is ``S`` at the ``k``-th Chebyshev node of interval ``l``.
    ``density_fn`` overrides pointwise density evaluation for synthetic
    measures whose ``S`` is not smooth (e.g. a uniform density).
    """

    support: list[tuple[float, float]]
    S_values: np.ndarray
    c_V: float = float("nan")
    I_V: float = float("nan")
    singular_points: list[tuple[float, int]] = field(default_factory=list)
    name: str = "measure"
    density_fn: Optional[Callable] = field(default=None, repr=False)
    certificate: Optional[ZetaReport] = None
    regular_edges: bool = False

    def __post_init__(self):
        self.support = [(float(a), float(b)) for a, b in self.support]
        self.S_values = np.atleast_2d(np.asarray(self.S_values, dtype=float))
        if self.S_values.shape[0] != len(self.support):
            raise ValueError("one row of S values per support interval")

    # ---- geometry -------------------------------------------------------
    @property
    def n_intervals(self) -> int:
        return len(self.support)

    @property
    def n_nodes(self) -> int:
        return self.S_values.shape[1]

    @cached_property
    def u(self) -> np.ndarray:
        return cheb.nodes(self.n_nodes)

    @cached_property
    def centres(self) -> np.ndarray:
        return np.array([(a + b) / 2 for a, b in self.support])

    @cached_property
    def radii(self) -> np.ndarray:
        return np.array([(b - a) / 2 for a, b in self.support])

    @cached_property
    def signs(self) -> np.ndarray:
        L = self.n_intervals
        return np.array([(-1.0) ** (L - 1 - l) for l in range(L)])

    @cached_property
    def nodes(self) -> np.ndarray:
        return self.centres[:, None] + self.radii[:, None] * self.u[None, :]

    def sigma_other(self, l: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.ones_like(x)
        for j, (a, b) in enumerate(self.support):
            if j != l:
                out = out * np.sqrt(np.abs(x - a) * np.abs(x - b))
        return out

    def sigma(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.ones_like(x)
        for a, b in self.support:
            out = out * np.sqrt(np.abs(x - a) * np.abs(x - b))
        return out

    def interval_index(self, x) -> np.ndarray:
        """Index of the support interval containing ``x``, or -1."""
        x = np.asarray(x, dtype=float)
        idx = np.full(x.shape, -1, dtype=int)
        for l, (a, b) in enumerate(self.support):
            idx[(x >= a) & (x <= b)] = l
        return idx

    def sign_at(self, x) -> np.ndarray:
        idx = self.interval_index(x)
        return np.where(idx >= 0, self.signs[np.clip(idx, 0, None)], 0.0)

    def sigma_signed(self, x) -> np.ndarray:
        return self.sign_at(x) * self.sigma(x)

    # ---- quadrature data -----------------------------------------------
    @cached_property
    def q_values(self) -> np.ndarray:
        u2 = 1 - self.u ** 2
        q = np.empty_like(self.S_values)
        for l in range(self.n_intervals):
            q[l] = self.S_values[l] * self.sigma_other(l, self.nodes[l]) * self.radii[l] ** 2 * u2
        return q

    @cached_property
    def q_coeffs(self) -> np.ndarray:
        return cheb.coefficients(self.q_values)

    @cached_property
    def S_coeffs(self) -> np.ndarray:
        return cheb.coefficients(self.S_values)

    @cached_property
    def weights(self) -> np.ndarray:
        """``int f dmu = sum(weights * f(nodes))``."""
        if self.regular_edges:
            # density bounded away from zero at the edges: plain Fejer rule
            dens = self.S_values * self.sigma(self.nodes)
            return cheb.fejer_weights(self.n_nodes)[None, :] * self.radii[:, None] * dens
        return np.pi / self.n_nodes * self.q_values

    @cached_property
    def inv_sigma_weights(self) -> np.ndarray:
        """``int F(y) / sigma_signed(y) dy = sum(inv_sigma_weights * F(nodes))``."""
        w = np.empty_like(self.S_values)
        for l in range(self.n_intervals):
            w[l] = self.signs[l] * np.pi / self.n_nodes / self.sigma_other(l, self.nodes[l])
        return w

    @cached_property
    def inv_sigma_coeffs(self) -> np.ndarray:
        vals = np.array([1.0 / self.sigma_other(l, self.nodes[l]) for l in range(self.n_intervals)])
        return cheb.coefficients(vals)

    @property
    def flat_nodes(self) -> np.ndarray:
        return self.nodes.ravel()

    @property
    def flat_weights(self) -> np.ndarray:
        return self.weights.ravel()

    def integrate(self, f: Callable) -> float:
        return float(np.sum(self.weights * f(self.nodes)))

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @property
    def width(self) -> float:
        return self.support[-1][1] - self.support[0][0]

    # ---- pointwise ------------------------------------------------------
    def S(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        idx = self.interval_index(x)
        for l in range(self.n_intervals):
            sel = idx == l
            if np.any(sel):
                out[sel] = cheb.evaluate(self.S_coeffs[l], (x[sel] - self.centres[l]) / self.radii[l])
        return out

    @cached_property
    def S0_values(self) -> np.ndarray:
        out = np.array(self.S_values, copy=True)
        for s, k in self.singular_points:
            out = out / (self.nodes - s) ** (2 * k)
        return out

    @cached_property
    def S0_coeffs(self) -> np.ndarray:
        return cheb.coefficients(self.S0_values)

    def S0(self, x) -> np.ndarray:
        """``S / prod (x - s_i)^(2 k_i)``, interpolated so it stays accurate at the ``s_i``."""
        if not self.singular_points:
            return self.S(x)
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        idx = self.interval_index(x)
        for l in range(self.n_intervals):
            sel = idx == l
            if np.any(sel):
                out[sel] = cheb.evaluate(self.S0_coeffs[l], (x[sel] - self.centres[l]) / self.radii[l])
        return out

    def density(self, x) -> np.ndarray:
        if self.density_fn is not None:
            x = np.asarray(x, dtype=float)
            return np.where(self.interval_index(x) >= 0, self.density_fn(x), 0.0)
        return self.S(x) * self.sigma(x)

    def __call__(self, x):
        return self.density(x)

    # ---- potentials and transforms -------------------------------------
    def log_potential(self, x) -> np.ndarray:
        """``h(x) = int -log|x - y| dmu(y)``."""
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for l in range(self.n_intervals):
            c = self.q_coeffs[l]
            r = self.radii[l]
            out -= np.pi * c[0] * np.log(r) + cheb.log_potential(c, (x - self.centres[l]) / r)
        return out

    def stieltjes(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        out = np.zeros_like(z)
        for l in range(self.n_intervals):
            r = self.radii[l]
            out += cheb.cauchy(self.q_coeffs[l], (z - self.centres[l]) / r) / r
        return out

    def pv_weight(self, x, weight: str = "density") -> np.ndarray:
        """Closed-form ``P.V. int W(y) / (y - x) dy`` for ``x`` inside the support.

        ``weight`` is ``"density"`` (W = mu) or ``"inv_sigma"`` (W = 1/sigma_signed).
        """
        x = np.asarray(x, dtype=float)
        if weight == "density":
            coeffs, scale = self.q_coeffs, 1 / self.radii
        elif weight == "inv_sigma":
            coeffs, scale = self.inv_sigma_coeffs, self.signs / self.radii
        else:
            raise ValueError(f"unknown weight {weight!r}")
        idx = self.interval_index(x)
        out = np.zeros_like(x)
        for l in range(self.n_intervals):
            ux = (x - self.centres[l]) / self.radii[l]
            own = idx == l
            if np.any(own):
                out[own] += scale[l] * cheb.principal_value(coeffs[l], ux[own])
            if np.any(~own):
                out[~own] -= scale[l] * cheb.cauchy(coeffs[l], ux[~own] + 0j).real
        return out

    def restrict_interior(self, pts, margin: float) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        keep = np.zeros(pts.shape, dtype=bool)
        for a, b in self.support:
            keep |= (pts > a + margin) & (pts < b - margin)
        return pts[keep]


# ---------------------------------------------------------------------------
# construction helpers


def measure_from_S(support, S: Callable, n_nodes: int = DEFAULT_CHEB_NODES, **kw) -> EquilibriumMeasure:
    u = cheb.nodes(n_nodes)
    rows = []
    for a, b in support:
        rows.append(S((a + b) / 2 + (b - a) / 2 * u))
    return EquilibriumMeasure(list(support), np.array(rows), **kw)


def synthetic_measure(support, density: Callable, n_nodes: int = DEFAULT_CHEB_NODES, name: str = "synthetic",
                      regular_edges: bool = False, singular_points=()) -> EquilibriumMeasure:
    """Measure with an arbitrary density on ``support`` (no equilibrium constants).

    By default the density is assumed to vanish like a square root at the
    edges; ``regular_edges=True`` is for densities smooth and positive up to
    the edges (e.g. uniform), integrated with Fejer's rule instead.
    """
    proto = EquilibriumMeasure(list(support), np.ones((len(support), n_nodes)))
    S_vals = density(proto.nodes) / proto.sigma(proto.nodes)
    return EquilibriumMeasure(list(support), S_vals, name=name, density_fn=density,
                              regular_edges=regular_edges, singular_points=list(singular_points))


def _finish(m: EquilibriumMeasure, V: Potential) -> EquilibriumMeasure:
    """Fill in ``c_V`` (median rule over interior nodes) and ``I_V``."""
    x = m.nodes
    h = m.log_potential(x)
    interior = m.restrict_interior(x.ravel(), 0.05 * min(m.radii))
    c_vals = m.log_potential(interior) + V(interior) / 2
    m.c_V = float(np.median(c_vals))
    m.I_V = float(np.sum(m.weights * (h + V(x))))
    return m


_CATALOG_S = {
    "gaussian": (lambda t: [(-2.0, 2.0)], lambda t: (lambda x: np.full_like(x, 1 / (2 * np.pi))), lambda t: []),
    "bulk_critical_quartic": (lambda t: [(-2.0, 2.0)], lambda t: (lambda x: x ** 2 / (2 * np.pi)),
                              lambda t: [(0.0, 1)]),
    "edge_critical_quartic": (lambda t: [(-2.0, 2.0)], lambda t: (lambda x: (x - 2) ** 2 / (10 * np.pi)),
                              lambda t: [(2.0, 1)]),
    "two_cut_quartic": (lambda t: [(-math.sqrt(2 * t + 2), -math.sqrt(2 * t - 2)),
                                   (math.sqrt(2 * t - 2), math.sqrt(2 * t + 2))],
                        lambda t: (lambda x: np.abs(x) / (2 * np.pi)), lambda t: []),
}


def catalog_measure(name: str, n_nodes: int = DEFAULT_CHEB_NODES) -> EquilibriumMeasure:
    """Closed-form equilibrium measure of a catalog potential."""
    base, t = parse_name(name)
    if base not in _CATALOG_S:
        raise CatalogError(f"no closed-form measure for {name!r}")
    V = catalog(name)
    sup, S, sing = (f(t) for f in _CATALOG_S[base])
    m = measure_from_S(sup, S, n_nodes, singular_points=sing, name=V.name)
    return _finish(m, V)


# ---------------------------------------------------------------------------
# effective potential and certification


def zeta(m: EquilibriumMeasure, V: Potential, x):
    """Effective potential ``h(x) + V(x)/2 - c_V``."""
    return m.log_potential(x) + V(x) / 2 - m.c_V


def _off_support_probe(m: EquilibriumMeasure, window, n: int = 400) -> np.ndarray:
    lo, hi = window
    gap = 0.01 * m.width
    pts = [np.linspace(lo, m.support[0][0] - gap, n), np.linspace(m.support[-1][1] + gap, hi, n)]
    for (a0, b0), (a1, b1) in zip(m.support[:-1], m.support[1:]):
        g = min(gap, (a1 - b0) / 4)
        pts.append(np.linspace(b0 + g, a1 - g, n))
    pts = np.concatenate(pts)
    return pts[(pts >= lo) & (pts <= hi)]


def dyson_residual(m: EquilibriumMeasure, V: Potential) -> float:
    """``sup |V'(x)/2 - P.V. int dmu(y)/(x - y)|`` over the quadrature nodes."""
    x = m.flat_nodes
    return float(np.max(np.abs(V.deriv(1)(x) / 2 + m.pv_weight(x, "density"))))


def verify_euler_lagrange(m: EquilibriumMeasure, V: Potential, window=None) -> ZetaReport:
    if window is None:
        c, w = (m.support[0][0] + m.support[-1][1]) / 2, m.width
        window = (c - 1.5 * w, c + 1.5 * w)
    on = zeta(m, V, m.flat_nodes)
    off = zeta(m, V, _off_support_probe(m, window))
    return ZetaReport(float(np.max(np.abs(on))), float(np.min(off)) if off.size else float("inf"),
                      dyson_residual(m, V))


def stieltjes(m: EquilibriumMeasure, z) -> complex:
    z = np.asarray(z, dtype=complex)
    if np.any(z.imag == 0):
        spacing = np.pi * m.radii.max() / m.n_nodes
        for a, b in m.support:
            near = (z.real > a - spacing) & (z.real < b + spacing) & (z.imag == 0)
            if np.any(near):
                raise ProximityError("z lies on or too close to the support")
    out = m.stieltjes(z)
    return complex(out) if out.ndim == 0 else out


def _difference_quotient(f, fprime, x, y, tol):
    d = y - x
    close = np.abs(d) < tol
    safe = np.where(close, 1.0, d)
    return np.where(close, fprime(np.broadcast_to(x, d.shape)), (f(y) - f(x)) / safe)


def quadratic_identity_residual(m: EquilibriumMeasure, V: Potential) -> float:
    """``sup |(2 pi mu)^2 + V'^2 - 4 L|`` over the nodes, ``L(x) = int (V'(x)-V'(y))/(x-y) dmu``."""
    x = m.flat_nodes
    V1, V2 = V.deriv(1), V.deriv(2)
    Y, W = m.flat_nodes, m.flat_weights
    L = np.array([np.sum(W * _difference_quotient(V1, V2, xi, Y, 1e-7 * m.width)) for xi in x])
    mu = m.density(x)
    return float(np.max(np.abs((2 * np.pi * mu) ** 2 + V1(x) ** 2 - 4 * L)))


def equil_identity_gap(m: EquilibriumMeasure, V: Potential, h: Callable, hprime: Optional[Callable] = None) -> float:
    """``|iint (h(x)-h(y))/(x-y) dmu dmu - int V' h dmu|``."""
    if hprime is None:
        hprime = getattr(h, "deriv", None)
        hprime = hprime(1) if callable(hprime) else _numeric_derivative(h)
    X, W = m.flat_nodes, m.flat_weights
    D = _difference_quotient(h, hprime, X[:, None], X[None, :], 1e-7 * m.width)
    lhs = W @ D @ W
    rhs = np.sum(W * V.deriv(1)(X) * h(X))
    return float(abs(lhs - rhs))


def _numeric_derivative(f, step=1e-5):
    return lambda x: (f(x + step) - f(x - step)) / (2 * step)


def entropy(m: EquilibriumMeasure) -> float:
    """``int mu log mu``.

    ``log mu = log S0 + sum 2 k_i log|x - s_i| + log sigma``; the singular-point
    and edge logarithms are integrated exactly against the Chebyshev series.
    """
    X, W = m.nodes, m.weights
    if m.regular_edges:
        return float(np.sum(W * np.log(m.density(X))))
    S0 = m.S0_values
    total = float(np.sum(W * np.log(S0)))
    for s, k in m.singular_points:
        total -= 2 * k * float(m.log_potential(np.array(s)))
    for l in range(m.n_intervals):
        c = m.q_coeffs[l]
        # log sigma = log r + 0.5 log(1 - u^2) + log sigma_other on interval l
        total += np.log(m.radii[l]) * cheb.integral(c) + 0.5 * cheb.log_edge_integral(c)
        total += float(np.sum(W[l] * np.log(m.sigma_other(l, X[l]))))
    return total


# ---------------------------------------------------------------------------
# solver


def _simplex_projection(v: np.ndarray) -> np.ndarray:
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1
    ind = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1), 0)


def discrete_minimizer(V: Potential, window, nodes: int = 2048, max_iter: int = 3000,
                       tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Minimise the discretised energy over probability vectors on a uniform grid.

    Cell self-interaction uses the exact log-average over a cell.  Accelerated
    projected gradient locates the support, then an active-set solve of the
    KKT system polishes it.  Returns ``(cell centres, masses)``.
    """
    lo, hi = window
    h = (hi - lo) / nodes
    x = lo + h * (np.arange(nodes) + 0.5)
    diff = np.abs(x[:, None] - x[None, :])
    np.fill_diagonal(diff, 1.0)
    K = -np.log(diff)
    np.fill_diagonal(K, -(np.log(h) - 1.5))
    Vx = V(x)

    # step from the spectral radius (power iteration)
    v = np.ones(nodes) / np.sqrt(nodes)
    for _ in range(50):
        v = K @ v
        v /= np.linalg.norm(v)
    Lip = 2 * abs(v @ K @ v) * 1.05
    p = _simplex_projection(-Vx / Lip + 1.0 / nodes)
    y, t = p.copy(), 1.0
    for it in range(max_iter):
        grad = 2 * (K @ y) + Vx
        p_new = _simplex_projection(y - grad / Lip)
        t_new = (1 + math.sqrt(1 + 4 * t * t)) / 2
        if np.dot(p_new - p, grad) > 0:  # adaptive restart
            t_new = 1.0
        y = p_new + (t - 1) / t_new * (p_new - p)
        p, t = p_new, t_new
        if it % 100 == 99:
            g = 2 * (K @ p) + Vx
            if p @ g - g.min() < 1e-7:
                break

    active = p > 0
    for _ in range(50):
        idx = np.nonzero(active)[0]
        A = np.zeros((idx.size + 1, idx.size + 1))
        A[:-1, :-1] = 2 * K[np.ix_(idx, idx)]
        A[:-1, -1] = -1
        A[-1, :-1] = 1
        rhs = np.concatenate([-Vx[idx], [1.0]])
        sol = np.linalg.solve(A, rhs)
        pa, lam = sol[:-1], sol[-1]
        if np.any(pa < 0):
            # drop the most negative quarter of offending nodes
            neg = idx[pa < 0]
            order = np.argsort(pa[pa < 0])
            active[neg[order[: max(1, neg.size // 4)]]] = False
            continue
        q = np.zeros(nodes)
        q[idx] = pa
        g = 2 * (K @ q) + Vx
        viol = (~active) & (g < lam - 1e-12 * max(1.0, abs(lam)))
        if not np.any(viol):
            p = q
            break
        active |= viol
    g = 2 * (K @ p) + Vx
    gap = p @ g - g.min()
    if not gap < tol * max(1.0, abs(g.min())):
        raise ConvergenceError(f"discrete minimiser not stationary (Frank-Wolfe gap {gap:.3e})")
    return x, p


def detect_support(x: np.ndarray, p: np.ndarray, min_run: int = 3, merge_gap: int = 3) -> list[tuple[int, int]]:
    """Runs of in-support nodes ``[(first, last), ...]`` (inclusive indices)."""
    inside = p > 1e-10 / p.size
    runs = []
    i = 0
    while i < p.size:
        if inside[i]:
            j = i
            while j + 1 < p.size and inside[j + 1]:
                j += 1
            runs.append([i, j])
            i = j + 1
        else:
            i += 1
    merged = []
    for r in runs:
        if merged and r[0] - merged[-1][1] - 1 <= merge_gap:
            merged[-1][1] = r[1]
        else:
            merged.append(r)
    return [tuple(r) for r in merged if r[1] - r[0] + 1 >= min_run]


def fit_edge(x: np.ndarray, dens: np.ndarray, alpha: float, n_fit: int = 16) -> tuple[float, int]:
    """Fit ``dens ~ C |x - alpha|^(1/2 + 2k)`` on the nodes nearest ``alpha``.

    Returns the refined endpoint and ``k``.
    """
    order = np.argsort(np.abs(x - alpha))[:n_fit]
    xs, ds = x[order], dens[order]
    good = ds > 0
    xs, ds = xs[good], ds[good]
    gamma = np.polyfit(np.log(np.abs(xs - alpha)), np.log(ds), 1)[0]
    k = max(0, int(round((gamma - 0.5) / 2)))
    # dens^(1/gamma) is affine in x; its zero is the endpoint (one Newton step on the fit)
    lin = ds ** (1 / (0.5 + 2 * k))
    slope, icpt = np.polyfit(xs, lin, 1)
    alpha_new = -icpt / slope if slope != 0 else alpha
    if abs(alpha_new - alpha) > 4 * np.ptp(xs):
        alpha_new = alpha
    return float(alpha_new), k


def _S_from_endpoints(V: Potential, support, n: int) -> EquilibriumMeasure:
    """``S = (sign/2pi^2) int (V'(y)-V'(x))/((y-x) sigma_signed(y)) dy`` on Chebyshev nodes."""
    proto = EquilibriumMeasure(list(support), np.ones((len(support), n)))
    V1, V2 = V.deriv(1), V.deriv(2)
    Y, Wi = proto.nodes.ravel(), proto.inv_sigma_weights.ravel()
    X = proto.nodes
    S = np.empty_like(X)
    tol = 1e-12 * proto.width
    for l in range(proto.n_intervals):
        D = _difference_quotient(V1, V2, X[l][:, None], Y[None, :], tol)
        S[l] = proto.signs[l] * (D @ Wi) / (2 * np.pi ** 2)
    return EquilibriumMeasure(list(support), S)


def _endpoint_equations(V: Potential, ends: np.ndarray, n: int) -> np.ndarray:
    L = ends.size // 2
    support = [(ends[2 * l], ends[2 * l + 1]) for l in range(L)]
    if np.any(np.diff(ends) <= 0):
        return np.full(2 * L, 1e3)
    proto = EquilibriumMeasure(support, np.ones((L, n)))
    Y, Wi = proto.nodes.ravel(), proto.inv_sigma_weights.ravel()
    Vp = V.deriv(1)(Y)
    eqs = [np.sum(Wi * Y ** d * Vp) for d in range(L)]
    eqs.append(np.sum(Wi * Y ** L * Vp) / (2 * np.pi) - 1)
    if L > 1:
        m = _S_from_endpoints(V, support, n)
        m.S_values[:] = np.abs(m.S_values)
        V1 = V.deriv(1)
        # zeta is constant across each gap: int_gap (V'/2 - G) = 0
        k = np.arange(1, 33)
        ug = np.cos(k * np.pi / 33)
        wg = np.pi / 33 * np.sin(k * np.pi / 33) ** 2
        for l in range(L - 1):
            b0, a1 = support[l][1], support[l + 1][0]
            c, r = (a1 + b0) / 2, (a1 - b0) / 2
            xg = c + r * ug
            zp = V1(xg) / 2 - m.stieltjes(xg + 0j).real
            eqs.append(r * np.sum(wg * zp / np.sqrt(1 - ug ** 2)))
    return np.array(eqs)


def _solve_endpoints(V: Potential, ends0: np.ndarray, n: int, fixed: Optional[int] = None) -> np.ndarray:
    scale = ends0[-1] - ends0[0]
    if fixed is None:
        res = least_squares(lambda e: _endpoint_equations(V, e, n), ends0, x_scale=scale,
                            xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=400, method="lm")
        return res.x
    free = np.arange(ends0.size) != fixed

    def F(e_free):
        e = ends0.copy()
        e[free] = e_free
        return _endpoint_equations(V, e, n)

    res = least_squares(F, ends0[free], x_scale=scale, xtol=1e-15, ftol=1e-15, gtol=1e-15,
                        max_nfev=400, method="lm")
    out = ends0.copy()
    out[free] = res.x
    return out


def _refine_critical_edge(V: Potential, ends: np.ndarray, i: int, k: int, n: int) -> np.ndarray:
    """Locate an endpoint at which ``S`` vanishes to order ``2k``.

    There the endpoint equations behave like ``(alpha - alpha*)^(2k+1)``, so
    plain Newton/least squares stalls far from machine precision.  With the
    endpoint held fixed and the others solved for, the projected residual
    ``g(alpha)`` is fitted as ``g^(1/(2k+1))``, which is analytic with a simple
    zero at ``alpha*``.
    """
    width = ends[-1] - ends[0]
    p = 2 * k + 1
    direction = None
    for _ in range(2):
        d = np.concatenate([-np.geomspace(0.03, 0.004, 6), np.geomspace(0.004, 0.03, 6)]) * width
        alphas = ends[i] + d
        resid = []
        for a in alphas:
            e = ends.copy()
            e[i] = a
            e = _solve_endpoints(V, e, n, fixed=i)
            resid.append(_endpoint_equations(V, e, n))
        resid = np.array(resid)
        if direction is None:
            direction = resid[-1] / np.linalg.norm(resid[-1])
        g = resid @ direction
        root = np.sign(g) * np.abs(g) ** (1 / p)
        coef = np.polynomial.polynomial.polyfit(d, root, 4)
        shift = [r.real for r in np.polynomial.polynomial.polyroots(coef) if abs(r.imag) < 1e-12]
        if not shift:
            break
        ends = ends.copy()
        ends[i] += min(shift, key=abs)
        ends = _solve_endpoints(V, ends, n, fixed=i)
    return ends


def _find_singular_points(m: EquilibriumMeasure, rel: float = 1e-6) -> list[tuple[float, int]]:
    """Zeros of ``S`` on the support (interior minima below threshold or vanishing edges)."""
    found = []
    Smax = np.max(np.abs(m.S_values))
    for l, (a, b) in enumerate(m.support):
        c = m.S_coeffs[l]
        r, ctr = m.radii[l], m.centres[l]
        u = np.linspace(-1, 1, 4001)
        vals = cheb.evaluate(c, u)
        cands = []
        for e in (0, u.size - 1):
            if abs(vals[e]) < rel * Smax:
                cands.append(u[e])
        dc = C.chebder(c)
        for root in C.chebroots(dc):
            if abs(root.imag) < 1e-8 and -1 < root.real < 1:
                ur = root.real
                if abs(cheb.evaluate(c, ur)) < rel * Smax and cheb.evaluate(C.chebder(dc), ur) >= 0:
                    cands.append(ur)
        for uc in cands:
            s = ctr + r * uc
            # slope of log|S| against log|x - s| away from the zero
            d = np.geomspace(1e-2, 1e-1, 12) * r
            pts = np.concatenate([s + d, s - d])
            pts = pts[(pts > a) & (pts < b)]
            Sv = np.abs(cheb.evaluate(c, (pts - ctr) / r))
            slope = np.polyfit(np.log(np.abs(pts - s)), np.log(Sv), 1)[0]
            k = int(round(slope / 2))
            if k >= 1 and not any(abs(s - s2) < 1e-6 * m.width for s2, _ in found):
                found.append((float(s), k))
    return found


def _factorize(m: EquilibriumMeasure, singular: list[tuple[float, int]]) -> np.ndarray:
    """Replace ``S`` by ``S0 * prod (x - s)^(2k)`` with ``S0`` from Chebyshev division."""
    S_new = np.array(m.S_values, copy=True)
    for l in range(m.n_intervals):
        a, b = m.support[l]
        r, ctr = m.radii[l], m.centres[l]
        c = m.S_coeffs[l]
        local = [(s, k) for s, k in singular if a - 1e-9 <= s <= b + 1e-9]
        if not local:
            continue
        roots = []
        for s, k in local:
            roots += [(s - ctr) / r] * (2 * k)
        quo, _ = C.chebdiv(c, C.chebfromroots(roots))
        S0 = cheb.evaluate(quo, m.u) / r ** len(roots)
        prod = np.ones_like(m.u)
        for s, k in local:
            prod *= (m.nodes[l] - s) ** (2 * k)
        S_new[l] = S0 * prod
    return S_new


def _build_candidate(V: Potential, ends: np.ndarray, n_cheb: int):
    ends = _solve_endpoints(V, ends, n_cheb)
    if np.any(np.diff(ends) <= 0) or not np.all(np.isfinite(ends)):
        return None, ends
    L = ends.size // 2
    support = [(ends[2 * l], ends[2 * l + 1]) for l in range(L)]
    m = _S_from_endpoints(V, support, n_cheb)
    Smax = np.max(np.abs(m.S_values))
    for i in range(ends.size):
        l, side = divmod(i, 2)
        S_edge = cheb.evaluate(m.S_coeffs[l], 1.0 if side else -1.0)
        if abs(S_edge) < 1e-4 * Smax:
            # vanishing order from the local power law of S at the edge
            d = np.geomspace(1e-2, 1e-1, 10) * m.radii[l]
            pts = ends[i] - d if side else ends[i] + d
            Sv = np.abs(m.S(pts))
            k = max(1, int(round(np.polyfit(np.log(d), np.log(Sv), 1)[0] / 2)))
            ends = _refine_critical_edge(V, ends, i, k, n_cheb)
            support = [(ends[2 * j], ends[2 * j + 1]) for j in range(L)]
            m = _S_from_endpoints(V, support, n_cheb)
    singular = _find_singular_points(m)
    S_vals = _factorize(m, singular)
    m = EquilibriumMeasure(support, S_vals, singular_points=singular, name=V.name)
    m = EquilibriumMeasure(support, S_vals / m.mass, singular_points=singular, name=V.name)
    return _finish(m, V), ends


def solve_equilibrium(V: Potential, window=None, nodes: int = 2048, n_cheb: Optional[int] = None,
                      certify: bool = True, tol: float = 1e-4) -> EquilibriumMeasure:
    """Equilibrium measure of ``V``.

    Pipeline: discrete minimisation on a uniform grid of ``nodes`` cells,
    support detection, edge fits (endpoint and vanishing order), endpoint
    polishing against the moment/gap conditions, Chebyshev reconstruction of
    ``S``, singular-point extraction and factorisation, certification.
    """
    if nodes < 512:
        raise ValueError("need at least 512 grid nodes")
    growth = check_growth(V)
    if not growth["passes"]:
        raise ValueError(f"{V.name}: growth condition fails (estimate {growth['liminf_estimate']:.4f})")
    lo, hi = V.domain_hint
    if window is None:
        c, w = (lo + hi) / 2, (hi - lo) / 2
        window = (c - 1.6 * w, c + 1.6 * w)
    if not (window[0] <= lo and window[1] >= hi):
        raise ValueError("window must contain the domain hint")
    n_cheb = n_cheb or max(64, nodes // 8)

    x, p = discrete_minimizer(V, window, nodes)
    h = x[1] - x[0]
    runs = detect_support(x, p)
    if not runs:
        raise WindowTooSmallError("no support detected in window")
    if runs[0][0] == 0 or runs[-1][1] == x.size - 1:
        raise WindowTooSmallError(f"detected support touches the window boundary {window}")
    dens = p / h
    ends = []
    for i0, i1 in runs:
        a, _ = fit_edge(x[i0:i1 + 1], dens[i0:i1 + 1], x[i0] - h / 2)
        b, _ = fit_edge(x[i0:i1 + 1], dens[i0:i1 + 1], x[i1] + h / 2)
        ends += [a, b]
    candidates = [np.array(ends)]
    # a gap of a few cells may be a discretisation artefact of bulk criticality
    gaps = [l for l in range(len(runs) - 1) if runs[l + 1][0] - runs[l][1] < 0.02 * x.size]
    if gaps:
        merged = np.delete(np.array(ends), [2 * l + j for l in gaps for j in (1, 2)])
        candidates.insert(0, merged)
    best = None
    for ends0 in candidates:
        m, ends_c = _build_candidate(V, ends0, n_cheb)
        if m is None:
            continue
        report = verify_euler_lagrange(m, V, window)
        ok = report.certified(m.c_V, tol) and np.all(m.S0(m.nodes) > 0)
        if best is None or (ok and not best[1]):
            best = (m, ok)
        if ok:
            break
    if best is None:
        raise ConvergenceError(f"{V.name}: endpoint refinement failed")
    m = best[0]
    report = verify_euler_lagrange(m, V, window)
    m.certificate = report
    if certify and not report.certified(m.c_V, tol):
        raise CertificationError(f"{V.name}: Euler-Lagrange certification failed: {report}")
    if certify and np.any(m.S0(m.nodes) <= 0):
        raise CertificationError(f"{V.name}: S0 not positive on the support")
    return m


def l1_distance(m1: EquilibriumMeasure, m2: EquilibriumMeasure, n: int = 20001) -> float:
    lo = min(m1.support[0][0], m2.support[0][0])
    hi = max(m1.support[-1][1], m2.support[-1][1])
    x = np.linspace(lo, hi, n)
    return float(np.trapezoid(np.abs(m1.density(x) - m2.density(x)), x))


# ---------------------------------------------------------------------------
# file format


def save_measure(m: EquilibriumMeasure, path, provenance: Optional[dict] = None) -> None:
    with open(path, "w") as fh:
        fh.write(MEASURE_HEADER + "\n")
        for k, v in (provenance or {}).items():
            fh.write(f"# {k} {v}\n")
        fh.write(f"name {m.name}\n")
        for a, b in m.support:
            fh.write(f"support {a:.17g} {b:.17g}\n")
        for s, k in m.singular_points:
            fh.write(f"singular {s:.17g} {k}\n")
        fh.write(f"c_V {m.c_V:.17g}\n")
        fh.write(f"I_V {m.I_V:.17g}\n")
        fh.write(f"nodes_per_interval {m.n_nodes}\n")
        dens = m.S_values * m.sigma(m.nodes)
        for xi, wi, di in zip(m.nodes.ravel(), m.weights.ravel(), dens.ravel()):
            fh.write(f"{xi:.17g} {wi:.17g} {di:.17g}\n")


def load_measure(path) -> EquilibriumMeasure:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != MEASURE_HEADER:
        raise FormatError(f"{path}: expected header {MEASURE_HEADER!r}")
    support, singular, rows = [], [], []
    meta = {}
    for line in lines[1:]:
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        key = parts[0]
        if key == "support":
            support.append((float(parts[1]), float(parts[2])))
        elif key == "singular":
            singular.append((float(parts[1]), int(parts[2])))
        elif key in ("c_V", "I_V"):
            meta[key] = float(parts[1])
        elif key == "nodes_per_interval":
            meta[key] = int(parts[1])
        elif key == "name":
            meta[key] = " ".join(parts[1:])
        else:
            rows.append([float(v) for v in parts])
    data = np.array(rows)
    n = meta["nodes_per_interval"]
    proto = EquilibriumMeasure(support, np.ones((len(support), n)))
    if data.shape != (len(support) * n, 3) or not np.allclose(data[:, 0], proto.nodes.ravel(), rtol=0, atol=1e-13):
        raise FormatError(f"{path}: node table does not match the declared support")
    S = data[:, 2].reshape(len(support), n) / proto.sigma(proto.nodes)
    return EquilibriumMeasure(support, S, c_V=meta.get("c_V", float("nan")), I_V=meta.get("I_V", float("nan")),
                              singular_points=singular, name=meta.get("name", path.stem))
