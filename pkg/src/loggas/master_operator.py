"""The master operator, its inversion and the CLT predictions.

For a test function ``xi`` we look for ``psi`` and a constant ``c_xi`` with

    Xi[psi](x) = -psi(x) V'(x) / 2 + int (psi(x) - psi(y)) / (x - y) dmu(y) = xi(x) / 2 + c_xi

on the support.  On the support ``psi = -sign * T / (2 pi^2 S)`` with
``T(x) = int (xi(y) - xi(x)) / ((y - x) sigma_signed(y)) dy``.  Off the
support the same equation is solved pointwise for ``psi(x)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial import chebyshev as C
from scipy.interpolate import make_interp_spline

from . import chebyshev as cheb
from .equilibrium import EquilibriumMeasure, _difference_quotient
from .errors import (AdmissibilityError, DomainError, FormatError, IdentityViolationError, RegularityError)
from .potentials import Potential

PSI_HEADER = "# loggas-psi v1"
COINCIDENCE = 1e-7  # relative to the support width


@dataclass(frozen=True)
class TestFunction:
    """Test function ``xi`` with derivative evaluators up to ``regularity``."""

    __test__ = False  # not a pytest class

    name: str
    derivs: tuple
    regularity: float
    bounds: tuple = (-math.inf, math.inf)
    poly: Optional[Polynomial] = None

    def __call__(self, x):
        return self.derivs[0](np.asarray(x, dtype=float))

    def deriv(self, k: int):
        if k > self.regularity:
            raise RegularityError(f"{self.name}: derivative {k} exceeds regularity {self.regularity}")
        if k < len(self.derivs):
            return self.derivs[k]
        return lambda x: np.zeros_like(np.asarray(x, dtype=float))

    def __add__(self, other: "TestFunction") -> "TestFunction":
        return combine([(1.0, self), (1.0, other)])

    def __rmul__(self, a: float) -> "TestFunction":
        return combine([(a, self)])


def polynomial(coef: Sequence[float], name: Optional[str] = None) -> TestFunction:
    """Test function from power-basis coefficients ``c0 + c1 x + ...``."""
    p = Polynomial(coef)
    derivs = [p]
    for _ in range(max(p.degree(), 0)):
        derivs.append(derivs[-1].deriv())
    return TestFunction(name or _poly_name(coef), tuple(derivs), math.inf, poly=p)


def _poly_name(coef) -> str:
    terms = []
    for j, c in enumerate(coef):
        if c == 0:
            continue
        mono = "" if j == 0 else ("x" if j == 1 else f"x^{j}")
        if j and c == 1:
            terms.append(mono)
        elif j and c == -1:
            terms.append("-" + mono)
        else:
            terms.append(f"{c:g}{mono}")
    return "+".join(terms).replace("+-", "-") or "0"


def from_samples(x, v, name: str = "xi", degree: int = 5) -> TestFunction:
    x = np.asarray(x, dtype=float)
    order = np.argsort(x)
    spl = make_interp_spline(x[order], np.asarray(v, dtype=float)[order], k=degree)
    derivs = [spl] + [spl.derivative(k) for k in range(1, degree)]
    return TestFunction(name, tuple(derivs), degree - 1, (float(x.min()), float(x.max())))


def combine(terms) -> TestFunction:
    """Linear combination ``sum a_i xi_i``."""
    terms = list(terms)
    if all(f.poly is not None for _, f in terms):
        p = sum((a * f.poly for a, f in terms), Polynomial([0.0]))
        return polynomial(p.coef, name=" + ".join(f"{a:g}*({f.name})" for a, f in terms))
    r = min(f.regularity for _, f in terms)
    n = int(min(r, 8)) + 1

    def make(k):
        return lambda x: sum(a * f.deriv(k)(x) for a, f in terms)

    return TestFunction(" + ".join(f"{a:g}*({f.name})" for a, f in terms), tuple(make(k) for k in range(n)), r)


def parse_xi(spec: str) -> TestFunction:
    """``poly:c0,c1,...`` or a two-column sample file."""
    spec = spec.strip()
    if spec.startswith("poly:"):
        return polynomial([float(c) for c in spec[5:].split(",")])
    if Path(spec).exists():
        data = np.loadtxt(spec, comments="#", ndmin=2)
        return from_samples(data[:, 0], data[:, 1], name=Path(spec).stem)
    raise FormatError(f"cannot parse test function {spec!r}; use poly:c0,c1,... or a sample file")


# ---------------------------------------------------------------------------
# principal values and the forward operator


def pv_integral(f: Callable, m: EquilibriumMeasure, x, weight: str = "inv_sigma",
                fprime: Optional[Callable] = None) -> np.ndarray:
    """``P.V. int f(y) / (y - x) W(y) dy`` with ``W`` = ``1/sigma_signed`` or the density.

    Split as ``int (f(y) - f(x)) / (y - x) W dy + f(x) P.V. int W / (y - x) dy``; the
    first integral is regular, the second is known in closed form.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    inside = np.zeros(x.shape, dtype=bool)
    for a, b in m.support:
        inside |= (x > a) & (x < b)
    if not np.all(inside):
        raise DomainError("principal value needs x strictly inside the support")
    if fprime is None:
        fprime = getattr(f, "deriv", None)
        fprime = fprime(1) if callable(fprime) else (lambda t: (f(t + 1e-6) - f(t - 1e-6)) / 2e-6)
    Y = m.flat_nodes
    W = (m.inv_sigma_weights if weight == "inv_sigma" else m.weights).ravel()
    D = _difference_quotient(f, fprime, x[:, None], Y[None, :], COINCIDENCE * m.width)
    return D @ W + f(x) * m.pv_weight(x, weight)


def apply_master_operator(m: EquilibriumMeasure, V: Potential, psi) -> Callable:
    """``Xi[psi]`` as a function; ``psi`` is a :class:`TransportMap` or a plain callable."""
    dpsi = psi.deriv(1) if hasattr(psi, "deriv") else (lambda t: (psi(t + 1e-6) - psi(t - 1e-6)) / 2e-6)
    Y, W = m.flat_nodes, m.flat_weights
    psiY = psi(Y)
    V1 = V.deriv(1)
    tol = COINCIDENCE * m.width

    def xi_of(x):
        x = np.asarray(x, dtype=float)
        flat = np.atleast_1d(x).ravel()
        px = psi(flat)
        d = flat[:, None] - Y[None, :]
        close = np.abs(d) < tol
        dq = np.where(close, np.broadcast_to(dpsi(flat)[:, None], d.shape),
                      (px[:, None] - psiY[None, :]) / np.where(close, 1.0, d))
        out = -px * V1(flat) / 2 + dq @ W
        return out.reshape(x.shape)

    return xi_of


# ---------------------------------------------------------------------------
# admissibility


@dataclass
class ConditionsReport:
    x1: list
    x2: list  # entries (s, d, residual)
    tol: float
    scale: float

    @property
    def satisfied(self) -> bool:
        bound = self.tol * self.scale
        return all(abs(r) < bound for r in self.x1) and all(abs(r) < bound for _, _, r in self.x2)

    def as_dict(self) -> dict:
        return {"x1_residuals": [float(r) for r in self.x1],
                "x2_residuals": [{"s": float(s), "d": int(d), "residual": float(r)} for s, d, r in self.x2],
                "satisfied": self.satisfied}


def required_regularity(m: EquilibriumMeasure) -> int:
    kmax = max((2 * k for _, k in m.singular_points), default=0)
    return 2 * kmax + 4


def _taylor_remainder_quotient(xi: TestFunction, s: float, d: int, y: np.ndarray, tol: float) -> np.ndarray:
    """``(xi(y) - sum_{j<d} xi^(j)(s) (y-s)^j / j!) / (y - s)^d``."""
    h = y - s
    coeffs = [float(xi.deriv(j)(np.array(s))) / math.factorial(j) for j in range(d)]
    taylor = sum(c * h ** j for j, c in enumerate(coeffs))
    close = np.abs(h) < tol
    safe = np.where(close, 1.0, h)
    far = (xi(y) - taylor) / safe ** d
    near_terms = [float(xi.deriv(d + j)(np.array(s))) / math.factorial(d + j) for j in range(2)
                  if d + j <= xi.regularity]
    near = sum(c * h ** j for j, c in enumerate(near_terms))
    return np.where(close, near, far)


def check_conditions(xi: TestFunction, m: EquilibriumMeasure, tol: float = 1e-8) -> ConditionsReport:
    """Residuals of the orthogonality conditions (several cuts) and Taylor conditions (singular points)."""
    need = required_regularity(m)
    if xi.regularity < need:
        raise RegularityError(f"{xi.name}: regularity {xi.regularity} below required {need}")
    Y, Wi = m.flat_nodes, m.inv_sigma_weights.ravel()
    xiY = xi(Y)
    x1 = [float(np.sum(Wi * xiY * Y ** d)) for d in range(m.n_intervals - 1)]
    x2 = []
    for s, k in m.singular_points:
        for d in range(1, 2 * k + 1):
            q = _taylor_remainder_quotient(xi, s, d, Y, 1e-3 * m.width)
            x2.append((s, d, float(np.sum(Wi * q))))
    scale = 1 + float(np.max(np.abs(xiY)))
    return ConditionsReport(x1, x2, tol, scale)


# ---------------------------------------------------------------------------
# inversion


def _smoothstep7(t):
    t = np.clip(t, 0, 1)
    return t ** 4 * (35 - 84 * t + 70 * t ** 2 - 20 * t ** 3)


def _chop(c: np.ndarray, rel: float = 1e-13) -> np.ndarray:
    big = np.nonzero(np.abs(c) > rel * max(np.max(np.abs(c)), 1e-300))[0]
    return c[: big[-1] + 1] if big.size else c[:1]


@dataclass
class TransportMap:
    """Solution ``psi`` of the master equation on ``U`` and its compactly supported extension.

    On the support ``psi`` is a Chebyshev series per interval.  In ``U`` minus the
    support it is obtained pointwise from the master equation.  Outside ``U`` the
    cubic Taylor polynomial at the boundary of ``U`` is blended to zero with a
    degree-7 smoothstep, which keeps ``psi`` in C^3.
    """

    m: EquilibriumMeasure
    V: Potential
    xi: TestFunction
    c_xi: float
    psi_coeffs: np.ndarray
    U: list
    constancy: float = 0.0
    blend: list = field(default_factory=list)  # (boundary, direction, width, Polynomial)

    @property
    def hull(self) -> tuple[float, float]:
        return self.U[0][0], self.U[-1][1]

    def _on_support(self, x, k=0):
        m = self.m
        out = np.zeros_like(x)
        idx = m.interval_index(x)
        for l in range(m.n_intervals):
            sel = idx == l
            if np.any(sel):
                c = self.psi_coeffs[l]
                for _ in range(k):
                    c = C.chebder(c)
                out[sel] = cheb.evaluate(c, (x[sel] - m.centres[l]) / m.radii[l]) / m.radii[l] ** k
        return out

    def _on_support_callable(self):
        f = lambda x: self._on_support(np.asarray(x, dtype=float))
        f.deriv = lambda k: (lambda x: self._on_support(np.asarray(x, dtype=float), k))
        return f

    def _continuation(self, x):
        """Chopped Chebyshev continuation from the nearest support interval."""
        m = self.m
        out = np.zeros_like(x)
        nearest = np.argmin([np.minimum(np.abs(x - a), np.abs(x - b)) for a, b in m.support], axis=0)
        for l in range(m.n_intervals):
            sel = nearest == l
            if np.any(sel):
                c = _chop(self.psi_coeffs[l])
                out[sel] = cheb.evaluate(c, (x[sel] - m.centres[l]) / m.radii[l])
        return out

    def _off_support(self, x):
        """Pointwise solution of ``Xi[psi](x) = xi(x)/2 + c`` for ``x`` off the support."""
        m = self.m
        base = self._continuation(x)
        Y, W = m.flat_nodes, m.flat_weights
        psiY = self._on_support(Y)
        D = m.stieltjes(x + 0j).real - self.V.deriv(1)(x) / 2
        dq = (base[:, None] - psiY[None, :]) / (x[:, None] - Y[None, :])
        resid = self.xi(x) / 2 + self.c_xi - (-base * self.V.deriv(1)(x) / 2 + dq @ W)
        ok = np.abs(D) > 1e-6
        return base + np.where(ok, resid / np.where(ok, D, 1.0), 0.0)

    def _inner(self, x):
        x = np.asarray(x, dtype=float)
        on = self.m.interval_index(x) >= 0
        out = np.empty_like(x)
        if np.any(on):
            out[on] = self._on_support(x[on])
        if np.any(~on):
            out[~on] = self._off_support(x[~on])
        return out

    def in_U(self, x):
        x = np.asarray(x, dtype=float)
        inside = np.zeros(x.shape, dtype=bool)
        for a, b in self.U:
            inside |= (x >= a) & (x <= b)
        return inside

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        flat = np.atleast_1d(x).ravel()
        out = np.zeros_like(flat)
        inU = self.in_U(flat)
        if np.any(inU):
            out[inU] = self._inner(flat[inU])
        for bd, direction, width, poly in self.blend:
            t = (flat - bd) * direction
            sel = (~inU) & (t > 0) & (t < width)
            out[sel] += poly(flat[sel]) * (1 - _smoothstep7(t[sel] / width))
        return out.reshape(x.shape)

    def deriv(self, k: int) -> Callable:
        if k == 0:
            return self
        if k > 3:
            raise RegularityError("transport maps are tracked up to the third derivative")
        steps = {1: 1e-5, 2: 2e-4, 3: 2e-3}
        h = steps[k] * (self.hull[1] - self.hull[0])

        def f(x):
            x = np.asarray(x, dtype=float)
            flat = np.atleast_1d(x).ravel()
            out = np.empty_like(flat)
            on = self.m.interval_index(flat) >= 0
            if np.any(on):
                out[on] = self._on_support(flat[on], k)
            off = ~on
            if np.any(off):
                xo = flat[off]
                if k == 1:
                    out[off] = (self(xo + h) - self(xo - h)) / (2 * h)
                elif k == 2:
                    out[off] = (self(xo + h) - 2 * self(xo) + self(xo - h)) / h ** 2
                else:
                    out[off] = (self(xo + 2 * h) - 2 * self(xo + h) + 2 * self(xo - h) - self(xo - 2 * h)) / (2 * h ** 3)
            return out.reshape(x.shape)

        return f

    def c2_norm(self, n: int = 2001) -> float:
        xs = np.concatenate([np.linspace(a, b, n) for a, b in self.U])
        return float(sum(np.max(np.abs(self.deriv(k)(xs))) for k in range(3)))

    @property
    def t_max(self) -> float:
        norm = self.c2_norm()
        return math.inf if norm == 0 else 1.0 / (2 * norm)

    def table(self):
        """``(node, psi, psi', c_xi)`` rows on the support nodes."""
        X = self.m.flat_nodes
        return np.column_stack([X, self(X), self.deriv(1)(X), np.full(X.size, self.c_xi)])


def _build_U(m: EquilibriumMeasure, V: Potential, margin: float) -> list:
    """Neighbourhood of the support on which ``G - V'/2`` does not vanish off the support."""
    U = []
    w = m.width
    for l, (a, b) in enumerate(m.support):
        left_lim = m.support[l - 1][1] if l > 0 else a - margin * w
        right_lim = m.support[l + 1][0] if l + 1 < m.n_intervals else b + margin * w
        lo, hi = a - margin * w, b + margin * w
        # reach at most a quarter of the way into a gap between cuts
        if l > 0:
            lo = max(lo, a - (a - left_lim) / 4)
        if l + 1 < m.n_intervals:
            hi = min(hi, b + (right_lim - b) / 4)
        # shrink where the denominator changes sign away from the edge
        for side, edge, far in ((-1, a, lo), (1, b, hi)):
            probe = edge + side * np.geomspace(1e-6 * w, abs(far - edge), 400)
            D = m.stieltjes(probe + 0j).real - V.deriv(1)(probe) / 2
            flips = np.nonzero(np.sign(D[1:]) != np.sign(D[:-1]))[0]
            if flips.size:
                cut = edge + side * abs(probe[flips[0]] - edge) / 2
                if side < 0:
                    lo = cut
                else:
                    hi = cut
        if min(a - lo, hi - b) < 1e-3 * w:
            raise AdmissibilityError("neighbourhood U collapsed: G - V'/2 vanishes next to the support")
        U.append((lo, hi))
    return U


def _blend_data(tm: TransportMap, width_frac: float = 0.5) -> list:
    blend = []
    U = tm.U
    for j, (lo, hi) in enumerate(U):
        size = hi - lo
        for bd, direction in ((lo, -1), (hi, 1)):
            width = width_frac * size
            if direction < 0 and j > 0:
                width = min(width, lo - U[j - 1][1])
            if direction > 0 and j + 1 < len(U):
                width = min(width, U[j + 1][0] - hi)
            # derivatives at the boundary from a one-sided Chebyshev fit inside U
            span = 0.05 * size
            a, b = (bd, bd + span) if direction < 0 else (bd - span, bd)
            un = cheb.nodes(16)
            xs = (a + b) / 2 + (b - a) / 2 * un
            c = cheb.coefficients(tm._inner(xs))
            ub = -1.0 if direction < 0 else 1.0
            taylor = []
            cc = c
            for k in range(4):
                taylor.append(cheb.evaluate(cc, ub) / ((b - a) / 2) ** k / math.factorial(k))
                cc = C.chebder(cc)
            poly = Polynomial(taylor, domain=[bd - 1, bd + 1], window=[-1, 1])
            blend.append((bd, direction, width, poly))
    return blend


def invert_master_operator(xi: TestFunction, m: EquilibriumMeasure, V: Potential, margin: float = 0.2,
                           tol: float = 1e-8, check: bool = True) -> TransportMap:
    """Solve ``Xi[psi] = xi/2 + c_xi``.

    Raises :class:`AdmissibilityError` when the conditions fail (unless
    ``check=False``) or when ``Xi[psi] - xi/2`` is not constant on the support.
    """
    report = check_conditions(xi, m, tol)
    if check and not report.satisfied:
        raise AdmissibilityError(f"{xi.name}: conditions not satisfied", report=report)
    X = m.nodes
    Y, Wi = m.flat_nodes, m.inv_sigma_weights.ravel()
    d1 = xi.deriv(1)
    psi_vals = np.empty_like(X)
    for l in range(m.n_intervals):
        D = _difference_quotient(xi, d1, X[l][:, None], Y[None, :], COINCIDENCE * m.width)
        T = D @ Wi
        local = [(s, k) for s, k in m.singular_points if m.support[l][0] - 1e-9 <= s <= m.support[l][1] + 1e-9]
        if local:
            r, ctr = m.radii[l], m.centres[l]
            roots = []
            for s, k in local:
                roots += [(s - ctr) / r] * (2 * k)
            quo, _ = C.chebdiv(cheb.coefficients(T), C.chebfromroots(roots))
            T = cheb.evaluate(quo, m.u) / r ** len(roots)
        psi_vals[l] = -m.signs[l] * T / (2 * np.pi ** 2 * m.S0_values[l])
    coeffs = cheb.coefficients(psi_vals)

    tm = TransportMap(m, V, xi, 0.0, coeffs, [])
    Xi = apply_master_operator(m, V, tm._on_support_callable())
    # c_xi at the midpoint of the interval nearest the centre of the support
    mid = (m.support[0][0] + m.support[-1][1]) / 2
    l0 = int(np.argmin([abs((a + b) / 2 - mid) for a, b in m.support]))
    x0 = np.array([sum(m.support[l0]) / 2])
    tm.c_xi = float(Xi(x0)[0] - xi(x0)[0] / 2)
    grid = m.flat_nodes
    diff = Xi(grid) - xi(grid) / 2 - tm.c_xi
    tm.constancy = float(np.max(np.abs(diff)))
    scale = 1 + float(np.max(np.abs(xi(grid))))
    if check and np.std(diff) > 1e-5 * scale:
        raise AdmissibilityError(f"{xi.name}: Xi[psi] - xi/2 is not constant on the support "
                                 f"(spread {np.std(diff):.3e})", report=report)
    tm.U = _build_U(m, V, margin)
    tm.blend = _blend_data(tm)
    return tm


def round_trip_residual(tm: TransportMap, n: int = 400) -> float:
    """``sup |Xi[psi] - xi/2 - c_xi|`` over an interior grid of each support interval."""
    m = tm.m
    xs = np.concatenate([np.linspace(a, b, n + 2)[1:-1] for a, b in m.support])
    xs = np.concatenate([xs, m.flat_nodes])
    Xi = apply_master_operator(m, tm.V, tm)
    return float(np.max(np.abs(Xi(xs) - tm.xi(xs) / 2 - tm.c_xi)))


# ---------------------------------------------------------------------------
# predictions


@dataclass
class CLTPrediction:
    m_xi: float
    v_xi: float
    v_xi_alt: float
    conditions: ConditionsReport
    beta: float

    def as_dict(self) -> dict:
        d = {"m_xi": self.m_xi, "v_xi": self.v_xi, "v_xi_alt": self.v_xi_alt, "beta": self.beta}
        cond = self.conditions.as_dict()
        d["x1_residuals"] = cond["x1_residuals"]
        d["x2_residuals"] = cond["x2_residuals"]
        return d


def _dq_square_integral(tm: TransportMap, m: EquilibriumMeasure) -> float:
    X, W = m.flat_nodes, m.flat_weights
    D = _difference_quotient(tm, tm.deriv(1), X[:, None], X[None, :], COINCIDENCE * m.width)
    return float(W @ (D ** 2) @ W)


def predict_clt(xi: TestFunction, tm: TransportMap, m: EquilibriumMeasure, V: Potential, beta: float,
                rel_tol: float = 1e-5) -> CLTPrediction:
    """Mean ``(1 - 2/beta) int psi' dmu`` and variance ``-(2/beta) int psi xi' dmu``.

    ``v_xi_alt`` is the equivalent quadratic form; disagreement means a bad ``psi``.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    X, W = m.flat_nodes, m.flat_weights
    psi, dpsi = tm(X), tm.deriv(1)(X)
    factor = 1 - 2 / beta
    m_xi = 0.0 if factor == 0 else factor * float(np.sum(W * dpsi))
    v = -(2 / beta) * float(np.sum(W * psi * xi.deriv(1)(X)))
    v_alt = (2 / beta) * (_dq_square_integral(tm, m) + float(np.sum(W * V.deriv(2)(X) * psi ** 2)))
    pred = CLTPrediction(m_xi, v, v_alt, check_conditions(xi, m), beta)
    if abs(v - v_alt) > rel_tol * (1 + abs(v)):
        raise IdentityViolationError(f"variance forms disagree: {v:.12g} vs {v_alt:.12g}")
    return pred


def variance_identity_gap(tm: TransportMap, xi: TestFunction, m: EquilibriumMeasure, V: Potential) -> float:
    X, W = m.flat_nodes, m.flat_weights
    psi = tm(X)
    total = (float(np.sum(W * xi.deriv(1)(X) * psi)) + _dq_square_integral(tm, m)
             + float(np.sum(W * V.deriv(2)(X) * psi ** 2)))
    return abs(total)


# ---------------------------------------------------------------------------
# files


def save_psi(tm: TransportMap, path, provenance: Optional[dict] = None) -> None:
    with open(path, "w") as fh:
        fh.write(PSI_HEADER + "\n")
        for k, v in (provenance or {}).items():
            fh.write(f"# {k} {v}\n")
        fh.write("# node psi dpsi c_xi\n")
        for row in tm.table():
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_psi(path) -> np.ndarray:
    path = Path(path)
    with open(path) as fh:
        if fh.readline().strip() != PSI_HEADER:
            raise FormatError(f"{path}: expected header {PSI_HEADER!r}")
        data = np.loadtxt(fh, comments="#", ndmin=2)
    if data.shape[1] != 4:
        raise FormatError(f"{path}: expected 4 columns")
    return data


def save_prediction(pred: CLTPrediction, path, provenance: Optional[dict] = None) -> None:
    d = dict(provenance or {})
    d.update(pred.as_dict())
    Path(path).write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")
