"""Confining potentials, their derivatives and the growth condition."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial import Polynomial
from scipy.interpolate import BSpline, PPoly, make_interp_spline

from .errors import CatalogError, FormatError, RegularityError

POTENTIAL_HEADER = "# loggas-potential v1"
SPLINE_DEGREE = 5


@dataclass(frozen=True)
class Potential:
    """External field ``V`` with derivative evaluators.

    ``regularity`` is the order ``p`` up to which derivatives may be requested;
    closed-form polynomials report ``math.inf``.
    """

    name: str
    derivs: tuple[Callable, ...]
    regularity: float
    domain_hint: tuple[float, float]
    poly: Optional[Polynomial] = None
    spline: Optional[BSpline] = field(default=None, repr=False)

    def __call__(self, x):
        return self.derivs[0](x)

    def deriv(self, k: int):
        if k > self.regularity:
            raise RegularityError(f"{self.name}: derivative of order {k} exceeds regularity {self.regularity}")
        if k < len(self.derivs):
            return self.derivs[k]
        # polynomials are identically zero past their degree
        return lambda x: np.zeros_like(np.asarray(x, dtype=float))

    def ppoly(self) -> tuple[np.ndarray, np.ndarray]:
        """Piecewise power-basis form ``(breaks, coefs)`` for compiled kernels.

        ``coefs[i, j]`` multiplies ``(x - breaks[j])**(deg - i)`` on piece ``j``;
        the outermost pieces extend to infinity.
        """
        if self.poly is not None:
            c = self.poly.coef[::-1][:, None]
            return np.array([-np.inf, np.inf]), np.ascontiguousarray(c)
        pp = PPoly.from_spline(self.spline)
        # drop the zero-width pieces that come from repeated boundary knots
        keep = np.diff(pp.x) > 0
        breaks = np.concatenate([pp.x[:-1][keep], [pp.x[-1]]])
        coefs = pp.c[:, keep]
        breaks = breaks.copy()
        return breaks, np.ascontiguousarray(coefs)


def from_polynomial(name: str, coef: Sequence[float], domain_hint=(-2.0, 2.0)) -> Potential:
    p = Polynomial(coef)
    derivs = [p]
    for _ in range(p.degree()):
        derivs.append(derivs[-1].deriv())
    return Potential(name, tuple(derivs), math.inf, tuple(domain_hint), poly=p)


def from_samples(x, v, name: str = "samples", degree: int = SPLINE_DEGREE) -> Potential:
    """Interpolate sampled values by a spline of degree ``degree`` (at least 5)."""
    if degree < 5:
        raise RegularityError("potential interpolants need degree >= 5")
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    order = np.argsort(x)
    spl = make_interp_spline(x[order], v[order], k=degree)
    derivs = [spl] + [spl.derivative(k) for k in range(1, degree)]
    lo, hi = float(x.min()), float(x.max())
    pad = 0.25 * (hi - lo)
    return Potential(name, tuple(derivs), degree - 1, (lo + pad, hi - pad), spline=spl)


def eval_potential(V: Potential, x, order: int = 0):
    return V.deriv(order)(x)


def check_growth(V: Potential, probe_radius: Optional[float] = None, margin: float = 0.01,
                 n_probe: int = 64) -> dict:
    """Estimate ``liminf V(x) / (2 log|x|)`` on the probe ring ``R <= |x| <= 2R``."""
    lo, hi = V.domain_hint
    diameter = max(hi - lo, max(abs(lo), abs(hi)), 1.0)
    if probe_radius is None:
        probe_radius = 20.0 * diameter
    if probe_radius <= 10 * diameter:
        raise ValueError("probe_radius must exceed 10 x diameter of the domain hint")
    r = np.linspace(probe_radius, 2 * probe_radius, n_probe)
    x = np.concatenate([-r, r])
    ratio = V(x) / (2 * np.log(np.abs(x)))
    est = float(np.min(ratio))
    return {"liminf_estimate": est, "passes": bool(est > 1 + margin), "probe_radius": float(probe_radius)}


def gaussian() -> Potential:
    return from_polynomial("gaussian", [0.0, 0.0, 0.5], (-2.0, 2.0))


def bulk_critical_quartic() -> Potential:
    return from_polynomial("bulk_critical_quartic", [0.0, 0.0, -1.0, 0.0, 0.25], (-2.0, 2.0))


def edge_critical_quartic() -> Potential:
    return from_polynomial("edge_critical_quartic", [0.0, 8 / 5, 1 / 5, -4 / 15, 1 / 20], (-2.0, 2.0))


def two_cut_quartic(t: float) -> Potential:
    """``V(x) = x^4/4 - t x^2``; two cuts ``sqrt(2t-2) <= |x| <= sqrt(2t+2)`` for ``t > 1``."""
    if not t > 1:
        raise CatalogError(f"two_cut_quartic needs t > 1, got {t}")
    b = math.sqrt(2 * t + 2)
    return from_polynomial(f"two_cut_quartic({t:g})", [0.0, 0.0, -t, 0.0, 0.25], (-b, b))


CATALOG = {
    "gaussian": gaussian,
    "bulk_critical_quartic": bulk_critical_quartic,
    "edge_critical_quartic": edge_critical_quartic,
    "two_cut_quartic": two_cut_quartic,
}

_PARAM = re.compile(r"^\s*([a-z_]+)\s*(?:\(\s*([-+0-9.eE]+)\s*\))?\s*$")


def parse_name(name: str) -> tuple[str, Optional[float]]:
    m = _PARAM.match(name)
    if not m or m.group(1) not in CATALOG:
        raise CatalogError(f"unknown potential {name!r}; known: {', '.join(CATALOG)}")
    arg = m.group(2)
    return m.group(1), (float(arg) if arg is not None else None)


def catalog(name: str, t: Optional[float] = None) -> Potential:
    """Look up a catalog potential; ``two_cut_quartic`` takes ``t`` inline, e.g. ``two_cut_quartic(1.5)``."""
    base, arg = parse_name(name)
    if base == "two_cut_quartic":
        t = arg if arg is not None else t
        if t is None:
            raise CatalogError("two_cut_quartic needs a parameter t > 1")
        return two_cut_quartic(t)
    if arg is not None:
        raise CatalogError(f"{base} takes no parameter")
    return CATALOG[base]()


def load_potential(path) -> Potential:
    path = Path(path)
    with open(path) as fh:
        first = fh.readline().strip()
        if first != POTENTIAL_HEADER:
            raise FormatError(f"{path}: expected header {POTENTIAL_HEADER!r}")
        data = np.loadtxt(fh, comments="#", ndmin=2)
    if data.shape[1] != 2 or data.shape[0] < SPLINE_DEGREE + 1:
        raise FormatError(f"{path}: need at least {SPLINE_DEGREE + 1} rows of (x, V(x))")
    return from_samples(data[:, 0], data[:, 1], name=path.stem)


def save_potential(path, x, v) -> None:
    with open(path, "w") as fh:
        fh.write(POTENTIAL_HEADER + "\n")
        for a, b in zip(x, v):
            fh.write(f"{a:.17g} {b:.17g}\n")


def resolve(spec: str) -> Potential:
    """A catalog name or a path to a sampled-potential file."""
    try:
        return catalog(spec)
    except CatalogError:
        if Path(spec).exists():
            return load_potential(spec)
        raise
