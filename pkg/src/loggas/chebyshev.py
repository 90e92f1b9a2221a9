"""Spectral rules for integrals against the Chebyshev weight on [-1, 1].

A smooth function ``g`` is carried by its values at the first-kind Chebyshev
nodes and the matching coefficients ``c`` of ``g = sum_j c_j T_j``.  All
integrals are taken against ``du / sqrt(1 - u**2)``, which is the edge factor
of a square-root density after the affine map of an interval onto [-1, 1].
"""
from __future__ import annotations

import numpy as np
from scipy.fft import dct


def nodes(n: int) -> np.ndarray:
    """First-kind Chebyshev nodes in ascending order."""
    k = np.arange(n)
    return -np.cos((2 * k + 1) * np.pi / (2 * n))


def coefficients(values: np.ndarray) -> np.ndarray:
    """Chebyshev coefficients of the interpolant through ``values`` at :func:`nodes`."""
    v = np.asarray(values, dtype=float)[..., ::-1]  # dct expects cos-ordered (descending) nodes
    n = v.shape[-1]
    c = dct(v, type=2, axis=-1) / n
    c[..., 0] /= 2
    return c


def fejer_weights(n: int) -> np.ndarray:
    """Fejer's first rule on :func:`nodes`: ``int g(u) du = sum(w * g(nodes))``."""
    theta = (2 * np.arange(n) + 1) * np.pi / (2 * n)
    j = np.arange(1, n // 2 + 1)
    w = 1 - 2 * np.sum(np.cos(2 * np.outer(theta, j)) / (4 * j ** 2 - 1), axis=1)
    return 2 / n * w


def evaluate(c: np.ndarray, u) -> np.ndarray:
    return np.polynomial.chebyshev.chebval(u, c)


def _w_outside(z):
    """Joukowski preimage ``w`` with ``|w| >= 1`` and ``z = (w + 1/w) / 2``."""
    z = np.asarray(z, dtype=complex)
    s = np.sqrt(z * z - 1)
    w1 = z + s
    w2 = z - s
    return np.where(np.abs(w1) >= np.abs(w2), w1, w2)


def integral(c: np.ndarray) -> float:
    return np.pi * c[0]


def _series_inverse_powers(c, winv):
    # sum_j c_j winv**j by Horner
    out = np.zeros_like(winv)
    for cj in c[::-1]:
        out = out * winv + cj
    return out


def cauchy(c: np.ndarray, z) -> np.ndarray:
    """``int g(u) / ((z - u) sqrt(1 - u^2)) du`` for ``z`` off [-1, 1]."""
    w = _w_outside(z)
    winv = 1.0 / w
    root = (w - winv) / 2  # sqrt(z^2 - 1) on the branch ~ z at infinity
    return np.pi * _series_inverse_powers(c, winv) / root


def principal_value(c: np.ndarray, u) -> np.ndarray:
    """``P.V. int g(v) / ((v - u) sqrt(1 - v^2)) dv`` for ``u`` in (-1, 1)."""
    u = np.asarray(u, dtype=float)
    # Clenshaw for sum_{j>=1} c_j U_{j-1}(u)
    a = c[1:]
    b1 = np.zeros_like(u)
    b2 = np.zeros_like(u)
    for ak in a[::-1]:
        b1, b2 = ak + 2 * u * b1 - b2, b1
    return np.pi * b1


def log_potential(c: np.ndarray, x) -> np.ndarray:
    """``int log|x - u| g(u) / sqrt(1 - u^2) du`` for real ``x``."""
    x = np.asarray(x, dtype=float)
    inside = np.abs(x) <= 1
    w = np.where(inside, x + 1j * np.sqrt(np.clip(1 - x * x, 0, None)), _w_outside(x + 0j))
    winv = 1.0 / w
    j = np.arange(1, len(c))
    tail = _series_inverse_powers(np.concatenate([[0.0], c[1:] / j]), winv).real
    return np.pi * c[0] * np.log(np.abs(w) / 2) - np.pi * tail


def log_edge_integral(c: np.ndarray) -> float:
    """``int log(1 - u^2) g(u) / sqrt(1 - u^2) du`` (exact for the interpolant)."""
    total = -2 * np.pi * np.log(2) * c[0]
    even = np.arange(2, len(c), 2)
    return total - 2 * np.pi * np.sum(c[even] / even)
