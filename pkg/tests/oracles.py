"""Independent reference values for the test suite.

Nothing here calls the spectral machinery under test: derivatives of trig
polynomials come from exact exponential calculus, matrix quantities from
``numpy.linalg`` point by point, and ODE envelopes from closed forms.
"""
from __future__ import annotations

import numpy as np


def _mu(k, ops):
    """Symbol of a product of complex derivatives acting on exp(2 pi i k.x)."""
    out = 1.0 + 0j
    for j, conj in ops:
        kx, ky = 2 * np.pi * k[2 * j], 2 * np.pi * k[2 * j + 1]
        # d/dz = (d/dx - i d/dy)/2, d/dzbar = (d/dx + i d/dy)/2
        out *= 0.5 * (1j * kx + ky) if not conj else 0.5 * (1j * kx - ky)
    return out


def trig_derivative(coords, modes, ops):
    """Exact ``d^ops`` of ``sum amp cos(2 pi k.x + phase)`` on the grid."""
    out = np.zeros(np.broadcast_shapes(*(c.shape for c in coords)), dtype=complex)
    for amp, k, *rest in modes:
        phase = rest[0] if rest else 0.0
        theta = phase + sum(2 * np.pi * kk * x for kk, x in zip(k, coords))
        kneg = [-kk for kk in k]
        out += 0.5 * amp * (_mu(k, ops) * np.exp(1j * theta) + _mu(kneg, ops) * np.exp(-1j * theta))
    return out


def pointwise(fn, G):
    """Apply a matrix function at every grid point of ``(..., n, n)``."""
    flat = G.reshape(-1, G.shape[-2], G.shape[-1])
    res = [fn(M) for M in flat]
    return np.asarray(res).reshape(G.shape[:-2] + np.shape(res[0]))


def ricci_1d_cos(x, eps):
    """Ric and |Ric| for ``phi = eps cos(2 pi x)`` on the one-dimensional torus.

    ``g = 1 - pi^2 eps cos(2 pi x)`` and ``Ric = -(1/4) (log g)''``.
    """
    g = 1 - np.pi ** 2 * eps * np.cos(2 * np.pi * x)
    g1 = 2 * np.pi ** 3 * eps * np.sin(2 * np.pi * x)
    g2 = 4 * np.pi ** 4 * eps * np.cos(2 * np.pi * x)
    R = -0.25 * (g2 * g - g1 ** 2) / g ** 2
    return g, R, np.abs(R) / g


def envelope_closed_form(kind: str, y0: float, t):
    """Solutions of ``y' = F(y)`` for ``F = 1``, ``1 - s`` and ``-s``."""
    t = np.asarray(t, dtype=float)
    if kind == "one":
        return y0 + t
    if kind == "one_minus_s":
        return 1 + (y0 - 1) * np.exp(-t)
    if kind == "minus_s":
        return y0 * np.exp(-t)
    raise ValueError(kind)


def self_consistent_cos(x, eps):
    """Second-order expansion of the solution of ``log(1 + phi''/4) + phi = eps cos(2 pi x)``."""
    B = np.pi ** 2 / (np.pi ** 2 - 1)
    lin = -eps * np.cos(2 * np.pi * x) / (np.pi ** 2 - 1)
    quad = eps ** 2 * (B ** 2 / 4 + B ** 2 / (4 * (1 - 4 * np.pi ** 2)) * np.cos(4 * np.pi * x))
    return lin, lin + quad


def fitted_order(hs, errs):
    """Least-squares slope of log err against log h."""
    return float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
