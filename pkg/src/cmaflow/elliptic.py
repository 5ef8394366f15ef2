"""Newton solvers for the elliptic complex Monge-Ampère equation.

Two problems are handled:

* the fixed right-hand side (Yau) problem ``det g_psi = c f`` with the
  compatibility constant ``c = 1 / mean(f)`` and a mean-zero gauge;
* the self-consistent problem ``log det g_phi + F(phi, z) = 0``.

Each Newton correction solves the linearization with GMRES, right
preconditioned by the inverse of a constant-coefficient Laplacian.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .field import ScalarField, flat_kernel_part, hessian, solve_flat
from .kahler import (
    PD_FLOOR,
    ConeExitError,
    MetricField,
    NonlinearityF,
    contract,
    metric_from_potential,
)

__all__ = [
    "EllipticReport",
    "EllipticError",
    "compatibility_constant",
    "solve_fixed_rhs",
    "solve_self_consistent",
    "normalize_against",
]

log = logging.getLogger(__name__)


class EllipticError(RuntimeError):
    """Newton iteration could not keep the metric positive."""


@dataclass
class EllipticReport:
    solution: ScalarField
    c: float
    residual_sup: float
    newton_iters: int
    converged: bool
    residual_history: list[float] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    kernel_residual: float = 0.0


def compatibility_constant(f: ScalarField) -> float:
    """``c`` with ``int c f dV = vol``; the torus has unit volume."""
    if not (f.values > 0).all():
        raise ValueError("density must be strictly positive")
    return 1.0 / f.mean()


def _newton(phi, residual, jacobian_apply, precond, tol, max_iters, max_halvings,
            gauge, floor):
    """Damped Newton loop shared by both problems.

    ``jacobian_apply(metric, phi, v)`` applies the linearization at ``phi``.
    ``precond(w)`` returns ``(v, s)``: a correction and a slack field
    absorbing the part of the right-hand side outside the range of the
    linearization (fixed-RHS case only, otherwise ``s = 0``).
    """
    geom = phi.geometry
    size = geom.size
    metric = metric_from_potential(phi, floor)
    r = residual(metric, phi)
    hist = [float(np.abs(r).max())]
    it = 0
    while hist[-1] > tol and it < max_iters:
        it += 1

        def matvec(w, metric=metric, phi=phi):
            w = np.asarray(w).reshape(geom.shape)
            v, s = precond(w)
            return (jacobian_apply(metric, phi, v) + s).ravel()

        A = LinearOperator((size, size), matvec=matvec, dtype=np.float64)
        rtol = max(1e-13, min(1e-4, 1e-2 * hist[-1]))
        w, info = gmres(A, -r.ravel(), rtol=rtol, atol=0.0, restart=60, maxiter=20)
        if info < 0:
            raise EllipticError(f"GMRES breakdown (info={info})")
        v, _ = precond(w.reshape(geom.shape))

        lam = 1.0
        accepted = None
        fallback = None
        for _ in range(max_halvings + 1):
            trial = phi.values + lam * v
            if gauge:
                trial = trial - trial.mean()
            cand = ScalarField(geom, trial)
            try:
                m_new = metric_from_potential(cand, floor)
            except ConeExitError:
                lam *= 0.5
                continue
            r_new = residual(m_new, cand)
            res = float(np.abs(r_new).max())
            if fallback is None:
                fallback = (cand, m_new, r_new, res)
            if res < hist[-1]:
                accepted = (cand, m_new, r_new, res)
                break
            lam *= 0.5
        if accepted is None:
            if fallback is None:
                raise EllipticError(
                    f"backtracking could not keep the metric positive at Newton step {it}"
                )
            accepted = fallback
        phi, metric, r, res = accepted
        hist.append(res)
        log.debug("newton %d: residual %.3e (step %.3g)", it, res, lam)
    return phi, metric, hist, it


def solve_fixed_rhs(f: ScalarField, tol: float = 1e-10, init: ScalarField | None = None,
                    max_iters: int = 50, max_halvings: int = 30,
                    floor: float = PD_FLOOR) -> EllipticReport:
    """Solve ``det g_psi = c f`` for mean-zero ``psi``.

    The Newton system ``Delta_psi v = -r`` is bordered with a slack in the
    derivative-free modes (constant, Nyquist combinations) so it stays
    solvable off the exact solution. No potential can change those modes of
    the residual, so convergence is judged on the rest and the leftover is
    reported as ``kernel_residual``: round-off for smooth data, an aliasing
    floor for rough data.
    """
    c = compatibility_constant(f)
    geom = f.geometry
    log_cf = np.log(c * f.values)
    phi = init if init is not None else ScalarField.zeros(geom)
    phi = ScalarField(geom, phi.values - phi.values.mean())

    def residual(metric: MetricField, _phi):
        r = np.log(metric.det) - log_cf
        return r - flat_kernel_part(geom, r)

    def jac(metric: MetricField, _phi, v):
        return contract(metric.inverse, hessian(ScalarField(geom, v)).data).real

    def precond(w):
        return solve_flat(geom, w), flat_kernel_part(geom, w)

    phi, metric, hist, it = _newton(phi, residual, jac, precond, tol, max_iters,
                                    max_halvings, True, floor)
    full = np.log(metric.det) - log_cf
    return EllipticReport(phi, c, hist[-1], it, hist[-1] <= tol, hist,
                          kernel_residual=float(np.abs(flat_kernel_part(geom, full)).max()))


def solve_self_consistent(F: NonlinearityF, geom=None, tol: float = 1e-10,
                          init: ScalarField | None = None, max_iters: int = 50,
                          max_halvings: int = 30, floor: float = PD_FLOOR) -> EllipticReport:
    """Solve ``log det g_phi + F(phi, z) = 0`` (no gauge, ``c = 1``).

    Either ``geom`` or ``init`` fixes the grid.
    """
    if init is None:
        if geom is None:
            raise ValueError("need a geometry or an initial guess")
        init = ScalarField.zeros(geom)
    geom = init.geometry
    h = F.h(geom)
    notes = []
    lo, hi = init.inf() - 1.0, init.sup() + 1.0
    if not F.is_monotone(lo, hi):
        msg = f"F' < 0 somewhere on [{lo:.3g}, {hi:.3g}]; solution may not be unique"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    shift = max(1.0, abs(F.a) + abs(F.b))

    def residual(metric: MetricField, phi):
        return np.log(metric.det) + F.base(phi.values) + h

    def jac(metric: MetricField, phi, v):
        lap = contract(metric.inverse, hessian(ScalarField(geom, v)).data).real
        return lap + F.dF(phi.values) * v

    def precond(w):
        return solve_flat(geom, w, shift=shift), 0.0

    phi, metric, hist, it = _newton(init, residual, jac, precond, tol, max_iters,
                                    max_halvings, False, floor)
    return EllipticReport(phi, 1.0, hist[-1], it, hist[-1] <= tol, hist, notes)


def normalize_against(psi: ScalarField, phi: ScalarField) -> ScalarField:
    """Shift ``psi`` so that ``sup(psi - phi) == sup(phi - psi)``."""
    if psi.geometry != phi.geometry:
        raise ValueError("geometry mismatch")
    d = psi.values - phi.values
    shift = 0.5 * (float((-d).max()) - float(d.max()))
    return ScalarField(psi.geometry, psi.values + shift)
