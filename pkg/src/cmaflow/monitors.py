"""Computable a-priori estimate quantities along flow trajectories.

Each monitor is a pure function of a :class:`~cmaflow.flow.FlowState` (or a
trajectory) and explicit parameters. Verdicts carry the inequality they
check and its measured margin (positive means satisfied with room).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .field import (
    ComplexTensorField,
    ScalarField,
    gradient,
    grad_norm_sq,
    hessian,
    holomorphic_hessian,
    third_mixed,
)
from .flow import FlowState, Trajectory, comparison_envelopes
from .kahler import NonlinearityF, contract, laplacian_wrt, ricci, traces

__all__ = [
    "MonitorSeries",
    "Verdict",
    "c0_envelopes",
    "phidot_envelope",
    "blocki_K",
    "gradient_shape_constant",
    "aubin_yau_H",
    "third_order_S",
    "stress_tensor_T",
    "tensor_identity_defect",
    "parabolic_defect",
    "gradient_evolution_bound",
    "composite_G",
    "ricci_norm_series",
    "tail_max",
    "envelope_kappa",
]


@dataclass
class MonitorSeries:
    name: str
    times: np.ndarray
    values: np.ndarray
    params: dict = field(default_factory=dict)


@dataclass
class Verdict:
    name: str
    passed: bool
    margin: float
    inequality: str
    waived: str | None = None

    def as_dict(self) -> dict:
        out = {"pass": bool(self.passed), "inequality": self.inequality,
               "margin": None if self.waived else float(self.margin)}
        if self.waived:
            out["waived"] = self.waived
        return out


def _envelopes(traj: Trajectory, F: NonlinearityF):
    # the flow subtracts log_c, which shifts the comparison ODEs alike
    phi0 = traj.snapshots[0].phi
    log_c = traj.config.log_c
    if log_c != 0.0:
        F = replace(F, const=F.const - log_c)
    return comparison_envelopes(phi0.sup(), phi0.inf(), F, phi0.geometry, traj.times)


def c0_envelopes(traj: Trajectory, F: NonlinearityF | None = None, tol: float = 1e-5):
    """ODE comparison envelopes ``m_t <= phi(t) <= M_t`` at every snapshot."""
    F = traj.F if F is None else F
    if not traj.snapshots:
        raise ValueError("empty trajectory")
    M, m = _envelopes(traj, F)
    sup = np.array([s.phi.sup() for s in traj.snapshots])
    inf = np.array([s.phi.inf() for s in traj.snapshots])
    violation = float(max(0.0, (sup - M).max(), (m - inf).max()))
    t = traj.times
    return (
        MonitorSeries("M_t", t, M),
        MonitorSeries("m_t", t, m),
        Verdict("c0_envelope", violation <= tol, tol - violation,
                "m_t <= phi(t, z) <= M_t with dM/dt = sup_z F(M, z), dm/dt = inf_z F(m, z)"),
    )


def envelope_kappa(traj: Trajectory, F: NonlinearityF | None = None) -> float:
    """``sup |F'|`` over the range of the comparison envelopes."""
    F = traj.F if F is None else F
    M, m = _envelopes(traj, F)
    return F.kappa(float(m.min()), float(M.max()))


def phidot_envelope(traj: Trajectory, F: NonlinearityF | None = None, rel: float = 1e-3,
                    atol: float = 1e-13):
    """``sup |phidot(t)| <= sup |phidot(0)| e^(kappa t) (1 + rel)``.

    ``atol`` is a floating-point floor for runs started at a stationary point.
    """
    F = traj.F if F is None else F
    kappa = envelope_kappa(traj, F)
    t = traj.times
    vals = np.array([s.phidot.sup_abs() for s in traj.snapshots])
    bound = vals[0] * np.exp(kappa * t) * (1 + rel) + atol
    margin = float((bound - vals).min())
    return (
        MonitorSeries("sup_abs_phidot", t, vals, {"kappa": kappa}),
        Verdict("phidot_envelope", margin >= 0, margin,
                "sup|phidot(t)| <= sup|phidot(0)| exp(kappa t) (1 + 1e-3)"),
    )


def blocki_K(state: FlowState, A: float, eps_beta: float = 1e-30):
    """``K = t log |grad phi|^2 - (A phi - phi^2 / A)``.

    Points with ``beta <= eps_beta`` are excluded (NaN in the returned array);
    the sup is ``None`` when every point is excluded.
    """
    if not A > 0:
        raise ValueError("A must be positive")
    beta = grad_norm_sq(state.phi).values
    phi = state.phi.values
    ok = beta > eps_beta
    K = np.full(beta.shape, np.nan)
    K[ok] = state.t * np.log(beta[ok]) - (A * phi[ok] - phi[ok] ** 2 / A)
    return K, (float(K[ok].max()) if ok.any() else None)


def gradient_shape_constant(traj: Trajectory) -> float:
    """Smallest ``C`` with ``sup |grad phi(t)|^2 <= e^(C/t)`` at every snapshot with t > 0."""
    best = -np.inf
    for s in traj.snapshots:
        if s.t <= 0:
            continue
        b = grad_norm_sq(s.phi).sup()
        if b > 0:
            best = max(best, s.t * np.log(b))
    return float(best)


def aubin_yau_H(state: FlowState, alpha: float, A: float):
    """``H = e^(-alpha/t) log tr_g g_phi - A phi``.

    Also returns whether ``e^(-alpha/t) sup|grad phi|^2 <= 1`` holds at this
    state, the condition the estimate relies on.
    """
    if not state.t > 0 or not alpha > 0:
        raise ValueError("need t > 0 and alpha > 0")
    tr, _ = traces(state.metric)
    w = np.exp(-alpha / state.t)
    H = ScalarField(state.phi.geometry, w * np.log(tr.values) - A * state.phi.values)
    cond = w * grad_norm_sq(state.phi).sup() <= 1.0
    return H, H.sup(), bool(cond)


def _S_values(phi: ScalarField, P: np.ndarray) -> np.ndarray:
    a = third_mixed(phi).data
    Q = np.conj(P)  # Q[i, p] = g^{i pbar}
    S = np.einsum("...ip,...qj,...kr,...ijk,...pqr->...", Q, Q, Q, a, np.conj(a),
                  optimize=True)
    return S.real


def third_order_S(state: FlowState):
    """``S = g^{i pbar} g^{q jbar} g^{k rbar} phi_{i jbar k} conj(phi_{p qbar r})``."""
    if state.phi.geometry.n == 1:
        a = third_mixed(state.phi).data[..., 0, 0, 0]
        g = state.metric.matrix[..., 0, 0].real
        S = (a.real ** 2 + a.imag ** 2) / g ** 3
    else:
        S = np.maximum(_S_values(state.phi, state.metric.inverse), 0.0)
    field_ = ScalarField(state.phi.geometry, S)
    return field_, field_.sup()


def stress_tensor_T(state: FlowState, F: NonlinearityF) -> ComplexTensorField:
    """``T = -(F'' phi_i phi_jbar + F' phi_{i jbar} + F_{i jbar} + F'_i phi_jbar + phi_i conj(F'_j))``.

    The background Ricci term vanishes on the flat torus. ``F'_i`` is zero for
    the supported family but the symmetrised term is still evaluated.
    """
    geom = state.phi.geometry
    phi = state.phi.values
    d = gradient(state.phi).data
    outer = d[..., :, None] * np.conj(d)[..., None, :]
    H = state.metric.matrix - np.eye(geom.n)
    Fp = F.dF(phi)[..., None, None]
    Fpp = F.d2F(phi)[..., None, None]
    dFp = np.zeros(geom.shape + (geom.n,), dtype=np.complex128)  # F'_i
    cross = dFp[..., :, None] * np.conj(d)[..., None, :]
    cross = cross + np.conj(np.swapaxes(cross, -1, -2))
    minus_T = Fpp * outer + Fp * H + F.h_hess(geom) + cross
    return ComplexTensorField(geom, ("h", "a"), -minus_T)


def _central_weights(t0: float, t1: float, t2: float):
    h1, h2 = t1 - t0, t2 - t1
    return (-h2 / (h1 * (h1 + h2)), (h2 - h1) / (h1 * h2), h1 / (h2 * (h1 + h2)))


def _neighbors(traj: Trajectory, index: int):
    if not 0 < index < len(traj.snapshots) - 1:
        raise ValueError(f"snapshot {index} has no neighbours for central differencing")
    s0, s1, s2 = traj.snapshots[index - 1:index + 2]
    return s0, s1, s2, _central_weights(s0.t, s1.t, s2.t)


def tensor_identity_defect(traj: Trajectory, index: int, F: NonlinearityF | None = None) -> float:
    """sup-norm of ``-T - Ric(g_phi) - d/dt g_phi`` at an interior snapshot."""
    F = traj.F if F is None else F
    s0, s1, s2, (w0, w1, w2) = _neighbors(traj, index)
    dg = w0 * s0.metric.matrix + w1 * s1.metric.matrix + w2 * s2.metric.matrix
    R, _ = ricci(s1.metric)
    T = stress_tensor_T(s1, F)
    return float(np.abs(-T.data - R.data - dg).max())


_QUANTITIES = ("phidot", "grad_sq", "S", "log_tr")


def _quantity(state: FlowState, name: str) -> ScalarField:
    if name == "phidot":
        return state.phidot
    if name == "grad_sq":
        return grad_norm_sq(state.phi)
    if name == "S":
        return third_order_S(state)[0]
    if name == "log_tr":
        tr, _ = traces(state.metric)
        return ScalarField(tr.geometry, np.log(tr.values))
    raise ValueError(f"unknown quantity {name!r}; expected one of {_QUANTITIES}")


def parabolic_defect(traj: Trajectory, quantity: str, index: int) -> ScalarField:
    """``(d/dt - Delta_phi) Q`` at an interior snapshot.

    The time derivative is the three-point (nonuniform) central difference
    over the neighbouring snapshots; the Laplacian is that of the metric at
    the centre snapshot.
    """
    s0, s1, s2, (w0, w1, w2) = _neighbors(traj, index)
    q0, q1, q2 = (_quantity(s, quantity) for s in (s0, s1, s2))
    dq = w0 * q0.values + w1 * q1.values + w2 * q2.values
    lap = laplacian_wrt(s1.metric, q1)
    return ScalarField(q1.geometry, dq - lap.values)


def gradient_evolution_bound(state: FlowState, F: NonlinearityF):
    """Both sides' ingredients for the evolution of ``|grad phi|^2``.

    Returns ``(cross, good)`` with ``cross = 2 Re <grad phi, F' grad phi + grad_z F>``
    and ``good = sum g^{a bbar} (phi_{ia} conj(phi_{ib}) + phi_{i bbar} conj(phi_{i abar}))``
    (nonnegative). On the flat torus the evolution equals ``cross - good``.
    """
    geom = state.phi.geometry
    d = gradient(state.phi).data
    Fp = F.dF(state.phi.values)[..., None]
    v = Fp * d + F.h_grad(geom)
    cross = 2.0 * np.sum(d * np.conj(v), axis=-1).real
    P = state.metric.inverse
    Hh = holomorphic_hessian(state.phi).data
    H = hessian(state.phi).data
    good = (np.einsum("...ba,...ia,...ib->...", P, Hh, np.conj(Hh))
            + np.einsum("...ba,...ib,...ia->...", P, H, np.conj(H))).real
    return ScalarField(geom, cross), ScalarField(geom, good)


def _profile(C, t: float) -> float:
    if isinstance(C, (tuple, list)):
        a, b = C
        return float(a) * float(np.exp(float(b) / t))
    return float(C)


def composite_G(state: FlowState, C1, C2, C3) -> float:
    """``sup (S / C1(t) + tr_g g_phi / C2(t) + |grad phi|^2 / C3(t))``.

    Each ``C`` is a positive number or a profile ``(a, b)`` meaning ``a e^(b/t)``.
    """
    c = [_profile(C, state.t) for C in (C1, C2, C3)]
    if min(c) <= 0:
        raise ValueError("weights must be positive")
    S, _ = third_order_S(state)
    tr, _ = traces(state.metric)
    beta = grad_norm_sq(state.phi)
    return float((S.values / c[0] + tr.values / c[1] + beta.values / c[2]).max())


def ricci_norm_series(traj: Trajectory) -> MonitorSeries:
    vals = np.array([ricci(s.metric)[1].sup() for s in traj.snapshots])
    return MonitorSeries("ricci_norm", traj.times, vals)


def tail_max(values: Sequence[float]) -> np.ndarray:
    """``max_{s >= t} Q(s)`` for each sample ``t`` (reverse cumulative max)."""
    v = np.asarray(values, dtype=float)
    return np.maximum.accumulate(v[::-1])[::-1]
