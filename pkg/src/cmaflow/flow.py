"""Explicit integration of the parabolic Monge-Ampère flow

    d phi / dt = log det g_phi + F(phi, z) - log_c

with a positivity safeguard, parabolic CFL stepping and the ODE comparison
envelopes that bound ``sup phi`` and ``inf phi``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .field import ScalarField
from .kahler import (
    PD_FLOOR,
    ConeExitError,
    MetricField,
    NonlinearityF,
    metric_from_potential,
)

__all__ = [
    "FlowConfig",
    "FlowState",
    "Trajectory",
    "FlowError",
    "HorizonEstimate",
    "rhs",
    "initial_state",
    "step",
    "run",
    "estimate_horizon",
    "comparison_envelopes",
]

log = logging.getLogger(__name__)

SERIES_FIELDS = ("t", "dt", "sup_abs_phi", "inf_phi", "sup_phi", "sup_abs_phidot",
                 "min_eig", "mean_det")


class FlowError(RuntimeError):
    """Positivity breakdown; ``state`` and ``trajectory`` hold partial results."""

    def __init__(self, msg, state=None, trajectory=None):
        super().__init__(msg)
        self.state = state
        self.trajectory = trajectory


@dataclass(frozen=True)
class FlowConfig:
    T: float
    dt_init: float | None = None
    dt_max: float | None = None
    safety: float = 0.25
    log_c: float = 0.0
    snapshot_times: tuple[float, ...] = ()
    floor: float = PD_FLOOR
    max_halvings: int = 20

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"horizon T must be positive, got {self.T}")
        if not 0 < self.safety < 1:
            raise ValueError(f"safety must lie in (0, 1), got {self.safety}")
        snaps = tuple(sorted(float(s) for s in self.snapshot_times))
        if snaps and (snaps[0] < 0 or snaps[-1] > self.T):
            raise ValueError("snapshot times must lie in [0, T]")
        object.__setattr__(self, "snapshot_times", snaps)


@dataclass(frozen=True, eq=False)
class FlowState:
    t: float
    phi: ScalarField
    metric: MetricField
    phidot: ScalarField | None
    dt: float | None = None
    halvings: int = 0


@dataclass(eq=False)
class Trajectory:
    snapshots: list[FlowState]
    series: dict[str, np.ndarray]
    config: FlowConfig
    F: NonlinearityF

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    def snapshot_at(self, t: float) -> FlowState:
        i = int(np.argmin(np.abs(self.times - t)))
        return self.snapshots[i]


def rhs(phi: ScalarField, F: NonlinearityF, log_c: float = 0.0,
        metric: MetricField | None = None, floor: float = PD_FLOOR,
        hz: np.ndarray | None = None) -> ScalarField:
    """``log det g_phi + F(phi, z) - log_c``; raises on cone exit.

    ``hz`` may carry precomputed ``h(z)`` values to skip re-evaluation.
    """
    if metric is None:
        metric = metric_from_potential(phi, floor)
    if hz is None:
        hz = F.h(phi.geometry)
    vals = np.log(metric.det) + F.base(phi.values) + (hz - log_c)
    return ScalarField(phi.geometry, vals)


def initial_state(phi0: ScalarField, F: NonlinearityF, log_c: float = 0.0,
                  t: float = 0.0, floor: float = PD_FLOOR) -> FlowState:
    m = metric_from_potential(phi0, floor)
    return FlowState(t, phi0, m, rhs(phi0, F, log_c, m))


def _try_step(state: FlowState, dt: float, F, log_c, floor, hz) -> FlowState:
    geom = state.phi.geometry
    mid = ScalarField(geom, state.phi.values + 0.5 * dt * state.phidot.values)
    k2 = rhs(mid, F, log_c, floor=floor, hz=hz)
    new = ScalarField(geom, state.phi.values + dt * k2.values)
    m = metric_from_potential(new, floor)
    return FlowState(state.t + dt, new, m, rhs(new, F, log_c, m, hz=hz), dt)


def step(state: FlowState, dt: float, F: NonlinearityF, log_c: float = 0.0,
         floor: float = PD_FLOOR, max_halvings: int = 20,
         hz: np.ndarray | None = None) -> FlowState:
    """One explicit midpoint (RK2) step, halving ``dt`` on cone exit."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if state.phidot is None:
        state = initial_state(state.phi, F, log_c, state.t, floor)
    if hz is None:
        hz = F.h(state.phi.geometry)
    for k in range(max_halvings + 1):
        try:
            new = _try_step(state, dt, F, log_c, floor, hz)
        except ConeExitError as err:
            log.debug("step rejected at t=%g dt=%g: %s", state.t, dt, err)
            dt *= 0.5
            continue
        return FlowState(new.t, new.phi, new.metric, new.phidot, dt, k)
    raise FlowError(
        f"positivity breakdown at t={state.t:.6g} after {max_halvings} step halvings",
        state=state,
    )


def _cfl(state: FlowState, safety: float) -> float:
    h = state.phi.geometry.spacing
    trinv = np.trace(state.metric.inverse, axis1=-2, axis2=-1).real.max()
    return safety * h * h / float(trinv)


def _record(series: dict, state: FlowState):
    v = state.phi.values
    series["t"].append(state.t)
    series["dt"].append(np.nan if state.dt is None else state.dt)
    series["sup_abs_phi"].append(float(np.abs(v).max()))
    series["inf_phi"].append(float(v.min()))
    series["sup_phi"].append(float(v.max()))
    series["sup_abs_phidot"].append(state.phidot.sup_abs())
    series["min_eig"].append(state.metric.min_eig)
    series["mean_det"].append(float(state.metric.det.mean()))


def run(phi0: ScalarField, F: NonlinearityF, config: FlowConfig,
        callback: Callable[[FlowState], None] | None = None) -> Trajectory:
    """Integrate from ``phi0`` to ``config.T``.

    The step is ``safety * h^2 / sup tr_{g_phi} g``, optionally capped by
    ``dt_max`` (and ``dt_init`` for the first step), and shortened to land
    exactly on every snapshot time. Snapshots always include 0 and T.
    """
    cfg = config
    state = initial_state(phi0, F, cfg.log_c, floor=cfg.floor)
    hz = F.h(phi0.geometry)
    targets = sorted(set(cfg.snapshot_times) | {cfg.T})
    targets = [t for t in targets if t > 0]
    snapshots = [state]
    series = {k: [] for k in SERIES_FIELDS}
    _record(series, state)
    first = True
    ti = 0
    try:
        while ti < len(targets):
            target = targets[ti]
            dt = _cfl(state, cfg.safety)
            if cfg.dt_max is not None:
                dt = min(dt, cfg.dt_max)
            if first and cfg.dt_init is not None:
                dt = min(dt, cfg.dt_init)
            first = False
            land = dt >= target - state.t
            if land:
                dt = target - state.t
            new = step(state, dt, F, cfg.log_c, cfg.floor, cfg.max_halvings, hz)
            if land and new.halvings == 0:
                new = FlowState(target, new.phi, new.metric, new.phidot, new.dt, 0)
            state = new
            _record(series, state)
            if callback is not None:
                callback(state)
            if state.t == target:
                snapshots.append(state)
                ti += 1
    except FlowError as err:
        err.trajectory = Trajectory(snapshots, {k: np.asarray(v) for k, v in series.items()}, cfg, F)
        raise
    return Trajectory(snapshots, {k: np.asarray(v) for k, v in series.items()}, cfg, F)


def _rk4(fun: Callable[[float], float], y0: float, times: Sequence[float], hmax: float) -> np.ndarray:
    """RK4 for an autonomous scalar ODE, sampled at increasing ``times``."""
    out = np.empty(len(times))
    y, t = float(y0), 0.0
    for i, target in enumerate(times):
        span = target - t
        if span > 0:
            nsub = max(1, int(np.ceil(span / hmax - 1e-12)))
            h = span / nsub
            for _ in range(nsub):
                k1 = fun(y)
                k2 = fun(y + 0.5 * h * k1)
                k3 = fun(y + 0.5 * h * k2)
                k4 = fun(y + h * k3)
                y = y + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6
            t = target
        out[i] = y
    return out


def comparison_envelopes(M0: float, m0: float, F: NonlinearityF, geom,
                         times: Sequence[float], hmax: float = 1e-3):
    """Solve ``dM/dt = sup_z F(M, z)`` and ``dm/dt = inf_z F(m, z)`` at ``times``."""
    hlo, hhi = F.h_range(geom)
    M = _rk4(lambda s: float(F.base(s)) + hhi, M0, times, hmax)
    m = _rk4(lambda s: float(F.base(s)) + hlo, m0, times, hmax)
    return M, m


@dataclass
class HorizonEstimate:
    T: float
    times: np.ndarray
    M: np.ndarray
    m: np.ndarray
    kappa: float = field(default=0.0)


def estimate_horizon(phi0: ScalarField, F: NonlinearityF, window: float = 1.0,
                     T_cap: float = 10.0, h: float = 1e-3) -> HorizonEstimate:
    """Largest ``T <= T_cap`` with ``M_t <= M_0 + window`` and ``m_t >= m_0 - window``.

    The envelopes are integrated with RK4 on a uniform grid of step ``h``;
    the exit time is located by linear interpolation of the violated bound.
    ``kappa`` is ``sup |F'|`` over the envelope range up to ``T``.
    """
    if not window > 0:
        raise ValueError("window must be positive")
    M0, m0 = phi0.sup(), phi0.inf()
    nsteps = max(1, int(np.ceil(T_cap / h - 1e-12)))
    times = np.linspace(0.0, T_cap, nsteps + 1)
    M, m = comparison_envelopes(M0, m0, F, phi0.geometry, times, hmax=T_cap / nsteps)
    excess = np.maximum(M - (M0 + window), (m0 - window) - m)
    bad = np.nonzero(excess > 0)[0]
    if bad.size == 0:
        T, last = T_cap, nsteps
    else:
        i = int(bad[0])
        e0, e1 = excess[i - 1], excess[i]
        T = float(times[i - 1] + (times[i] - times[i - 1]) * (-e0) / (e1 - e0))
        last = i - 1
    sel = slice(0, last + 1)
    lo = min(float(m[sel].min()), m0)
    hi = max(float(M[sel].max()), M0)
    return HorizonEstimate(T, times[sel], M[sel], m[sel], F.kappa(lo, hi))
