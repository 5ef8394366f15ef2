import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cmaflow.field import ScalarField, TorusGeometry, grad_norm_sq, third_mixed, trig_field
from cmaflow.flow import FlowConfig, FlowState, Trajectory, initial_state, run
from cmaflow.kahler import NonlinearityF, metric_from_potential, traces
from cmaflow.monitors import (
    Verdict,
    aubin_yau_H,
    blocki_K,
    c0_envelopes,
    composite_G,
    envelope_kappa,
    gradient_evolution_bound,
    gradient_shape_constant,
    parabolic_defect,
    phidot_envelope,
    ricci_norm_series,
    stress_tensor_T,
    tail_max,
    tensor_identity_defect,
    third_order_S,
)
from oracles import fitted_order

G = TorusGeometry(1, 16)
PHI0 = trig_field(G, [(0.02, (1, 0)), (0.01, (1, 2), 0.3)])
F_RICH = NonlinearityF(a=-1.0, b=0.3, modes=((0.1, (1, 1)),))


def _centred_run(F, delta, tc=0.02, phi0=PHI0):
    return run(phi0, F, FlowConfig(T=tc + delta, snapshot_times=(tc - delta, tc)))


@pytest.fixture(scope="module")
def smooth_run():
    return run(PHI0, F_RICH, FlowConfig(T=0.05, snapshot_times=tuple(np.linspace(0, 0.05, 6))))


def test_verdict_serialisation():
    v = Verdict("x", True, 0.5, "a <= b")
    assert v.as_dict() == {"pass": True, "margin": 0.5, "inequality": "a <= b"}
    w = Verdict("y", True, 0.0, "c", waived="input not rough")
    assert w.as_dict()["margin"] is None and w.as_dict()["waived"] == "input not rough"


@pytest.mark.parametrize("F", [NonlinearityF(const=1.0), NonlinearityF(a=-1.0, const=1.0),
                               NonlinearityF(a=-1.0), F_RICH])
def test_c0_envelopes_hold(F):
    tr = run(PHI0, F, FlowConfig(T=0.2, snapshot_times=(0.05, 0.1)))
    M, m, v = c0_envelopes(tr)
    assert v.passed and v.margin > 0
    assert M.values[0] == PHI0.sup() and m.values[0] == PHI0.inf()


def test_envelopes_respect_log_c():
    phi0 = ScalarField.constant(G, 0.1)
    tr = run(phi0, NonlinearityF(a=-1.0), FlowConfig(T=0.1, log_c=0.5))
    # constant data sit on both envelopes; ignoring log_c would miss by ~0.05
    _, _, v = c0_envelopes(tr, tol=1e-7)
    assert v.passed


def test_phidot_envelope(smooth_run):
    series, v = phidot_envelope(smooth_run)
    assert v.passed
    assert series.params["kappa"] == envelope_kappa(smooth_run)
    assert envelope_kappa(smooth_run) <= 1.3


def test_phidot_envelope_detects_growth():
    g = TorusGeometry(1, 4)
    phi = ScalarField.zeros(g)
    m = metric_from_potential(phi)
    states = [FlowState(t, phi, m, ScalarField.constant(g, 1.0 + 10 * t)) for t in (0.0, 0.1)]
    tr = Trajectory(states, {}, FlowConfig(T=0.1), NonlinearityF(a=1.0))
    _, v = phidot_envelope(tr)
    assert not v.passed and v.margin < 0


def test_blocki_K():
    st0 = initial_state(ScalarField.zeros(G), NonlinearityF())
    K, sup = blocki_K(st0, 2.0)
    assert sup is None and np.isnan(K).all()
    s = FlowState(0.5, PHI0, metric_from_potential(PHI0), None)
    K, sup = blocki_K(s, 2.0)
    beta = grad_norm_sq(PHI0).values
    ok = beta > 1e-30
    ex = 0.5 * np.log(beta[ok]) - (2.0 * PHI0.values[ok] - PHI0.values[ok] ** 2 / 2.0)
    assert np.allclose(K[ok], ex) and sup == pytest.approx(ex.max())
    with pytest.raises(ValueError):
        blocki_K(s, 0.0)


def test_gradient_shape_constant(smooth_run):
    c = gradient_shape_constant(smooth_run)
    ex = max(s.t * np.log(grad_norm_sq(s.phi).sup()) for s in smooth_run.snapshots[1:])
    assert c == pytest.approx(ex)
    flat = run(ScalarField.zeros(G), NonlinearityF(), FlowConfig(T=0.001))
    assert gradient_shape_constant(flat) == -np.inf


def test_aubin_yau_H():
    s = FlowState(0.5, PHI0, metric_from_potential(PHI0), None)
    H, sup, cond = aubin_yau_H(s, 1.0, 3.0)
    tr, _ = traces(s.metric)
    assert np.allclose(H.values, np.exp(-2.0) * np.log(tr.values) - 3.0 * PHI0.values)
    assert sup == H.sup() and cond
    with pytest.raises(ValueError):
        aubin_yau_H(FlowState(0.0, PHI0, s.metric, None), 1.0, 3.0)


def test_S_one_dimensional_closed_form():
    s = FlowState(0.0, PHI0, metric_from_potential(PHI0), None)
    S, sup = third_order_S(s)
    a = third_mixed(PHI0).data[..., 0, 0, 0]
    g = s.metric.matrix[..., 0, 0].real
    assert np.allclose(S.values, np.abs(a) ** 2 / g ** 3)
    assert sup == S.sup()


def test_S_n2_reduces_to_n1_for_one_variable_potential():
    g1, g2 = TorusGeometry(1, 8), TorusGeometry(2, 8)
    p1 = trig_field(g1, [(0.02, (1, 0)), (0.01, (1, 1))])
    p2 = trig_field(g2, [(0.02, (1, 0, 0, 0)), (0.01, (1, 1, 0, 0))])
    S1, _ = third_order_S(FlowState(0.0, p1, metric_from_potential(p1), None))
    S2, _ = third_order_S(FlowState(0.0, p2, metric_from_potential(p2), None))
    assert np.allclose(S2.values, S1.values[:, :, None, None], rtol=1e-12, atol=1e-12)


@given(st.floats(-0.004, 0.004), st.floats(-0.004, 0.004))
def test_S_nonnegative_n2(a, b):
    g = TorusGeometry(2, 8)
    p = trig_field(g, [(a, (1, 0, 0, 1)), (b, (0, 1, 1, 1), 0.4)])
    S, _ = third_order_S(FlowState(0.0, p, metric_from_potential(p), None))
    assert (S.values >= 0).all()


def test_stress_tensor_linear_case():
    F = NonlinearityF(a=0.7)
    s = initial_state(PHI0, F)
    T = stress_tensor_T(s, F)
    assert T.hermitian_defect() < 1e-14
    assert np.allclose(-T.data, 0.7 * (s.metric.matrix - np.eye(1)))


def test_time_identities_converge_at_second_order():
    deltas = (4e-4, 2e-4, 1e-4)
    pd, td = [], []
    for d in deltas:
        tr = _centred_run(F_RICH, d)
        s = tr.snapshots[2]
        lin = parabolic_defect(tr, "phidot", 2).values - F_RICH.dF(s.phi.values) * s.phidot.values
        pd.append(np.abs(lin).max())
        td.append(tensor_identity_defect(tr, 2))
    assert pd[1] < 1e-3 and td[1] < 1e-3
    assert fitted_order(deltas, pd) >= 1.8
    assert fitted_order(deltas, td) >= 1.8


def test_gradient_evolution_identity():
    # on the flat torus (d/dt - Delta_phi)|grad phi|^2 = cross - good; the
    # identity uses the chain rule on log det, exact only once resolved (N = 32)
    g = TorusGeometry(1, 32)
    phi0 = trig_field(g, [(0.02, (1, 0)), (0.01, (1, 2), 0.3)])
    errs = []
    deltas = (2e-4, 1e-4)
    for d in deltas:
        tr = _centred_run(F_RICH, d, phi0=phi0)
        cross, good = gradient_evolution_bound(tr.snapshots[2], F_RICH)
        lhs = parabolic_defect(tr, "grad_sq", 2).values
        errs.append(np.abs(lhs - (cross.values - good.values)).max())
        assert (good.values >= -1e-14).all()
    assert errs[1] < 1e-5 and fitted_order(deltas, errs) >= 1.8


def test_parabolic_defect_arguments(smooth_run):
    with pytest.raises(ValueError):
        parabolic_defect(smooth_run, "phidot", 0)
    with pytest.raises(ValueError):
        parabolic_defect(smooth_run, "nope", 2)
    for q in ("S", "log_tr"):
        assert np.isfinite(parabolic_defect(smooth_run, q, 2).values).all()


def test_composite_G():
    s = FlowState(0.1, PHI0, metric_from_potential(PHI0), None)
    S, _ = third_order_S(s)
    tr, _ = traces(s.metric)
    beta = grad_norm_sq(PHI0)
    ex = (S.values / 2.0 + tr.values / 3.0 + beta.values / (0.5 * np.exp(0.1 / 0.1))).max()
    assert composite_G(s, 2.0, 3.0, (0.5, 0.1)) == pytest.approx(ex)
    with pytest.raises(ValueError):
        composite_G(s, 0.0, 1.0, 1.0)


def test_ricci_norm_series(smooth_run):
    ser = ricci_norm_series(smooth_run)
    assert len(ser.values) == len(smooth_run.snapshots) and (ser.values >= 0).all()


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30))
def test_tail_max(vals):
    out = tail_max(vals)
    assert (np.diff(out) <= 0).all()
    assert (out >= np.asarray(vals)).all()
    assert out[-1] == vals[-1] and out[0] == max(vals)
