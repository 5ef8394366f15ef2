import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cmaflow.field import ComplexTensorField, ScalarField, TorusGeometry, hessian, random_rough_field, trig_field
from cmaflow.kahler import (
    ConeExitError,
    NonlinearityF,
    contract,
    det_ratio,
    eval_F,
    hermitian_eigenvalues,
    laplacian_wrt,
    metric_from_matrix,
    metric_from_potential,
    min_eigenvalue,
    ricci,
    traces,
)
from oracles import pointwise, ricci_1d_cos, trig_derivative

finite = st.floats(-3, 3, allow_nan=False)


@st.composite
def pd_hermitian(draw):
    a = draw(st.floats(0.1, 5))
    d = draw(st.floats(0.1, 5))
    r = draw(st.floats(0, 0.99)) * np.sqrt(a * d)
    th = draw(st.floats(0, 2 * np.pi))
    return np.array([[a, r * np.exp(1j * th)], [r * np.exp(-1j * th), d]])


@given(st.lists(pd_hermitian(), min_size=8, max_size=8))
def test_closed_form_algebra_matches_linalg(mats):
    g = TorusGeometry(2, 4)
    G = np.broadcast_to(np.eye(2, dtype=complex), (g.size, 2, 2)).copy()
    G[:8] = mats
    G = G.reshape(g.shape + (2, 2))
    m = metric_from_matrix(g, G)
    assert np.allclose(m.det, pointwise(np.linalg.det, G).real, rtol=1e-12)
    assert np.allclose(m.inverse, pointwise(np.linalg.inv, G), rtol=1e-10, atol=1e-12)
    assert np.allclose(hermitian_eigenvalues(G), pointwise(np.linalg.eigvalsh, G), atol=1e-12)
    assert min_eigenvalue(m) == pytest.approx(pointwise(np.linalg.eigvalsh, G).min(), abs=1e-12)


def test_cone_exit_reports_location():
    g = TorusGeometry(1, 8)
    phi = trig_field(g, [(0.2, (1, 0))])  # g = 1 - 0.2 pi^2 cos, negative at x = 0
    with pytest.raises(ConeExitError) as info:
        metric_from_potential(phi)
    err = info.value
    assert err.min_eig == pytest.approx(1 - 0.2 * np.pi ** 2)
    assert err.index[0] == 0


def test_metric_example_values():
    g = TorusGeometry(1, 64)
    m = metric_from_potential(trig_field(g, [(0.05, (1, 0))]))
    gx, R, nrm = ricci_1d_cos(g.coords()[0], 0.05)
    assert m.matrix[0, 0, 0, 0].real == pytest.approx(0.5065198, abs=1e-7)
    assert traces(m)[1].values[0, 0] == pytest.approx(1.9742566, abs=1e-7)
    Ric, norm = ricci(m)
    assert np.allclose(Ric.data[..., 0, 0].real, np.broadcast_to(R, g.shape), atol=1e-8)
    assert np.allclose(norm.values, np.broadcast_to(nrm, g.shape), atol=1e-8)
    assert Ric.data[0, 0, 0, 0].real == pytest.approx(-9.6155269, abs=1e-6)
    assert norm.values[0, 0] == pytest.approx(18.983517, abs=1e-5)


@pytest.mark.parametrize("n,N,seed", [(1, 32, 0), (1, 64, 3), (2, 8, 1), (2, 16, 4)])
def test_mean_determinant_is_one(n, N, seed):
    g = TorusGeometry(n, N)
    raw = random_rough_field(g, seed, 0.5)
    lam = min(np.linalg.eigvalsh(M).min() for M in hessian(raw).data.reshape(-1, n, n))
    phi = raw * (0.7 / -lam)
    assert abs(det_ratio(metric_from_potential(phi)).mean() - 1.0) < 1e-12


@given(st.floats(-0.004, 0.004), st.floats(-0.004, 0.004), st.integers(0, 2))
def test_mean_determinant_property_n2(a, b, k):
    g = TorusGeometry(2, 8)
    phi = trig_field(g, [(a, (1, k, 0, 1)), (b, (0, 1, k, 2), 0.3)])
    assert abs(metric_from_potential(phi).det.mean() - 1.0) < 1e-12


def test_contract_and_laplacian():
    g = TorusGeometry(2, 8)
    phi = trig_field(g, [(0.01, (1, 0, 0, 1)), (0.01, (0, 1, 1, 0))])
    f = trig_field(g, [(1.0, (1, 1, 0, 0))])
    m = metric_from_potential(phi)
    lap = laplacian_wrt(m, f)
    ex = pointwise(lambda M: M, m.inverse)
    H = hessian(f).data
    ref = np.einsum("...ij,...ji->...", ex, H).real
    assert np.allclose(lap.values, ref)
    # trace of P G is n at every point
    assert np.allclose(contract(m.inverse, m.matrix).real, 2.0)


def test_traces_identity():
    g = TorusGeometry(1, 16)
    m = metric_from_potential(trig_field(g, [(0.02, (1, 1))]))
    tr, trinv = traces(m)
    assert np.allclose(tr.values * trinv.values, 1.0)


# ---------------------------------------------------------------- nonlinearity

def test_nonlinearity_dict_round_trip_and_validation():
    d = {"a": 1.0, "b": 0.5, "const": -0.2, "modes": [[0.1, [1, 0], 0.3]]}
    F = NonlinearityF.from_dict(d)
    assert NonlinearityF.from_dict(F.to_dict()) == F
    with pytest.raises(ValueError, match="unknown"):
        NonlinearityF.from_dict({"a": 1.0, "c": 2.0})


@given(finite, finite, st.floats(-10, 10), st.floats(-10, 10))
def test_kappa_bounds_derivative(a, b, lo, hi):
    lo, hi = min(lo, hi), max(lo, hi)
    F = NonlinearityF(a=a, b=b)
    grid = np.linspace(lo, hi, 2001)
    k = F.kappa(lo, hi)
    assert k >= np.abs(F.dF(grid)).max() - 1e-12
    assert k <= abs(a) + abs(b) + 1e-12


def test_monotonicity():
    assert NonlinearityF(a=1.0, b=0.5).is_monotone(-5, 5)
    assert not NonlinearityF(a=-1.0).is_monotone(-5, 5)
    assert not NonlinearityF(a=0.2, b=1.0).is_monotone(-5, 5)
    assert NonlinearityF(a=0.2, b=1.0).is_monotone(-0.5, 0.5)


def test_eval_modes_against_closed_forms():
    g = TorusGeometry(1, 16)
    modes = [(0.3, (1, 2), 0.1)]
    F = NonlinearityF(a=0.5, b=0.2, const=0.1, modes=modes)
    s = trig_field(g, [(0.4, (0, 1))])
    xs = g.coords()
    hz = 0.1 + trig_derivative(xs, modes, []).real
    assert np.allclose(eval_F(F, s).values, 0.5 * s.values + 0.2 * np.sin(s.values) + hz)
    assert np.allclose(eval_F(F, s, "dF").values, 0.5 + 0.2 * np.cos(s.values))
    assert np.allclose(eval_F(F, s, "d2F").values, -0.2 * np.sin(s.values))
    assert np.allclose(eval_F(F, s, "grad_z").data[..., 0], trig_derivative(xs, modes, [(0, False)]))
    assert np.allclose(eval_F(F, s, "hess_z").data[..., 0, 0],
                       trig_derivative(xs, modes, [(0, False), (0, True)]))
    assert np.abs(eval_F(F, s, "grad_z_dF").data).max() == 0
    with pytest.raises(ValueError):
        eval_F(F, s, "nope")


def test_grid_sampled_h():
    g = TorusGeometry(1, 16)
    h = trig_field(g, [(0.2, (1, 1))])
    F = NonlinearityF(a=1.0).with_h_grid(h)
    assert np.array_equal(F.h(g), h.values)
    assert np.allclose(F.h_hess(g), hessian(h).data)
    assert F.h_range(g) == pytest.approx((h.inf(), h.sup()))
    assert F.upper(0.5, g) == pytest.approx(0.5 + h.sup())
    assert F.lower(0.5, g) == pytest.approx(0.5 + h.inf())
    with pytest.raises(ValueError):
        F.h(TorusGeometry(1, 8))


def test_ricci_is_hermitian_n2():
    g = TorusGeometry(2, 8)
    m = metric_from_potential(trig_field(g, [(0.02, (1, 0, 1, 1)), (0.01, (0, 1, 2, 0), 0.5)]))
    R, norm = ricci(m)
    assert isinstance(R, ComplexTensorField)
    assert R.hermitian_defect() < 1e-12
    assert (norm.values >= 0).all()


def test_ricci_vanishes_for_flat_metric():
    g = TorusGeometry(1, 8)
    R, norm = ricci(metric_from_potential(ScalarField.zeros(g)))
    assert np.abs(R.data).max() == 0 and norm.sup() == 0
