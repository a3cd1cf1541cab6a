import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracsaddle.core import DoublyRadialPoint, ProblemParams, eval_nonlinearity, model_by_name
from fracsaddle.fracops1d import frac_lap_1d
from fracsaddle.layer import (
    LayerSignError,
    arctan_layer,
    barrier_on_grid,
    eval_U,
    layer_derivative_signs,
    load_layer,
    residual_U,
    save_layer,
    solve_layer,
)
from fracsaddle.saddle import make_grid3

SQRT2 = math.sqrt(2.0)


def test_sine_profile_matches_arctan(sine_layer_small):
    ls = sine_layer_small
    exact = (2 / math.pi) * np.arctan(ls.trace.nodes)
    assert np.max(np.abs(ls.trace.values - exact)) < 1e-4
    assert ls.residual < 1e-4


def test_center_node_exact(sine_layer_small):
    v = sine_layer_small.trace.values
    assert v[v.size // 2] == 0.0
    assert sine_layer_small.trace(0.0) == 0.0
    # odd symmetry holds exactly, not just to roundoff
    assert np.all(v + v[::-1] == 0.0)


def test_trace_solves_equation(sine_layer_small):
    ls = sine_layer_small
    xs = np.arange(-4.0, 4.01, 0.4)
    got = np.array([frac_lap_1d(ls.trace, 0.5, x) for x in xs])
    want = eval_nonlinearity(ls.model, ls.trace(xs))
    assert np.max(np.abs(got - want)) < 2e-4


def test_dual_init_agreement_cubic():
    a = solve_layer(model_by_name("cubic"), 0.5, L=25.0, N=500)
    b = solve_layer(model_by_name("cubic"), 0.5, L=25.0, N=500, init="ramp")
    assert np.max(np.abs(a.trace.values - b.trace.values)) < 1e-6


def test_gamma_quarter_solve():
    ls = solve_layer(model_by_name("sine"), 0.25, L=60.0, N=600)
    rep = layer_derivative_signs(ls)
    assert rep["min_slope"] > 0.0
    assert rep["max_curvature_right"] < 0.0
    # slow algebraic tail: still well below 1 at the edge
    assert ls.trace.values[-1] < 0.95


def test_derivative_sign_report(sine_layer_small):
    rep = layer_derivative_signs(sine_layer_small)
    assert rep["min_slope"] > 0.0
    assert rep["max_curvature_right"] < 0.0
    assert rep["curvature_at_zero"] == 0.0


def test_sign_violation_raises():
    ls = arctan_layer(L=20.0, N=200)
    ls.dtrace.values[37] = -1e-3
    with pytest.raises(LayerSignError) as err:
        layer_derivative_signs(ls)
    assert err.value.nodes["slope"]


def test_solver_input_validation():
    sine = model_by_name("sine")
    with pytest.raises(ValueError):
        solve_layer(sine, 0.5, L=10.0)
    with pytest.raises(ValueError):
        solve_layer(sine, 0.5, N=100)
    with pytest.raises(ValueError):
        solve_layer(sine, 0.5, tol=0.0)
    with pytest.raises(ValueError):
        solve_layer(sine, 0.5, init="bogus")
    with pytest.raises(ValueError):
        solve_layer(sine, 0.5, L=25.0, N=500, init=np.zeros(7))


@given(st.floats(min_value=-25.0, max_value=25.0))
@settings(max_examples=100, deadline=None)
def test_interpolated_trace_is_odd(z):
    ls = _ODD_REF
    assert ls.trace(-z) == pytest.approx(-ls.trace(z), abs=1e-14)


_ODD_REF = arctan_layer(L=30.0, N=300)


class TestBarrier:
    def test_zero_on_cone(self, arctan_ref):
        bv = eval_U(arctan_ref, DoublyRadialPoint(s=2.0, t=2.0, lam=0.0))
        assert bv.value == 0.0
        # lam > 0 goes through quadrature, so only zero to roundoff
        bv = eval_U(arctan_ref, DoublyRadialPoint(s=2.0, t=2.0, lam=0.7))
        assert abs(bv.value) < 1e-14
        assert bv.ds > 0.0
        assert bv.dt == -bv.ds

    def test_unit_distance_value(self, arctan_ref):
        p = DoublyRadialPoint(s=3.0 + 1 / SQRT2, t=3.0 - 1 / SQRT2, lam=0.0)
        assert eval_U(arctan_ref, p).value == pytest.approx(0.5, abs=1e-12)

    def test_extension_closed_form(self, arctan_ref):
        # profile extends to (2/pi) arctan(z/(1+lam)) for this model
        p = DoublyRadialPoint(s=4.0, t=1.0, lam=1.5)
        want = (2 / math.pi) * math.atan(p.z / 2.5)
        assert eval_U(arctan_ref, p).value == pytest.approx(want, abs=5e-5)

    def test_swap_antisymmetry(self, arctan_ref):
        for s, t, lam in [(2.3, 0.7, 0.0), (2.3, 0.7, 1.0), (5.0, 0.1, 0.3)]:
            a = eval_U(arctan_ref, DoublyRadialPoint(s=s, t=t, lam=lam))
            b = eval_U(arctan_ref, DoublyRadialPoint(s=t, t=s, lam=lam))
            assert abs(a.value + b.value) < 1e-12
            assert a.ds == pytest.approx(-b.dt, abs=1e-12)

    def test_grid_field_antisymmetry_exact(self, arctan_ref):
        par = ProblemParams(m=3, gamma=0.5)
        grid = make_grid3(par, S=6.0, Lambda=3.0, ns=12, nl=6)
        bar = barrier_on_grid(arctan_ref, grid)
        assert np.all(bar.value + np.swapaxes(bar.value, 0, 1) == 0.0)
        assert np.all(bar.ds == np.swapaxes(-bar.dt, 0, 1))
        assert np.all(bar.dst + np.swapaxes(bar.dst, 0, 1) == 0.0)

    def test_grid_field_matches_pointwise(self, arctan_ref):
        par = ProblemParams(m=3, gamma=0.5)
        grid = make_grid3(par, S=6.0, Lambda=3.0, ns=12, nl=6)
        bar = barrier_on_grid(arctan_ref, grid)
        for i, k, j in [(7, 2, 0), (3, 9, 3), (11, 1, 6)]:
            p = DoublyRadialPoint(
                s=float(grid.s_nodes[i]),
                t=float(grid.t_nodes[k]),
                lam=float(grid.lambda_nodes[j]),
            )
            bv = eval_U(arctan_ref, p)
            assert bar.value[i, k, j] == pytest.approx(bv.value, abs=1e-12)
            assert bar.dst[i, k, j] == pytest.approx(bv.dst, abs=1e-12)


class TestResidualU:
    def test_m1_rhs_is_zero_and_shrinks(self, arctan_ref):
        par = ProblemParams(m=1, gamma=0.5)
        vals = []
        for ns, nl in [(16, 8), (32, 16)]:
            g = make_grid3(par, S=8.0, Lambda=4.0, ns=ns, nl=nl, lambda_power=1.0)
            rr = residual_U(arctan_ref, g, par)
            assert np.all(np.isnan(rr[0, :, :]))
            assert np.all(np.isnan(rr[:, :, 0]))
            assert np.all(np.isnan(rr[:, :, nl]))
            vals.append(np.nanmax(np.abs(rr)))
        assert vals[0] < 0.05
        assert vals[0] / vals[1] > 1.5

    def test_m7_shrinks(self, arctan_ref):
        par = ProblemParams(m=7, gamma=0.5)
        vals = []
        for ns, nl in [(16, 8), (32, 16)]:
            g = make_grid3(par, S=8.0, Lambda=4.0, ns=ns, nl=nl, lambda_power=1.0)
            vals.append(np.nanmax(np.abs(residual_U(arctan_ref, g, par))))
        assert vals[0] / vals[1] > 1.5

    def test_diagonal_rows_exact_zero(self, arctan_ref):
        par = ProblemParams(m=7, gamma=0.5)
        g = make_grid3(par, S=8.0, Lambda=4.0, ns=16, nl=8, lambda_power=1.0)
        rr = residual_U(arctan_ref, g, par)
        diag = np.array([rr[i, i, 3] for i in range(1, 16)])
        assert np.max(np.abs(diag)) == 0.0

    def test_precomputed_barrier_path(self, arctan_ref):
        par = ProblemParams(m=7, gamma=0.5)
        g = make_grid3(par, S=8.0, Lambda=4.0, ns=16, nl=8, lambda_power=1.0)
        bar = barrier_on_grid(arctan_ref, g)
        a = residual_U(arctan_ref, g, par)
        b = residual_U(arctan_ref, g, par, bar=bar)
        assert np.array_equal(np.nan_to_num(a), np.nan_to_num(b))

    def test_params_grid_mismatch(self, arctan_ref):
        g = make_grid3(ProblemParams(m=3, gamma=0.5), S=8.0, Lambda=4.0, ns=8, nl=4)
        with pytest.raises(ValueError):
            residual_U(arctan_ref, g, ProblemParams(m=7, gamma=0.5))


def test_save_load_roundtrip(tmp_path, sine_layer_small):
    path = str(tmp_path / "profile.csv")
    save_layer(sine_layer_small, path)
    back = load_layer(path)
    assert np.array_equal(back.trace.nodes, sine_layer_small.trace.nodes)
    assert np.array_equal(back.trace.values, sine_layer_small.trace.values)
    assert np.array_equal(back.dtrace.values, sine_layer_small.dtrace.values)
    assert np.array_equal(back.d2trace.values, sine_layer_small.d2trace.values)
    assert back.gamma == sine_layer_small.gamma
    assert back.model.name == "sine"
    assert back.L == sine_layer_small.L
    assert back.residual == sine_layer_small.residual
