import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fracsaddle.core import (
    INFEASIBLE,
    DoublyRadialPoint,
    ProblemParams,
    admissible_b_interval,
    cubic_model,
    custom_model,
    dist_to_cone,
    eval_nonlinearity,
    model_by_name,
    sine_model,
    to_doubly_radial,
    validate_model,
)


def test_cubic_values():
    m = cubic_model()
    assert eval_nonlinearity(m, 0.5) == pytest.approx(3.0 / 8.0)
    assert eval_nonlinearity(m, 0.5, "fprime") == pytest.approx(0.25)
    assert eval_nonlinearity(m, 0.5, "fsecond") == pytest.approx(-3.0)
    assert eval_nonlinearity(m, 0.0, "G") == pytest.approx(0.25)
    assert eval_nonlinearity(m, 1.0, "G") == pytest.approx(0.0, abs=1e-15)
    assert eval_nonlinearity(m, -1.0, "G") == pytest.approx(0.0, abs=1e-15)


def test_sine_values():
    m = sine_model()
    assert eval_nonlinearity(m, 0.5) == pytest.approx(1.0 / math.pi)
    assert eval_nonlinearity(m, 0.0, "G") == pytest.approx(2.0 / math.pi**2)
    assert eval_nonlinearity(m, 1.0) == pytest.approx(0.0, abs=1e-15)


def test_eval_nonlinearity_arrays_and_domain():
    m = cubic_model()
    v = np.array([-1.0, 0.0, 0.5, 1.0])
    out = eval_nonlinearity(m, v)
    assert out.shape == v.shape
    assert np.allclose(out, v - v**3)
    assert isinstance(eval_nonlinearity(m, 0.3), float)
    with pytest.raises(ValueError):
        eval_nonlinearity(m, 1.5)
    with pytest.raises(ValueError):
        eval_nonlinearity(m, np.array([0.0, -1.2]))
    with pytest.raises(ValueError):
        eval_nonlinearity(m, 0.5, "nope")


def test_model_registry():
    assert model_by_name("cubic").name == "cubic"
    assert model_by_name("sine").name == "sine"
    with pytest.raises(ValueError):
        model_by_name("quintic")


def test_validate_model_accepts_builtins():
    validate_model(cubic_model())
    validate_model(sine_model())


def test_validate_model_rejects_non_odd():
    with pytest.raises(ValueError):
        custom_model("lopsided", lambda v: v - v**2, lambda v: 1 - 2 * v, lambda v: -2.0 + 0 * v)


def test_custom_model_roundtrip():
    m = custom_model(
        "sine-copy",
        lambda v: np.sin(math.pi * v) / math.pi,
        lambda v: np.cos(math.pi * v),
        lambda v: -math.pi * np.sin(math.pi * v),
    )
    ref = sine_model()
    vs = np.linspace(-1, 1, 41)
    assert np.allclose(
        eval_nonlinearity(m, vs, "G"), eval_nonlinearity(ref, vs, "G"), atol=1e-6
    )


@given(st.floats(-1.0, 1.0))
def test_potential_even_and_nonnegative(v):
    for m in (cubic_model(), sine_model()):
        gp = eval_nonlinearity(m, v, "G")
        gm = eval_nonlinearity(m, -v, "G")
        assert gp == pytest.approx(gm, abs=1e-12)
        assert gp >= -1e-12


def test_problem_params():
    p = ProblemParams(m=7, gamma=0.5)
    assert p.a == pytest.approx(0.0)
    assert p.n == 14
    assert ProblemParams(m=2, gamma=0.25).a == pytest.approx(0.5)
    with pytest.raises(ValueError):
        ProblemParams(m=0, gamma=0.5)
    with pytest.raises(ValueError):
        ProblemParams(m=3, gamma=1.0)
    with pytest.raises(ValueError):
        ProblemParams(m=3, gamma=0.5, d_gamma=-1.0)


def test_to_doubly_radial_and_dist():
    p = to_doubly_radial([1.0, 0.0, 0.0, 0.0])
    assert p.s == pytest.approx(1.0)
    assert p.t == pytest.approx(0.0)
    assert dist_to_cone(p) == pytest.approx(1.0 / math.sqrt(2))
    q = to_doubly_radial([1.0, 0.0, 1.0, 0.0])
    assert dist_to_cone(q) == pytest.approx(0.0, abs=1e-15)
    assert q.y == pytest.approx(math.sqrt(2.0))
    assert q.z == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        to_doubly_radial([1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        DoublyRadialPoint(s=-1.0, t=0.0)


def test_block_rotation_invariance():
    rng = np.random.default_rng(7)
    for m in (1, 2, 4):
        x = rng.normal(size=2 * m)
        q1, _ = np.linalg.qr(rng.normal(size=(m, m)))
        q2, _ = np.linalg.qr(rng.normal(size=(m, m)))
        rotated = np.concatenate([q1 @ x[:m], q2 @ x[m:]])
        p0 = to_doubly_radial(x)
        p1 = to_doubly_radial(rotated)
        assert p1.s == pytest.approx(p0.s)
        assert p1.t == pytest.approx(p0.t)


def test_admissible_b_interval_known_cases():
    assert admissible_b_interval(7) == pytest.approx((2.0, 3.0))
    lo, hi = admissible_b_interval(8)
    assert lo == pytest.approx(3.0 - math.sqrt(2.0))
    assert hi == pytest.approx(3.0 + math.sqrt(2.0))
    for m in range(1, 7):
        assert admissible_b_interval(m) is INFEASIBLE
    assert not INFEASIBLE
    assert repr(INFEASIBLE) == "INFEASIBLE"


@given(st.integers(min_value=1, max_value=50))
def test_admissible_b_interval_characterization(m):
    res = admissible_b_interval(m)
    if m <= 6:
        assert res is INFEASIBLE
    else:
        lo, hi = res
        assert 0.0 < lo <= hi
        # endpoints satisfy b*(b - m + 2) = -(m - 1), interior satisfies <=
        for b in (lo, hi):
            assert b * (b - m + 2) + (m - 1) == pytest.approx(0.0, abs=1e-9 * m)
        mid = 0.5 * (lo + hi)
        assert mid * (mid - m + 2) <= -(m - 1)
