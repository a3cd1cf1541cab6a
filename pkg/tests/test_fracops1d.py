import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import beta as beta_fn

from fracsaddle.fracops1d import (
    CalibrationError,
    SampledFunction1D,
    TruncationError,
    c1_gamma,
    calibrate_d_gamma,
    conormal_quotient,
    extend_1d,
    frac_lap_1d,
)


def arctan_trace(L=50.0, h=0.025):
    n = np.arange(-round(L / h), round(L / h) + 1) * h
    return SampledFunction1D(n, (2 / math.pi) * np.arctan(n), -1.0, 1.0)


def test_c1_normalization():
    assert c1_gamma(0.5) == pytest.approx(1.0 / math.pi, rel=1e-14)
    # independent closed form of the same constant:
    # int_0^inf (1-cos r)/r^(1+2g) dr = -Gamma(-2g) cos(pi g) for g != 1/2,
    # and the symbol normalization requires c * 2 * that integral = 1
    from scipy.special import gamma as gamma_fn

    for g in (0.25, 0.4, 0.7):
        integral = -gamma_fn(-2 * g) * math.cos(math.pi * g)
        assert 2 * c1_gamma(g) * integral == pytest.approx(1.0, rel=1e-12)


def test_sampled_function_validation():
    with pytest.raises(ValueError):
        SampledFunction1D(np.array([0.0, 1.0, 1.0, 2.0, 3.0]), np.zeros(5))
    graded = SampledFunction1D(np.array([0.0, 1.0, 2.0, 4.0, 8.0]), np.zeros(5))
    with pytest.raises(ValueError):
        graded.h


def test_fraclap_constant_is_zero():
    n = np.arange(-200, 201) * 0.05
    fn = SampledFunction1D(n, np.full(n.size, 0.7), 0.7, 0.7)
    for g in (0.25, 0.5, 0.75):
        assert abs(frac_lap_1d(fn, g, 0.0)) < 1e-12
        assert abs(frac_lap_1d(fn, g, 3.0)) < 1e-12


def test_fraclap_arctan_oracle():
    fn = arctan_trace()
    assert frac_lap_1d(fn, 0.5, 0.0) == pytest.approx(0.0, abs=1e-12)
    assert frac_lap_1d(fn, 0.5, 1.0) == pytest.approx(1.0 / math.pi, abs=1e-3)


def test_fraclap_arctan_residual_identity():
    # (-Lap)^(1/2) of (2/pi) arctan equals (2/pi) x/(1+x^2) at every node
    fn = arctan_trace()
    xs = np.arange(-5.0, 5.0 + 1e-9, 0.25)
    got = frac_lap_1d(fn, 0.5, xs)
    exact = (2 / math.pi) * xs / (1 + xs**2)
    assert np.max(np.abs(got - exact)) < 1e-4


def test_fraclap_halving_convergence():
    # domain large enough that the quadrature error dominates truncation
    xs = np.array([0.4, 1.0, 2.0])
    exact = (2 / math.pi) * xs / (1 + xs**2)
    errs = []
    for h in (0.2, 0.1):
        fn = arctan_trace(L=400.0, h=h)
        errs.append(np.max(np.abs(frac_lap_1d(fn, 0.5, xs) - exact)))
    assert errs[0] / errs[1] >= 3.0


def test_fraclap_even_symmetry():
    n = np.arange(-300, 301) * 0.05
    fn = SampledFunction1D(n, 1.0 / (1.0 + n**2), 0.0, 0.0)
    for g in (0.3, 0.6):
        assert frac_lap_1d(fn, g, 1.5) == pytest.approx(frac_lap_1d(fn, g, -1.5), rel=1e-12)


def test_fraclap_affine_annihilation():
    L, h, b = 50.0, 0.05, 0.7
    n = np.arange(-round(L / h), round(L / h) + 1) * h
    fn = SampledFunction1D(n, 0.3 + b * n, 0.3 - b * L, 0.3 + b * L)
    for g in (0.25, 0.5, 0.75):
        assert abs(frac_lap_1d(fn, g, 0.0)) < 1e-12
        # away from the center the clipped tails contribute at most the
        # closed-form bound c * 2b|x| * (L-|x|)^(-2g) / (2g)
        for x in (1.0, 5.0, 20.0):
            bound = c1_gamma(g) * 2 * b * x * (L - x) ** (-2 * g) / (2 * g)
            assert abs(frac_lap_1d(fn, g, x)) <= bound * 1.05


def test_fraclap_truncation_flag():
    fn = arctan_trace(L=10.0, h=0.1)
    with pytest.raises(TruncationError):
        frac_lap_1d(fn, 0.5, 10.0)
    with pytest.raises(TruncationError):
        frac_lap_1d(fn, 0.5, -9.9)


def test_extend_unit_mass():
    n = np.arange(-400, 401) * 0.05
    ones = SampledFunction1D(n, np.ones(n.size), 1.0, 1.0)
    for g in (0.25, 0.5, 0.75):
        for lam in (1e-3, 0.1, 1.0, 10.0):
            assert extend_1d(ones, g, 0.3, lam) == pytest.approx(1.0, abs=1e-10)


def test_extend_arctan_oracle():
    fn = arctan_trace()
    assert extend_1d(fn, 0.5, 0.0, 1.0) == pytest.approx(0.0, abs=1e-6)
    assert extend_1d(fn, 0.5, 1.0, 1.0) == pytest.approx(
        (2 / math.pi) * math.atan(0.5), abs=1e-3
    )
    # closed form of the harmonic extension across a grid of heights
    for lam in (0.0025, 0.05, 0.3, 1.0):
        xs = np.array([0.0, 0.5, 1.0, 3.0])
        got = extend_1d(fn, 0.5, xs, lam)
        exact = (2 / math.pi) * np.arctan(xs / (1 + lam))
        assert np.max(np.abs(got - exact)) < 2e-5


def test_extend_trace_preservation():
    fn = arctan_trace()
    x = 1.0
    gaps = [abs(extend_1d(fn, 0.5, x, lam) - fn.values[fn.node_index(x)])
            for lam in (0.1, 0.01, 0.001)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-3


def test_extend_matches_adaptive_quadrature():
    # independent oracle: adaptive quadrature of the kernel against the
    # true Gaussian, not its interpolant
    h, L = 0.01, 20.0
    n = np.arange(-round(L / h), round(L / h) + 1) * h
    fn = SampledFunction1D(n, np.exp(-(n**2) / 2), 0.0, 0.0)
    for g in (0.25, 0.75):
        btot = beta_fn(g, 0.5)
        for x, lam in [(0.3, 0.05), (0.3, 1.0), (1.5, 0.3)]:
            ref = quad(
                lambda u: math.exp(-((x + lam * u) ** 2) / 2) * (1 + u * u) ** (-(1 + 2 * g) / 2),
                -np.inf, np.inf, epsabs=1e-13, epsrel=1e-13, limit=400,
            )[0] / btot
            assert extend_1d(fn, g, x, lam) == pytest.approx(ref, abs=1e-9)


def test_extend_domain_errors():
    fn = arctan_trace(L=10.0, h=0.1)
    with pytest.raises(ValueError):
        extend_1d(fn, 0.5, 0.0, 0.0)
    with pytest.raises(ValueError):
        extend_1d(fn, 0.5, 0.0, -1.0)
    with pytest.raises(ValueError):
        extend_1d(fn, 1.5, 0.0, 1.0)


def test_calibrate_half():
    d, details = calibrate_d_gamma(0.5, return_details=True)
    assert 0.99 <= d <= 1.01
    assert details["spread"] <= 0.01


def test_calibrate_arctan_layer_trace():
    d = calibrate_d_gamma(0.5, traces=[arctan_trace()], sample_xs=(0.3, 0.6, 1.0))
    assert d == pytest.approx(1.0, abs=1e-2)


def test_calibrate_trace_independence():
    # two different Gaussian widths must agree; enforced by the spread gate
    for g in (0.25, 0.75):
        d = calibrate_d_gamma(g)
        assert d > 0.0


def test_calibrate_cache_roundtrip(tmp_path):
    path = str(tmp_path / "dgamma.json")
    d1 = calibrate_d_gamma(0.5, cache_path=path)
    d2 = calibrate_d_gamma(0.5, cache_path=path)
    assert d1 == d2
    import json

    with open(path) as fh:
        cache = json.load(fh)
    assert "0.5" in cache
    assert cache["0.5"]["spread"] <= 0.01


def test_conormal_quotient_definition():
    fn = arctan_trace()
    lam = 0.01
    q = conormal_quotient(fn, 0.5, 1.0, lam)
    direct = (fn.values[fn.node_index(1.0)] - extend_1d(fn, 0.5, 1.0, lam)) / lam
    assert q == pytest.approx(direct, rel=1e-13)
