import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from dissipative_phi4 import integrals as I
from dissipative_phi4.errors import ParameterError, PoleInDimension, ThresholdViolation
from dissipative_phi4.kernels import ThermalParams

MC = I.QuadratureSpec(method="monte-carlo", max_evals=200_000, seed=11)


def test_radial_reduce_examples():
    r = I.radial_reduce(lambda k: math.exp(-k * k), 2.0)
    assert r.converged and r.value == pytest.approx(math.pi, rel=1e-12)
    r = I.radial_reduce(lambda k: k / (1 + k ** 4), 1.0)
    assert r.value == pytest.approx(math.pi / 2, rel=1e-12)
    # antiderivative -(k^2+1)^{-1/2}/2 gives 1/2 for the radial part
    r = I.radial_reduce(lambda k: 0.5 / (k * k + 1) ** 1.5, 2.0)
    assert r.value / (2 * math.pi) ** 2 == pytest.approx(1 / (4 * math.pi), rel=1e-12)


def test_radial_cutoff_is_respected():
    r = I.radial_reduce(lambda k: 1.0, 1.0, I.QuadratureSpec(cutoff=3.0))
    assert r.value == pytest.approx(6.0)


def test_I1_closed_forms():
    assert I.I1p_closed(2.0) == pytest.approx(1 / (4 * math.pi), rel=1e-15)
    assert I.I1_closed(2.0) == pytest.approx(-1 / (4 * math.pi), rel=1e-15)
    for d in (0.5, 1.0, 1.7, 2.0, 2.6):
        assert I.I1p_closed(d) == pytest.approx(I.I1p_quad(d).value, rel=1e-9)
    for d in (0.5, 1.5, 2.5, 2.9):
        assert I.I1pp_closed(d) == pytest.approx(I.I1pp_quad(d).value, rel=1e-9)


def test_I1_poles():
    with pytest.raises(PoleInDimension):
        I.I1_closed(3.0)
    with pytest.raises(PoleInDimension):
        I.I1_closed(1.0)
    with pytest.raises(PoleInDimension):
        I.I1p_closed(3.0)
    with pytest.raises(PoleInDimension):
        I.I1pp_closed(3.0)


def test_I1pp_removable_point_at_d2():
    assert I.I1pp_closed(2.0) == pytest.approx(math.log(2) / (4 * math.pi), rel=1e-15)
    for d in (2.0, 2.0 + 3e-6, 2.0 - 4e-5):
        assert I.I1pp_closed(d) == pytest.approx(I.I1pp_quad(d).value, rel=1e-9)


def test_I1_continuation_sign():
    # the continued tadpole is negative on 1 < d < 3 and positive below d = 1
    assert I.I1_closed(2.5) < 0 and I.I1_closed(1.5) < 0
    assert I.I1_closed(0.5) > 0


@settings(max_examples=20, deadline=None)
@given(st.floats(0.01, 0.99))
def test_gamma_reflection(x):
    a, b = I.reflection_sin(x)
    assert a == pytest.approx(b, rel=1e-12)
    y = x - 0.5
    a, b = I.reflection_cos(y * 0.98)
    assert a == pytest.approx(b, rel=1e-12)


def test_friction_integral():
    assert I.friction_integral(1.0) == pytest.approx(0.25, rel=1e-15)
    for d in (0.5, 1.0, 2.0, 2.5):
        assert abs(I.friction_integral(d) - I.friction_integral_quad(d).value) < 1e-8 * I.friction_integral(d)
    with pytest.raises(PoleInDimension):
        I.friction_integral(3.0)


def test_friction_integral_divergence_rate():
    # sin((d+1) pi/4) ~ pi eps/4, so eps * F -> (2pi)^-3 S_3 = 1/(2 pi^2)
    for d in (2.99, 2.999):
        eps = 3 - d
        assert eps * I.friction_integral(d) == pytest.approx(1 / (2 * math.pi ** 2), rel=5 * eps)
    q = I.friction_integral_quad(2.99, I.QuadratureSpec(max_evals=5000)).value
    assert q == pytest.approx(I.friction_integral(2.99), rel=1e-6)


def test_J_integral():
    p = ThermalParams(d=2.0, m=1.0, beta=1.0)
    vals = [I.J_integral(p.with_(beta=b)).value for b in (1.0, 4.0, 8.0, 16.0, 40.0)]
    assert all(v > 0 for v in vals)
    assert vals[-1] < 1e-18
    assert all(a > b for a, b in zip(vals, vals[1:]))
    b1, b2 = 8.0, 16.0
    slope = (math.log(I.J_integral(p.with_(beta=b2)).value) - math.log(I.J_integral(p.with_(beta=b1)).value)) / (b2 - b1)
    assert abs(slope + 1.0) < 0.1


def test_J_integral_matches_bose_series():
    # oracle: 1/(e^x - 1) = sum_n e^{-n x} and, at d = 1, int dq e^{-n b w}/(2w) = K0(n b)
    from scipy.special import k0
    p = ThermalParams(d=1.0, m=1.0, beta=2.0)
    series = sum(k0(2.0 * n) for n in range(1, 60)) / (2 * math.pi)
    assert I.J_integral(p).value == pytest.approx(series, rel=1e-9)


def test_sunset_routes_agree_d15():
    d = 1.5
    sch = I.sunset_schwinger(0.0, d)
    mom = I.sunset_momentum(0.0, d, k_hi=1e9)
    assert sch.converged and mom.converged
    assert sch.value == pytest.approx(mom.value, rel=1e-7)
    mc = I.sunset_monte_carlo(0.0, d, MC)
    assert abs(mc.value - sch.value) < 4 * mc.error


def test_sunset_subtracted_at_d2():
    # at d = 2 only differences are finite; Schwinger, momentum and MC agree
    s = I.sunset_schwinger(4.0, 2.0, subtracted=True)
    m = I.sunset_momentum(4.0, 2.0, subtracted=True)
    assert s.value == pytest.approx(m.value, rel=1e-8)
    mc = I.sunset_monte_carlo(4.0, 2.0, MC, subtracted=True)
    assert abs(mc.value - s.value) < 4 * mc.error
    with pytest.raises(PoleInDimension):
        I.sunset_schwinger(0.0, 2.0)


def test_I_k_depends_on_invariant_only():
    a = I.I_k_omega2(2.0, 1.0, 1.6)
    b = I.I_k_omega2(1.5, math.sqrt(0.5), 1.6)
    assert a.value == pytest.approx(b.value, rel=1e-13)


def test_I_definitions():
    d = 1.5
    I2, I3 = I.I2_I3(d)
    assert I2 == pytest.approx(I.I_k_omega2(0.0, 0.0, d).value, rel=1e-14)
    # I3 from finite differences vs the differentiated Schwinger form vs momentum form
    assert I3 == pytest.approx(I.I3_closed_simplex(d), rel=1e-8)
    assert I3 == pytest.approx(I.sunset_momentum_slope(d).value, rel=1e-8)


def test_I3_sign_at_d2():
    # Euclidean positivity makes I_0 increasing in omega^2, hence I3 < 0 here
    I3, err = I.I3_fd(2.0)
    assert I3 < 0 and err < 1e-6 * abs(I3)
    assert I3 == pytest.approx(I.I3_closed_simplex(2.0), rel=1e-8)
    assert I3 == pytest.approx(I.sunset_momentum_slope(2.0).value, rel=1e-7)


@settings(max_examples=12, deadline=None)
@given(st.floats(-20.0, 8.5), st.floats(-20.0, 8.5), st.floats(1.2, 2.8))
def test_I_monotone_in_omega2(s1, s2, d):
    lo, hi = sorted((s1, s2))
    if hi - lo < 1e-3:
        return
    a = I.sunset_schwinger(lo, d, subtracted=True).value
    b = I.sunset_schwinger(hi, d, subtracted=True).value
    assert b > a


def test_threshold_and_domain():
    with pytest.raises(ThresholdViolation):
        I.I_k_omega2(9.0, 0.0, 1.5)
    with pytest.raises(ThresholdViolation):
        I.I_k_omega2(10.0, 0.5, 1.5)
    with pytest.raises(ParameterError):
        I.I_k_omega2(0.0, 0.0, 3.0)


def test_monte_carlo_reproducible_and_scaling():
    a = I.sunset_monte_carlo(0.0, 1.5, MC.with_(max_evals=20_000))
    b = I.sunset_monte_carlo(0.0, 1.5, MC.with_(max_evals=20_000))
    assert a.value == b.value and a.error == b.error
    big = I.sunset_monte_carlo(0.0, 1.5, MC.with_(max_evals=320_000))
    ratio = a.error / big.error
    assert 2.0 < ratio < 8.0     # sqrt(16) = 4 within a factor 2


def test_triple_momentum_gaussian_oracle():
    # int d^dk1 d^dk2 exp(-(k1^2 + k2^2 + |k1+k2|^2)) = (pi^2/3)^{d/2}; symmetric in the three
    for d in (1.0, 1.5, 2.0, 2.7):
        F = lambda a, b, c: np.exp(-(a * a + b * b + c * c))
        r = I.triple_momentum(F, d, k_hi=50.0)
        exact = (math.pi ** 2 / 3) ** (d / 2) / (2 * math.pi) ** (2 * d)
        assert r.value == pytest.approx(exact, rel=1e-10)


def test_unconverged_result_refuses_use():
    r = I.IntegralResult(1.0, 1.0, 3, converged=False)
    with pytest.raises(Exception):
        r.checked()


def test_external_integrator_gaussian_oracle():
    # k1^2 + k2^2 + |k1+k2+k|^2 is minimized at k1 = k2 = -k/3, leaving k^2/3
    F = lambda a, b, c: np.exp(-(a * a + b * b + c * c))
    for d in (1.0, 2.0):
        for k in (0.0, 0.8):
            r = I.triple_momentum_external(F, d, k, k_hi=30.0)
            exact = (math.pi ** 2 / 3) ** (d / 2) * math.exp(-k * k / 3) / (2 * math.pi) ** (2 * d)
            assert r.value == pytest.approx(exact, rel=1e-8)
    with pytest.raises(ParameterError):
        I.triple_momentum_external(F, 1.5, 0.3)


def test_external_sunset_depends_on_invariant_d1():
    # explicit-coordinate route with k != 0 against the symmetric route at k = 0
    a = I.sunset_momentum_external(2.0, 1.0, 1.0, subtracted=False, k_lo=1e-9, k_hi=1e9)
    b = I.sunset_momentum(1.0, 1.0, k_hi=1e9)
    assert a.value == pytest.approx(b.value, rel=1e-6)
