import cmath
import math
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dissipative_phi4 import integrals as I
from dissipative_phi4 import propagator as P
from dissipative_phi4.errors import ParameterError, PoleInDimension, PoleProximity
from dissipative_phi4.kernels import ThermalParams

LAM = 0.1


def regulated(d, ell=1e-4, lam=LAM, beta=1.0):
    return ThermalParams(d=d, lam=lam, beta=beta, gamma=beta * ell * ell / 2)


@lru_cache(maxsize=None)
def moment(d):
    return P.moment_check(regulated(d))


def test_X_low_T_trivial():
    p = ThermalParams(d=2.0, lam=0.3)
    assert P.X_k(0.7, 0.0, p) == 0.0
    assert P.X_k(0.0, 0.2, p) == pytest.approx(0.3 * 0.2 / 1.0)


def test_Y_trivial_and_regime_errors():
    p = regulated(2.0, lam=0.0)
    assert P.Y_k(0.0, 0.3, 0.0, p) == 0
    with pytest.raises(ParameterError):
        P.Y_k(0.0, 0.3, 0.0, regulated(2.0), regime="high-T")
    # unregulated triple integrals diverge from d = 2 on
    with pytest.raises(ParameterError):
        P.loop_Y(0.0, 0.3, ThermalParams(d=2.0, lam=LAM), kernel_form="frictionless")


def test_frictionless_Y_is_the_sunset():
    # w_k Y_k(w) = -lam^2 I_k(w^2) / 12 (m = 1, k = 0)
    p = ThermalParams(d=1.5, lam=LAM)
    y = P.loop_Y(0.0, 0.5, p, kernel_form="frictionless")
    assert y.imag == 0
    assert y.real == pytest.approx(-LAM ** 2 * I.I_k_omega2(0.25, 0.0, 1.5).value / 12, rel=1e-7)


def test_Y_minus_vanishes_for_symmetric_kernel():
    p = regulated(1.5, ell=1e-2)
    for w in (0.2, 0.6):
        yp, ym = P.Y_plus_minus(0.0, w, 0.0, p, kernel_form="symmetric", include_z_terms=False)
        assert abs(ym) < 1e-12 * abs(yp)
    # the full kernel keeps an odd part as long as friction is on
    yp, ym = P.Y_plus_minus(0.0, 0.6, 0.0, p, kernel_form="exact", include_z_terms=False)
    assert abs(ym) > 1e-6 * abs(yp)


def test_symmetric_and_exact_kernels_agree_at_small_friction():
    p = regulated(1.5, ell=1e-4)
    ye = P.loop_Y(0.0, 0.4, p, kernel_form="exact")
    ys = P.loop_Y(0.0, 0.4, p, kernel_form="symmetric")
    assert abs(ye - ys) < 1e-5 * abs(ys)
    assert P.loop_Y(0.0, 0.4, p, kernel_form="resummed") == ys


def test_z_pole_term_low_T_form():
    p = ThermalParams(d=2.0, lam=0.4, gamma=0.01)
    k, w, z = 0.9, 0.3, 0.05
    ok, gk = math.sqrt(k * k + 1), 0.01 * k ** 4
    expect = 2 * 0.4 ** 2 * z * z / ok ** 2 * ok / ((w - 1j * gk) ** 2 - ok ** 2)
    assert P.z_pole_term(k, w, z, p) == pytest.approx(expect, rel=1e-13)


def test_C_free_examples():
    p = ThermalParams(d=2.0)
    assert P.C_k(0.0, 0.0, 0.0, 0j, 0j, p) == pytest.approx(-1j, abs=1e-15)
    assert P.C_k(0.0, 0.0, 0.0, 0j, 0j, p, friction="zero") == pytest.approx(-1j, abs=1e-15)
    with pytest.raises(PoleProximity):
        P.C_k(1.0, 0.0, 0.0, 0j, 0j, p, friction="zero")


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 5.0), st.floats(0.0, 3.0), st.floats(0.0, 0.5))
def test_C_free_theory_exact(omega, k, gamma):
    p = ThermalParams(d=2.0, gamma=gamma)
    Gk = math.sqrt(k * k + 1) - 1j * gamma * k ** 4
    if abs(omega * omega - Gk * Gk) < 1e-6:
        return
    res = P.propagator(p, k=k)
    expect = 1j / (omega * omega - Gk * Gk)
    assert res.C_k(omega * omega) == expect
    assert P.C_k(omega * omega, k, 0.0, 0j, 0j, p) == pytest.approx(expect, rel=1e-15)


def test_C_forms_agree_without_friction():
    p = ThermalParams(d=2.0, lam=0.2)
    X, Yp, Ym = 0.01, -0.004 + 0.0j, 0.002 + 0.0j
    for w2 in (0.3, 2.5):
        a = P.C_k(w2, 0.0, X, Yp, Ym, p, friction="finite")
        b = P.C_k(w2, 0.0, X, Yp, Ym, p, friction="zero")
        assert a == pytest.approx(b, rel=1e-14)


def test_z_vanishes_linearly():
    zs = [P.solve_z(regulated(1.5, lam=lam)) for lam in (0.0, 0.05, 0.1)]
    assert zs[0] == 0.0
    assert zs[2] == pytest.approx(2 * zs[1], rel=1e-14)


def test_z_matches_integrals_below_two_dimensions():
    p = regulated(1.5, ell=1e-6)
    assert P.solve_z(p) == pytest.approx(P.z_closed(p), rel=1e-4)
    with pytest.raises(PoleInDimension):
        P.z_closed(regulated(2.0))


@pytest.mark.parametrize("d", [1.5, 2.0, 2.5])
def test_moment_condition_after_solve_z(d):
    mc = moment(d)
    tol = 10 * I.DEFAULT_3D.rel_tol
    assert mc.relative < tol
    # the same statement on the correlation function itself
    scale = 2 * abs(mc.Y)
    assert abs(mc.C_residual) < tol * scale
    assert mc.X0 == pytest.approx(-(mc.Y + mc.Y_prime), rel=tol)


@pytest.mark.parametrize("d", [1.5, 2.0, 2.5])
def test_Z_two_routes(d):
    mc = moment(d)
    p = regulated(d)
    assert 1 + 2 * mc.Y_prime == pytest.approx(P.Z_closed(p), rel=1e-4)
    # Z - 1 is tiny, so check Y' itself as well
    assert mc.Y_prime == pytest.approx(LAM ** 2 * I.I3_closed_simplex(d) / 12, rel=1e-4)
    assert P.compute_Z(p.with_(lam=0.0)) == 1.0


def test_normal_ordering_counterterm_sign():
    for d in (1.5, 2.5):
        assert P.z_normal_ordering(ThermalParams(d=d)) < 0


def _slope(bs, vals):
    return np.polyfit(bs, np.log(np.abs(vals)), 1)[0]


def test_exact_minus_low_T_decays_like_exp_minus_beta_m():
    base = ThermalParams(d=1.0, lam=LAM)
    z = P.solve_z(base)
    bs = [6.0, 8.0, 10.0, 12.0]
    dx, dy = [], []
    for b in bs:
        q = base.with_(beta=b)
        dx.append(P.X_k(0.0, z, q, "exact") - P.X_k(0.0, z, q))
        dy.append((P.Y_k(0.0, 0.0, z, q, "exact") - P.Y_k(0.0, 0.0, z, q)).real)
    assert abs(_slope(bs, dx) + 1.0) < 0.1
    assert abs(_slope(bs, dy) + 1.0) < 0.1


def test_exact_X_leading_block():
    # at lam -> 0 the exact X is lam (J + 2z)/(2 w_k) with the J oracle of the integrals module
    q = ThermalParams(d=1.0, lam=1e-6, beta=2.0)
    J = I.J_integral(q).value
    assert P.X_k(0.0, 0.0, q, "exact") == pytest.approx(1e-6 * J / 2, rel=1e-5)


def test_amplitude_free_and_mass_shell():
    p0 = ThermalParams(d=1.5)
    assert P.amplitude_M(2.3, 0.4, p0) == pytest.approx(-1j * (2.3 - 0.16 - 1.0))
    p = ThermalParams(d=1.5, lam=LAM)
    # second order does not vanish on shell; it equals the Taylor remainder of I beyond omega^2
    Mm = P.amplitude_M(1.0, 0.0, p)
    assert Mm == pytest.approx(P.mass_shell_remainder(p), rel=1e-8)
    assert abs(Mm) > 0
    assert P.amplitude_M(1.0, 0.0, p, route="schwinger") == pytest.approx(Mm, rel=1e-8)


@pytest.mark.slow
def test_lorentz_spot_check_d2():
    p = ThermalParams(d=2.0, lam=LAM)
    a = P.amplitude_M(2.0, 1.0, p)
    b = P.amplitude_M(1.5, math.sqrt(0.5), p)
    assert abs(a - b) < 1e-6 * abs(a)
    c = P.amplitude_M(1.0, 0.0, p, route="schwinger")
    assert abs(a - c) < 1e-6 * abs(c)


def test_odd_kernel_terms_d275():
    d = 2.75
    checks = [P.odd_kernel_check(regulated(d, ell=e)) for e in (1e-3, 1e-4)]
    for c in checks:
        assert c.real_cancellation < 1e-12
    # the residual imaginary sum grows like ell^(5 - 2d); it does not vanish
    a, b = checks
    slope = math.log(abs(b.total.imag / a.total.imag)) / math.log(b.ell / a.ell)
    assert slope == pytest.approx(5 - 2 * d, abs=0.01)


def test_propagator_result_summary():
    res = P.propagator(regulated(1.5))
    s = res.summary()
    assert set(s) == {"k", "X_k", "z", "Z", "Y", "Y_prime"}
    assert res.Z == pytest.approx(1 + 2 * res.Y_prime)
    assert abs(res.Y_minus(0.3)) < 1e-12 * abs(res.Y_plus(0.3))
    # C near omega = 0 respects the moment condition to second order
    mc = moment(1.5)
    assert res.z == pytest.approx(mc.z)
