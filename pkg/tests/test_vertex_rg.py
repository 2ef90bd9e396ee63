import math
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dissipative_phi4 import integrals as I
from dissipative_phi4 import op_algebra as O
from dissipative_phi4 import vertex_rg as V
from dissipative_phi4.errors import FitFailure, ParameterError
from dissipative_phi4.kernels import ThermalParams, gamma_primes

LAM = 0.1


def with_ell(d, ell, lam=LAM, beta=1.0, m=1.0):
    return ThermalParams(d=d, lam=lam, beta=beta, m=m, gamma=beta * ell * ell / 2)


@lru_cache(maxsize=None)
def rg(d):
    return V.extract_fixed_point(ThermalParams(d=d, lam=LAM))


def test_first_order_and_small_coupling():
    p = with_ell(2.0, 1e-3, lam=1e-7)
    r = V.four_point_gamma(p)
    assert r.contributions["first-order"] == -1e-7
    assert set(r.contributions) == set(V.CONTRIBUTION_KEYS)
    assert abs(r.ImGamma_over_F + 1e-7) < 1e-13
    assert r.ImGamma_over_F == pytest.approx(sum(r.contributions.values()), rel=1e-15)


@pytest.mark.parametrize("d", [1.0, 1.5, 2.0, 2.5])
def test_zero_friction_series_matches_continued_integrals(d):
    p = ThermalParams(d=d, lam=LAM)
    r = V.four_point_gamma(p)
    assert r.contributions["friction-correction"] == 0.0
    assert r.ImGamma_over_F == pytest.approx(V.zero_friction_series(p), rel=1e-10)


def test_diagram_b_multiplicity():
    p = ThermalParams(d=1.5, lam=LAM)
    r = V.four_point_gamma(p)
    # four copies of lam^2/8 times I1''
    assert r.contributions["diagram-b"] == pytest.approx(4 * LAM ** 2 / 8 * I.I1pp_closed(1.5), rel=1e-10)
    assert r.contributions["diagram-a"] == pytest.approx(LAM ** 2 / 4 * I.I1p_closed(1.5), rel=1e-10)


@pytest.mark.parametrize("d", [1.2, 2.0, 2.6])
def test_small_friction_form(d):
    # the remainder beyond the ell^{3-d} term is down by a further power of ell m
    for ell in (1e-3, 1e-4):
        p = with_ell(d, ell)
        r = V.four_point_gamma(p).ImGamma_over_F
        lead = LAM ** 2 * ell ** (3 - d) * I.friction_integral(d)
        assert abs(r - V.small_friction_series(p)) < 20 * ell * lead


@settings(max_examples=20, deadline=None)
@given(st.floats(0.2, 2.9), st.floats(0.0, 0.5), st.floats(0.5, 4.0))
def test_loop_integrals_positive_and_finite(d, gamma, beta):
    p = ThermalParams(d=d, lam=1.0, gamma=gamma, beta=beta)
    r = V.four_point_gamma(p)
    a, b = r.contributions["diagram-a"], r.contributions["diagram-b"]
    a += r.contributions["friction-correction"]
    assert math.isfinite(r.ImGamma_over_F)
    assert a + b > 0
    # friction only ever reduces the two loop integrals
    assert r.contributions["friction-correction"] <= 0


def _doubling_deviation(d, ell):
    a = V.four_point_gamma(with_ell(d, ell)).contributions["friction-correction"]
    b = V.four_point_gamma(with_ell(d, 2 * ell)).contributions["friction-correction"]
    return b / a / 2 ** (3 - d) - 1


@pytest.mark.parametrize("d", [1.0, 1.5, 2.0, 2.5])
def test_friction_correction_doubling(d):
    # the next correction is linear in ell m, about 3.5 ell m at d = 1
    for ell in (1e-3, 2.5e-3):
        assert abs(_doubling_deviation(d, ell)) < 0.01
    small, large = _doubling_deviation(d, 1e-4), _doubling_deviation(d, 1e-3)
    assert large / small == pytest.approx(10, rel=0.05)


def test_lambda_star_closed_values():
    assert V.lambda_star_closed(1.0) == pytest.approx(32 / 3, rel=1e-15)
    assert V.lambda_star_closed(2.0) == pytest.approx(32 * math.sqrt(2) / 3, rel=1e-15)
    for d in (0.5, 1.0, 1.5, 2.0, 2.5, 2.9):
        assert V.lambda_star_closed(d) == pytest.approx(8 / 3 / I.friction_integral(d), rel=1e-13)
    eps = 1e-3
    assert V.lambda_star_closed(3 - eps) == pytest.approx(16 / 3 * math.pi ** 2 * eps, rel=0.05)
    assert V.lambda_star_closed(3.0) == 0.0


def test_lambda_star_closed_shape_above_two():
    # the closed form still rises past d = 2 and peaks near d = 2.18 before falling to zero
    up = [V.lambda_star_closed(d) for d in np.linspace(2.0, 2.15, 16)]
    down = [V.lambda_star_closed(d) for d in np.linspace(2.2, 2.999, 80)]
    assert all(a < b for a, b in zip(up, up[1:]))
    assert all(a > b for a, b in zip(down, down[1:]))
    assert max(up + down) < 15.4


@pytest.mark.parametrize("d", [1.0, 1.5, 2.0, 2.5])
def test_fixed_point_extraction(d):
    r = rg(d)
    assert r.epsilon == 3 - d
    assert abs(r.alpha - r.epsilon) < 1e-6
    assert r.lambda_star == pytest.approx(r.lambda_star_closed, rel=1e-6)
    assert r.lambda_star_matched == pytest.approx(r.lambda_star_closed, rel=1e-10)
    assert r.B2 == pytest.approx(1 / r.lambda_star_closed, rel=1e-6)
    assert r.fit_residual < V.FIT_TOL


def test_fixed_point_named_values():
    assert rg(1.0).lambda_star == pytest.approx(32 / 3, rel=1e-6)
    assert rg(2.0).lambda_star == pytest.approx(32 * math.sqrt(2) / 3, rel=1e-6)


def test_fit_does_not_depend_on_mass_or_coupling():
    a = V.extract_fixed_point(ThermalParams(d=1.5, lam=LAM))
    b = V.extract_fixed_point(ThermalParams(d=1.5, lam=2.0, m=3.0, beta=0.5))
    assert b.lambda_star == pytest.approx(a.lambda_star, rel=1e-6)
    assert b.alpha == pytest.approx(a.alpha, abs=1e-6)


def test_fit_failure_is_raised():
    # a window far outside the small-friction regime cannot be fitted this way
    with pytest.raises(FitFailure):
        V.extract_fixed_point(ThermalParams(d=1.5, lam=LAM), window=(0.3, 30.0), tol=1e-9)


def test_rg_result_stored_beta_vanishes_at_fixed_point():
    r = rg(1.5)
    assert V.beta_function(0.0, r) == 0.0
    assert V.beta_function(r.lambda_star, r) == 0.0
    lin, quad = r.beta_coeffs
    x = 0.37 * r.lambda_star
    assert V.beta_function(x, r) == pytest.approx(lin * x + quad * x * x, rel=1e-14)
    d = r.to_dict()
    assert d["schema_version"] == V.SCHEMA_VERSION and d["beta_coeffs"] == list(r.beta_coeffs)


def test_beta_half_fixed_point_d1():
    r = V.analytic_rg(1.0)
    assert V.beta_function(r.lambda_star / 2, r) == pytest.approx(-16 / 3, rel=1e-14)


def test_flow_initial_condition_and_large_scale():
    r = rg(2.0)
    lam0, ell0 = 3.0, 0.01
    assert V.flow_lambda(ell0, lam0, ell0, r) == pytest.approx(lam0, rel=1e-14)
    big = 1e12
    assert big ** r.epsilon * V.flow_lambda(big, lam0, ell0, r) == pytest.approx(r.lambda_star, rel=1e-6)
    with pytest.raises(ParameterError):
        V.flow_lambda(0.0, lam0, ell0, r)
    with pytest.raises(ParameterError):
        V.flow_lambda(1.0, lam0, -1.0, r)


@pytest.mark.parametrize("which", ["analytic", "fitted"])
def test_flow_solves_the_ode(which):
    r = V.analytic_rg(1.5) if which == "analytic" else rg(1.5)
    lam0, ell0 = 0.8, 0.05
    for ell in np.geomspace(1e-3, 1e3, 13):
        assert abs(V.ode_residual(float(ell), lam0, ell0, r)) < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 20.0), st.floats(1e-3, 10.0), st.floats(0.5, 2.9))
def test_flow_invariant_is_constant(lam0, ell0, d):
    r = V.analytic_rg(d).with_exponent(3 - d + 1e-6)   # alpha slightly off eps on purpose
    rows = V.flow_trajectory(np.geomspace(1e-4, 1e4, 9), lam0, ell0, r)
    c = V._flow_constant(r.lambda_star, r.alpha, r.epsilon, lam0, ell0)
    for ell, lam, lt, _, inv in rows:
        # 1 - lt/lambda* loses digits as the flow approaches the fixed point
        if 1 - lt / r.lambda_star > 1e-4:
            assert inv == pytest.approx(r.lambda_star / c, rel=1e-10)


def test_refine_expansion():
    r = V.analytic_rg(2.0)
    P = (0.3, -1.2, 0.7, 0.05)
    lam, ell = 0.4, 0.02
    assert V.refine_expansion(P, r, ell, lam, B=(0.0, 0.0)) == pytest.approx(sum(p * lam ** j for j, p in enumerate(P)))
    # fixed-point substitution
    assert V.refine_expansion(P[:2], r, ell, lam, fixed_point_mass=2.0) == pytest.approx(P[0] + P[1] * 2.0 * r.lambda_star)
    # second-order template with B2 = 1/lambda*
    P2 = (0.3, -1.2, 0.7)
    val = V.refine_expansion(P2, r, ell, lam, B=(1 / r.lambda_star, 0.0))
    templ = P2[0] + P2[1] * lam * (1 + ell * lam / r.lambda_star) + P2[2] * lam * lam
    assert abs(val - templ) < 10 * lam ** 3 * ell


def test_combined_coefficients_match_direct_expansion():
    P, B, ell, eps = (0.1, -1.0, 0.4, 0.2), (0.3, 0.05), 0.7, 0.5
    c = V.combined_coefficients(P, B, ell, eps)
    lh = lambda x: x + B[0] * ell ** eps * x ** 2 + B[1] * ell ** (2 * eps) * x ** 3
    f = lambda x: sum(p * lh(x) ** j for j, p in enumerate(P))
    x = 1e-3
    assert f(x) == pytest.approx(sum(cj * x ** j for j, cj in enumerate(c)), rel=1e-10)


@pytest.mark.parametrize("d", [1.0, 2.0, 2.5])
def test_B2_read_from_vertex(d):
    # the ell^eps lam^2 coefficient of the vertex, over P1 = -1, is B2 = 1/lambda*
    r = rg(d)
    assert r.B2 == pytest.approx(0.375 * I.friction_integral(d), rel=1e-6)
    assert V.default_B(r)[0] == pytest.approx(r.B2, rel=1e-12)


def test_sweep_rows():
    rows = V.fixed_point_sweep([1.0, 2.0])
    assert rows[0][1] == pytest.approx(32 / 3) and rows[1][1] == pytest.approx(32 * math.sqrt(2) / 3)
    for d, closed, fitted, alpha in rows:
        assert fitted == pytest.approx(closed, rel=1e-6) and alpha == pytest.approx(3 - d, abs=1e-6)


# ---------------------------------------------------------------------------
# diagram (a): displayed bracket against the operator-algebra pipeline

def _pipeline_diagram_a(q, params):
    H1 = O.build_H1(include_z=False)
    X = O.commutator(O.ann("k1"), O.commutator(O.ann("k2"), H1))
    # the mixed a+ a piece only feeds exponentially small thermal terms
    X = O.OperatorSum([t for t in X if len(t.creators) != 1])
    Y = O.commutator(O.commutator(H1, O.cre("j1")), O.cre("j2"))
    b = O.Binding({"k1": 0.0, "k2": 0.0, "j1": 0.0, "j2": 0.0, "_q0": q, "_q1": q})
    RX = O.R0_apply(X, 0.0, params, b, direction="adjoint")
    avg = O.wick_product_average(RX, Y) - O.wick_product_average(Y, RX)
    tot = 0j
    for t in avg:
        co = t.coeff
        # integrand density: drop the bound list and the (already used) deltas
        bare = O.NormalTerm(O.ScalarCoeff(co.num, co.lam_pow, co.z_pow, co.vol_pow, co.factors, ()))
        tot += O.evaluate_scalar(bare, params, b)
    return tot


@pytest.mark.parametrize("q", [0.3, 1.7, 4.0])
def test_diagram_a_bracket_from_operator_algebra(q):
    p = ThermalParams(d=1.0, lam=1.0, beta=40.0, gamma=0.2)
    assert _pipeline_diagram_a(q, p) == pytest.approx(V.diagram_a_bracket(q, p), rel=1e-12)


@pytest.mark.parametrize("q", [0.3, 1.7])
def test_diagram_a_bracket_gives_vertex_integrand(q):
    # low temperature: gamma_aa = 2 omega gamma'_q and the bracket reduces to the
    # (1 + gamma'^2)^-1 integrand of the series (F/4 stripped, hence the 4)
    p = ThermalParams(d=2.0, lam=1.0, beta=40.0, gamma=0.2)
    om = math.sqrt(q * q + 1)
    g1, _ = gamma_primes(q, p)
    series = 0.25 / (2 * om ** 3 * (1 + g1 * g1))
    assert 4 * abs(V.diagram_a_bracket(q, p).imag) == pytest.approx(series, rel=1e-12)
