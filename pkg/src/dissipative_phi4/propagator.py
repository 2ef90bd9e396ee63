"""Second-order propagator: X_k, Y_k(omega), C_k(omega^2), z, Z and the amplitude M.

All loop quantities use the delta-stripped convention: the averages are
quoted as coefficients of delta(k - k').  The natural mass unit is ``params.m``
and ``params.lam`` is the dimensionful coupling.

Two regimes are provided.  ``low-T`` drops every exponentially small Bose
factor; ``exact`` keeps the complete finite-temperature blocks.  Triple
momentum integrals at k = 0 run on the symmetric integrator of
:mod:`integrals`; k != 0 uses the explicit-coordinate integrator (d = 1, 2).
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from . import integrals as IG
from . import kernels as K
from .errors import NonConvergence, ParameterError, PoleProximity, ThresholdViolation
from .integrals import DEFAULT_1D, DEFAULT_3D, IntegralResult, QuadratureSpec

REGIMES = ("low-T", "exact")
KERNEL_FORMS = ("exact", "symmetric", "resummed", "frictionless")

# omega^2 samples (in units of m^2) for the Y' extraction
YPRIME_SAMPLES = (0.0, 1.0 / 64.0, 1.0 / 16.0)


def _check_regime(regime: str) -> None:
    if regime not in REGIMES:
        raise ParameterError(f"unknown regime {regime!r}", field="regime")


def _check_form(form: str) -> None:
    if form not in KERNEL_FORMS:
        raise ParameterError(f"unknown kernel form {form!r}", field="kernel_form")


def _omt(k, params: K.ThermalParams):
    return K.omega_tilde(k, params)


def _triple_kw(params: K.ThermalParams, spec: QuadratureSpec) -> dict:
    """Radial range for the triple integrators: reach well past the smoothing scale."""
    # unregulated integrands fall off like k^(2d-4); friction cuts off near 1/ell
    hi = 1e9
    if params.gamma > 0:
        hi = max(hi, 1e4 / params.ell)
    if spec.cutoff is not None:
        hi = spec.cutoff
    return {"k_hi": hi}


def _accept(r: IntegralResult, spec: QuadratureSpec, what: str) -> IntegralResult:
    if not (np.isfinite(r.value) and r.error <= max(spec.rel_tol, 1e-5) * abs(r.value) + spec.abs_tol):
        raise NonConvergence(f"{what}: estimated error {r.error:.3g} for value {r.value:.6g}")
    return r


def _triple(F, params: K.ThermalParams, k: float, spec: QuadratureSpec, what: str,
            minus=None) -> IntegralResult:
    d = params.d
    if k == 0.0 and minus is None:
        r = IG.triple_momentum(F, d, **_triple_kw(params, spec))
    elif d in (1.0, 2.0):
        hi = _triple_kw(params, spec)["k_hi"] if params.gamma > 0 else 1e5
        r = IG.triple_momentum_external(F, d, k, minus=minus, k_hi=hi)
    else:
        raise ParameterError("k != 0 triple integrals are available at d = 1 and d = 2 only", field="d")
    return _accept(r, spec, what)


# ---------------------------------------------------------------------------
# X_k

def bracket_integral(params: K.ThermalParams, spec: QuadratureSpec = DEFAULT_1D) -> IntegralResult:
    """(2pi)^-d int d^dq / omt_q^2 [w(2w)/(1-e^-bw)^2 + 2/((e^bw - 1)(1 - e^-bw)) + w(-2w)/(e^bw - 1)^2]."""
    b = params.beta

    def f(q):
        om = float(K.omega_k(q, params))
        x = b * om
        n = 1.0 / math.expm1(x) if x < 700 else 0.0
        one_m = -math.expm1(-x)
        # w(-2w) n^2 = (1 - e^{-2x}) / (2x (1 - e^{-x})^2) is the stable form of the third term
        br = float(K.w(2 * om, b)) / one_m ** 2 + 2.0 * n / one_m + (-math.expm1(-2 * x)) / (2 * x * one_m ** 2)
        return br / float(_omt(q, params)) ** 2

    r = IG.radial_reduce(f, params.d, spec, points=(math.sqrt(max(params.m, 1e-300) / b),))
    pref = (2 * math.pi) ** (-params.d)
    return IntegralResult(r.value * pref, r.error * pref, r.evaluations, r.converged)


def X_k(k: float, z: float, params: K.ThermalParams, regime: str = "low-T",
        spec: QuadratureSpec = DEFAULT_1D) -> float:
    """Equilibrium coefficient of <[[a_k, H1], a_k^dag]>."""
    _check_regime(regime)
    ot = float(_omt(k, params))
    lam = params.lam
    if regime == "low-T":
        return lam * z / ot
    J = IG.J_integral(params, spec).checked()
    B = bracket_integral(params, spec).checked()
    return lam * (J + 2 * z) / (2 * ot) - lam * lam * params.beta * J * B / (16 * ot)


# ---------------------------------------------------------------------------
# Y_k(omega)

def z_pole_term(k: float, omega: complex, z: float, params: K.ThermalParams, *, exact_J: float = 0.0) -> complex:
    """The z-dependent single-mode block of Y_k: -lam^2 z (J + 2z)/(2 omt^2) r(omega, w_k, g_k).

    With J = 0 this is the low-temperature pole term 2 lam^2 z^2 w_k / (omt^2 ((omega - i g_k)^2 - w_k^2)).
    It is of fourth order in lam because z itself is of first order.
    """
    ok = float(K.omega_k(k, params))
    gk = float(K.gamma_k(k, params))
    ot = float(_omt(k, params))
    rk = 1.0 / (omega + ok - 1j * gk) - 1.0 / (omega - ok - 1j * gk)
    return -params.lam ** 2 * z * (exact_J + 2 * z) / (2 * ot * ot) * rk


def _loop_integrand(omega: complex, params: K.ThermalParams, form: str):
    """1/prod(omt) * r(omega, sum w, gamma_k1k2k3) as a function of three magnitudes."""
    def F(k1, k2, k3):
        o = [np.sqrt(x * x + params.m ** 2) for x in (k1, k2, k3)]
        if params.omega_tilde is None:
            den = o[0] * o[1] * o[2]
        else:
            den = _omt(k1, params) * _omt(k2, params) * _omt(k3, params)
        ob = o[0] + o[1] + o[2]
        gb = K.gamma_triplet(k1, k2, k3, params) if params.gamma > 0 else 0.0 * ob
        return K.r_kernel_vec(omega, ob, gb, form) / den
    return F


def _ratio(num, den):
    """num/den with 0/0 -> 0 (both vanish together on collinear high-momentum nodes)."""
    with np.errstate(invalid="ignore", divide="ignore"):
        out = num / den
    return np.where(num == 0, 0.0, out)


def _exact_loop_integrand(omega: complex, params: K.ThermalParams):
    """Full finite-temperature triple block, symmetrized over which index is special."""
    b = params.beta

    def F(k1, k2, k3):
        ks = (k1, k2, k3)
        o = [np.sqrt(x * x + params.m ** 2) for x in ks]
        g = [K.gamma_k(x, params) for x in ks]
        ot = [o[i] if params.omega_tilde is None else _omt(ks[i], params) for i in range(3)]
        S = o[0] + o[1] + o[2]
        one_m = [-np.expm1(-b * x) for x in o]
        pref = 1.0 / (ot[0] * ot[1] * ot[2] * one_m[0] * one_m[1] * one_m[2])
        top = -np.expm1(-b * S)
        pairs = list(zip(o, g))
        g_ann = K.gamma_word([], pairs, b)
        g_cre = K.gamma_word(pairs, [], b)
        val = top / (omega + S - 1j * g_ann) - top / (omega - S - 1j * g_cre)
        for i in range(3):
            rest = [pairs[j] for j in range(3) if j != i]
            orest = S - o[i]
            # e^{-b w_i} - e^{-b (S - w_i)} = e^{-b w_i} (1 - e^{-b (S - 2 w_i)})
            num = -np.exp(-b * o[i]) * np.expm1(-b * (orest - o[i]))
            g1 = K.gamma_word([pairs[i]], rest, b)
            g2 = K.gamma_word(rest, [pairs[i]], b)
            val = val + _ratio(num, omega - o[i] + orest - 1j * g1) - _ratio(num, omega - orest + o[i] - 1j * g2)
        return pref * val
    return F


def _single_bose_blocks(k: float, omega: complex, z: float, J: float, params: K.ThermalParams,
                        spec: QuadratureSpec) -> complex:
    """The two J-weighted single-momentum blocks of the exact Y_k."""
    b = params.beta
    ok = float(K.omega_k(k, params))
    gk = float(K.gamma_k(k, params))
    ot = float(_omt(k, params))

    def parts(q):
        oq = float(K.omega_k(q, params))
        gq = float(K.gamma_k(q, params))
        n = 1.0 / math.expm1(b * oq) if b * oq < 700 else 0.0
        ga = float(K.gamma_word([(oq, gq)], [(oq, gq), (ok, gk)], b))
        gc = float(K.gamma_word([(ok, gk), (oq, gq)], [(oq, gq)], b))
        da = omega + ok - 1j * ga
        dc = omega - ok - 1j * gc
        first = (1.0 / da - 1.0 / dc) * n / float(_omt(q, params))
        wsum = float(K.W_stable(oq, -oq + ok, b)) + float(K.W_stable(oq, -oq - ok, b))
        second = (1j * gq * wsum * n / float(_omt(q, params))
                  * (1.0 / (da * (omega + ok - 1j * gk)) - 1.0 / (dc * (omega - ok - 1j * gk))))
        return first, second

    pts = (math.sqrt(max(params.m, 1e-300) / b),)
    acc = []
    for idx in (0, 1):
        for part in (lambda q: parts(q)[idx].real, lambda q: parts(q)[idx].imag):
            acc.append(IG.radial_reduce(part, params.d, spec, points=pts).checked())
    pref = (2 * math.pi) ** (-params.d)
    first = complex(acc[0], acc[1]) * pref
    second = complex(acc[2], acc[3]) * pref
    c = params.lam ** 2 * (J + 2 * z) / (8 * ot * ot)
    return -c * first + c * second


def loop_Y(k: float, omega: complex, params: K.ThermalParams, *, regime: str = "low-T",
           kernel_form: str = "exact", spec: QuadratureSpec = DEFAULT_3D) -> complex:
    """The genuine lam^2 triple-momentum block of Y_k(omega), without z terms."""
    _check_regime(regime)
    _check_form(kernel_form)
    ok = float(K.omega_k(k, params))
    if kernel_form in ("frictionless", "symmetric", "resummed") or params.gamma == 0:
        if abs(omega) ** 2 >= 9 * params.m ** 2 + k * k:
            raise ThresholdViolation("unregulated kernel needs omega below the three-particle threshold")
    if params.gamma == 0 and params.d >= 2.0:
        raise ParameterError("the unregulated triple integral diverges for d >= 2; use friction or "
                             "differences (amplitude_M)", field="gamma")
    if regime == "low-T":
        F = _loop_integrand(omega, params, kernel_form)
    else:
        if kernel_form != "exact":
            raise ParameterError("the exact regime uses the full kernel", field="kernel_form")
        F = _exact_loop_integrand(omega, params)
    val = complex(_triple(F, params, k, spec, "Y loop").value)
    ot = ok if params.omega_tilde is None else float(_omt(k, params))
    return -params.lam ** 2 / (96.0 * ot) * val


def Y_k(k: float, omega: complex, z: float, params: K.ThermalParams, regime: str = "low-T",
        kernel_form: str = "exact", spec: QuadratureSpec = DEFAULT_3D, *,
        include_z_terms: bool = True) -> complex:
    """Equilibrium coefficient i Y_k(omega) of the resolvent-weighted average.

    ``include_z_terms=False`` keeps only the genuine second-order triple block,
    which is what the second-order relations for z and Z use.
    """
    _check_regime(regime)
    if params.lam == 0:
        return 0j
    loop = loop_Y(k, omega, params, regime=regime, kernel_form=kernel_form, spec=spec)
    if not include_z_terms:
        return loop
    if regime == "low-T":
        return loop + z_pole_term(k, omega, z, params)
    s1 = DEFAULT_1D
    J = IG.J_integral(params, s1).checked()
    return loop + z_pole_term(k, omega, z, params, exact_J=J) + _single_bose_blocks(k, omega, z, J, params, s1)


def Y_plus_minus(k: float, omega: float, z: float, params: K.ThermalParams, **kw) -> Tuple[complex, complex]:
    """Symmetric and antisymmetric parts in omega: (Y(w) + Y(-w))/2 and (Y(w) - Y(-w))/2."""
    a = Y_k(k, omega, z, params, **kw)
    b_ = Y_k(k, -omega, z, params, **kw)
    return 0.5 * (a + b_), 0.5 * (a - b_)


# ---------------------------------------------------------------------------
# C_k and the amplitude

def free_C(omega2: complex, k: float, params: K.ThermalParams) -> complex:
    Gk = float(K.omega_k(k, params)) - 1j * float(K.gamma_k(k, params))
    return 1j / (omega2 - Gk * Gk)


def C_k(omega2: complex, k: float, X: float, Y_plus: complex, Y_minus: complex,
        params: K.ThermalParams, friction: str = "finite", *, pole_tol: float = 1e-10) -> complex:
    """Second-order correlation function C_k(omega^2).

    ``Y_minus`` enters divided by omega; pass the antisymmetric part at
    omega = sqrt(omega2).  ``friction='zero'`` returns the gamma_k = 0 form
    (the (w^2 - w_k^2)^2-multiplied expression divided back out).
    """
    ok = float(K.omega_k(k, params))
    omega = cmath.sqrt(omega2)
    odd = 0j if Y_minus == 0 else Y_minus / omega
    if friction == "zero":
        den = omega2 - ok * ok
        if abs(den) < pole_tol * max(1.0, ok * ok):
            raise PoleProximity(f"omega^2 = {omega2} sits on the free pole w_k^2 = {ok * ok}")
        num = 1j * den + 2j * ok * (X + Y_plus) - 1j * (omega2 + ok * ok) * odd
        return num / (den * den)
    if friction != "finite":
        raise ParameterError(f"unknown friction mode {friction!r}", field="friction")
    Gk = ok - 1j * float(K.gamma_k(k, params))
    den = omega2 - Gk * Gk
    if abs(den) < pole_tol * max(1.0, ok * ok):
        raise PoleProximity(f"omega^2 = {omega2} sits on the damped pole")
    G2 = Gk * Gk
    return (1j / den + 2j * G2 / (ok * ok * den * den) * (ok * X + Gk * Y_plus)
            - 1j * G2 * (omega2 + G2) / (ok * ok * den * den) * odd)


# ---------------------------------------------------------------------------
# z and Z

def _explicit_z_integrand(params: K.ThermalParams):
    m2 = params.m ** 2

    def F(k1, k2, k3):
        o = [np.sqrt(x * x + m2) for x in (k1, k2, k3)]
        den = o[0] * o[1] * o[2] if params.omega_tilde is None else \
            _omt(k1, params) * _omt(k2, params) * _omt(k3, params)
        S = o[0] + o[1] + o[2]
        gb = K.gamma_triplet(k1, k2, k3, params) if params.gamma > 0 else 0.0
        return (S * S + m2) / (den * S * (S * S + gb * gb))
    return F


def solve_z(params: K.ThermalParams, spec: QuadratureSpec = DEFAULT_3D) -> float:
    """Counterterm fixed by the moment condition, from its explicit triple integral."""
    if not 1.0 <= params.d < 3.0:
        raise ParameterError("solve_z needs 1 <= d < 3", field="d")
    if params.lam == 0:
        return 0.0
    if params.gamma == 0 and params.d >= 2.0:
        raise ParameterError("z needs the friction regulator for d >= 2", field="gamma")
    r = _triple(_explicit_z_integrand(params), params, 0.0, spec, "z integral")
    return params.lam / 48.0 * r.value


@dataclass(frozen=True)
class YExpansion:
    """Y_0(omega) ~ Y + Y' omega^2 (+ Y'' omega^4) from three samples."""
    Y: float
    Y_prime: float
    Y_curv: float
    samples: Tuple[Tuple[float, float], ...]


def fit_Y_expansion(params: K.ThermalParams, spec: QuadratureSpec = DEFAULT_3D,
                    kernel_form: str = "symmetric") -> YExpansion:
    """Quadratic (in omega^2) interpolation of the second-order Y_0 through the design samples.

    Y is integrated at omega = 0; the omega^2 dependence comes from subtracted
    integrands so the (possibly large) regulated constant never cancels numerically.
    """
    m2 = params.m ** 2
    xs = [s * m2 for s in YPRIME_SAMPLES]
    Y0 = loop_Y(0.0, 0.0, params, kernel_form=kernel_form, spec=spec).real
    diffs = [_loop_difference_result(x, 0.0, params, spec) for x in xs[1:]]
    ys = [0.0] + [r.value / params.m for r in diffs]
    V = np.vander(np.array(xs), 3, increasing=True)
    if abs(np.linalg.det(V)) < 1e-14 * m2 ** 3:
        raise ParameterError("degenerate omega^2 samples for the Y' fit", field="samples")
    c = np.linalg.solve(V, np.array(ys))
    # the sampled variation has to rise clearly above the quadrature noise floor
    noise = max(r.error for r in diffs) / params.m
    if not abs(ys[-1]) > 10 * noise:
        raise NonConvergence("Y' fit: sampled variation is below the quadrature noise")
    return YExpansion(Y0, float(c[1]), float(c[2]), tuple(zip(xs, [Y0 + y for y in ys])))


def compute_Z(params: K.ThermalParams, spec: QuadratureSpec = DEFAULT_3D) -> float:
    """Field normalization Z = 1 + 2 m Y' with Y' from the small-omega fit."""
    if params.lam == 0:
        return 1.0
    return 1.0 + 2.0 * params.m * fit_Y_expansion(params, spec).Y_prime


def Z_closed(params: K.ThermalParams) -> float:
    """1 + (lam m^{d-3})^2 I3 / 6."""
    I3 = IG.I3_closed_simplex(params.d)
    return 1.0 + (params.lam * params.m ** (params.d - 3)) ** 2 * I3 / 6.0


def z_closed(params: K.ThermalParams) -> float:
    """(lam/12) m^{2d-4} (I2 - I3); raises at d = 2 where I2 has its pole."""
    I2, I3 = IG.I2_I3(params.d)
    return params.lam / 12.0 * params.m ** (2 * params.d - 4) * (I2 - I3)


def z_normal_ordering(params: K.ThermalParams) -> float:
    """Normal-ordering value m^{d-1} I1 / 4 (negative on 1 < d < 3 in continuation)."""
    return params.m ** (params.d - 1) * IG.I1_closed(params.d) / 4.0


@dataclass(frozen=True)
class MomentCheck:
    z: float
    X0: float
    Y: float
    Y_prime: float
    residual: float           # X0 + Y + m^2 Y'
    relative: float           # |residual| / |Y|
    C_residual: complex       # C_0(0) - m^2 dC_0/domega^2 at 0, second order

    def to_dict(self) -> dict:
        return {"z": self.z, "X0": self.X0, "Y": self.Y, "Y_prime": self.Y_prime,
                "residual": self.residual, "relative": self.relative,
                "C_residual": [self.C_residual.real, self.C_residual.imag]}


def moment_check(params: K.ThermalParams, spec: QuadratureSpec = DEFAULT_3D) -> MomentCheck:
    """Back-substitute the explicit z into the second-order moment condition at k = 0."""
    z = solve_z(params, spec)
    X0 = X_k(0.0, z, params)
    ex = fit_Y_expansion(params, spec)
    m2 = params.m ** 2
    res = X0 + ex.Y + m2 * ex.Y_prime

    def C(w2):  # quadratic model of Y_0 inserted into the zero-friction C
        return C_k(w2, 0.0, X0, ex.Y + ex.Y_prime * w2, 0j, params, friction="zero")
    # central differences with one Richardson step; C is rational with its poles at m^2
    h = 1e-3 * m2
    d1 = (C(h) - C(-h)) / (2 * h)
    d2 = (C(h / 2) - C(-h / 2)) / h
    dC = (4 * d2 - d1) / 3
    return MomentCheck(z, X0, ex.Y, ex.Y_prime, res, abs(res) / abs(ex.Y), C(0.0) - m2 * dC)


# ---------------------------------------------------------------------------
# amplitude

def _loop_difference_result(omega2: float, k: float, params: K.ThermalParams,
                            spec: QuadratureSpec) -> IntegralResult:
    form = "frictionless" if params.gamma == 0 else "symmetric"
    if omega2 - k * k >= 9 * params.m ** 2:
        raise ThresholdViolation("amplitude is evaluated below threshold only")
    F = _loop_integrand(math.sqrt(omega2) if omega2 >= 0 else 1j * math.sqrt(-omega2), params, form)
    G = _loop_integrand(0.0, params, form)
    if k == 0.0:
        r = _triple(lambda a, b_, c: (F(a, b_, c) - G(a, b_, c)).real, params, 0.0, spec, "amplitude loop")
    elif params.d in (1.0, 2.0):
        r = _triple(lambda a, b_, c: F(a, b_, c).real, params, k, spec, "amplitude loop",
                    minus=(lambda a, b_, c: G(a, b_, c).real, 0.0))
    else:
        raise ParameterError("k != 0 needs d = 1 or 2 on the momentum route", field="d")
    sc = -params.lam ** 2 / 96.0
    return IntegralResult(sc * r.value, abs(sc) * r.error, r.evaluations, r.converged, r.meta)


def loop_difference(omega2: float, k: float, params: K.ThermalParams,
                    spec: QuadratureSpec = DEFAULT_3D, *, route: str = "momentum") -> float:
    """w_k Y_k(omega) - m Y: the finite part of the second-order amplitude.

    ``momentum`` subtracts the (k = 0, omega = 0) integrand node by node using
    the explicit external-momentum integrator; ``schwinger`` uses the
    manifestly invariant representation (zero friction only).
    """
    if route == "schwinger":
        if params.gamma != 0:
            raise ParameterError("the Schwinger route is frictionless", field="gamma")
        pre = -params.lam ** 2 / 12.0 * params.m ** (2 * params.d - 4)
        return pre * IG.I_k_omega2(omega2, k, params.d, m=params.m, subtracted=True).checked()
    if route != "momentum":
        raise ParameterError(f"unknown route {route!r}", field="route")
    return _loop_difference_result(omega2, k, params, spec).value


def Y_prime_value(params: K.ThermalParams, spec: QuadratureSpec = DEFAULT_3D) -> float:
    if params.lam == 0:
        return 0.0
    if params.gamma == 0:
        I3 = IG.I3_closed_simplex(params.d)
        return params.lam ** 2 * I3 / 12.0 * params.m ** (2 * params.d - 7)
    return fit_Y_expansion(params, spec).Y_prime


def amplitude_M(omega2: float, k: float, params: K.ThermalParams, spec: QuadratureSpec = DEFAULT_3D,
                *, route: str = "momentum", Y_prime: Optional[float] = None) -> complex:
    """Amputated amplitude to second order.

    -i(w^2 - w_k^2) - 2i [w_k Y_k(w) - m Y - m (w^2 - k^2) Y'].  The factor m on
    the Y' term restores the dimensions (it is invisible at m = 1).
    """
    ok2 = k * k + params.m ** 2
    free = -1j * (omega2 - ok2)
    if params.lam == 0:
        return free
    Yp = Y_prime_value(params, spec) if Y_prime is None else Y_prime
    D = loop_difference(omega2, k, params, spec, route=route)
    return free - 2j * (D - params.m * (omega2 - k * k) * Yp)


def mass_shell_remainder(params: K.ThermalParams) -> complex:
    """Closed value of M(m^2, k = 0) at second order: (i lam^2/6) m^{2d-4} [I(m^2) - I2 + I3]."""
    I3 = IG.I3_closed_simplex(params.d)
    dI = IG.I_k_omega2(params.m ** 2, 0.0, params.d, m=params.m, subtracted=True).checked()
    return 1j * params.lam ** 2 / 6.0 * params.m ** (2 * params.d - 4) * (dI + I3)


# ---------------------------------------------------------------------------
# diagnostics

@dataclass(frozen=True)
class OddKernelCheck:
    ell: float
    plus_term: complex        # integral with +omega/(ob + i g)^2
    minus_term: complex       # integral with -omega/(ob - i g)^2
    total: complex

    @property
    def real_cancellation(self) -> float:
        return abs(self.total.real) / max(abs(self.plus_term.real), 1e-300)


def odd_kernel_check(params: K.ThermalParams, omega: float = 0.5, spec: QuadratureSpec = DEFAULT_3D) -> OddKernelCheck:
    """Integrate the two linear-in-omega kernel terms separately and summed (k = 0)."""
    m2 = params.m ** 2

    def make(sign):
        def F(k1, k2, k3):
            o = [np.sqrt(x * x + m2) for x in (k1, k2, k3)]
            ob = o[0] + o[1] + o[2]
            gb = K.gamma_triplet(k1, k2, k3, params)
            return sign * omega / (ob + sign * 1j * gb) ** 2 / (o[0] * o[1] * o[2])
        return F
    vals = [complex(_triple(make(sg), params, 0.0, spec, "odd term").value) for sg in (1.0, -1.0)]

    def Fsum(k1, k2, k3):
        o = [np.sqrt(x * x + m2) for x in (k1, k2, k3)]
        ob = o[0] + o[1] + o[2]
        gb = K.gamma_triplet(k1, k2, k3, params)
        # closed sum of the pair: -4 i omega ob g / (ob^2 + g^2)^2
        return 4.0 * omega * ob * gb / (ob * ob + gb * gb) ** 2 / (o[0] * o[1] * o[2])
    tot_im = -_triple(Fsum, params, 0.0, spec, "odd pair").value
    return OddKernelCheck(params.ell, vals[0], vals[1], complex(vals[0].real + vals[1].real, tot_im))


# ---------------------------------------------------------------------------
# assembled result

@dataclass(frozen=True)
class PropagatorResult:
    k: float
    X_k: float
    z: float
    Z: float
    Y: float
    Y_prime: float
    C_k: Callable[[complex], complex] = field(repr=False, compare=False)
    Y_plus: Callable[[float], complex] = field(repr=False, compare=False)
    Y_minus: Callable[[float], complex] = field(repr=False, compare=False)
    M_k: Callable[[float], complex] = field(repr=False, compare=False)

    def summary(self) -> Dict[str, float]:
        return {"k": self.k, "X_k": self.X_k, "z": self.z, "Z": self.Z, "Y": self.Y, "Y_prime": self.Y_prime}


def propagator(params: K.ThermalParams, k: float = 0.0, spec: QuadratureSpec = DEFAULT_3D,
               *, kernel_form: str = "symmetric") -> PropagatorResult:
    """Second-order propagator at fixed k in the low-temperature regime.

    At lam = 0 every handle reduces to the free theory.  Otherwise the
    friction regulator must be on (d >= 2) and z, Z come from solve_z and the Y' fit.
    """
    if params.lam == 0:
        return PropagatorResult(k, 0.0, 0.0, 1.0, 0.0, 0.0,
                                C_k=lambda w2: free_C(w2, k, params),
                                Y_plus=lambda w: 0j, Y_minus=lambda w: 0j,
                                M_k=lambda w2: -1j * (w2 - k * k - params.m ** 2))
    z = solve_z(params, spec)
    ex = fit_Y_expansion(params, spec)
    Z = 1.0 + 2.0 * params.m * ex.Y_prime
    X = X_k(k, z, params)
    fr = "zero" if params.gamma == 0 else "finite"
    kw = dict(kernel_form=kernel_form, spec=spec, include_z_terms=False)

    def parts(w):
        return Y_plus_minus(k, w, z, params, **kw)

    def C(w2):
        yp, ym = parts(cmath.sqrt(w2).real)
        return C_k(w2, k, X, yp, ym, params, friction=fr)

    return PropagatorResult(k, X, z, Z, ex.Y, ex.Y_prime, C_k=C,
                            Y_plus=lambda w: parts(w)[0], Y_minus=lambda w: parts(w)[1],
                            M_k=lambda w2: amplitude_M(w2, k, params, spec, Y_prime=ex.Y_prime))
