"""Zero-momentum four-point vertex, fixed-point extraction and RG flow helpers.

The vertex is reported as Im Gamma / (F/4), i.e. with the momentum delta and
the external frequency factors stripped.  The one-loop friction correction is
isolated by differencing the series at friction ``gamma`` and ``gamma/4``
(``ell`` and ``ell/2``), which removes every ell-independent piece exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from . import integrals as I
from . import kernels as K
from .errors import FitFailure, NonConvergence, ParameterError

SCHEMA_VERSION = 1

CONTRIBUTION_KEYS = ("first-order", "diagram-a", "diagram-b", "friction-correction")
# diagram (b): k1<->k2 and k1'<->k2' exchanges give four equal terms
DIAGRAM_B_MULTIPLICITY = 4

# fitting window in units of 1/m
FIT_WINDOW = (1e-3, 1e-2)
FIT_POINTS = 15
FIT_TOL = 1e-6

# below this ell m the friction correction is taken from its leading power law
ASYMPTOTIC_ELL = 1e-30

VERTEX_SPEC = I.QuadratureSpec(rel_tol=1e-12, abs_tol=1e-300, max_evals=500)


# ---------------------------------------------------------------------------
# four-point function

@dataclass(frozen=True)
class FourPointResult:
    ImGamma_over_F: float
    contributions: Dict[str, float]
    error: float = 0.0

    def to_dict(self) -> dict:
        return {"ImGamma_over_F": self.ImGamma_over_F, "contributions": dict(self.contributions),
                "error": self.error}


def _check_params(params: K.ThermalParams) -> None:
    params.require_subcritical()
    if not params.m > 0:
        raise ParameterError("the vertex integrals need m > 0", field="m")


def _radial(f, params: K.ThermalParams, spec: I.QuadratureSpec, ell: float) -> I.IntegralResult:
    m = params.m
    tol = spec.with_(rel_tol=min(spec.rel_tol, 1e-10))
    if ell == 0:
        # power-law tails ~ q^{d-4}: integrate to infinity
        r = I.radial_reduce(f, params.d, tol.with_(abs_tol=1e-15), scale=m, points=(10 * m,))
    else:
        # the friction integrands fall off like q^{d-8} beyond 1/ell
        r = I.radial_log(f, params.d, k_lo=1e-9 * min(m, 1 / ell), k_hi=1e9 * max(m, 1 / ell),
                         breaks=(m, 1 / ell), spec=tol)
    c = (2 * math.pi) ** -params.d
    return replace(r, value=r.value * c, error=r.error * c)


def _bubble_integrands(params: K.ThermalParams):
    """Frequency weights of the two loop integrals without the friction factors."""
    m = params.m

    def parts(q):
        om = math.sqrt(q * q + m * m)
        ot = om if params.omega_tilde is None else float(K.omega_tilde(q, params))
        a = 1.0 / (2 * ot * ot * om)
        b = 1.0 / (2 * ot * ot * (om + m))
        return om, a, b
    return parts


def _friction_shift(params: K.ThermalParams, lo_factor: float = 0.0):
    """Integrand of (series at gamma) - (series at lo_factor*gamma), per lam^2.

    With ``lo_factor = 0`` this is the full friction correction.  Both
    differences are written as single fractions so nothing cancels.
    """
    parts = _bubble_integrands(params)
    m = params.m
    ell = params.ell
    s2 = lo_factor * lo_factor

    def shift(x):
        # 1/(1+x^2) - 1/(1+s^2 x^2)
        x2 = x * x
        return (s2 - 1.0) * x2 / ((1 + x2) * (1 + s2 * x2))

    def f(q):
        om, a, b = parts(q)
        # ell^2 q^4 written so that huge q at tiny ell cannot overflow
        u = ell * q
        g1 = u * u * (q / om) ** 2
        g2 = u * u * q * q / (om * (om + 2 * m))
        return 0.25 * a * shift(g1) + 0.5 * b * shift(g2)
    return f


def four_point_gamma(params: K.ThermalParams, spec: I.QuadratureSpec = VERTEX_SPEC) -> FourPointResult:
    """Second-order zero-momentum vertex Im Gamma / (F/4).

    Diagrams (a) and (b) are reported at zero friction; the change produced by
    the friction factors 1/(1 + gamma'^2), 1/(1 + gamma''^2) is reported
    separately as the friction correction, so the pieces add up to the total.
    """
    _check_params(params)
    lam = params.lam
    parts = _bubble_integrands(params)
    ra = _radial(lambda q: parts(q)[1], params, spec, 0.0)
    rb = _radial(lambda q: parts(q)[2], params, spec, 0.0)
    ell = params.ell
    if 0 < ell * params.m < ASYMPTOTIC_ELL:
        # relative corrections to the leading term are O(ell m), far below rounding
        lead = -0.375 * ell ** (3 - params.d) * I.friction_integral(params.d)
        rf = I.IntegralResult(lead, 0.0, 0)
    elif ell > 0:
        rf = _radial(_friction_shift(params), params, spec, ell)
    else:
        rf = I.IntegralResult(0.0, 0.0, 0)
    for r in (ra, rb, rf):
        r.checked()
    # each type-(b) term carries lam^2/8
    contrib = {
        "first-order": -lam,
        "diagram-a": lam * lam / 4 * ra.value,
        "diagram-b": DIAGRAM_B_MULTIPLICITY * lam * lam / 8 * rb.value,
        "friction-correction": lam * lam * rf.value,
    }
    err = lam * lam * (ra.error / 4 + rb.error / 2 + rf.error)
    total = sum(contrib.values())
    return FourPointResult(float(total), contrib, float(err))


def zero_friction_series(params: K.ThermalParams) -> float:
    """-lam + (lam^2/4) m^{d-3} (I1' + 2 I1'') from the dimensionally continued integrals."""
    d, lam = params.d, params.lam
    return -lam + lam * lam / 4 * params.m ** (d - 3) * (I.I1p_closed(d) + 2 * I.I1pp_closed(d))


def small_friction_series(params: K.ThermalParams) -> float:
    """Zero-friction series plus the leading -(3/8) lam^2 ell^{3-d} friction term."""
    d, lam = params.d, params.lam
    return zero_friction_series(params) - 0.375 * lam * lam * params.ell ** (3 - d) * I.friction_integral(d)


def friction_difference(params: K.ThermalParams, ell: float,
                        spec: I.QuadratureSpec = VERTEX_SPEC) -> I.IntegralResult:
    """[Im Gamma(ell) - Im Gamma(ell/2)] / (F/4) divided by lam^2.

    Halving ell is the same as quartering gamma at fixed beta.
    """
    _check_params(params)
    if not ell > 0:
        raise ParameterError("smoothing length must be positive", field="ell")
    p = params.with_(gamma=params.beta * ell * ell / 2)
    return _radial(_friction_shift(p, lo_factor=0.25), p, spec, ell)


# ---------------------------------------------------------------------------
# fixed point

def lambda_star_closed(d: float) -> float:
    """(16/3) 2^d Gamma(d/2) pi^{(d-2)/2} sin((3-d) pi/4)."""
    if not 0 < d <= 3:
        raise ParameterError("need 0 < d <= 3", field="d")
    return 16.0 / 3.0 * 2 ** d * math.gamma(d / 2) * math.pi ** ((d - 2) / 2) * math.sin((3 - d) * math.pi / 4)


def lambda_star_matched(d: float, spec: I.QuadratureSpec = I.DEFAULT_1D) -> float:
    """Coefficient match (8/3) / friction_integral with the integral done by quadrature."""
    return 8.0 / 3.0 / I.friction_integral_quad(d, spec).checked()


@dataclass(frozen=True)
class FrictionFit:
    alpha: float
    coeffs: Tuple[float, ...]      # (c0..c3, c_analytic), ell in units of 1/m
    slope: float                   # plain log-log slope used as the starting point
    residual: float                # max relative residual of the fit
    ells: Tuple[float, ...]
    values: Tuple[float, ...]


# corrections in powers of (ell m) on top of the leading ell^alpha
FIT_SHIFTS = (0, 1, 2, 3, 4)
ANALYTIC_POWER = 4


def _resonant(alpha_seed: float) -> bool:
    return min(abs(alpha_seed + s - ANALYTIC_POWER) for s in FIT_SHIFTS) < 0.05


def _design(t: np.ndarray, alpha: float, resonant: bool = False) -> np.ndarray:
    cols = [t ** (alpha + s) for s in FIT_SHIFTS]
    # the small-q region adds an analytic ell^4 term; when it collides with one of
    # the power-law columns the pair degenerates into ell^4 log(ell)
    cols.append(t ** ANALYTIC_POWER * (np.log(t) if resonant else 1.0))
    return np.stack(cols, axis=1)


def fit_friction_scaling(params: K.ThermalParams, window: Tuple[float, float] = FIT_WINDOW,
                         n_points: int = FIT_POINTS, spec: I.QuadratureSpec = VERTEX_SPEC,
                         tol: float = FIT_TOL) -> FrictionFit:
    """Fit D(ell) = ell^alpha (c0 + c1 ell + c2 ell^2 + c3 ell^3) + c4 ell^4 over ell m in ``window``.

    The exponent is seeded by the straight log-log slope, then refined by
    variable projection: for each trial alpha the c's follow from a linear
    least-squares solve in relative weighting.
    """
    m = params.m
    t = np.geomspace(window[0], window[1], n_points)
    vals = np.array([friction_difference(params, ti / m, spec).checked() for ti in t])
    if np.any(vals == 0) or not (np.all(vals < 0) or np.all(vals > 0)):
        raise FitFailure("friction correction changes sign inside the fit window")
    slope = float(np.polyfit(np.log(t), np.log(np.abs(vals)), 1)[0])

    resonant = _resonant(slope)

    def solve(alpha):
        A = _design(t, alpha, resonant) / vals[:, None]
        c, *_ = np.linalg.lstsq(A, np.ones_like(t), rcond=None)
        return c, A @ c - 1.0

    def cost(alpha):
        return float(np.sum(solve(alpha)[1] ** 2))

    # the log-log slope is within a few 1e-2 of the exponent on this window
    if not slope > 0:
        raise FitFailure(f"friction correction does not vanish with ell (log-log slope {slope:.3g})")
    lo, hi = max(slope - 0.05, 1e-9), slope + 0.05
    opt = optimize.minimize_scalar(cost, bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
    alpha = float(opt.x)
    c, res = solve(alpha)
    resid = float(np.max(np.abs(res)))
    if not resid <= tol:
        raise FitFailure(f"friction-scaling fit residual {resid:.3g} exceeds {tol:.3g}")
    return FrictionFit(alpha, tuple(float(x) for x in c), slope, resid, tuple(t / m), tuple(vals))


@dataclass(frozen=True)
class RGResult:
    alpha: float
    epsilon: float
    lambda_star: float
    beta_coeffs: Tuple[float, float]
    flow_constant: Optional[float]
    ell: float
    lambda_star_closed: float = math.nan
    lambda_star_matched: float = math.nan
    B2: float = math.nan
    fit_residual: float = math.nan
    d: float = math.nan

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in (
            "d", "alpha", "epsilon", "lambda_star", "lambda_star_closed", "lambda_star_matched",
            "B2", "flow_constant", "ell", "fit_residual")}
        out["beta_coeffs"] = list(self.beta_coeffs)
        out["schema_version"] = SCHEMA_VERSION
        return out

    def with_exponent(self, alpha: float) -> "RGResult":
        return replace(self, alpha=alpha, beta_coeffs=(-alpha, alpha / self.lambda_star))


def _flow_constant(lambda_star, alpha, eps, lam0, ell0) -> Optional[float]:
    if not (lam0 > 0 and ell0 > 0):
        return None
    # lambda(ell0) = lambda* ell0^{alpha-eps} / (ell0^alpha + c)
    return lambda_star * ell0 ** (alpha - eps) / lam0 - ell0 ** alpha


def extract_fixed_point(params: K.ThermalParams, spec: I.QuadratureSpec = VERTEX_SPEC, *,
                        window: Tuple[float, float] = FIT_WINDOW, n_points: int = FIT_POINTS,
                        tol: float = FIT_TOL) -> RGResult:
    """alpha and lambda* read off from the friction scaling of the vertex.

    Matching -lam - lam^2 ell^eps / lambda* against the isolated correction
    P1 B2 lam^2 ell^alpha (P1 = -1 from the first-order term) gives
    B2 = c0 / (P1 (1 - 2^-alpha)) and lambda* = 1/B2.
    """
    _check_params(params)
    d = params.d
    eps = 3.0 - d
    fit = fit_friction_scaling(params, window, n_points, spec, tol)
    alpha = fit.alpha
    # D was computed per lam^2; undo the 1/m units of the fit variable
    c0 = fit.coeffs[0] * params.m ** alpha
    P1 = -1.0
    B2 = c0 / ((1 - 2.0 ** -alpha) * P1)
    lstar = 1.0 / B2
    c = _flow_constant(lstar, alpha, eps, params.lam, params.ell)
    return RGResult(alpha=alpha, epsilon=eps, lambda_star=lstar, beta_coeffs=(-alpha, alpha / lstar),
                    flow_constant=c, ell=params.ell, lambda_star_closed=lambda_star_closed(d),
                    lambda_star_matched=lambda_star_matched(d), B2=B2, fit_residual=fit.residual, d=d)


def analytic_rg(d: float, *, lam0: float = 0.0, ell0: float = 0.0) -> RGResult:
    """RGResult with alpha = eps and the closed-form lambda*; no fitting."""
    eps = 3.0 - d
    ls = lambda_star_closed(d)
    return RGResult(alpha=eps, epsilon=eps, lambda_star=ls, beta_coeffs=(-eps, eps / ls),
                    flow_constant=_flow_constant(ls, eps, eps, lam0, ell0), ell=ell0,
                    lambda_star_closed=ls, lambda_star_matched=math.nan, B2=1 / ls, d=d)


def fixed_point_sweep(ds: Iterable[float], params: K.ThermalParams = K.ThermalParams(),
                      spec: I.QuadratureSpec = VERTEX_SPEC) -> List[Tuple[float, float, float, float]]:
    """Rows (d, lambda*_closed, lambda*_fitted, alpha_fitted)."""
    rows = []
    for d in ds:
        rg = extract_fixed_point(params.with_(d=float(d)), spec)
        rows.append((float(d), rg.lambda_star_closed, rg.lambda_star, rg.alpha))
    return rows


# ---------------------------------------------------------------------------
# beta function and flow

def beta_function(lambda_tilde, rg: RGResult):
    """-alpha lt (1 - lt / lambda*)."""
    return -rg.alpha * lambda_tilde * (1 - lambda_tilde / rg.lambda_star)


def _positive(x, name):
    if not np.all(np.asarray(x) > 0):
        raise ParameterError("lengths must be positive", field=name)


def flow_lambda(ell, lambda0: float, ell0: float, rg: RGResult):
    """Closed-form running coupling lambda* ell^{alpha-eps} / (ell^alpha + c)."""
    _positive(ell, "ell")
    _positive(ell0, "ell0")
    a, e = rg.alpha, rg.epsilon
    c = _flow_constant(rg.lambda_star, a, e, lambda0, ell0)
    if c is None:
        return np.zeros_like(np.asarray(ell, dtype=float)) if np.ndim(ell) else 0.0
    ell = np.asarray(ell, dtype=float) if np.ndim(ell) else float(ell)
    return rg.lambda_star * ell ** (a - e) / (ell ** a + c)


def flow_invariant(ell, lam, rg: RGResult):
    """ell^{eps-alpha} lam [1 - ell^eps lam / lambda*]^{-1}, equal to lambda*/c on a trajectory.

    Note the exponent eps - alpha: with alpha != eps only this sign makes the
    combination constant along the closed-form flow; at alpha = eps it is moot.
    """
    a, e = rg.alpha, rg.epsilon
    return ell ** (e - a) * lam / (1 - ell ** e * lam / rg.lambda_star)


def flow_trajectory(ells: Sequence[float], lambda0: float, ell0: float, rg: RGResult):
    """Rows (ell, lambda, lambda_tilde, beta, invariant)."""
    out = []
    for ell in ells:
        lam = flow_lambda(ell, lambda0, ell0, rg)
        lt = ell ** rg.epsilon * lam
        out.append((float(ell), float(lam), float(lt), float(beta_function(lt, rg)),
                    float(flow_invariant(ell, lam, rg))))
    return out


def ode_residual(ell: float, lambda0: float, ell0: float, rg: RGResult, h: float = 1e-3) -> float:
    """-ell d(ell^eps lambda)/d ell - beta, derivative in log ell by 4th-order differences."""
    def lt(t):
        e = math.exp(t)
        return e ** rg.epsilon * flow_lambda(e, lambda0, ell0, rg)
    t = math.log(ell)
    deriv = (-lt(t + 2 * h) + 8 * lt(t + h) - 8 * lt(t - h) + lt(t - 2 * h)) / (12 * h)
    return -deriv - beta_function(lt(t), rg)


# ---------------------------------------------------------------------------
# refined expansions

def default_B(rg: RGResult) -> Tuple[float, float]:
    """B2, B3 from expanding lt / (1 - lt/lambda*), the alpha = eps form of lambda hat."""
    return 1.0 / rg.lambda_star, 1.0 / rg.lambda_star ** 2


def lambda_hat(lam: float, ell: float, rg: RGResult, B: Optional[Tuple[float, float]] = None) -> float:
    B2, B3 = default_B(rg) if B is None else B
    e = rg.epsilon
    return lam + B2 * ell ** e * lam ** 2 + B3 * ell ** (2 * e) * lam ** 3


def refine_expansion(P_coeffs: Sequence[float], rg: RGResult, ell: float, lam: float, *,
                     B: Optional[Tuple[float, float]] = None, fixed_point_mass: Optional[float] = None) -> float:
    """P(lambda hat) = sum_j P_j lambda hat^j.

    With ``fixed_point_mass`` the coupling is replaced by its fixed-point value
    m^eps lambda*, and ``ell``/``lam`` are ignored.
    """
    if fixed_point_mass is not None:
        lh = fixed_point_mass ** rg.epsilon * rg.lambda_star
    else:
        lh = lambda_hat(lam, ell, rg, B)
    return float(sum(p * lh ** j for j, p in enumerate(P_coeffs)))


def combined_coefficients(P_coeffs: Sequence[float], B: Tuple[float, float], ell: float, eps: float):
    """Coefficients of lam^0..lam^3 after inserting lambda hat into P."""
    P = list(P_coeffs) + [0.0] * (4 - len(P_coeffs))
    B2, B3 = B
    le = ell ** eps
    return (P[0], P[1], P[2] + P[1] * B2 * le, P[3] + 2 * P[2] * B2 * le + P[1] * B3 * le * le)


def diagram_a_bracket(q: float, params: K.ThermalParams) -> complex:
    """Zero-momentum diagram-(a) integrand density, per lam^2 and per F/(2pi)^d.

    (1/32) / omega~_q^2 * [1/(i S + gamma_aa) + 1/(i S - gamma_a+a+)] with
    S = 2 omega_q and the two-operator rates at momenta (q, -q).
    """
    om = float(K.omega_k(q, params))
    ot = float(K.omega_tilde(q, params))
    g = float(K.gamma_k(q, params))
    pair = [(om, g), (om, g)]
    g_ann = float(K.gamma_word([], pair, params.beta))
    g_cre = float(K.gamma_word(pair, [], params.beta))
    S = 2 * om
    return (1 / (1j * S + g_ann) + 1 / (1j * S - g_cre)) / (32 * ot * ot)
