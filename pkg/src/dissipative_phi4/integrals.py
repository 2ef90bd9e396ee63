"""Loop integrals: closed forms in general dimension and numerical evaluators.

Conventions: ``S_d = 2 pi^{d/2} / Gamma(d/2)`` is the area of the unit sphere,
``D = d + 1`` the spacetime dimension and ``eps = 3 - d``.

The two-loop sunset integral ``I_k(omega^2)`` is dimensionless and depends only
on ``s = (omega^2 - k^2) / m^2``.  It is evaluated here from a three-parameter
Schwinger representation folded onto the unit simplex; an independent
momentum-space route (deterministic and Monte Carlo) serves as its oracle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import integrate, special

from . import kernels as K
from .errors import NonConvergence, ParameterError, PoleInDimension, ThresholdViolation


@dataclass(frozen=True)
class QuadratureSpec:
    method: str = "adaptive-1d"     # adaptive-1d | tensor-product | monte-carlo
    rel_tol: float = 1e-9
    abs_tol: float = 1e-13
    max_evals: int = 2000           # subinterval limit (1d), node count (tensor), samples (mc)
    cutoff: Optional[float] = None  # upper momentum limit for formally regulated integrands
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("adaptive-1d", "tensor-product", "monte-carlo"):
            raise ParameterError(f"unknown method {self.method!r}", field="method")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ParameterError("tolerances must be positive", field="rel_tol")
        if self.max_evals <= 0:
            raise ParameterError("max_evals must be positive", field="max_evals")
        if self.cutoff is not None and not self.cutoff > 0:
            raise ParameterError("cutoff must be positive", field="cutoff")

    def with_(self, **kw) -> "QuadratureSpec":
        return replace(self, **kw)


DEFAULT_1D = QuadratureSpec()
DEFAULT_3D = QuadratureSpec(method="tensor-product", rel_tol=1e-6, max_evals=48)


@dataclass(frozen=True)
class IntegralResult:
    value: complex
    error: float
    evaluations: int
    converged: bool = True
    meta: dict = field(default_factory=dict, compare=False)

    def checked(self) -> complex:
        """Value, refusing unconverged results."""
        if not self.converged:
            raise NonConvergence(f"integral did not converge (value={self.value}, error={self.error})")
        return self.value

    def __float__(self):
        return float(np.real(self.checked()))


def sphere_area(d: float) -> float:
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


# ---------------------------------------------------------------------------
# one-dimensional radial integrals

def radial_reduce(f: Callable[[float], float], d: float, spec: QuadratureSpec = DEFAULT_1D,
                  *, scale: float = 1.0, points: Tuple[float, ...] = ()) -> IntegralResult:
    """S_d * int_0^inf f(k) k^{d-1} dk.

    ``scale`` is a characteristic momentum used to split the half line; extra
    breakpoints may be passed in ``points``.
    """
    if not d > 0:
        raise ParameterError("dimension must be positive", field="d")
    upper = math.inf if spec.cutoff is None else spec.cutoff
    g = lambda k: f(k) * k ** (d - 1)
    edges = sorted({0.0, *(p for p in (scale, *points) if 0 < p < upper)})
    edges.append(upper)
    total, err, nev, ok = 0.0, 0.0, 0, True
    for a, b in zip(edges[:-1], edges[1:]):
        val, e, info = integrate.quad(g, a, b, epsabs=spec.abs_tol, epsrel=spec.rel_tol,
                                      limit=spec.max_evals, full_output=1)[:3]
        total += val
        err += e
        nev += info["neval"]
        # scipy reports a returned message tuple only when something went wrong
        if e > max(spec.abs_tol, spec.rel_tol * abs(val)) * 10 and e > 1e-300:
            ok = False
    Sd = sphere_area(d)
    return IntegralResult(Sd * total, Sd * err, nev, ok)


def radial_log(f: Callable[[np.ndarray], np.ndarray], d: float, *, k_lo: float = 1e-12,
               k_hi: float = 1e12, breaks: Tuple[float, ...] = (), spec: QuadratureSpec = DEFAULT_1D
               ) -> IntegralResult:
    """Like :func:`radial_reduce` but integrated in log k, for wide-scale integrands."""
    g = lambda t: f(math.exp(t)) * math.exp(d * t)
    lo, hi = math.log(k_lo), math.log(k_hi)
    pts = sorted(math.log(b) for b in breaks if k_lo < b < k_hi)
    edges = [lo, *pts, hi]
    total, err, nev = 0.0, 0.0, 0
    for a, b in zip(edges[:-1], edges[1:]):
        val, e, info = integrate.quad(g, a, b, epsabs=0.0, epsrel=spec.rel_tol,
                                      limit=spec.max_evals, full_output=1)[:3]
        total += val
        err += e
        nev += info["neval"]
    Sd = sphere_area(d)
    ok = err <= max(spec.abs_tol, 10 * spec.rel_tol * abs(total))
    return IntegralResult(Sd * total, Sd * err, nev, ok)


# ---------------------------------------------------------------------------
# closed forms in general dimension

def _eps(d: float) -> float:
    return 3.0 - d


def _pole_guard(eps: float, bad: Tuple[float, ...], name: str, tol: float = 1e-12) -> None:
    for b in bad:
        if abs(eps - b) < tol:
            raise PoleInDimension(f"{name} has a pole at eps = {b} (d = {3 - b})")


def I1_closed(d: float) -> float:
    """m^{1-d} (2pi)^{-d} int d^dk / (2 omega_k), dimensionally continued."""
    e = _eps(d)
    _pole_guard(e, (0.0, 2.0), "I1")
    return -(2 * math.sqrt(math.pi)) ** e / (e * (2 - e)) * math.gamma(1 + e / 2) / (4 * math.pi ** 2)


def I1p_closed(d: float) -> float:
    """m^{3-d} (2pi)^{-d} int d^dk / (2 omega_k^3)."""
    e = _eps(d)
    _pole_guard(e, (0.0,), "I1'")
    return (2 * math.sqrt(math.pi)) ** e / e * math.gamma(1 + e / 2) / (4 * math.pi ** 2)


def I1pp_closed(d: float) -> float:
    """m^{3-d} (2pi)^{-d} int d^dk / (2 omega_k^2 (omega_k + m))."""
    e = _eps(d)
    _pole_guard(e, (0.0,), "I1''")
    if abs(e - 1.0) < 1e-5:
        # 0/0 at d = 2; the radial integral there is int_1^inf dw / (4 pi w (w + 1)) = ln 2 / (4 pi)
        h = 1e-3
        slope = (_I1pp_formula(1 + h) - _I1pp_formula(1 - h)) / (2 * h)
        return math.log(2.0) / (4 * math.pi) + slope * (e - 1.0)
    return _I1pp_formula(e)


def _I1pp_formula(e: float) -> float:
    bracket = math.gamma(1 + e / 2) - e / 2 * math.sqrt(math.pi) * math.gamma(0.5 + e / 2)
    return (2 * math.sqrt(math.pi)) ** e / (e * (1 - e)) * bracket / (4 * math.pi ** 2)


def I1p_quad(d: float, spec: QuadratureSpec = DEFAULT_1D) -> IntegralResult:
    r = radial_reduce(lambda k: 0.5 / (k * k + 1.0) ** 1.5, d, spec)
    return replace(r, value=r.value / (2 * math.pi) ** d, error=r.error / (2 * math.pi) ** d)


def I1pp_quad(d: float, spec: QuadratureSpec = DEFAULT_1D) -> IntegralResult:
    def f(k):
        om = math.sqrt(k * k + 1.0)
        return 0.5 / (om * om * (om + 1.0))
    r = radial_reduce(f, d, spec)
    return replace(r, value=r.value / (2 * math.pi) ** d, error=r.error / (2 * math.pi) ** d)


def reflection_sin(x: float) -> Tuple[float, float]:
    """(Gamma(1-x) Gamma(x), pi / sin(pi x))."""
    return math.gamma(1 - x) * math.gamma(x), math.pi / math.sin(math.pi * x)


def reflection_cos(x: float) -> Tuple[float, float]:
    """(Gamma(1/2-x) Gamma(1/2+x), pi / cos(pi x))."""
    return math.gamma(0.5 - x) * math.gamma(0.5 + x), math.pi / math.cos(math.pi * x)


def friction_integral(d: float) -> float:
    """(2pi)^{-d} int d^dq q / (1 + q^4) in closed form."""
    if not 0 < d < 3:
        if abs(d - 3) < 1e-12 or d >= 3:
            raise PoleInDimension("friction integral diverges for d >= 3")
        raise ParameterError("need 0 < d < 3", field="d")
    return sphere_area(d) * (math.pi / 4) / math.sin((d + 1) * math.pi / 4) / (2 * math.pi) ** d


def friction_integral_quad(d: float, spec: QuadratureSpec = DEFAULT_1D) -> IntegralResult:
    r = radial_reduce(lambda q: q / (1.0 + q ** 4), d, spec)
    c = (2 * math.pi) ** -d
    return replace(r, value=r.value * c, error=r.error * c)


def J_integral(params: K.ThermalParams, spec: QuadratureSpec = DEFAULT_1D) -> IntegralResult:
    """Thermal tadpole (2pi)^{-d} int d^dq / (2 omega~_q (e^{beta omega_q} - 1))."""
    beta, m = params.beta, params.m

    def f(q):
        om = float(K.omega_k(q, params))
        x = beta * om
        if x > 700:
            return 0.0
        return 1.0 / (2.0 * float(K.omega_tilde(q, params)) * math.expm1(x))

    # the integrand lives on q ~ sqrt(m / beta) at low temperature
    sc = math.sqrt(max(m, 1e-300) / beta) if m > 0 else 1.0 / beta
    r = radial_reduce(f, params.d, spec, scale=sc, points=(10 * sc, 1.0 / beta, 40.0 / beta))
    c = (2 * math.pi) ** -params.d
    return replace(r, value=r.value * c, error=r.error * c)


# ---------------------------------------------------------------------------
# Schwinger-parameter representation of the sunset integral

@lru_cache(maxsize=64)
def _jacobi01(n: int, a: float) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes/weights for int_0^1 x^a g(x) dx."""
    t, wt = special.roots_jacobi(n, 0.0, a)
    return (1 + t) / 2, wt * 2.0 ** (-a - 1)


@lru_cache(maxsize=64)
def _legendre(n: int, lo: float, hi: float) -> Tuple[np.ndarray, np.ndarray]:
    t, wt = np.polynomial.legendre.leggauss(n)
    return lo + (hi - lo) * (1 + t) / 2, wt * (hi - lo) / 2


def _simplex_integral(D: float, g: Callable[[np.ndarray, np.ndarray], np.ndarray], n: int,
                      extra_rho: int = 0) -> float:
    """6 * int over the ordered corner of the simplex of rho^{1-D/2+extra} b^{-D/2} g.

    The corner is y1 >= y3 >= y2 with y2 = rho*tau, y3 = rho*(1-tau), y1 = 1-rho,
    so tau in [0, 1/2] and rho in [0, 1/(2-tau)].  ``g`` receives (rho, tau) and
    returns the smooth remainder of the integrand.
    """
    a = 1.0 - D / 2 + extra_rho
    x, wx = _jacobi01(n, a)
    tau, wt = _legendre(n, 0.0, 0.5)
    R = 1.0 / (2.0 - tau)
    rho = R[:, None] * x[None, :]
    tt = np.broadcast_to(tau[:, None], rho.shape)
    b = (1.0 - rho) + rho * tt * (1.0 - tt)
    vals = b ** (-D / 2) * g(rho, tt)
    inner = vals @ wx
    return 6.0 * float(np.sum(wt * R ** (a + 1) * inner))


def _v_over_u(rho, tau):
    b = (1.0 - rho) + rho * tau * (1.0 - tau)
    return (1.0 - rho) * rho * tau * (1.0 - tau) / b


def _gamma_expm1(delta: float, L: np.ndarray) -> np.ndarray:
    """Gamma(delta) * (exp(-delta*L) - 1), finite as delta -> 0 (limit -L)."""
    if delta == 0.0:
        return -L
    return math.gamma(1.0 + delta) * np.expm1(-delta * L) / delta


def _check_dim(d: float) -> None:
    if not 1.0 < d < 3.0:
        raise ParameterError("sunset integral needs 1 < d < 3", field="d")


def _check_threshold(s: float) -> None:
    # max of v/u on the simplex is 1/9 (at the centroid)
    if s >= 9.0:
        raise ThresholdViolation(f"(omega^2-k^2)/m^2 = {s} is at or above the 3-particle threshold 9")


def _s_of(omega2: float, k: float, m: float) -> float:
    return (omega2 - k * k) / (m * m)


def sunset_schwinger(s: float, d: float, *, subtracted: bool = False, n: int = 48) -> IntegralResult:
    """I(s), or I(s) - I(0) when ``subtracted`` (finite also at d = 2)."""
    _check_dim(d)
    _check_threshold(s)
    D = d + 1.0
    pref = (4 * math.pi) ** -D
    delta = 3.0 - D
    if not subtracted and abs(delta) < 1e-12:
        raise PoleInDimension("I(s) has a pole at d = 2; use the subtracted form")

    def run(nn):
        if subtracted:
            g = lambda r, t: _gamma_expm1(delta, np.log1p(-s * _v_over_u(r, t)))
        else:
            g = lambda r, t: math.gamma(delta) * (1.0 - s * _v_over_u(r, t)) ** (-delta)
        return pref * _simplex_integral(D, g, nn)

    hi, lo = run(n), run(n // 2)
    err = abs(hi - lo)
    ok = err <= 1e-8 * max(abs(hi), 1e-300) + 1e-14
    return IntegralResult(hi, err, 3 * n * n // 2, ok, {"s": s, "d": d, "subtracted": subtracted})


def sunset_slope_schwinger(s: float, d: float, *, n: int = 48) -> IntegralResult:
    """dI/ds from the differentiated Schwinger form."""
    _check_dim(d)
    _check_threshold(s)
    D = d + 1.0
    pref = (4 * math.pi) ** -D * math.gamma(4.0 - D)

    def g(r, t):
        # v/u carries one power of rho; it was moved into the Jacobi weight
        vu = _v_over_u(r, t)
        return vu / r * (1.0 - s * vu) ** (D - 4.0)

    hi = pref * _simplex_integral(D, g, n, extra_rho=1)
    lo = pref * _simplex_integral(D, g, n // 2, extra_rho=1)
    err = abs(hi - lo)
    return IntegralResult(hi, err, 3 * n * n // 2, err <= 1e-8 * abs(hi) + 1e-14)


def I_k_omega2(omega2: float, k: float, d: float, spec: QuadratureSpec = DEFAULT_3D, *,
               m: float = 1.0, subtracted: bool = False) -> IntegralResult:
    """Dimensionless sunset integral I_k(omega^2) from Schwinger parameters."""
    if m <= 0:
        raise ParameterError("mass must be positive", field="m")
    n = max(16, int(spec.max_evals))
    return sunset_schwinger(_s_of(omega2, k, m), d, subtracted=subtracted, n=n)


def I3_closed_simplex(d: float, n: int = 48) -> float:
    """-m^2 dI_0/d omega^2 at 0 from the differentiated Schwinger form."""
    return -float(np.real(sunset_slope_schwinger(0.0, d, n=n).value))


def _fd_slope(f: Callable[[float], float], h: float) -> Tuple[float, float]:
    """Central difference with two Richardson levels; returns (value, error)."""
    D = [[(f(hh) - f(-hh)) / (2 * hh) for hh in (h, h / 2, h / 4)]]
    for lvl in (1, 2):
        prev = D[-1]
        fac = 4 ** lvl
        D.append([(fac * prev[i + 1] - prev[i]) / (fac - 1) for i in range(len(prev) - 1)])
    best = D[2][0]
    return best, abs(best - D[1][1])


def I2_I3(d: float, spec: QuadratureSpec = DEFAULT_3D) -> Tuple[float, float]:
    """(I2, I3); I2 = I_0(0) (a pole at d = 2), I3 from finite differences.

    Raises PoleInDimension for I2 at d = 2; use :func:`I3_fd` alone there.
    """
    _check_dim(d)
    I2 = float(np.real(sunset_schwinger(0.0, d).checked()))
    return I2, I3_fd(d, spec)[0]


def I3_fd(d: float, spec: QuadratureSpec = DEFAULT_3D) -> Tuple[float, float]:
    """I3 = -dI/ds at s = 0 by Richardson-extrapolated central differences."""
    _check_dim(d)
    h = 1e-2 * spec.rel_tol ** (1.0 / 3.0) * 100  # ~0.01 at the 3D default tolerance
    n = max(24, int(spec.max_evals))
    f = lambda s: float(np.real(sunset_schwinger(s, d, subtracted=True, n=n).value))
    val, err = _fd_slope(f, h)
    return -val, err


# ---------------------------------------------------------------------------
# momentum-space two-loop integrals

@lru_cache(maxsize=32)
def _angular_rule(d: float, n: int):
    """Jacobi rule for int_0^1 x^a g(x) dx with a = (d-3)/2."""
    return _jacobi01(n, (d - 3.0) / 2.0)


def _sphere_pair(d: float) -> float:
    # S_d * S_{d-1}; the second factor degenerates to 2 points at d = 1
    if abs(d - 1.0) < 1e-14:
        return sphere_area(1.0) * 2.0
    return sphere_area(d) * sphere_area(d - 1.0)


def triple_momentum(F: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray], d: float, *,
                    k_lo: float = 1e-9, k_hi: float = 1e7, panel: float = 1.0, n_gl: int = 10,
                    n_ang: int = 20, resolution_check: bool = True) -> IntegralResult:
    """(2pi)^{-2d} int d^dk1 d^dk2 F(|k1|, |k2|, |k1+k2|) for F symmetric in its arguments.

    The integration is restricted to configurations where the third momentum is
    the largest (factor 3) and |k1| >= |k2| (factor 2).  Radial variables are
    logarithmic; the angle uses a Jacobi rule absorbing (1-c)^{(d-3)/2}.
    """
    if not 1.0 <= d < 3.0:
        raise ParameterError("triple_momentum needs 1 <= d < 3", field="d")

    def run(ngl, nang):
        s_max = 2.0 * (math.log(k_hi) - math.log(k_lo))
        sig_lo, sig_hi = 2.0 * math.log(k_lo), 2.0 * math.log(k_hi)
        s_nodes, s_w = _panel_rule(0.0, s_max, panel, ngl)
        es = np.exp(-s_nodes)                   # k2/k1
        c0 = -0.5 * es
        if abs(d - 1.0) < 1e-14:
            xa, wa = np.array([0.0]), np.array([1.0])
            alpha = 0.0
        else:
            xa, wa = _angular_rule(d, nang)
            alpha = (d - 3.0) / 2.0
        one_m_c0 = 1.0 - c0                        # (S,)
        cc = 1.0 - one_m_c0[:, None] * xa[None, :]  # (S, A)
        if abs(d - 1.0) < 1e-14:
            ang_w = np.ones_like(cc) * 0.5        # half of the 2-point "sphere" sits at c = 1
        else:
            ang_w = one_m_c0[:, None] ** (alpha + 1) * (1.0 + cc) ** alpha * wa[None, :]
        total = 0.0
        sig_nodes, sig_w = _panel_rule(sig_lo, sig_hi, panel, ngl)
        for sg, swt in zip(sig_nodes, sig_w):
            k1 = np.exp((sg + s_nodes) / 2.0)      # (S,)
            k2 = np.exp((sg - s_nodes) / 2.0)
            K1 = k1[:, None]
            K2 = k2[:, None]
            k3 = np.sqrt(np.maximum(K1 * K1 + K2 * K2 + 2.0 * K1 * K2 * cc, 0.0))
            vals = F(np.broadcast_to(K1, k3.shape), np.broadcast_to(K2, k3.shape), k3)
            inner = np.sum(vals * ang_w, axis=1)
            total += swt * math.exp(d * sg) * np.dot(s_w, inner)
        return 6.0 * 0.5 * _sphere_pair(d) * total / (2 * math.pi) ** (2 * d)

    hi = run(n_gl, n_ang)
    if not resolution_check:
        return IntegralResult(hi, float("nan"), 0, True)
    lo = run(max(4, n_gl - 4), max(6, n_ang - 8))
    err = abs(hi - lo)
    return IntegralResult(hi, err, 0, bool(err <= 1e-5 * abs(hi) + 1e-300),
                          {"k_lo": k_lo, "k_hi": k_hi})


@lru_cache(maxsize=32)
def _panel_rule(lo: float, hi: float, width: float, n: int) -> Tuple[np.ndarray, np.ndarray]:
    npan = max(1, int(math.ceil((hi - lo) / width)))
    edges = np.linspace(lo, hi, npan + 1)
    t, wt = np.polynomial.legendre.leggauss(n)
    h = np.diff(edges)
    nodes = (edges[:-1, None] + h[:, None] * (1 + t[None, :]) / 2).ravel()
    weights = (h[:, None] * wt[None, :] / 2).ravel()
    return nodes, weights


def sunset_momentum(omega2: float, d: float, *, m: float = 1.0, subtracted: bool = False,
                    **kw) -> IntegralResult:
    """I_0(omega^2) from the real-frequency momentum form (external k = 0).

    With ``subtracted`` the value at omega = 0 is removed under the integral.
    """
    if omega2 >= 9 * m * m:
        raise ThresholdViolation("momentum form is only used below threshold")

    def F(k1, k2, k3):
        o1, o2, o3 = (np.sqrt(k * k + m * m) for k in (k1, k2, k3))
        S = o1 + o2 + o3
        if subtracted:
            return omega2 / (4.0 * o1 * o2 * o3 * S * (S * S - omega2))
        return S / (4.0 * o1 * o2 * o3 * (S * S - omega2))

    r = triple_momentum(F, d, **kw)
    sc = m ** (4 - 2 * d)
    return replace(r, value=r.value * sc, error=r.error * sc)


def sunset_momentum_slope(d: float, *, m: float = 1.0, **kw) -> IntegralResult:
    """-m^2 dI_0/d omega^2 at omega = 0, i.e. I3, from the momentum form."""
    def F(k1, k2, k3):
        o1, o2, o3 = (np.sqrt(k * k + m * m) for k in (k1, k2, k3))
        S = o1 + o2 + o3
        return 1.0 / (4.0 * o1 * o2 * o3 * S ** 3)

    r = triple_momentum(F, d, **kw)
    sc = -m ** (4 - 2 * d) * m * m
    return replace(r, value=r.value * sc, error=abs(r.error * sc))


def sunset_monte_carlo(omega2: float, d: float, spec: QuadratureSpec, *, m: float = 1.0,
                       radial_tail: float = 1.0, subtracted: bool = False) -> IntegralResult:
    """Seeded Monte Carlo estimate of the momentum form of I_0(omega^2), 1 < d < 3.

    (k1, k2) are sampled in polar form (Lomax radius, uniform angle on the
    quarter circle); the relative cosine c = 2B - 1 with B ~ Beta((d-1)/2,(d-1)/2)
    absorbs the angular weight exactly.  Returns the mean and its standard error.
    """
    if not 1.0 < d < 3.0:
        raise ParameterError("monte-carlo sunset needs 1 < d < 3", field="d")
    if omega2 >= 9 * m * m:
        raise ThresholdViolation("below threshold only")
    rng = np.random.default_rng(spec.seed)
    n = int(spec.max_evals)
    a = radial_tail
    R = m * rng.pareto(a, n)                   # Lomax: density a/m (1+R/m)^{-a-1}
    phi = rng.uniform(0.0, math.pi / 2, n)
    h = (d - 1.0) / 2.0
    c = 2.0 * rng.beta(h, h, n) - 1.0
    k1, k2 = R * np.cos(phi), R * np.sin(phi)
    o1 = np.sqrt(k1 * k1 + m * m)
    o2 = np.sqrt(k2 * k2 + m * m)
    o3 = np.sqrt(k1 * k1 + k2 * k2 + 2 * k1 * k2 * c + m * m)
    S = o1 + o2 + o3
    if subtracted:
        F = omega2 / (4.0 * o1 * o2 * o3 * S * (S * S - omega2))
    else:
        F = S / (4.0 * o1 * o2 * o3 * (S * S - omega2))
    dens_R = a / m * (1.0 + R / m) ** (-a - 1)
    ang_norm = 2.0 ** (d - 2) * special.beta(h, h)   # int (1-c^2)^{(d-3)/2} dc
    wgt = (k1 * k2) ** (d - 1) * F * R / (dens_R * (2.0 / math.pi)) * ang_norm
    pref = sphere_area(d) * sphere_area(d - 1.0) / (2 * math.pi) ** (2 * d) * m ** (4 - 2 * d)
    mean = pref * float(np.mean(wgt))
    se = pref * float(np.std(wgt, ddof=1)) / math.sqrt(n)
    return IntegralResult(mean, se, n, True, {"seed": spec.seed, "samples": n})


def _external_angles(d: float, n_phi: int) -> Tuple[np.ndarray, np.ndarray]:
    if d == 1.0:
        return np.array([0.0, math.pi]), np.array([1.0, 1.0])
    phi = 2 * math.pi * np.arange(n_phi) / n_phi
    return phi, np.full(n_phi, 2 * math.pi / n_phi)


def triple_momentum_external(F: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray],
                             d: float, k_ext: float, *, minus: Optional[Tuple[Callable, float]] = None,
                             k_lo: Optional[float] = None, k_hi: float = 1e5, panel: Optional[float] = None,
                             n_gl: int = 10, n_phi: int = 48, power: int = 8,
                             resolution_check: bool = True) -> IntegralResult:
    """(2pi)^{-2d} int d^dk1 d^dk2 F(|k1|, |k2|, |k1+k2+k|) at integer d in {1, 2}.

    Explicit coordinates: log-radial Gauss panels and a periodic trapezoid in
    the polar angles (two signs at d = 1).  Symmetry of F is used through the
    smooth partition of unity k3^p / (k1^p + k2^p + k3^p) (a factor 3), which
    suppresses the near-singular region where the third momentum is small.
    ``minus=(G, k0)`` subtracts the G integrand at external momentum k0 node by node.
    """
    if d not in (1.0, 2.0):
        raise ParameterError("external-momentum integrator supports d = 1 or 2", field="d")
    if k_ext < 0:
        raise ParameterError("external momentum must be >= 0", field="k")
    # at d = 1 nothing averages the partition weight radially, so panels are finer
    k_lo = (1e-10 if d == 1.0 else 1e-5) if k_lo is None else k_lo
    panel = (0.5 if d == 1.0 else 1.0) if panel is None else panel
    half = power // 2
    terms = [(F, k_ext, 1.0)] + ([] if minus is None else [(minus[0], minus[1], -1.0)])

    def run(ngl, nphi):
        t, wt = _panel_rule(math.log(k_lo), math.log(k_hi), panel, ngl)
        r = np.exp(t)
        wr = wt * r ** d
        phi, wphi = _external_angles(d, nphi)
        c, s = np.cos(phi), np.sin(phi)
        W2 = wphi[:, None] * wphi[None, :]
        total = 0.0
        for i, r1 in enumerate(r):
            r2 = r[: i + 1]
            mult = np.full(i + 1, 2.0)
            mult[-1] = 1.0                      # k1 <-> k2 symmetry on a shared grid
            x12 = r1 * c[None, :, None] + r2[:, None, None] * c[None, None, :]
            y12 = r1 * s[None, :, None] + r2[:, None, None] * s[None, None, :]
            q1, q2 = r1 * r1, (r2 * r2)[:, None, None]
            K1 = np.full(x12.shape, r1)
            K2 = np.broadcast_to(r2[:, None, None], x12.shape)
            acc = 0.0
            for G, kk, sign in terms:
                q3 = (x12 + kk) ** 2 + y12 ** 2
                top = max(q1, float(r2[-1] ** 2))
                a3 = (q3 / top) ** half
                chi = a3 / ((q1 / top) ** half + (q2 / top) ** half + a3)
                acc = acc + sign * G(K1, K2, np.sqrt(q3)) * chi
            inner = np.einsum("jab,ab->j", acc, W2)
            total += wr[i] * np.dot(mult * wr[: i + 1], inner)
        return 3.0 * total / (2 * math.pi) ** (2 * d)

    hi = run(n_gl, n_phi)
    if not resolution_check:
        return IntegralResult(hi, float("nan"), 0, True)
    lo = run(max(4, n_gl - 3), max(8, n_phi - 12) if d == 2.0 else n_phi)
    err = abs(hi - lo)
    return IntegralResult(hi, err, 0, bool(err <= 1e-5 * abs(hi) + 1e-300),
                          {"k_lo": k_lo, "k_hi": k_hi, "k_ext": k_ext})


def sunset_momentum_external(omega2: float, k: float, d: float, *, m: float = 1.0,
                             subtracted: bool = True, **kw) -> IntegralResult:
    """I_k(omega^2) by explicit momentum integration with the external wave vector.

    With ``subtracted`` the k = 0, omega = 0 integrand is removed node by node,
    which is what keeps d = 2 finite.  This route is not manifestly Lorentz
    invariant, so it serves as the check on the dependence through omega^2 - k^2.
    """
    if omega2 - k * k >= 9 * m * m:
        raise ThresholdViolation("momentum form is only used below threshold")

    def sunset(w2):
        def G(k1, k2, k3):
            o1, o2, o3 = (np.sqrt(x * x + m * m) for x in (k1, k2, k3))
            S = o1 + o2 + o3
            return S / (4.0 * o1 * o2 * o3 * (S * S - w2))
        return G

    minus = (sunset(0.0), 0.0) if subtracted else None
    r = triple_momentum_external(sunset(omega2), d, k, minus=minus, **kw)
    sc = m ** (4 - 2 * d)
    return replace(r, value=r.value * sc, error=r.error * sc)
