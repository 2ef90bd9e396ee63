"""Scalar kernels of the dissipative free theory.

Dispersion, friction rates, the thermal weights ``w`` and ``W``, the rational
kernel ``r`` with its expanded variants, triplet damping and the smoothing
length.  Everything here is a pure function of its arguments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .errors import ParameterError, PoleProximity

# |beta*omega| below this uses the Taylor branch of w
W_SERIES_SWITCH = 1e-4
# Taylor coefficients of (1 - e^-x)/x = sum_n (-x)^n/(n+1)!
_W_TAYLOR = tuple((-1) ** n / math.factorial(n + 1) for n in range(6))


@dataclass(frozen=True)
class ThermalParams:
    d: float = 2.0
    m: float = 1.0
    lam: float = 0.0
    beta: float = 1.0
    gamma: float = 0.0
    # None means the regularized frequency equals the plain one
    omega_tilde: Optional[Callable[[float], float]] = None

    def __post_init__(self):
        if not self.beta > 0:
            raise ParameterError("beta must be positive", field="beta")
        if self.gamma < 0:
            raise ParameterError("gamma must be non-negative", field="gamma")
        if self.m < 0:
            raise ParameterError("mass must be non-negative", field="m")
        if not self.d > 0:
            raise ParameterError("dimension must be positive", field="d")

    @property
    def regularization(self) -> str:
        return "none" if self.omega_tilde is None else "profile"

    @property
    def ell(self) -> float:
        return smoothing_length(self)

    def with_(self, **kw) -> "ThermalParams":
        return replace(self, **kw)

    def require_subcritical(self) -> None:
        if not 0 < self.d < 3:
            raise ParameterError("operation needs 0 < d < 3", field="d")


def omega_k(k, params: ThermalParams):
    """Relativistic dispersion sqrt(k^2 + m^2)."""
    k = np.asarray(k, dtype=float) if not np.isscalar(k) else float(k)
    if np.any(np.asarray(k) < 0):
        raise ParameterError("wave-vector magnitude must be >= 0", field="k")
    return np.sqrt(k * k + params.m * params.m)


def omega_tilde(k, params: ThermalParams):
    if params.omega_tilde is None:
        return omega_k(k, params)
    return np.vectorize(params.omega_tilde, otypes=[float])(k) if not np.isscalar(k) \
        else float(params.omega_tilde(k))


def gamma_k(k, params: ThermalParams):
    """Friction rate gamma |k|^4."""
    k = np.asarray(k, dtype=float) if not np.isscalar(k) else float(k)
    return params.gamma * k ** 4


def w(omega, beta: float):
    """(1 - exp(-beta*omega)) / (beta*omega), smooth through omega = 0."""
    if not beta > 0:
        raise ParameterError("beta must be positive", field="beta")
    x = beta * np.asarray(omega, dtype=float)
    small = np.abs(x) < W_SERIES_SWITCH
    safe = np.where(small, 1.0, x)
    direct = -np.expm1(-safe) / safe
    series = np.zeros_like(x)
    for c in reversed(_W_TAYLOR):
        series = series * x + c
    out = np.where(small, series, direct)
    return float(out) if out.ndim == 0 else out


def W(omega, omega_p, beta: float):
    """w(omega) w(omega') / w(omega + omega')."""
    omega = np.asarray(omega, dtype=float)
    omega_p = np.asarray(omega_p, dtype=float)
    out = np.asarray(w(omega, beta) * w(omega_p, beta) / w(omega + omega_p, beta))
    return float(out) if out.ndim == 0 else out


def bose(omega, beta: float):
    """Occupation 1/(exp(beta*omega) - 1)."""
    out = 1.0 / np.expm1(beta * np.asarray(omega, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def _pole_tol(omega, omega_bar, tol, m):
    if tol is not None:
        return tol
    return 1e-8 * max(abs(omega), abs(omega_bar), m)


def r_kernel(omega: float, omega_bar: float, gamma_bar: float, form: str = "exact",
             *, m: float = 1.0, tol: Optional[float] = None, n_terms: Optional[int] = None) -> complex:
    """Rational kernel in the frequency of a three-particle intermediate state.

    ``form`` is one of exact, series, symmetric, resummed, frictionless.  The
    symmetric form is evaluated through its resummed closed form; ``series``
    truncates the plain power series at ``n_terms`` (default 40).
    """
    t = _pole_tol(omega, omega_bar, tol, m)
    if form == "exact":
        if abs(gamma_bar) < t and min(abs(omega + omega_bar), abs(omega - omega_bar)) < t:
            raise PoleProximity(f"exact kernel at omega={omega}, omega_bar={omega_bar}")
        return 1.0 / (omega + omega_bar - 1j * gamma_bar) - 1.0 / (omega - omega_bar - 1j * gamma_bar)
    if form == "series":
        n_terms = 40 if n_terms is None else n_terms
        zp = omega_bar + 1j * gamma_bar
        zm = omega_bar - 1j * gamma_bar
        if abs(omega) >= min(abs(zp), abs(zm)):
            raise PoleProximity("series kernel outside its radius of convergence")
        total = 0j
        for n in range(n_terms):
            total += (1.0 / zp ** (n + 1) + (-1) ** n / zm ** (n + 1)) * omega ** n
        return total
    if form in ("symmetric", "resummed", "frictionless"):
        # the resummed forms carry no i*gamma_bar, so the pole is not regulated
        if min(abs(omega - omega_bar), abs(omega + omega_bar)) < t:
            raise PoleProximity(f"{form} kernel at |omega| = omega_bar")
        base = 2.0 * omega_bar / (omega_bar ** 2 - omega ** 2)
        if form == "frictionless":
            return complex(base)
        g2 = gamma_bar * gamma_bar
        return complex(base - 2.0 * g2 / (omega_bar * (omega_bar ** 2 + g2)))
    raise ValueError(f"unknown kernel form {form!r}")


def r_symmetric_series(omega: float, omega_bar: float, gamma_bar: float, n_terms: int = 60) -> float:
    """Truncated even series: 2ob/(ob^2+g^2) + 2 sum_{n>=1} omega^{2n}/ob^{2n+1}."""
    s = 2.0 * omega_bar / (omega_bar ** 2 + gamma_bar ** 2)
    x = (omega / omega_bar) ** 2
    term = 1.0
    for _ in range(n_terms):
        term *= x
        s += 2.0 * term / omega_bar
    return s


def gamma_triplet(k1, k2, k3, params: ThermalParams):
    """Damping rate of a three-particle state."""
    o1, o2, o3 = (omega_k(k, params) for k in (k1, k2, k3))
    g1, g2, g3 = (gamma_k(k, params) for k in (k1, k2, k3))
    s = o1 + o2 + o3
    return s / params.beta * (g1 / (o1 * (o2 + o3)) + g2 / (o2 * (o1 + o3)) + g3 / (o3 * (o1 + o2)))


def smoothing_length(params: ThermalParams) -> float:
    return math.sqrt(2.0 * params.gamma / params.beta)


def gamma_primes(q, params: ThermalParams):
    """(gamma'_q, gamma''_q) appearing in the zero-momentum vertex."""
    if params.m <= 0:
        raise ParameterError("gamma_primes needs m > 0", field="m")
    om = omega_k(q, params)
    num = 2.0 * params.gamma * np.asarray(q, dtype=float) ** 4 / params.beta
    g1 = num / om ** 2
    g2 = num / (om * (om + 2.0 * params.m))
    if np.ndim(g1) == 0:
        return float(g1), float(g2)
    return g1, g2


def r_kernel_vec(omega: float, omega_bar, gamma_bar, form: str = "exact"):
    """Array version of :func:`r_kernel` without pole checks (for quadrature nodes).

    The symmetric/resummed forms are written as 2ob/(ob^2+g^2) + 2w^2/(ob(ob^2-w^2)),
    which is algebraically identical and avoids cancellation when g >> ob.
    """
    ob = np.asarray(omega_bar, dtype=float)
    gb = np.asarray(gamma_bar, dtype=float)
    if form == "exact":
        return 1.0 / (omega + ob - 1j * gb) - 1.0 / (omega - ob - 1j * gb)
    if form == "frictionless":
        return 2.0 * ob / (ob * ob - omega * omega) + 0j
    if form in ("symmetric", "resummed"):
        w2 = omega * omega
        return 2.0 * ob / (ob * ob + gb * gb) + 2.0 * w2 / (ob * (ob * ob - w2)) + 0j
    raise ValueError(f"unknown kernel form {form!r}")


def log_w(omega, beta: float):
    """log w(omega), finite for large |beta*omega| of either sign."""
    x = beta * np.asarray(omega, dtype=float)
    a = np.abs(x)
    small = a < W_SERIES_SWITCH
    safe = np.where(small, 1.0, a)
    direct = np.where(x < 0, safe, 0.0) + np.log(-np.expm1(-safe)) - np.log(safe)
    series = np.zeros_like(x)
    for c in reversed(_W_TAYLOR):
        series = series * x + c
    out = np.where(small, np.log(np.where(small, series, 1.0)), direct)
    return float(out) if out.ndim == 0 else out


def W_stable(omega, omega_p, beta: float):
    """Same as :func:`W`, computed in the log domain; saturates at 1e250 instead of overflowing."""
    omega = np.asarray(omega, dtype=float)
    omega_p = np.asarray(omega_p, dtype=float)
    lg = log_w(omega, beta) + log_w(omega_p, beta) - log_w(omega + omega_p, beta)
    out = np.exp(np.minimum(lg, _LOG_W_CAP))
    return float(out) if np.ndim(out) == 0 else out


_LOG_W_CAP = math.log(1e250)


def gamma_word(creators, annihilators, beta: float):
    """Damping rate of a normal-ordered word from per-operator (omega, gamma) pairs.

    ``creators`` and ``annihilators`` are sequences of (omega, gamma) with array
    entries of a common shape; this is the vectorized counterpart of
    ``op_algebra.gamma_A`` for use at quadrature nodes.  Mixed words carry
    factors that grow like exp(beta*omega) at low temperature; those saturate
    (they only ever appear in denominators), and gamma = 0 operators contribute 0.
    """
    wa = sum(o for o, _ in creators) - sum(o for o, _ in annihilators)
    tot = 0.0
    for sign, group in ((1.0, creators), (-1.0, annihilators)):
        for o, g in group:
            Wv = W_stable(sign * o, wa - sign * o, beta)
            tot = tot + np.where(np.asarray(g) == 0, 0.0, np.asarray(g) * Wv)
    return float(tot) if np.ndim(tot) == 0 else tot
