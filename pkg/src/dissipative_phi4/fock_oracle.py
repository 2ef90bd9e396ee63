"""Dense truncated-Fock realization used to certify the symbolic and analytic layers.

Modes are labelled by integer momentum vectors in a free abelian group: every
distinct magnitude gets its own generator, a repeated magnitude is taken to be
the reflected mode -k, and |k| = 0 is its own reflection.  Continuum
integrals become sums over grid modes and deltas become Kronecker deltas.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import expm

from . import kernels as K
from . import op_algebra as oa
from .errors import DimensionOverflow, ParameterError

MAX_DIM = 1331
EIG_FLOOR = 1e-14
SPECTRUM_MAX = 900


@dataclass
class ModeGrid:
    modes: Sequence[float]
    cutoff: int
    params: K.ThermalParams = field(default_factory=K.ThermalParams)
    vectors: Optional[Sequence[Tuple[int, ...]]] = None
    vol: float = 1.0   # numeric value standing in for (2 pi)^-d
    z: float = 0.0     # counterterm value used when assembling H1

    def __post_init__(self):
        self.modes = [float(k) for k in self.modes]
        if not self.modes:
            raise ParameterError("grid needs at least one mode", field="modes")
        if any(k < 0 for k in self.modes):
            raise ParameterError("mode magnitudes must be >= 0", field="modes")
        if self.cutoff < 1:
            raise ParameterError("cutoff must be >= 1", field="cutoff")
        if self.dim > MAX_DIM:
            raise DimensionOverflow(f"Hilbert dimension {self.dim} exceeds {MAX_DIM}")
        if self.vectors is None:
            self.vectors = _auto_vectors(self.modes)
        self.vectors = [tuple(int(x) for x in v) for v in self.vectors]
        if len(set(self.vectors)) != len(self.vectors):
            raise ParameterError("grid modes must carry distinct momenta", field="vectors")

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def dim(self) -> int:
        return (self.cutoff + 1) ** len(self.modes)

    @property
    def names(self) -> List[str]:
        return [f"m{i}" for i in range(self.n_modes)]

    def mode_of(self, vec: Tuple[int, ...]) -> Optional[int]:
        try:
            return self.vectors.index(tuple(vec))
        except ValueError:
            return None

    def omegas(self) -> np.ndarray:
        return np.array([K.omega_k(k, self.params) for k in self.modes])

    def binding(self) -> oa.Binding:
        return oa.Binding({n: k for n, k in zip(self.names, self.modes)},
                          {n: v for n, v in zip(self.names, self.vectors)})

    def min_beta_omega(self) -> float:
        return float(self.params.beta * self.omegas().min())


def _auto_vectors(mags: Sequence[float]) -> List[Tuple[int, ...]]:
    distinct = []
    for k in mags:
        if k > 0 and not any(abs(k - q) < 1e-12 for q in distinct):
            distinct.append(k)
    g = len(distinct)
    used: Dict[int, int] = {}
    out = []
    for k in mags:
        if k == 0:
            out.append(tuple([0] * g))
            continue
        i = next(j for j, q in enumerate(distinct) if abs(k - q) < 1e-12)
        cnt = used.get(i, 0)
        if cnt > 1:
            raise ParameterError("a magnitude may appear at most twice (k and -k)", field="modes")
        used[i] = cnt + 1
        v = [0] * g
        v[i] = 1 if cnt == 0 else -1
        out.append(tuple(v))
    return out


# --------------------------------------------------------------------------- operators

@dataclass(frozen=True)
class DenseOperator:
    matrix: np.ndarray
    label: str = ""

    def __post_init__(self):
        m = self.matrix
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("dense operator must be square")


def ladder(n_max: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, n_max + 1, dtype=float)), 1)


def _embed(local: np.ndarray, i: int, m: int, n1: int) -> np.ndarray:
    mats = [np.eye(n1)] * m
    mats[i] = local
    out = mats[0]
    for x in mats[1:]:
        out = np.kron(out, x)
    return out


def occupations(grid: ModeGrid) -> np.ndarray:
    """Occupation numbers of every basis state, shape (dim, n_modes)."""
    n1 = grid.cutoff + 1
    return np.array(list(itertools.product(range(n1), repeat=grid.n_modes)))


@dataclass
class FockOps:
    grid: ModeGrid
    a: List[np.ndarray]
    ad: List[np.ndarray]
    H0: np.ndarray
    H1: np.ndarray
    H: np.ndarray
    rho: np.ndarray
    evecs: np.ndarray
    log_p: np.ndarray
    # number basis -> working basis; identity for the free theory
    frame: Optional[np.ndarray] = None

    def to_frame(self, X: np.ndarray) -> np.ndarray:
        """Express a number-basis matrix in the working basis of these operators."""
        if self.frame is None:
            return X
        return self.frame.conj().T @ X @ self.frame

    @property
    def dim(self) -> int:
        return self.H.shape[0]


def to_dense(opsum: oa.OperatorSum, grid: ModeGrid, ops_a: Sequence[np.ndarray],
             ops_ad: Sequence[np.ndarray], external: Mapping[str, int] | None = None) -> np.ndarray:
    """Sum an operator expression over grid modes (bound variables) and
    evaluate it as a dense matrix.  ``external`` maps free label names to mode
    indices; grid mode names ``m0, m1, ...`` resolve automatically."""
    names = {n: i for i, n in enumerate(grid.names)}
    names.update(external or {})
    external = names
    dim = ops_a[0].shape[0]
    out = np.zeros((dim, dim), dtype=complex)
    p = grid.params
    for t in opsum:
        bound = list(t.coeff.bound)
        for assign in itertools.product(range(grid.n_modes), repeat=len(bound)):
            where = dict(external)
            where.update(zip(bound, assign))
            vec = lambda name: np.asarray(grid.vectors[where[name]])
            ok = True
            for dl in t.deltas:
                tot = sum(c * vec(n) for n, c in dl)
                if np.any(tot != 0):
                    ok = False
                    break
            if not ok:
                continue
            mats = []
            for is_cre, l in t.word():
                v = l.sign * vec(l.name)
                idx = grid.mode_of(tuple(v))
                if idx is None:
                    ok = False
                    break
                mats.append(ops_ad[idx] if is_cre else ops_a[idx])
            if not ok:
                continue
            mag = {n: grid.modes[i] for n, i in where.items()}
            c = _coeff_value(t.coeff, p, mag, grid)
            prod = np.eye(dim, dtype=complex)
            for m in mats:
                prod = prod @ m
            out += c * prod
    return out


def _coeff_value(co: oa.ScalarCoeff, p: K.ThermalParams, mag: Mapping[str, float], grid: ModeGrid) -> complex:
    b = oa.Binding(dict(mag))
    val = complex(co.num) * p.lam ** co.lam_pow * grid.z ** co.z_pow * grid.vol ** co.vol_pow
    for key, e in co.factors:
        if key[0] == "delta0":
            continue  # Kronecker delta(0) = 1 on the grid
        val *= oa._factor_value(key, p, b) ** float(e)
    return val


def build_ops(grid: ModeGrid, *, interacting: bool = False) -> FockOps:
    """Ladder operators, Hamiltonians and the equilibrium density matrix.

    ``interacting`` selects rho_eq for H0 + H1 instead of H0.
    """
    n1 = grid.cutoff + 1
    m = grid.n_modes
    a_loc = ladder(grid.cutoff)
    a = [_embed(a_loc, i, m, n1) for i in range(m)]
    ad = [x.T.copy() for x in a]
    om = grid.omegas()
    occ = occupations(grid)
    H0 = np.diag(occ @ om).astype(complex)
    if grid.params.lam != 0:
        H1 = to_dense(oa.build_H1(), grid, a, ad)
        H1 = 0.5 * (H1 + H1.conj().T)
    else:
        H1 = np.zeros_like(H0)
    H = H0 + H1 if interacting else H0
    beta = grid.params.beta
    frame = None
    if interacting and grid.params.lam != 0:
        # work in the eigenbasis of H: K is then exactly elementwise, which
        # matters because K^-1 has condition number ~ exp(beta * E_max)
        e, frame = np.linalg.eigh(H)
        rot = lambda X: frame.conj().T @ X @ frame
        a = [rot(x) for x in a]
        ad = [rot(x) for x in ad]
        H0, H1 = rot(H0), rot(H1)
        H = np.diag(e).astype(complex)
    else:
        e = np.real(np.diag(H)).copy()
    log_w = -beta * e
    log_p = log_w - _logsumexp(log_w)
    U = np.eye(len(e), dtype=complex)
    rho = np.diag(np.exp(log_p)).astype(complex)
    return FockOps(grid, a, ad, H0, H1, H, rho, U, log_p, frame)


def _logsumexp(x: np.ndarray) -> float:
    mx = float(np.max(x))
    return mx + math.log(float(np.sum(np.exp(x - mx))))


# --------------------------------------------------------------------------- K and L

def log_mean_from_logs(lp: np.ndarray, lq: np.ndarray) -> np.ndarray:
    """(p - q)/(ln p - ln q) from logarithms, stable near p = q."""
    dl = lp - lq
    small = np.abs(dl) < 1e-8
    safe = np.where(small, 1.0, dl)
    ratio = np.where(small, 1.0 + dl / 2 + dl * dl / 6, np.expm1(safe) / safe)
    return np.exp(lq) * ratio


@dataclass(frozen=True)
class Spectral:
    U: np.ndarray
    log_p: np.ndarray

    @classmethod
    def of(cls, rho: np.ndarray, floor: Optional[float] = EIG_FLOOR) -> "Spectral":
        p, U = np.linalg.eigh(rho)
        if np.min(p) < -1e-10:
            raise ParameterError("density matrix is not positive semidefinite", field="rho")
        if floor is None:
            if np.min(p) <= 0:
                raise ParameterError("singular density matrix and no eigenvalue floor", field="rho")
        else:
            p = np.maximum(p, floor)
        return cls(U, np.log(p))

    @property
    def diagonal(self) -> bool:
        return bool(np.array_equal(self.U, np.eye(len(self.log_p))))

    def lm_matrix(self) -> np.ndarray:
        return log_mean_from_logs(self.log_p[:, None], self.log_p[None, :])


def _spectral(rho) -> Spectral:
    if isinstance(rho, Spectral):
        return rho
    if isinstance(rho, FockOps):
        return Spectral(rho.evecs, rho.log_p)
    if isinstance(rho, DenseOperator):
        rho = rho.matrix
    return Spectral.of(np.asarray(rho))


def K_apply(rho, A, *, inverse: bool = False) -> np.ndarray:
    """int_0^1 rho^u A rho^(1-u) du, or its inverse."""
    sp = _spectral(rho)
    A = A.matrix if isinstance(A, DenseOperator) else np.asarray(A)
    lm = sp.lm_matrix()
    if sp.diagonal:
        return A / lm if inverse else A * lm
    U = sp.U
    At = U.conj().T @ A @ U
    At = At / lm if inverse else At * lm
    return U @ At @ U.conj().T


def comm(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return A @ B - B @ A


def friction_rates(grid: ModeGrid) -> np.ndarray:
    p = grid.params
    om = grid.omegas()
    return np.array([K.gamma_k(k, p) for k in grid.modes]) / (p.beta * om)


def L_apply(X: np.ndarray, ops: FockOps, which: str = "forward", variant: str = "symmetric",
            *, reversible: bool = True, dissipative: bool = True) -> np.ndarray:
    """Linearized evolution of rho_hat (forward) or of an observable (adjoint)."""
    X = np.asarray(X, dtype=complex)
    out = np.zeros_like(X)
    if reversible:
        rev = 1j * comm(X, ops.H)
        out += rev if which == "forward" else -rev
    if not dissipative:
        return out
    sp = _spectral(ops)
    rates = friction_rates(ops.grid)
    acc = np.zeros_like(X)
    if variant == "symmetric":
        for i, c in enumerate(rates):
            if c == 0:
                continue
            a, ad = ops.a[i], ops.ad[i]
            acc += c * (comm(ad, K_apply(sp, comm(a, X))) + comm(a, K_apply(sp, comm(ad, X))))
    elif variant == "preliminary":
        g = ops.grid
        for i, c in enumerate(rates):
            if c == 0:
                continue
            j = g.mode_of(tuple(-np.asarray(g.vectors[i])))
            if j is None:
                raise ParameterError("preliminary coupling needs the reflected mode on the grid", field="modes")
            q1 = ops.ad[i] + ops.a[j]
            q2 = ops.ad[j] + ops.a[i]
            # the adjoint swaps the order of the two coupling operators
            if which == "forward":
                acc += c * comm(q1, K_apply(sp, comm(q2, X)))
            else:
                acc += c * comm(q2, K_apply(sp, comm(q1, X)))
    else:
        raise ValueError(f"unknown coupling variant {variant!r}")
    return out - K_apply(sp, acc, inverse=True)


def superoperator(ops: FockOps, which: str = "forward", **kw) -> np.ndarray:
    """Matrix of L acting on row-major vectorized operators (small grids only)."""
    d = ops.dim
    if d * d > 2500:
        raise DimensionOverflow(f"superoperator of size {d * d} too large")
    S = np.zeros((d * d, d * d), dtype=complex)
    E = np.zeros((d, d), dtype=complex)
    for idx in range(d * d):
        E.flat[idx] = 1.0
        S[:, idx] = L_apply(E, ops, which, **kw).ravel()
        E.flat[idx] = 0.0
    return S


def canonical_corr(A: np.ndarray, B: np.ndarray, ops: FockOps) -> complex:
    """(A;B) = tr(A K B)."""
    return complex(np.trace(A @ K_apply(ops, B)))


def average(A: np.ndarray, ops: FockOps) -> complex:
    return complex(np.trace(A @ ops.rho))


# --------------------------------------------------------------------------- helpers

def monomial(ops: FockOps, creators: Sequence[int], annihilators: Sequence[int]) -> np.ndarray:
    out = np.eye(ops.dim, dtype=complex)
    for i in creators:
        out = out @ ops.ad[i]
    for i in annihilators:
        out = out @ ops.a[i]
    return out


def interior_mask(grid: ModeGrid, margin: int) -> np.ndarray:
    """Boolean mask of basis states with every occupation <= cutoff - margin."""
    return np.all(occupations(grid) <= grid.cutoff - margin, axis=1)


def block_dev(X: np.ndarray, Y: np.ndarray, mask: np.ndarray) -> float:
    D = (X - Y)[np.ix_(mask, mask)]
    return float(np.max(np.abs(D))) if D.size else 0.0


def term_for_modes(creators: Sequence[int], annihilators: Sequence[int], grid: ModeGrid) -> oa.NormalTerm:
    names = grid.names
    return oa.make_term(1, [names[i] for i in creators], [names[i] for i in annihilators])


def random_operator(rng: np.random.Generator, dim: int, hermitian: bool = False) -> np.ndarray:
    X = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    if hermitian:
        X = X + X.conj().T
    return X


# --------------------------------------------------------------------------- report

@dataclass
class CheckResult:
    name: str
    tolerance: float
    max_deviation: float

    @property
    def passed(self) -> bool:
        return bool(self.max_deviation <= self.tolerance)

    def to_dict(self) -> dict:
        return {"identity": self.name, "tolerance": self.tolerance,
                "max_deviation": self.max_deviation, "pass": self.passed}


@dataclass
class Report:
    grid: str
    checks: List[CheckResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> List[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def to_json(self) -> str:
        return json.dumps({"grid": self.grid, "pass": self.passed,
                           "checks": [c.to_dict() for c in self.checks]}, indent=2)


def _rel(x: np.ndarray, y: np.ndarray) -> float:
    scale = max(1.0, float(np.max(np.abs(y))) if np.size(y) else 1.0)
    return float(np.max(np.abs(x - y))) / scale


def _monomial_set(grid: ModeGrid) -> List[Tuple[Tuple[int, ...], Tuple[int, ...]]]:
    m = grid.n_modes
    out = [((i,), ()) for i in range(m)] + [((), (i,)) for i in range(m)]
    out += [((i,), (j,)) for i in range(m) for j in range(m)]
    out += [((i, j), ()) for i in range(m) for j in range(i, m)]
    out += [((i,), (j, l)) for i in range(m) for j in range(m) for l in range(j, m)]
    return out


def verify_identities(grid: ModeGrid, *, seed: int = 0, tol: float = 1e-8, tol_exact: float = 1e-10,
                      spectrum: bool = True, t_samples: Sequence[float] = (0.3, 0.9)) -> Report:
    """Run the dense checks on one grid and collect deviations."""
    rng = np.random.default_rng(seed)
    free = grid.params.lam == 0
    ops = build_ops(grid, interacting=not free)
    d = ops.dim
    beta = grid.params.beta
    sp = _spectral(ops)
    log_rho = (sp.U * sp.log_p) @ sp.U.conj().T
    checks: List[CheckResult] = []
    add = lambda n, t, dev: checks.append(CheckResult(n, t, float(dev)))

    A = random_operator(rng, d) / d
    B = random_operator(rng, d) / d
    rho = ops.rho

    add("ln-lemma [A,rho]=[K A, ln rho]", tol, _rel(comm(A, rho), comm(K_apply(sp, A), log_rho)))
    add("ln-lemma [A,rho]=K[A, ln rho]", tol, _rel(comm(A, rho), K_apply(sp, comm(A, log_rho))))
    add("trace lemma", tol, abs(np.trace(comm(A, B) @ rho) - np.trace(K_apply(sp, A) @ comm(B, log_rho))))
    lrev_B = L_apply(B, ops, "forward", dissipative=False)
    add("commutator average = i beta (A; L_rev B)", tol,
        abs(average(comm(A, B), ops) - 1j * beta * canonical_corr(A, lrev_B, ops)))
    add("K of identity is rho", tol_exact, _rel(K_apply(sp, np.eye(d)), rho))
    add("K inverse round trip", tol, _rel(K_apply(sp, K_apply(sp, A), inverse=True), A))

    LA = L_apply(A, ops, "adjoint")
    LB = L_apply(B, ops, "forward")
    add("adjointness (A;L B)=(Lbar A;B)", tol, abs(canonical_corr(A, LB, ops) - canonical_corr(LA, B, ops)))
    add("steady state L(1)=0", tol_exact, float(np.max(np.abs(L_apply(np.eye(d), ops)))))
    Xh = random_operator(rng, d, hermitian=True) / d
    LX = L_apply(Xh, ops)
    add("trace preservation tr(K L X)=0", tol, abs(np.trace(K_apply(sp, LX))))
    add("hermiticity preservation", 1e-12 * max(1.0, float(np.max(np.abs(LX)))),
        float(np.max(np.abs(LX - LX.conj().T))))

    # detailed-balance defect
    Lrev = lambda X: L_apply(X, ops, "forward", dissipative=False)
    Lbrev = lambda X: L_apply(X, ops, "adjoint", dissipative=False)
    lhs = average(comm(LA, B), ops) - average(comm(A, LB), ops)
    mid = 1j * beta * (canonical_corr(Lbrev(LA), B, ops) - canonical_corr(A, Lrev(LB), ops))
    rhs = 1j * beta * canonical_corr(A, L_apply(Lrev(B), ops) - Lrev(LB), ops)
    add("detailed-balance defect (first form)", tol, abs(lhs - mid))
    add("detailed-balance defect (second form)", tol, abs(lhs - rhs))

    if free:
        om = grid.omegas()
        bnd = grid.binding()
        p = grid.params
        worst_exp = worst_k = worst_kc = worst_l0 = 0.0
        H0 = ops.H0
        for u in (0.37, 0.2 + 0.5j):
            Eu = np.diag(np.exp(-u * np.real(np.diag(H0))))
            Eui = np.diag(np.exp(u * np.real(np.diag(H0))))
            for cr, an in _monomial_set(grid):
                M = monomial(ops, cr, an)
                wA = sum(om[i] for i in cr) - sum(om[i] for i in an)
                worst_exp = max(worst_exp, _rel(Eu @ M @ Eui, np.exp(-u * wA) * M))
        for cr, an in _monomial_set(grid):
            M = monomial(ops, cr, an)
            wA = sum(om[i] for i in cr) - sum(om[i] for i in an)
            worst_k = max(worst_k, _rel(K_apply(sp, M), K.w(wA, beta) * M @ rho))
            # K-conjugation: K^-1 [A, K B] with B a second monomial
            for cr2, an2 in _monomial_set(grid)[: 2 * grid.n_modes + grid.n_modes ** 2]:
                Mb = monomial(ops, cr2, an2)
                wB = sum(om[i] for i in cr2) - sum(om[i] for i in an2)
                lhs_k = K_apply(sp, comm(M, K_apply(sp, Mb)), inverse=True)
                Wab = K.W(wA, wB, beta)
                r1 = beta * wA * Wab * Mb @ M + K.w(wB, beta) / K.w(wA + wB, beta) * comm(M, Mb)
                r2 = beta * wA * Wab * M @ Mb + K.w(wB, beta) * math.exp(-beta * wA) / K.w(wA + wB, beta) \
                    * comm(M, Mb)
                mask = interior_mask(grid, len(cr) + len(an) + len(cr2) + len(an2))
                worst_kc = max(worst_kc, block_dev(lhs_k, r1, mask), block_dev(lhs_k, r2, mask))
            # compact free-evolution form against the dense L
            term = term_for_modes(cr, an, grid)
            comp = oa.L0_apply(term, p, bnd)
            dense_comp = to_dense(comp, grid, ops.a, ops.ad)
            mask = interior_mask(grid, len(cr) + len(an) + 2)
            worst_l0 = max(worst_l0, block_dev(L_apply(M, ops), dense_comp, mask))
        add("exponential conjugation", tol, worst_exp)
        add("K0 A = w(omega_A) A rho0", tol, worst_k)
        add("K-conjugation identity (both forms)", tol, worst_kc)
        add("compact free evolution L0 A", tol, worst_l0)
        # Gamma for a+ a on the first mode
        g = oa.Gamma_A(term_for_modes([0], [0], grid), p, bnd)
        val = sum(complex(t.coeff.num) for t in g)
        exact = K.w(om[0], beta) * 2 * float(K.gamma_k(grid.modes[0], p)) / (beta * om[0])
        add("Gamma of a+ a", tol_exact, abs(val - exact))
        # free decay of single ladder operators
        worst = 0.0
        mask = interior_mask(grid, 2)
        for i in range(grid.n_modes):
            rate = 1j * om[i] + float(K.gamma_k(grid.modes[i], p))
            worst = max(worst, block_dev(L_apply(ops.ad[i], ops), -rate * ops.ad[i], mask) / abs(rate),
                        block_dev(L_apply(ops.a[i], ops, "adjoint"), -rate * ops.a[i], mask) / abs(rate))
        add("single ladder operators decay at i omega + gamma", tol, worst)

    if spectrum:
        sgrid, sops = grid, ops
        if d * d > SPECTRUM_MAX:
            # same modes, lower cutoff: the eigen-solve is cubic in dim^2
            n = grid.cutoff
            while (n + 1) ** (2 * grid.n_modes) > SPECTRUM_MAX:
                n -= 1
            sgrid = ModeGrid(grid.modes, n, grid.params, grid.vectors, grid.vol, grid.z)
            sops = build_ops(sgrid, interacting=not free)
        S = superoperator(sops)
        ev = np.linalg.eigvals(S)
        tag = "" if sgrid is grid else f" (cutoff {sgrid.cutoff})"
        add("spectrum real parts <= 0" + tag, tol_exact * max(1.0, float(np.max(np.abs(ev)))),
            max(0.0, float(np.max(ev.real))))
        decay = _fit_decay(S, sops, t=0.5)
        if decay is not None:
            add("fitted decay of exp(L t) a+" + tag, tol, decay)

    # fluctuation-dissipation relation for purely reversible dynamics
    H = ops.H
    worst = 0.0
    for t in t_samples:
        U = expm(1j * H * t)
        At = U @ A @ U.conj().T     # solves dA/dt = -i[A,H]
        h = 1e-4
        Up, Um = expm(1j * H * (t + h)), expm(1j * H * (t - h))
        dcorr = (canonical_corr(Up @ A @ Up.conj().T, B, ops) - canonical_corr(Um @ A @ Um.conj().T, B, ops)) / (2 * h)
        worst = max(worst, abs(average(comm(At, B), ops) - 1j * beta * dcorr))
    add("fluctuation-dissipation (reversible)", 1e-6, worst)
    return Report(f"modes={list(grid.modes)} N={grid.cutoff} beta={beta} gamma={grid.params.gamma} "
                  f"lam={grid.params.lam}", checks)


def _fit_decay(S: np.ndarray, ops: FockOps, t: float) -> Optional[float]:
    """Relative mismatch between the decay of exp(L t) a+ and i omega + gamma."""
    g = ops.grid
    if g.params.lam != 0:
        return None
    d = ops.dim
    X = expm(S * t) @ ops.ad[0].astype(complex).ravel()
    X = X.reshape(d, d)
    mask = interior_mask(g, 3)
    A0 = ops.ad[0][np.ix_(mask, mask)]
    Xm = X[np.ix_(mask, mask)]
    amp = np.vdot(A0, Xm) / np.vdot(A0, A0)
    rate = -np.log(amp) / t
    om = g.omegas()[0]
    expect = 1j * om + float(K.gamma_k(g.modes[0], g.params))
    return float(abs(rate - expect) / abs(expect))


def standard_grids(params: Optional[K.ThermalParams] = None) -> List[ModeGrid]:
    """One mode at beta*omega = 8 with N = 8, and a {k, -k} pair with N = 6."""
    # |k| = 0.8 and m = 0.6 give omega = 1
    p = params or K.ThermalParams(d=1.0, m=0.6, beta=8.0, gamma=0.05)
    g1 = ModeGrid([0.8], 8, p)
    g2 = ModeGrid([0.8, 0.8], 6, p)
    return [g1, g2]
