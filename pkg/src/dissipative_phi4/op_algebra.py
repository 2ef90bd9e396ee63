"""Exact algebra of normal-ordered bosonic operator sums.

Terms carry an exact rational prefactor, integer powers of the coupling, the
counterterm and the (2 pi)^-d volume factor, a bag of formal factors keyed by
momentum labels, a list of integration (bound) variables and a list of
momentum-conservation deltas.  Bound variables may be permuted and sign-flipped
freely since every formal factor depends on |k| only; canonical forms use the
lexicographically smallest image under that group.

A second, numeric layer evaluates frequencies, decay rates and the free
evolution/resolvent for terms whose labels are bound to concrete modes.
"""
from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from . import kernels as K
from .errors import PoleProximity, UnboundLabel

Number = Union[Fraction, int, float, complex]
BOUND_PREFIX = "_q"


# --------------------------------------------------------------------------- labels

@dataclass(frozen=True)
class MomentumLabel:
    name: str
    negated: bool = False
    kind: str = field(default="external", compare=False, hash=False)

    def __neg__(self) -> "MomentumLabel":
        return MomentumLabel(self.name, not self.negated, self.kind)

    @property
    def sign(self) -> int:
        return -1 if self.negated else 1

    def sort_key(self):
        return (self.name, self.negated)

    def __str__(self):
        return ("-" if self.negated else "") + self.name


def lab(spec: str) -> MomentumLabel:
    spec = spec.strip()
    if spec.startswith("-"):
        return MomentumLabel(spec[1:], True)
    return MomentumLabel(spec)


Delta = Tuple[Tuple[str, int], ...]


def make_delta(pairs: Iterable[Tuple[str, int]]) -> Delta:
    acc: Dict[str, int] = {}
    for n, c in pairs:
        acc[n] = acc.get(n, 0) + c
    items = sorted((n, c) for n, c in acc.items() if c != 0)
    if items and items[0][1] < 0:
        items = [(n, -c) for n, c in items]
    return tuple(items)


def delta_of(*labels: MomentumLabel) -> Delta:
    """delta(sum of the given signed labels)."""
    return make_delta((l.name, l.sign) for l in labels)


# --------------------------------------------------------------------------- coefficients

def _frac(x: Number) -> Number:
    if isinstance(x, np.generic):
        x = x.item()
    if isinstance(x, bool):
        x = int(x)
    if isinstance(x, (Fraction, int)):
        return Fraction(x)
    if isinstance(x, float) and x.is_integer() and abs(x) < 2 ** 52:
        return Fraction(int(x))
    return x


FactorKey = Tuple  # (kind, *args)

# factor kinds whose arguments are label names of magnitudes
_MAGNITUDE_KINDS = {"omt", "om", "gam", "nb", "nb1"}


@dataclass(frozen=True)
class ScalarCoeff:
    num: Number = Fraction(1)
    lam_pow: int = 0
    z_pow: int = 0
    vol_pow: int = 0
    factors: Tuple[Tuple[FactorKey, Fraction], ...] = ()
    bound: Tuple[str, ...] = ()

    def signature(self):
        return (self.lam_pow, self.z_pow, self.vol_pow, self.factors, self.bound)

    def scaled(self, c: Number) -> "ScalarCoeff":
        return ScalarCoeff(_frac(self.num * c),
                           self.lam_pow, self.z_pow, self.vol_pow, self.factors, self.bound)

    def times(self, other: "ScalarCoeff") -> "ScalarCoeff":
        overlap = set(self.bound) & set(other.bound)
        if overlap:
            raise ValueError(f"bound variables clash: {sorted(overlap)}")
        return ScalarCoeff(self.num * other.num, self.lam_pow + other.lam_pow,
                           self.z_pow + other.z_pow, self.vol_pow + other.vol_pow,
                           _merge_factors(self.factors + other.factors),
                           self.bound + other.bound)

    def is_zero(self) -> bool:
        return self.num == 0


def _merge_factors(items: Iterable[Tuple[FactorKey, Fraction]]) -> Tuple[Tuple[FactorKey, Fraction], ...]:
    acc: Dict[FactorKey, Fraction] = {}
    for k, e in items:
        acc[k] = acc.get(k, Fraction(0)) + Fraction(e)
    return tuple(sorted(((k, e) for k, e in acc.items() if e != 0), key=lambda t: repr(t[0])))


def _rename_factor(key: FactorKey, sub: Mapping[str, str]) -> FactorKey:
    kind = key[0]
    if kind in _MAGNITUDE_KINDS:
        return (kind, sub.get(key[1], key[1]))
    if kind in ("w", "W", "expm"):
        # arguments are frequency expressions: tuples of (name, coeff)
        return (kind,) + tuple(tuple(sorted((sub.get(n, n), c) for n, c in arg)) for arg in key[1:])
    return key


# --------------------------------------------------------------------------- terms

@dataclass(frozen=True)
class NormalTerm:
    coeff: ScalarCoeff
    creators: Tuple[MomentumLabel, ...] = ()
    annihilators: Tuple[MomentumLabel, ...] = ()
    deltas: Tuple[Delta, ...] = ()

    @property
    def degree(self) -> int:
        return len(self.creators) + len(self.annihilators)

    def names(self) -> set:
        out = {l.name for l in self.creators + self.annihilators}
        for dl in self.deltas:
            out.update(n for n, _ in dl)
        for k, _ in self.coeff.factors:
            out.update(_factor_names(k))
        return out

    def is_identity(self) -> bool:
        return not self.creators and not self.annihilators

    def word(self) -> List[Tuple[bool, MomentumLabel]]:
        return [(True, l) for l in self.creators] + [(False, l) for l in self.annihilators]


def _factor_names(key: FactorKey):
    if key[0] in _MAGNITUDE_KINDS:
        return [key[1]]
    if key[0] in ("w", "W", "expm"):
        return [n for arg in key[1:] for n, _ in arg]
    return []


def _substitute(term: NormalTerm, name: str, repl: MomentumLabel) -> NormalTerm:
    """Replace label ``name`` by the signed label ``repl`` everywhere."""

    def sl(l: MomentumLabel) -> MomentumLabel:
        if l.name != name:
            return l
        return MomentumLabel(repl.name, l.negated != repl.negated)

    deltas = []
    for dl in term.deltas:
        pairs = []
        for n, c in dl:
            if n == name:
                pairs.append((repl.name, c * repl.sign))
            else:
                pairs.append((n, c))
        deltas.append(make_delta(pairs))
    co = term.coeff
    factors = _merge_factors((_rename_factor(k, {name: repl.name}), e) for k, e in co.factors)
    bound = tuple(b for b in co.bound if b != name)
    return NormalTerm(ScalarCoeff(co.num, co.lam_pow, co.z_pow, co.vol_pow, factors, bound),
                      tuple(sl(l) for l in term.creators), tuple(sl(l) for l in term.annihilators),
                      tuple(deltas))


def _resolve(term: NormalTerm) -> NormalTerm:
    """Integrate bound variables against two-label deltas; identify magnitudes
    across external two-label deltas; collect delta(0) volume factors."""
    changed = True
    while changed:
        changed = False
        bound = set(term.coeff.bound)
        for i, dl in enumerate(term.deltas):
            if len(dl) == 0:
                rest = term.deltas[:i] + term.deltas[i + 1:]
                co = term.coeff
                term = NormalTerm(ScalarCoeff(co.num, co.lam_pow, co.z_pow, co.vol_pow,
                                              _merge_factors(co.factors + ((("delta0",), Fraction(1)),)),
                                              co.bound), term.creators, term.annihilators, rest)
                changed = True
                break
            if len(dl) == 2 and all(abs(c) == 1 for _, c in dl):
                (n1, c1), (n2, c2) = dl
                target = None
                if n2 in bound:
                    target, other, ct, co_ = n2, n1, c2, c1
                elif n1 in bound:
                    target, other, ct, co_ = n1, n2, c1, c2
                if target is None:
                    continue
                # ct*target + co*other = 0  ->  target = -(co/ct) other
                rest = term.deltas[:i] + term.deltas[i + 1:]
                term = NormalTerm(term.coeff, term.creators, term.annihilators, rest)
                term = _substitute(term, target, MomentumLabel(other, (-co_ * ct) < 0))
                changed = True
                break
    # magnitudes equal on the support of delta(k1 +- k2)
    sub: Dict[str, str] = {}
    for dl in term.deltas:
        if len(dl) == 2 and all(abs(c) == 1 for _, c in dl):
            a, b = sorted(n for n, _ in dl)
            a = sub.get(a, a)
            sub[b] = a
    if sub:
        def root(n):
            while n in sub and sub[n] != n:
                n = sub[n]
            return n
        full = {n: root(n) for n in sub}
        co = term.coeff
        factors = []
        for k, e in co.factors:
            if k[0] in _MAGNITUDE_KINDS:
                factors.append((_rename_factor(k, full), e))
            else:
                factors.append((k, e))
        term = NormalTerm(ScalarCoeff(co.num, co.lam_pow, co.z_pow, co.vol_pow,
                                      _merge_factors(factors), co.bound),
                          term.creators, term.annihilators, term.deltas)
    return term


def _rref_deltas(deltas: Sequence[Delta], order: Sequence[str]) -> Tuple[Delta, ...]:
    if not deltas:
        return ()
    names = list(order) + sorted({n for dl in deltas for n, _ in dl} - set(order))
    idx = {n: i for i, n in enumerate(names)}
    rows = []
    for dl in deltas:
        r = [Fraction(0)] * len(names)
        for n, c in dl:
            r[idx[n]] += c
        rows.append(r)
    lead = 0
    nr = len(rows)
    pivot_row = 0
    for col in range(len(names)):
        sel = None
        for r in range(pivot_row, nr):
            if rows[r][col] != 0:
                sel = r
                break
        if sel is None:
            continue
        rows[pivot_row], rows[sel] = rows[sel], rows[pivot_row]
        pv = rows[pivot_row][col]
        rows[pivot_row] = [x / pv for x in rows[pivot_row]]
        for r in range(nr):
            if r != pivot_row and rows[r][col] != 0:
                f = rows[r][col]
                rows[r] = [a - f * b for a, b in zip(rows[r], rows[pivot_row])]
        pivot_row += 1
        if pivot_row == nr:
            break
    out = []
    for r in rows:
        if all(x == 0 for x in r):
            out.append(())
            continue
        den = 1
        for x in r:
            den = den * x.denominator // math.gcd(den, x.denominator)
        ints = [int(x * den) for x in r]
        g = 0
        for x in ints:
            g = math.gcd(g, abs(x))
        out.append(make_delta((names[i], x // g) for i, x in enumerate(ints) if x))
    return tuple(sorted(out))


def _canonical(term: NormalTerm) -> Tuple[NormalTerm, tuple]:
    co = term.coeff
    skel = NormalTerm(ScalarCoeff(Fraction(1), co.lam_pow, co.z_pow, co.vol_pow, co.factors, co.bound),
                      term.creators, term.annihilators, term.deltas)
    ct, key = _canonical_skeleton(skel)
    c2 = ct.coeff
    return NormalTerm(ScalarCoeff(c2.num * co.num, c2.lam_pow, c2.z_pow, c2.vol_pow, c2.factors, c2.bound),
                      ct.creators, ct.annihilators, ct.deltas), key


@functools.lru_cache(maxsize=200_000)
def _canonical_skeleton(term: NormalTerm) -> Tuple[NormalTerm, tuple]:
    term = _resolve(term)
    bound = list(term.coeff.bound)
    best = None
    canon_names = [f"{BOUND_PREFIX}{i}" for i in range(len(bound))]
    for perm in itertools.permutations(range(len(bound))):
        for signs in itertools.product((False, True), repeat=len(bound)):
            ren = {b: (canon_names[perm[i]], signs[i]) for i, b in enumerate(bound)}
            cand = _rename_all(term, ren, tuple(canon_names))
            cand = NormalTerm(cand.coeff, tuple(sorted(cand.creators, key=MomentumLabel.sort_key)),
                              tuple(sorted(cand.annihilators, key=MomentumLabel.sort_key)),
                              _rref_deltas(cand.deltas, canon_names))
            key = (tuple(l.sort_key() for l in cand.creators), tuple(l.sort_key() for l in cand.annihilators),
                   cand.deltas, repr(cand.coeff.signature()))
            if best is None or key < best[1]:
                best = (cand, key)
    return best


def _rename_all(term: NormalTerm, ren: Mapping[str, Tuple[str, bool]], bound: Tuple[str, ...]) -> NormalTerm:
    """Simultaneous bijective renaming with optional sign flips."""

    def sl(l: MomentumLabel) -> MomentumLabel:
        r = ren.get(l.name)
        if r is None:
            return l
        return MomentumLabel(r[0], l.negated != r[1])

    deltas = tuple(make_delta((ren[n][0], -c if ren[n][1] else c) if n in ren else (n, c) for n, c in dl)
                   for dl in term.deltas)
    names = {k: v[0] for k, v in ren.items()}
    co = term.coeff
    factors = tuple(sorted(((_rename_factor(k, names), e) for k, e in co.factors), key=lambda t: repr(t[0])))
    return NormalTerm(ScalarCoeff(co.num, co.lam_pow, co.z_pow, co.vol_pow, factors, bound),
                      tuple(sl(l) for l in term.creators), tuple(sl(l) for l in term.annihilators), deltas)


def _substitute_keep_bound(term: NormalTerm, name: str, repl: MomentumLabel) -> NormalTerm:
    co = term.coeff
    bound = tuple(repl.name if b == name else b for b in co.bound)
    t = _substitute(term, name, repl)
    return NormalTerm(ScalarCoeff(t.coeff.num, co.lam_pow, co.z_pow, co.vol_pow, t.coeff.factors, bound),
                      t.creators, t.annihilators, t.deltas)


# --------------------------------------------------------------------------- sums

class OperatorSum:
    """Immutable sum of canonical normal-ordered terms."""

    __slots__ = ("_terms",)

    def __init__(self, terms: Iterable[NormalTerm] = (), *, _canonical_done: bool = False):
        if _canonical_done:
            self._terms = tuple(terms)
            return
        acc: Dict[tuple, List] = {}
        order: List[tuple] = []
        for t in terms:
            if t.coeff.num == 0:
                continue
            ct, key = _canonical(t)
            if key in acc:
                acc[key][1] = acc[key][1] + ct.coeff.num
            else:
                acc[key] = [ct, ct.coeff.num]
                order.append(key)
        out = []
        for key in sorted(order):
            ct, num = acc[key]
            if _is_zero(num):
                continue
            co = ct.coeff
            out.append(NormalTerm(ScalarCoeff(_frac(num), co.lam_pow, co.z_pow, co.vol_pow,
                                              co.factors, co.bound), ct.creators, ct.annihilators, ct.deltas))
        self._terms = tuple(out)

    @property
    def terms(self) -> Tuple[NormalTerm, ...]:
        return self._terms

    def __iter__(self):
        return iter(self._terms)

    def __len__(self):
        return len(self._terms)

    def __add__(self, other: "OperatorSum") -> "OperatorSum":
        return OperatorSum(self._terms + tuple(other))

    def __neg__(self) -> "OperatorSum":
        return self.scale(-1)

    def __sub__(self, other: "OperatorSum") -> "OperatorSum":
        return self + (-other)

    def scale(self, c: Number) -> "OperatorSum":
        return OperatorSum([NormalTerm(t.coeff.scaled(c), t.creators, t.annihilators, t.deltas)
                            for t in self._terms])

    def __mul__(self, other: "OperatorSum") -> "OperatorSum":
        return multiply(self, other)

    def __eq__(self, other) -> bool:
        if not isinstance(other, OperatorSum):
            return NotImplemented
        return (self - other).is_zero()

    def __hash__(self):
        return hash(self.to_text())

    def is_zero(self, tol: float = 0.0) -> bool:
        return all(abs(complex(t.coeff.num)) <= tol for t in self._terms)

    def to_text(self) -> str:
        return "\n".join(term_to_text(t) for t in self._terms)

    def __repr__(self):
        return f"OperatorSum(<{len(self._terms)} terms>)\n" + self.to_text()


def _is_zero(num: Number) -> bool:
    if isinstance(num, (int, Fraction)):
        return num == 0
    return abs(num) < 1e-300


ZERO = OperatorSum(())


def identity(c: Number = 1) -> OperatorSum:
    return OperatorSum([NormalTerm(ScalarCoeff(_frac(c)))])


def ann(label: Union[str, MomentumLabel]) -> OperatorSum:
    l = lab(label) if isinstance(label, str) else label
    return OperatorSum([NormalTerm(ScalarCoeff(), (), (l,))])


def cre(label: Union[str, MomentumLabel]) -> OperatorSum:
    l = lab(label) if isinstance(label, str) else label
    return OperatorSum([NormalTerm(ScalarCoeff(), (l,), ())])


def make_term(num: Number = 1, creators: Sequence = (), annihilators: Sequence = (), *,
              deltas: Sequence[Sequence] = (), bound: Sequence[str] = (), lam: int = 0, z: int = 0,
              vol: int = 0, factors: Mapping[FactorKey, Number] | None = None) -> NormalTerm:
    """Convenience constructor; labels may be given as strings like ``"-k1"``."""
    cr = tuple(lab(x) if isinstance(x, str) else x for x in creators)
    an = tuple(lab(x) if isinstance(x, str) else x for x in annihilators)
    dls = []
    for dl in deltas:
        dls.append(delta_of(*[lab(x) if isinstance(x, str) else x for x in dl]))
    fac = _merge_factors((k, Fraction(v)) for k, v in (factors or {}).items())
    return NormalTerm(ScalarCoeff(_frac(num), lam, z, vol, fac, tuple(bound)), cr, an, tuple(dls))


def osum(*terms: NormalTerm) -> OperatorSum:
    return OperatorSum(terms)


# --------------------------------------------------------------------------- products

def _fresh_rename(term: NormalTerm, avoid: set) -> NormalTerm:
    t = term
    i = 0
    for b in term.coeff.bound:
        while True:
            cand = f"_r{i}"
            i += 1
            if cand not in avoid:
                break
        t = _substitute_keep_bound(t, b, MomentumLabel(cand))
        avoid.add(cand)
    return t


def _matchings(n: int, m: int):
    """All partial injective maps from range(n) into range(m)."""
    def rec(i, used):
        if i == n:
            yield []
            return
        for rest in rec(i + 1, used):
            yield rest
        for j in range(m):
            if j not in used:
                for rest in rec(i + 1, used | {j}):
                    yield [(i, j)] + rest
    return rec(0, frozenset())


def multiply_terms(a: NormalTerm, b: NormalTerm) -> List[NormalTerm]:
    avoid = a.names() | set(a.coeff.bound) | b.names()
    b = _fresh_rename(b, avoid)
    co = a.coeff.times(b.coeff)
    out = []
    for match in _matchings(len(a.annihilators), len(b.creators)):
        used_a = {i for i, _ in match}
        used_b = {j for _, j in match}
        dls = list(a.deltas) + list(b.deltas)
        for i, j in match:
            dls.append(make_delta([(a.annihilators[i].name, a.annihilators[i].sign),
                                   (b.creators[j].name, -b.creators[j].sign)]))
        cr = a.creators + tuple(l for j, l in enumerate(b.creators) if j not in used_b)
        an = tuple(l for i, l in enumerate(a.annihilators) if i not in used_a) + b.annihilators
        out.append(NormalTerm(co, cr, an, tuple(dls)))
    return out


def multiply(A: OperatorSum, B: OperatorSum) -> OperatorSum:
    out: List[NormalTerm] = []
    for a in A:
        for b in B:
            out.extend(multiply_terms(a, b))
    return OperatorSum(out)


def commutator(A: OperatorSum, B: OperatorSum) -> OperatorSum:
    """AB - BA, fully normal ordered."""
    return multiply(A, B) - multiply(B, A)


def normal_order(word: Sequence[Tuple[bool, Union[str, MomentumLabel]]], coeff: Number = 1) -> OperatorSum:
    """Normal order a product given as a list of (is_creator, label)."""
    acc = identity(coeff)
    for is_cre, l in word:
        acc = multiply(acc, cre(l) if is_cre else ann(l))
    return acc


def parse_word(text: str) -> List[Tuple[bool, MomentumLabel]]:
    """Parse e.g. ``"a(k) ad(p) a(-q)"`` into an operator word."""
    out = []
    for tok in text.split():
        head, arg = tok.split("(")
        arg = arg.rstrip(")")
        if head in ("ad", "a+", "adag"):
            out.append((True, lab(arg)))
        elif head == "a":
            out.append((False, lab(arg)))
        else:
            raise ValueError(f"bad operator token {tok!r}")
    return out


# --------------------------------------------------------------------------- Hamiltonians

def build_H0(params: Optional[K.ThermalParams] = None) -> OperatorSum:
    return OperatorSum([make_term(1, ["_h"], ["_h"], bound=["_h"], factors={("om", "_h"): 1})])


def _quartic_block(weights=(1, 4, 6, 4, 1), prefactor=Fraction(1, 96)) -> List[NormalTerm]:
    ks = ["_h1", "_h2", "_h3", "_h4"]
    fac = {("omt", k): Fraction(-1, 2) for k in ks}
    out = []
    for ncre, wgt in enumerate(weights):
        cr = ks[:ncre]
        an = ["-" + k for k in ks[ncre:]]
        out.append(make_term(prefactor * wgt, cr, an, deltas=[ks], bound=ks, lam=1, vol=1, factors=fac))
    return out


def _z_block() -> List[NormalTerm]:
    fac = {("omt", "_h"): -1}
    half = Fraction(1, 2)
    return [
        make_term(half, [], ["_h", "-_h"], bound=["_h"], lam=1, z=1, factors=fac),
        make_term(1, ["_h"], ["_h"], bound=["_h"], lam=1, z=1, factors=fac),
        make_term(half, ["_h", "-_h"], [], bound=["_h"], lam=1, z=1, factors=fac),
    ]


def build_H1(params: Optional[K.ThermalParams] = None, *, include_z: bool = True) -> OperatorSum:
    """Normal-ordered quartic interaction plus the quadratic counterterm block."""
    terms = _quartic_block()
    if include_z:
        terms += _z_block()
    return OperatorSum(terms)


# --------------------------------------------------------------------------- text form

def _fmt_num(x: Number) -> str:
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, complex):
        return repr(x)
    return repr(x)


def _fmt_factor(key: FactorKey, e: Fraction) -> str:
    if key[0] in _MAGNITUDE_KINDS:
        core = f"{key[0]}({key[1]})"
    elif key[0] in ("w", "W", "expm"):
        args = ";".join(",".join(f"{n}:{c}" for n, c in arg) for arg in key[1:])
        core = f"{key[0]}[{args}]"
    else:
        core = key[0]
    return core if e == 1 else f"{core}^{e}"


def term_to_text(t: NormalTerm) -> str:
    co = t.coeff
    parts = [_fmt_num(co.num)]
    if co.lam_pow:
        parts.append(f"lam^{co.lam_pow}")
    if co.z_pow:
        parts.append(f"z^{co.z_pow}")
    if co.vol_pow:
        parts.append(f"vol^{co.vol_pow}")
    parts += [_fmt_factor(k, e) for k, e in co.factors]
    if co.bound:
        parts.append("int[" + ",".join(co.bound) + "]")
    cr = " ".join(str(l) for l in t.creators)
    an = " ".join(str(l) for l in t.annihilators)
    dl = " ".join("d(" + "".join(("+" if c > 0 else "-") + (str(abs(c)) if abs(c) != 1 else "") + n
                                 for n, c in d) + ")" for d in t.deltas)
    return f"{' '.join(parts)} | {cr} | {an} | {dl}"


def _parse_factor(tok: str):
    e = Fraction(1)
    if "^" in tok:
        tok, es = tok.rsplit("^", 1)
        e = Fraction(es)
    if "[" in tok:
        kind, rest = tok.split("[", 1)
        rest = rest.rstrip("]")
        args = []
        for a in rest.split(";"):
            args.append(tuple((p.split(":")[0], int(p.split(":")[1])) for p in a.split(",") if p))
        return (kind,) + tuple(args), e
    if "(" in tok:
        kind, arg = tok.split("(", 1)
        return (kind, arg.rstrip(")")), e
    return (tok,), e


def _parse_delta(tok: str) -> Delta:
    body = tok[2:-1]
    pairs = []
    i = 0
    while i < len(body):
        sgn = 1 if body[i] == "+" else -1
        i += 1
        j = i
        while j < len(body) and body[j].isdigit():
            j += 1
        mult = int(body[i:j]) if j > i else 1
        k = j
        while k < len(body) and body[k] not in "+-":
            k += 1
        pairs.append((body[j:k], sgn * mult))
        i = k
    return make_delta(pairs)


def term_from_text(line: str) -> NormalTerm:
    coeff_s, cr_s, an_s, dl_s = (p.strip() for p in line.split("|"))
    toks = coeff_s.split()
    num_s = toks[0]
    try:
        num: Number = Fraction(num_s)
    except ValueError:
        num = complex(num_s)
    lam = z = vol = 0
    factors = []
    bound: Tuple[str, ...] = ()
    for tok in toks[1:]:
        if tok.startswith("lam^"):
            lam = int(tok[4:])
        elif tok.startswith("z^"):
            z = int(tok[2:])
        elif tok.startswith("vol^"):
            vol = int(tok[4:])
        elif tok.startswith("int["):
            bound = tuple(x for x in tok[4:-1].split(",") if x)
        else:
            factors.append(_parse_factor(tok))
    cr = tuple(lab(x) for x in cr_s.split())
    an = tuple(lab(x) for x in an_s.split())
    dls = tuple(_parse_delta(x) for x in dl_s.split())
    return NormalTerm(ScalarCoeff(num, lam, z, vol, _merge_factors(factors), bound), cr, an, dls)


def from_text(text: str) -> OperatorSum:
    return OperatorSum([term_from_text(l) for l in text.splitlines() if l.strip()])


# --------------------------------------------------------------------------- Wick averages

def wick_average(term: Union[NormalTerm, OperatorSum, Sequence[Tuple[bool, MomentumLabel]]]) -> OperatorSum:
    """Free thermal average as a sum of identity terms.

    Each contraction contributes a delta and either n(omega) (creator on the
    left) or 1 + n(omega) (annihilator on the left).  Accepts a normal term,
    an operator sum or a raw operator word.
    """
    if isinstance(term, OperatorSum):
        out: List[NormalTerm] = []
        for t in term:
            out.extend(wick_average(t).terms)
        return OperatorSum(out)
    if isinstance(term, NormalTerm):
        base = NormalTerm(term.coeff, (), (), term.deltas)
        word = term.word()
    else:
        base = NormalTerm(ScalarCoeff())
        word = list(term)
    ncre = sum(1 for c, _ in word if c)
    if 2 * ncre != len(word):
        return ZERO
    results: List[NormalTerm] = []

    def rec(w, dls, facs):
        if not w:
            co = base.coeff
            results.append(NormalTerm(
                ScalarCoeff(co.num, co.lam_pow, co.z_pow, co.vol_pow, _merge_factors(co.factors + tuple(facs)),
                            co.bound), (), (), base.deltas + tuple(dls)))
            return
        is_cre, l0 = w[0]
        rest = w[1:]
        for j, (c, l) in enumerate(rest):
            if c == is_cre:
                continue
            if is_cre:
                # <a+_k A> = <[A, a+_k]> n_k ; [a_p, a+_k] = delta(p - k)
                dl = make_delta([(l.name, l.sign), (l0.name, -l0.sign)])
                f = (("nb", l0.name), Fraction(1))
            else:
                dl = make_delta([(l0.name, l0.sign), (l.name, -l.sign)])
                f = (("nb1", l0.name), Fraction(1))
            rec(rest[:j] + rest[j + 1:], dls + [dl], facs + [f])

    rec(word, [], [])
    return OperatorSum(results)


def wick_product_average(A: OperatorSum, B: OperatorSum) -> OperatorSum:
    """<A B> keeping the product as a raw word, so that the contraction
    rules see the true operator order."""
    out: List[NormalTerm] = []
    for a in A:
        for b0 in B:
            b = _fresh_rename(b0, a.names() | set(a.coeff.bound) | b0.names())
            co = a.coeff.times(b.coeff)
            for r in wick_average(a.word() + b.word()):
                rc = r.coeff
                out.append(NormalTerm(
                    ScalarCoeff(co.num * rc.num, co.lam_pow, co.z_pow, co.vol_pow,
                                _merge_factors(co.factors + rc.factors), co.bound),
                    (), (), a.deltas + b.deltas + r.deltas))
    return OperatorSum(out)


def connected_average(A: OperatorSum, B: OperatorSum) -> OperatorSum:
    """<A B> - <A><B>."""
    return wick_product_average(A, B) - multiply(wick_average(A), wick_average(B))


# --------------------------------------------------------------------------- numeric layer

@dataclass
class Binding:
    """Numeric values for labels.

    ``magnitude`` maps label names to |k|.  ``vector`` optionally maps names to
    integer momentum vectors so that deltas can be decided exactly.
    """
    magnitude: Dict[str, float]
    vector: Optional[Dict[str, Tuple[int, ...]]] = None

    def mag(self, name: str) -> float:
        try:
            return self.magnitude[name]
        except KeyError:
            raise UnboundLabel(f"label {name!r} has no numeric binding") from None

    def delta_value(self, dl: Delta) -> Optional[bool]:
        if self.vector is None:
            return None
        try:
            vecs = [(np.asarray(self.vector[n]), c) for n, c in dl]
        except KeyError:
            return None
        tot = sum(c * v for v, c in vecs)
        return bool(np.all(tot == 0))


def _omega(name: str, params: K.ThermalParams, b: Binding) -> float:
    return float(K.omega_k(b.mag(name), params))


def omega_A(term: NormalTerm, params: K.ThermalParams, binding: Binding) -> float:
    """Sum of creator frequencies minus annihilator frequencies."""
    return (sum(_omega(l.name, params, binding) for l in term.creators)
            - sum(_omega(l.name, params, binding) for l in term.annihilators))


def gamma_A(term: NormalTerm, params: K.ThermalParams, binding: Binding) -> float:
    wa = omega_A(term, params, binding)
    tot = 0.0
    for l in term.creators:
        om = _omega(l.name, params, binding)
        tot += float(K.gamma_k(binding.mag(l.name), params)) * K.W(om, wa - om, params.beta)
    for l in term.annihilators:
        om = _omega(l.name, params, binding)
        tot += float(K.gamma_k(binding.mag(l.name), params)) * K.W(-om, wa + om, params.beta)
    return tot


def _strip(term: NormalTerm, i_cre: int, j_ann: int, num: Number, binding: Binding) -> Optional[NormalTerm]:
    cr = term.creators[i_cre]
    an = term.annihilators[j_ann]
    dl = make_delta([(cr.name, cr.sign), (an.name, -an.sign)])
    val = binding.delta_value(dl)
    if val is False:
        return None
    deltas = term.deltas if val else term.deltas + (dl,)
    co = term.coeff
    return NormalTerm(ScalarCoeff(co.num * num, co.lam_pow, co.z_pow, co.vol_pow, co.factors, co.bound),
                      term.creators[:i_cre] + term.creators[i_cre + 1:],
                      term.annihilators[:j_ann] + term.annihilators[j_ann + 1:], deltas)


def Gamma_A(term: NormalTerm, params: K.ThermalParams, binding: Binding, regime: str = "exact") -> OperatorSum:
    """Operator part of the free dissipative evolution that lowers the degree by two."""
    beta = params.beta
    wa = omega_A(term, params, binding)
    out = []
    for i, _ in enumerate(term.creators):
        for j, an in enumerate(term.annihilators):
            om = _omega(an.name, params, binding)
            gk = float(K.gamma_k(binding.mag(an.name), params))
            if regime == "exact":
                wt = gk / (beta * om) / K.w(wa, beta) * (K.w(wa + om, beta)
                                                       + math.exp(-beta * om) * K.w(wa - om, beta))
            elif regime == "low-T":
                wt = gk * abs(wa) / (beta * om * (om + abs(wa)))
            else:
                raise ValueError(f"unknown regime {regime!r}")
            t = _strip(term, i, j, wt, binding)
            if t is not None:
                out.append(t)
    return OperatorSum(out)


def _scale_term(t: NormalTerm, c: Number) -> NormalTerm:
    return NormalTerm(t.coeff.scaled(c), t.creators, t.annihilators, t.deltas)


def L0_apply(term: Union[NormalTerm, OperatorSum], params: K.ThermalParams, binding: Binding,
             which: str = "forward", regime: str = "exact") -> OperatorSum:
    """Free evolution: -(i omega_A + gamma_A) A + Gamma_A (forward) or
    (i omega_A - gamma_A) A + Gamma_A (adjoint)."""
    if isinstance(term, OperatorSum):
        acc = ZERO
        for t in term:
            acc = acc + L0_apply(t, params, binding, which, regime)
        return acc
    if term.is_identity():
        return ZERO
    wa = omega_A(term, params, binding)
    ga = gamma_A(term, params, binding)
    s = -1 if which == "forward" else 1
    head = _scale_term(term, complex(s * 1j * wa - ga))
    return OperatorSum([head]) + Gamma_A(term, params, binding, regime)


def R0_apply(term: Union[NormalTerm, OperatorSum], omega: float, params: K.ThermalParams, binding: Binding,
             direction: str = "forward", regime: str = "exact", tol: float = 1e-12) -> OperatorSum:
    """Resolvent (i omega - L0)^-1 by the degree-lowering recursion."""
    if isinstance(term, OperatorSum):
        acc = ZERO
        for t in term:
            acc = acc + R0_apply(t, omega, params, binding, direction, regime, tol)
        return acc
    if term.is_identity():
        wa = ga = 0.0
    else:
        wa = omega_A(term, params, binding)
        ga = gamma_A(term, params, binding)
    s = 1 if direction == "forward" else -1
    den = 1j * omega + s * 1j * wa + ga
    if abs(den) < tol and ga == 0:
        raise PoleProximity(f"resolvent denominator vanishes at omega={omega}")
    inner = OperatorSum([term])
    if not term.is_identity():
        g = Gamma_A(term, params, binding, regime)
        if len(g):
            inner = inner + R0_apply(g, omega, params, binding, direction, regime, tol)
    return inner.scale(1.0 / den)


def evaluate_scalar(term: NormalTerm, params: K.ThermalParams, binding: Optional[Binding] = None, *,
                    z: float = 0.0, vol: float = 1.0) -> complex:
    """Numeric value of a term's coefficient (no bound variables allowed)."""
    co = term.coeff
    if co.bound:
        raise UnboundLabel("coefficient still contains integration variables")
    val = complex(co.num) * params.lam ** co.lam_pow * z ** co.z_pow * vol ** co.vol_pow
    for key, e in co.factors:
        val *= _factor_value(key, params, binding) ** float(e)
    return val


def _freq_expr(arg, params, binding) -> float:
    return sum(c * _omega(n, params, binding) for n, c in arg)


def _factor_value(key: FactorKey, params: K.ThermalParams, binding: Optional[Binding]) -> float:
    kind = key[0]
    if binding is None:
        raise UnboundLabel(f"factor {key} needs a binding")
    if kind == "om":
        return _omega(key[1], params, binding)
    if kind == "omt":
        return float(K.omega_tilde(binding.mag(key[1]), params))
    if kind == "gam":
        return float(K.gamma_k(binding.mag(key[1]), params))
    if kind == "nb":
        return K.bose(_omega(key[1], params, binding), params.beta)
    if kind == "nb1":
        return 1.0 + K.bose(_omega(key[1], params, binding), params.beta)
    if kind == "w":
        return K.w(_freq_expr(key[1], params, binding), params.beta)
    if kind == "W":
        return K.W(_freq_expr(key[1], params, binding), _freq_expr(key[2], params, binding), params.beta)
    if kind == "delta0":
        if binding.vector is not None:
            return 1.0  # Kronecker delta on a grid
        raise UnboundLabel("delta(0) volume factor has no numeric value")
    raise KeyError(f"unknown factor {key}")


def evaluate_average(avg: OperatorSum, params: K.ThermalParams, binding: Binding, *,
                     z: float = 0.0, vol: float = 1.0) -> complex:
    """Numeric value of a sum of identity terms with deltas decided by the binding."""
    tot = 0j
    for t in avg:
        if not t.is_identity():
            raise ValueError("average still contains operators")
        ok = True
        for dl in t.deltas:
            v = binding.delta_value(dl)
            if v is None:
                raise UnboundLabel(f"delta {dl} cannot be decided")
            ok = ok and v
        if ok:
            tot += evaluate_scalar(t, params, binding, z=z, vol=vol)
    return tot


def free_correlations(A: NormalTerm, B: NormalTerm, params: K.ThermalParams, binding: Binding) -> Tuple[complex, complex]:
    """((A;B)0, <[A,B]>0) from Wick averages and the w(omega_B) relation."""
    wb = omega_A(B, params, binding)
    prod = wick_product_average(OperatorSum([A]), OperatorSum([B]))
    ab = evaluate_average(prod, params, binding)
    can = K.w(wb, params.beta) * ab
    return can, params.beta * wb * can


# --------------------------------------------------------------------------- displayed identities

def _displayed_cubic(k: str, sign_k: int) -> List[NormalTerm]:
    """lam/24 block with weights 1,3,3,1 and delta(k1+k2+k3 + sign_k k)."""
    ks = ["c1", "c2", "c3"]
    fac = {("omt", x): Fraction(-1, 2) for x in ks + [k]}
    kl = k if sign_k > 0 else "-" + k
    out = []
    for ncre, wgt in enumerate((1, 3, 3, 1)):
        out.append(make_term(Fraction(wgt, 24), ks[:ncre], ["-" + x for x in ks[ncre:]],
                             deltas=[ks + [kl]], bound=ks, lam=1, vol=1, factors=fac))
    return out


def _displayed_quadratic(k1: str, s1: int, k2: str, s2: int, zsign: int) -> List[NormalTerm]:
    qs = ["p1", "p2"]
    fac = {("omt", x): Fraction(-1, 2) for x in qs + [k1, k2]}
    ext = [k1 if s1 > 0 else "-" + k1, k2 if s2 > 0 else "-" + k2]
    out = []
    for ncre, wgt in enumerate((1, 2, 1)):
        out.append(make_term(Fraction(wgt, 8), qs[:ncre], ["-" + x for x in qs[ncre:]],
                             deltas=[qs + ext], bound=qs, lam=1, vol=1, factors=fac))
    out.append(make_term(1, deltas=[[k1, k2 if zsign > 0 else "-" + k2]], lam=1, z=1,
                         factors={("omt", k1): -1}))
    return out


@dataclass
class IdentityCheck:
    name: str
    passed: bool
    n_terms: int
    first_mismatch: Optional[str] = None

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "n_terms": self.n_terms,
                "first_mismatch": self.first_mismatch}


def check_identity(name: str, lhs: OperatorSum, rhs: OperatorSum) -> IdentityCheck:
    diff = lhs - rhs
    return IdentityCheck(name, diff.is_zero(), len(lhs), None if diff.is_zero() else term_to_text(diff.terms[0]))


def appendixC_identities() -> List[IdentityCheck]:
    """Verify the commutator identities involving the interaction Hamiltonian."""
    H1 = build_H1()
    C = commutator
    a, ad = ann, cre
    z_a = lambda k: [make_term(1, [], [k], lam=1, z=1, factors={("omt", k): -1}),
                     make_term(1, ["-" + k], [], lam=1, z=1, factors={("omt", k): -1})]
    z_ad = lambda k: [make_term(1, [k], [], lam=1, z=1, factors={("omt", k): -1}),
                      make_term(1, [], ["-" + k], lam=1, z=1, factors={("omt", k): -1})]
    checks = [
        check_identity("single [a_k,H1]", C(a("k"), H1), OperatorSum(z_a("k") + _displayed_cubic("k", +1))),
        check_identity("single [H1,a+_k]", C(H1, ad("k")), OperatorSum(z_ad("k") + _displayed_cubic("k", -1))),
    ]
    A1, A2, B1, B2 = a("k1"), a("k2"), ad("kp1"), ad("kp2")
    checks.append(check_identity(
        "splitting [a a,H1]", C(A1 * A2, H1),
        C(A1, H1) * A2 + C(A2, H1) * A1 + C(A1, C(A2, H1))))
    checks.append(check_identity(
        "splitting [H1,a+ a+]", C(H1, B1 * B2),
        B1 * C(H1, B2) + B2 * C(H1, B1) + C(C(H1, B1), B2)))
    checks.append(check_identity(
        "double [a,[a,H1]]", C(a("k1"), C(a("k2"), H1)),
        OperatorSum(_displayed_quadratic("k1", 1, "k2", 1, +1))))
    checks.append(check_identity(
        "double [[H1,a+],a+]", C(C(H1, ad("k1")), ad("k2")),
        OperatorSum(_displayed_quadratic("k1", -1, "k2", -1, +1))))
    checks.append(check_identity(
        "double [a,[H1,a+]]", C(a("k1"), C(H1, ad("k2"))),
        OperatorSum(_displayed_quadratic("k1", 1, "k2", -1, -1))))

    def d(x, y):
        return OperatorSum([make_term(1, deltas=[[x, "-" + y]])])

    HB1, HB2 = C(H1, B1), C(H1, B2)
    tail = (B1 * C(A2, HB2) * A1 + B2 * C(A2, HB1) * A1 + B1 * C(A1, HB2) * A2 + B2 * C(A1, HB1) * A2
            + B1 * C(A1, C(A2, HB2)) + B2 * C(A1, C(A2, HB1))
            + C(A1, C(HB1, B2)) * A2 + C(A2, C(HB1, B2)) * A1
            + C(A1, C(A2, C(HB1, B2))))
    rhs1 = (d("k1", "kp1") * A2 * HB2 + d("k1", "kp2") * A2 * HB1
            + d("k2", "kp1") * A1 * HB2 + d("k2", "kp2") * A1 * HB1) + tail
    checks.append(check_identity("quadruple [a a,[H1,a+ a+]]", C(A1 * A2, C(H1, B1 * B2)), rhs1))
    rhs2 = (d("k1", "kp1") * C(A2, H1) * B2 + d("k1", "kp2") * C(A2, H1) * B1
            + d("k2", "kp1") * C(A1, H1) * B2 + d("k2", "kp2") * C(A1, H1) * B1) + tail
    checks.append(check_identity("quadruple [[a a,H1],a+ a+]", C(C(A1 * A2, H1), B1 * B2), rhs2))
    return checks
