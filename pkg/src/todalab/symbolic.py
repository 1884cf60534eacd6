"""Differential polynomials in the derivatives of the two-component field.

A monomial is a sorted tuple of ``(d, k)`` pairs standing for the k-th
holomorphic derivative of the d-th omega-basis component of the field
(``phi_d = <e_d, phi>``), so that ``<u, d^k phi> = sum_d <u, omega_d> phi_d^(k)``.
Coefficients live in any commutative ring supporting ``+ - * /``; the exact
work uses the fraction field ``QQ(q, chi, a1, a2)`` exported as ``FIELD``.
Products are commutative, which models Wick-ordered products of the field.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Dict, Iterable, List, Tuple

import sympy
from sympy import QQ
from sympy.polys.fields import field

from . import algebra as alg
from .algebra import CartanVector, B_form, C_form, H, OMEGA, RHO

FIELD, Q, CHI, A1, A2 = field("q,chi,a1,a2", QQ)
ALPHA = CartanVector(A1, A2)

Monomial = Tuple[Tuple[int, int], ...]


def _is_zero(c: Any) -> bool:
    try:
        return c == 0
    except TypeError:
        return False


class DiffPoly:
    """Sparse differential polynomial with canonical (sorted, pruned) terms."""

    __slots__ = ("terms",)

    def __init__(self, terms: Dict[Monomial, Any] | None = None):
        out: Dict[Monomial, Any] = {}
        if terms:
            for mono, c in terms.items():
                key = tuple(sorted(mono))
                for d, k in key:
                    if d not in (1, 2) or k < 1:
                        raise ValueError(f"invalid field symbol ({d}, {k})")
                out[key] = out[key] + c if key in out else c
        self.terms = {m: c for m, c in out.items() if not _is_zero(c)}

    @classmethod
    def const(cls, c: Any) -> "DiffPoly":
        return cls({(): c})

    @classmethod
    def symbol(cls, d: int, k: int) -> "DiffPoly":
        return cls({((d, k),): 1})

    @classmethod
    def lift(cls, x: Any) -> "DiffPoly":
        return x if isinstance(x, DiffPoly) else cls.const(x)

    def __add__(self, other):
        other = DiffPoly.lift(other)
        terms = dict(self.terms)
        for m, c in other.terms.items():
            terms[m] = terms[m] + c if m in terms else c
        return DiffPoly(terms)

    __radd__ = __add__

    def __neg__(self):
        return DiffPoly({m: -c for m, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-DiffPoly.lift(other))

    def __rsub__(self, other):
        return DiffPoly.lift(other) - self

    def __mul__(self, other):
        if not isinstance(other, DiffPoly):
            return DiffPoly({m: c * other for m, c in self.terms.items()})
        terms: Dict[Monomial, Any] = {}
        for (m1, c1), (m2, c2) in itertools.product(self.terms.items(), other.terms.items()):
            key = tuple(sorted(m1 + m2))
            terms[key] = terms[key] + c1 * c2 if key in terms else c1 * c2
        return DiffPoly(terms)

    def __rmul__(self, other):
        return DiffPoly({m: other * c for m, c in self.terms.items()})

    def __eq__(self, other):
        if not isinstance(other, DiffPoly):
            other = DiffPoly.lift(other)
        return not (self - other).terms

    def __hash__(self):
        return hash(self.to_text())

    def is_zero(self) -> bool:
        return not self.terms

    def derivative(self) -> "DiffPoly":
        """Total holomorphic derivative (Leibniz rule on every factor)."""
        terms: Dict[Monomial, Any] = {}
        for mono, c in self.terms.items():
            for j, (d, k) in enumerate(mono):
                key = tuple(sorted(mono[:j] + ((d, k + 1),) + mono[j + 1:]))
                terms[key] = terms[key] + c if key in terms else c
        return DiffPoly(terms)

    def map_coeffs(self, fn) -> "DiffPoly":
        return DiffPoly({m: fn(c) for m, c in self.terms.items()})

    @staticmethod
    def weight(mono: Monomial) -> int:
        return sum(k for _, k in mono)

    def degrees(self) -> set:
        return {self.weight(m) for m in self.terms}

    def is_homogeneous(self, degree: int) -> bool:
        return all(self.weight(m) == degree for m in self.terms)

    def coefficient(self, mono: Iterable) -> Any:
        return self.terms.get(tuple(sorted(mono)), 0)

    def evaluate(self, values: Dict[Tuple[int, int], Any], coeff=lambda c: c) -> Any:
        total = 0
        for mono, c in self.terms.items():
            t = coeff(c)
            for s in mono:
                t = t * values[s]
            total = total + t
        return total

    def to_text(self) -> str:
        if not self.terms:
            return "0"
        lines = []
        for mono in sorted(self.terms, key=lambda m: (self.weight(m), len(m), m)):
            factors = [f"phi{d}_{k}" for d, k in mono]
            lines.append(" * ".join([f"({self.terms[mono]})"] + factors))
        return "\n".join(lines)

    @classmethod
    def from_text(cls, text: str, domain=FIELD) -> "DiffPoly":
        text = text.strip()
        if text == "0":
            return cls()
        terms: Dict[Monomial, Any] = {}
        for line in text.splitlines():
            line = line.strip()
            if not line.startswith("("):
                raise ValueError(f"malformed term line: {line!r}")
            depth = 0
            for pos, ch in enumerate(line):
                depth += ch == "("
                depth -= ch == ")"
                if depth == 0:
                    break
            coef_txt, rest = line[1:pos], line[pos + 1:]
            coef = domain.from_expr(sympy.sympify(coef_txt)) if domain is not None else sympy.sympify(coef_txt)
            mono = []
            for tok in rest.split("*"):
                tok = tok.strip()
                if not tok:
                    continue
                name, k = tok.split("_")
                mono.append((int(name[3:]), int(k)))
            key = tuple(sorted(mono))
            terms[key] = terms[key] + coef if key in terms else coef
        return cls(terms)

    def __repr__(self):
        return f"DiffPoly({self.to_text()!r})"


@dataclass(frozen=True)
class FieldVec:
    """Placeholder for the vector-valued derivative ``d^k phi``."""

    k: int


def pair(u: Any, x: Any) -> Any:
    """Scalar product allowing either argument to be a FieldVec."""
    if isinstance(u, FieldVec):
        u, x = x, u
    if isinstance(x, FieldVec):
        out = DiffPoly()
        for d, w in enumerate(OMEGA, start=1):
            c = alg.inner(u, w)
            if not _is_zero(c):
                out = out + DiffPoly.symbol(d, x.k) * c
        return out
    return alg.inner(u, x)


def field_pairing(u: CartanVector, k: int) -> DiffPoly:
    return pair(u, FieldVec(k))


def field_inner(j: int, k: int) -> DiffPoly:
    """``<d^j phi, d^k phi>`` via the decomposition over the h-weights."""
    out = DiffPoly()
    for h in H:
        out = out + field_pairing(h, j) * field_pairing(h, k)
    return out


def B(u, v):
    return DiffPoly.lift(B_form(u, v, pair))


def C(u, v, w):
    return DiffPoly.lift(C_form(u, v, w, pair))


class MiuraOperator:
    """Differential operator ``sum_i c_i D^(n-i)`` with ``D = (q/2) d/dz``."""

    def __init__(self, coeffs: List[DiffPoly], q: Any = Q):
        self.coeffs = [DiffPoly.lift(c) for c in coeffs]
        self.q = q

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    @classmethod
    def factor(cls, a: DiffPoly, q: Any = Q) -> "MiuraOperator":
        return cls([DiffPoly.const(1), a], q)

    def __eq__(self, other):
        return self.order == other.order and all(a == b for a, b in zip(self.coeffs, other.coeffs))


def _apply_D(p: DiffPoly, times: int, q: Any) -> DiffPoly:
    for _ in range(times):
        p = p.derivative() * (q / 2)
    return p


def compose(left: MiuraOperator, right: MiuraOperator) -> MiuraOperator:
    """Operator product, moving D through coefficients with the Leibniz rule."""
    q = left.q
    n, m = left.order, right.order
    out = [DiffPoly() for _ in range(n + m + 1)]
    for i, lc in enumerate(left.coeffs):
        a = n - i
        if lc.is_zero():
            continue
        for j, rc in enumerate(right.coeffs):
            b = m - j
            for c in range(a + 1):
                power = a - c + b
                term = _apply_D(rc, c, q) * (lc * math.comb(a, c))
                out[n + m - power] = out[n + m - power] + term
    return MiuraOperator(out, q)


def miura_expand(q: Any = Q) -> List[DiffPoly]:
    """Coefficients ``[W0, W1, W2, W3raw]`` of the product of the three factors
    ``(D + <h3, dphi>)(D + <h2, dphi>)(D + <h1, dphi>)``."""
    h1, h2, h3 = H
    op = MiuraOperator.factor(field_pairing(h3, 1), q)
    for h in (h2, h1):
        op = compose(op, MiuraOperator.factor(field_pairing(h, 1), q))
    return op.coeffs


def stress_tensor(q: Any = Q) -> DiffPoly:
    return miura_expand(q)[2] * 2


def w_current(q: Any = Q) -> DiffPoly:
    """Spin-three current, the cubic Miura coefficient shifted by ``-(q/8) dT``."""
    W = miura_expand(q)
    T = W[2] * 2
    return W[3] - T.derivative() * (q / 8)


def stress_tensor_explicit(q: Any = Q) -> DiffPoly:
    """``<Q, d^2 phi> - <d phi, d phi>`` written out directly."""
    return field_pairing(RHO * q, 2) - field_inner(1, 1)


def w_raw_explicit(q: Any = Q) -> DiffPoly:
    """The cubic Miura coefficient written out directly in the h-pairings."""
    h1, h2, h3 = H
    f = field_pairing
    return (f(h1, 3) * (q * q / 4)
            + (f(h1, 2) * f(h2 + h3, 1) + f(h2, 2) * f(h1, 1)) * (q / 2)
            + f(h1, 1) * f(h2, 1) * f(h3, 1))


def w_current_explicit(q: Any = Q) -> DiffPoly:
    """The spin-three current written out directly in the h-pairings."""
    h1, h2, h3 = H
    f = field_pairing
    return (f(h2, 3) * (-q * q / 8)
            + (f(h2 - h1, 2) * f(h1, 1) + f(h3 - h2, 2) * f(h3, 1)) * (q / 4)
            + f(h1, 1) * f(h2, 1) * f(h3, 1))


DESCENDANT_TAGS = ("W-1", "W-2", "W-3", "L-1", "L-(1,1)", "L-2", "L-(1,1,1)", "L-(1,2)", "L-3")


def descendant(tag: str, alpha: CartanVector = ALPHA, q: Any = Q) -> DiffPoly:
    """Differential polynomial multiplying ``V_alpha`` for the given descendant."""
    d1, d2, d3 = FieldVec(1), FieldVec(2), FieldVec(3)
    Qv = RHO * q
    lin = lambda u, k: field_pairing(u, k)
    if tag == "L-1":
        return lin(alpha, 1)
    if tag == "L-(1,1)":
        return lin(alpha, 2) + lin(alpha, 1) * lin(alpha, 1)
    if tag == "L-2":
        return lin(Qv + alpha, 2) - field_inner(1, 1)
    if tag == "L-(1,1,1)":
        a1 = lin(alpha, 1)
        return lin(alpha, 3) + a1 * lin(alpha, 2) * 3 + a1 * a1 * a1
    if tag == "L-(1,2)":
        a1 = lin(alpha, 1)
        return (lin(Qv + alpha, 3) + lin(Qv + alpha, 2) * a1
                - field_inner(2, 1) * 2 - field_inner(1, 1) * a1)
    if tag == "L-3":
        return lin(Qv + alpha / 2, 3) - field_inner(2, 1) * 2
    if tag == "W-1":
        return B(alpha, d1) * (-q) - C(alpha, alpha, d1) * 2
    if tag == "W-2":
        return ((B(d2, alpha) - B(alpha, d2)) * q - C(alpha, alpha, d2) * 2
                + C(alpha, d1, d1) * 4)
    if tag == "W-3":
        h1, h2, h3 = H
        return (lin(h2, 3) * (q * q)
                + (B(d3, alpha) * 2 - B(alpha, d3)) * (q / 2)
                - C(d3, alpha, alpha)
                - B(d2, d1) * (2 * q)
                + C(d2, d1, alpha) * 4 + C(d1, d2, alpha) * 4
                - lin(h1, 1) * lin(h2, 1) * lin(h3, 1) * 8)
    raise KeyError(f"unknown descendant tag {tag!r}; expected one of {DESCENDANT_TAGS}")


def _to_expr(c: Any) -> sympy.Expr:
    if hasattr(c, "as_expr"):
        return c.as_expr()
    if isinstance(c, Fraction):
        return sympy.Rational(c.numerator, c.denominator)
    return sympy.sympify(c)


def level1_components(alpha: CartanVector = ALPHA, q: Any = Q) -> tuple:
    """``W_j = -q B(alpha, e_j) - 2 C(alpha, alpha, e_j)`` for j = 1, 2."""
    return tuple(-q * B_form(alpha, e) - 2 * C_form(alpha, alpha, e) for e in alg.ROOTS)


@dataclass
class Level1Family:
    constraint: sympy.Expr
    kappa: sympy.Expr
    description: str


def degenerate_level1_solve() -> List[Level1Family]:
    """Solve ``W_{-1}(alpha) = kappa L_{-1}(alpha)`` for a generic weight.

    The two component equations share ``kappa`` only on the zero set of
    ``W_1 a2 - W_2 a1``; each irreducible factor of that polynomial gives one
    family together with the corresponding ``kappa``.
    """
    w1, w2 = level1_components()
    a1, a2, q = sympy.symbols("a1 a2 q")
    W1, W2 = _to_expr(w1), _to_expr(w2)
    consistency = sympy.factor(sympy.together(W1 * a2 - W2 * a1))
    _, factors = sympy.factor_list(sympy.numer(consistency))
    out = []
    for fac, _mult in factors:
        if not fac.free_symbols & {a1, a2}:
            continue
        if fac == a1:
            kappa = sympy.simplify((W2 / a2).subs(a1, 0))
            desc = "alpha = chi * omega_2"
        elif fac == a2:
            kappa = sympy.simplify((W1 / a1).subs(a2, 0))
            desc = "alpha = chi * omega_1"
        else:
            sol = sympy.solve(fac, a2)[0]
            kappa = sympy.simplify((W1 / a1).subs(a2, sol))
            desc = f"a2 = {sol}"
        out.append(Level1Family(constraint=fac, kappa=kappa, description=desc))
    return out


def level1_factor_residuals(families: List[Level1Family] | None = None) -> List[sympy.Expr]:
    """``kappa - 3 w / (2 Delta)`` on every level-one family, simplified."""
    fams = degenerate_level1_solve() if families is None else families
    a1, a2 = sympy.symbols("a1 a2")
    Qv = RHO * Q
    out = []
    for f in fams:
        d = ALPHA - Qv
        w = 1
        for h in H:
            w = w * alg.inner(d, h)
        delta = alg.inner(ALPHA / 2, Qv - ALPHA / 2)
        ratio = _to_expr(3 * w / (2 * delta))
        sol = sympy.solve(f.constraint, a2 if f.constraint.has(a2) else a1, dict=True)[0]
        out.append(sympy.simplify((ratio - f.kappa).subs(sol)))
    return out


def level1_kappa(alpha: CartanVector, q: Any, tol: float = 1e-12) -> Any:
    """Proportionality constant of a level-one degenerate weight, or None."""
    w1, w2 = level1_components(alpha, q)
    a1, a2 = alpha.w1, alpha.w2
    gap = w1 * a2 - w2 * a1
    if isinstance(gap, float):
        scale = 1.0 + abs(w1 * a2) + abs(w2 * a1)
        degenerate = abs(gap) <= tol * scale
    else:
        degenerate = _is_zero(gap)
    if not degenerate:
        return None
    if not _is_zero(a1):
        return w1 / a1
    if not _is_zero(a2):
        return w2 / a2
    return None


@dataclass
class LinearFit:
    ok: bool
    coefficients: tuple
    residual: DiffPoly | None
    message: str = ""


def _solve_combination(target: DiffPoly, basis: List[DiffPoly], names: List[str]) -> LinearFit:
    monos = sorted(set(target.terms).union(*[b.terms for b in basis]))
    unknowns = sympy.symbols(" ".join(names))
    if len(names) == 1:
        unknowns = (unknowns,)
    eqs = []
    for m in monos:
        eq = -_to_expr(target.coefficient(m))
        for u, b in zip(unknowns, basis):
            eq = eq + u * _to_expr(b.coefficient(m))
        eqs.append(sympy.together(eq))
    sol = sympy.solve(eqs, unknowns, dict=True)
    if not sol:
        return LinearFit(False, (), None, "inconsistent linear system")
    sol = sol[0]
    if any(u not in sol for u in unknowns):
        return LinearFit(False, (), None, "underdetermined linear system")
    coeffs = tuple(sympy.simplify(sol[u]) for u in unknowns)
    combo = DiffPoly()
    for c, b in zip(coeffs, basis):
        combo = combo + b.map_coeffs(lambda x, c=c: sympy.simplify(_to_expr(x) * c))
    resid = (combo - target.map_coeffs(_to_expr)).map_coeffs(sympy.simplify)
    return LinearFit(resid.is_zero(), coeffs, resid)


@dataclass
class DegenerateReport:
    ok: bool
    level2: LinearFit
    level3: LinearFit


def degenerate_level23_check(alpha: CartanVector, chi: Any = CHI) -> DegenerateReport:
    """Express the level-two and level-three W descendants through Virasoro ones.

    ``q`` is specialised to ``chi + 2/chi``.  Inconsistent systems are reported
    with ``ok=False`` rather than raising.
    """
    q = chi + 2 / chi
    level2 = _solve_combination(
        descendant("W-2", alpha, q),
        [descendant("L-(1,1)", alpha, q), descendant("L-2", alpha, q)],
        ["k1", "k2"])
    level3 = _solve_combination(
        descendant("W-3", alpha, q),
        [descendant("L-3", alpha, q), descendant("L-(1,2)", alpha, q),
         descendant("L-(1,1,1)", alpha, q)],
        ["c3", "c12", "c111"])
    return DegenerateReport(level2.ok and level3.ok, level2, level3)


@dataclass
class CovarianceReport:
    ok: bool
    residual_reduced: sympy.Expr
    residual_unreduced: sympy.Expr
    identity_residual: sympy.Expr
    stress_unreduced: sympy.Expr


def transformation_residual(poly: DiffPoly, weight: int):
    """``poly(phi o psi + Q log|psi'|) - psi'^weight poly(phi) o psi``.

    ``f{d}_{k}`` stands for the k-th derivative of phi_d evaluated at psi and
    ``p1..p4`` for the first four derivatives of psi.
    """
    q = sympy.Symbol("q")
    p = sympy.symbols("p1:5")
    f = {(d, k): sympy.Symbol(f"f{d}_{k}") for d in (1, 2) for k in range(1, 5)}

    def total_derivative(expr):
        out = 0
        for (d, k), s in f.items():
            if k < 4:
                out += sympy.diff(expr, s) * p[0] * f[(d, k + 1)]
        for j in range(3):
            out += sympy.diff(expr, p[j]) * p[j + 1]
        return out

    rho = RHO.coords()
    shifted = {}
    for d in (1, 2):
        expr = p[0] * f[(d, 1)] + q / 2 * p[1] / p[0] * rho[d - 1]
        for k in (1, 2, 3):
            shifted[(d, k)] = expr
            expr = total_derivative(expr)
    lhs = poly.evaluate(shifted, _to_expr)
    rhs = p[0] ** weight * poly.evaluate({key: f[key] for key in shifted}, _to_expr)
    return sympy.expand(lhs - rhs), p


def w_covariance_check() -> CovarianceReport:
    """Transformation law of W under a map with vanishing Schwarzian derivative.

    The stress tensor residual is returned alongside: it is the Schwarzian
    anomaly and shows that the unreduced comparison is not vacuous.
    """
    resid, p = transformation_residual(w_current(), 3)
    p1, p2, p3, p4 = p
    mobius = {p3: 3 * p2 ** 2 / (2 * p1), p4: 3 * p2 ** 3 / p1 ** 2}
    reduced = sympy.simplify(sympy.together(resid.subs(mobius)))
    identity = sympy.simplify(resid.subs({p1: 1, p2: 0, p3: 0, p4: 0}))
    unreduced = sympy.factor(sympy.together(resid))
    stress, _ = transformation_residual(stress_tensor(), 2)
    return CovarianceReport(reduced == 0 and identity == 0, reduced, unreduced, identity,
                            sympy.factor(sympy.together(stress)))
