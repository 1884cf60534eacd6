"""Exact arithmetic on the Cartan subalgebra of sl3.

Vectors are stored in the fundamental-weight basis (omega_1, omega_2), so the
pairing with a simple root is a coordinate read.  Coordinates may be ints,
``fractions.Fraction``, floats or sympy expressions; every operation below is
written with plain ring arithmetic so exactness is preserved whenever the
inputs are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Sequence


def _third(x: Any) -> Any:
    if isinstance(x, int):
        return Fraction(x, 3)
    return x / 3


@dataclass(frozen=True)
class CartanVector:
    """Element of the weight space, ``w1*omega_1 + w2*omega_2``."""

    w1: Any
    w2: Any

    def __add__(self, other: "CartanVector") -> "CartanVector":
        return CartanVector(self.w1 + other.w1, self.w2 + other.w2)

    def __sub__(self, other: "CartanVector") -> "CartanVector":
        return CartanVector(self.w1 - other.w1, self.w2 - other.w2)

    def __neg__(self) -> "CartanVector":
        return CartanVector(-self.w1, -self.w2)

    def __mul__(self, c: Any) -> "CartanVector":
        return CartanVector(c * self.w1, c * self.w2)

    __rmul__ = __mul__

    def __truediv__(self, c: Any) -> "CartanVector":
        if isinstance(c, int) and isinstance(self.w1, (int, Fraction)):
            c = Fraction(c)
        return CartanVector(self.w1 / c, self.w2 / c)

    def __iter__(self):
        yield self.w1
        yield self.w2

    def coords(self) -> tuple:
        return (self.w1, self.w2)

    def to_float(self) -> "CartanVector":
        return CartanVector(float(self.w1), float(self.w2))

    def map(self, fn) -> "CartanVector":
        return CartanVector(fn(self.w1), fn(self.w2))


ZERO = CartanVector(0, 0)
OMEGA1 = CartanVector(1, 0)
OMEGA2 = CartanVector(0, 1)
E1 = CartanVector(2, -1)
E2 = CartanVector(-1, 2)
RHO = CartanVector(1, 1)
OMEGA = (OMEGA1, OMEGA2)
ROOTS = (E1, E2)
H = (CartanVector(1, 0), CartanVector(-1, 1), CartanVector(0, -1))

# Gram matrix of the omega basis, i.e. the inverse Cartan matrix.
GRAM = ((Fraction(2, 3), Fraction(1, 3)), (Fraction(1, 3), Fraction(2, 3)))
CARTAN = ((2, -1), (-1, 2))


def inner(u: CartanVector, v: CartanVector) -> Any:
    """Scalar product ``<u, v>`` computed with the inverse Cartan matrix."""
    return _third(2 * u.w1 * v.w1 + u.w1 * v.w2 + u.w2 * v.w1 + 2 * u.w2 * v.w2)


def root(i: int) -> CartanVector:
    if i not in (1, 2):
        raise IndexError(f"simple root index must be 1 or 2, got {i}")
    return ROOTS[i - 1]


def fundamental_weight(i: int) -> CartanVector:
    if i not in (1, 2):
        raise IndexError(f"fundamental weight index must be 1 or 2, got {i}")
    return OMEGA[i - 1]


def h_weight(i: int) -> CartanVector:
    """Weight ``h_i`` of the first fundamental representation, i in 1..3."""
    if i not in (1, 2, 3):
        raise IndexError(f"h-weight index must be in 1..3, got {i}")
    return H[i - 1]


def h_pairings(u: CartanVector) -> tuple:
    """The three pairings ``<h_i, u>``; they sum to zero."""
    return tuple(inner(h, u) for h in H)


@dataclass(frozen=True)
class CouplingParams:
    gamma: Any
    mu1: Any = 1.0
    mu2: Any = 1.0

    def __post_init__(self):
        g = float(self.gamma)
        if not (0.0 < g < math.sqrt(2.0)):
            raise ValueError(f"gamma must lie in (0, sqrt 2), got {g}")
        if float(self.mu1) <= 0 or float(self.mu2) <= 0:
            raise ValueError("cosmological constants mu1, mu2 must be positive")

    @property
    def q(self) -> Any:
        g = self.gamma
        two = Fraction(2) if isinstance(g, (int, Fraction)) else 2
        return g + two / g

    @property
    def mu(self) -> tuple:
        return (self.mu1, self.mu2)


def background_charge(params: CouplingParams) -> CartanVector:
    return RHO * params.q


def conformal_weight(alpha: CartanVector, params: CouplingParams) -> Any:
    """Conformal weight ``<alpha/2, Q - alpha/2>``."""
    Q = background_charge(params)
    half = alpha / 2
    return inner(half, Q - half)


def quantum_number(alpha: CartanVector, params: CouplingParams) -> Any:
    """Spin-three quantum number, the product of ``<alpha - Q, h_i>``."""
    d = alpha - background_charge(params)
    out = 1
    for h in H:
        out = out * inner(d, h)
    return out


def B_form(u, v, pair=inner):
    """``<h2-h1,u><h1,v> + <h3-h2,u><h3,v>``.

    ``pair`` lets callers evaluate the form on arguments other than
    CartanVector (the symbolic layer passes field derivatives).
    """
    h1, h2, h3 = H
    return pair(h2 - h1, u) * pair(h1, v) + pair(h3 - h2, u) * pair(h3, v)


def C_form(u, v, w, pair=inner):
    """Cyclic sum of ``<h1,u><h2,v><h3,w>``."""
    h1, h2, h3 = H
    return (pair(h1, u) * pair(h2, v) * pair(h3, w)
            + pair(h1, v) * pair(h2, w) * pair(h3, u)
            + pair(h1, w) * pair(h2, u) * pair(h3, v))


def C_sym(u, v, w, pair=inner):
    """``C(u, v, w) + C(u, w, v)``."""
    return C_form(u, v, w, pair) + C_form(u, w, v, pair)


@dataclass(frozen=True)
class Insertion:
    z: complex
    alpha: CartanVector


@dataclass(frozen=True)
class InsertionConfig:
    insertions: tuple
    couplings: CouplingParams

    def __post_init__(self):
        object.__setattr__(self, "insertions", tuple(self.insertions))
        zs = [ins.z for ins in self.insertions]
        if len(set(zs)) != len(zs):
            raise ValueError("insertion positions must be pairwise distinct")

    @classmethod
    def build(cls, points: Iterable, alphas: Iterable, couplings: CouplingParams):
        ins = tuple(Insertion(complex(z), a) for z, a in zip(points, alphas))
        return cls(ins, couplings)

    @property
    def points(self) -> list:
        return [ins.z for ins in self.insertions]

    @property
    def alphas(self) -> list:
        return [ins.alpha for ins in self.insertions]

    def __len__(self) -> int:
        return len(self.insertions)

    def total_weight(self) -> CartanVector:
        tot = ZERO
        for a in self.alphas:
            tot = tot + a
        return tot

    def with_points(self, points: Sequence) -> "InsertionConfig":
        return InsertionConfig.build(points, self.alphas, self.couplings)

    def with_alphas(self, alphas: Sequence) -> "InsertionConfig":
        return InsertionConfig.build(self.points, alphas, self.couplings)

    def with_couplings(self, couplings: CouplingParams) -> "InsertionConfig":
        return InsertionConfig(self.insertions, couplings)


@dataclass
class SeibergReport:
    ok: bool
    s1: Any
    s2: Any
    violations: list = field(default_factory=list)

    @property
    def s(self) -> tuple:
        return (self.s1, self.s2)


def s_parameters(alphas: Sequence[CartanVector], params: CouplingParams) -> tuple:
    """``s_i = <sum alpha - 2Q, omega_i> / gamma``."""
    tot = ZERO
    for a in alphas:
        tot = tot + a
    d = tot - background_charge(params) * 2
    return tuple(inner(d, w) / params.gamma for w in OMEGA)


def seiberg_check(config: InsertionConfig, extended: bool = True) -> SeibergReport:
    """Validate the bounds under which the correlation functions exist."""
    pts = config.points
    for a in range(len(pts)):
        for b in range(a + 1, len(pts)):
            if pts[a] == pts[b]:
                raise ValueError(f"insertions {a} and {b} share the position {pts[a]}")
    par = config.couplings
    q = par.q
    s = s_parameters(config.alphas, par)
    violations = []
    for i in (0, 1):
        if not s[i] > 0:
            violations.append(f"s{i + 1} = {float(s[i]):.6g} is not positive")
    for k, a in enumerate(config.alphas):
        for i, e in enumerate(ROOTS):
            if not inner(a, e) < q:
                violations.append(
                    f"insertion {k}: <alpha, e{i + 1}> = {float(inner(a, e)):.6g} is not below q = {float(q):.6g}")
    if extended:
        g = par.gamma
        Q = background_charge(par)
        for i, e in enumerate(ROOTS):
            bound = min([2 / g ** 2] + [inner(Q - a, e) / g for a in config.alphas])
            if not -s[i] < bound:
                violations.append(
                    f"extended bound fails for direction {i + 1}: -s = {float(-s[i]):.6g} >= {float(bound):.6g}")
    return SeibergReport(ok=not violations, s1=s[0], s2=s[1], violations=violations)


@dataclass(frozen=True)
class HyperParams:
    A1: Any
    A2: Any
    A3: Any
    B1: Any
    B2: Any

    @property
    def A(self) -> tuple:
        return (self.A1, self.A2, self.A3)

    @property
    def B(self) -> tuple:
        return (self.B1, self.B2)

    def to_float(self) -> "HyperParams":
        return HyperParams(*(float(x) for x in (self.A1, self.A2, self.A3, self.B1, self.B2)))

    def flags(self) -> list:
        out = []
        for j, b in enumerate(self.B, 1):
            bf = float(b)
            if bf <= 0 and bf == int(bf):
                out.append(f"B{j} = {bf:g} is a non-positive integer")
        return out


def hypergeom_params(chi, kappa, alpha0: CartanVector, alpha_inf: CartanVector,
                     params: CouplingParams) -> HyperParams:
    """Parameters of the third-order hypergeometric equation for the four-point function."""
    g = params.gamma
    if not (chi == g or chi == 2 / g):
        raise ValueError(f"chi must be gamma or 2/gamma, got {chi}")
    Q = background_charge(params)
    h1, h2, h3 = H
    common = inner(alpha0 - h3 * kappa - h1 * chi - Q, h1) * chi / 2
    A = [common + inner(alpha_inf - Q, h) * chi / 2 for h in H]
    B = [1 + inner(alpha0 - Q, h1 - hn) * chi / 2 for hn in (h2, h3)]
    return HyperParams(A[0], A[1], A[2], B[0], B[1])
