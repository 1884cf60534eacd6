"""Third-order hypergeometric equation: series, Frobenius basis, residuals, four-point reduction.

The operator is ``z (A1+t)(A2+t)(A3+t) - (B1-1+t)(B2-1+t) t`` with ``t = z d/dz``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from typing import Any, Callable, List, Sequence, Tuple

import numpy as np

from . import algebra as alg
from .algebra import CartanVector, CouplingParams, HyperParams, InsertionConfig

MAX_TERMS = 10_000


class ResonantExponents(ValueError):
    pass


def _poch_ratio(A: Sequence[float], B: Sequence[float], n: int) -> complex:
    num = 1.0
    for a in A:
        num *= a + n
    den = float(n + 1)
    for b in B:
        den *= b + n
    return num / den


def _check_B(B: Sequence[float]):
    for j, b in enumerate(B, 1):
        if float(b) <= 0 and float(b) == int(float(b)):
            raise ValueError(f"B{j} = {float(b):g} is a non-positive integer: pole in the series")


def series_3f2(params: HyperParams, z: complex, tol: float = 1e-15) -> complex:
    """``sum_n (A1)_n (A2)_n (A3)_n / ((B1)_n (B2)_n n!) z^n``."""
    p = params.to_float()
    _check_B(p.B)
    if abs(z) >= 1:
        raise ValueError(f"|z| = {abs(z):g} is outside the disk of convergence")
    if z == 0:
        return 1.0
    total, term = 1.0 + 0j, 1.0 + 0j
    for n in range(MAX_TERMS):
        r = _poch_ratio(p.A, p.B, n)
        term = term * r * z
        total += term
        if term == 0:
            return total
        # tail bound from the ratio test once ratios have settled below 1
        r_next = abs(_poch_ratio(p.A, p.B, n + 1) * z)
        if r_next < 1 and abs(term) * r_next / (1 - r_next) <= tol * abs(total):
            return total if isinstance(z, complex) else total.real if total.imag == 0 else total
    raise ArithmeticError(f"series did not converge in {MAX_TERMS} terms at z = {z}")


@dataclass
class SeriesSolution:
    """``z^rho0 * sum_n c_n z^n`` with ``c_0 = 1``."""

    rho0: float
    coeffs: np.ndarray
    params: HyperParams
    note: str = "converges for |z| < 1; singular points 0, 1, infinity"

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    def theta(self, z: complex, k: int = 0) -> complex:
        """``(z d/dz)^k`` of the solution, summed term by term."""
        z = complex(z)
        n = np.arange(len(self.coeffs))
        powers = z ** n
        series = np.sum(self.coeffs * (n + self.rho0) ** k * powers)
        return complex(series * (z ** self.rho0 if self.rho0 != 0 else 1.0))

    def __call__(self, z: complex) -> complex:
        return self.theta(z, 0)

    def derivatives(self, z: complex) -> Tuple[complex, complex, complex]:
        """``H, H', H''`` at ``z`` from the theta powers."""
        t0, t1, t2 = (self.theta(z, k) for k in range(3))
        return t0, t1 / z, (t2 - t1) / z ** 2


def series_coefficients(params: HyperParams, order: int) -> np.ndarray:
    p = params.to_float()
    _check_B(p.B)
    c = np.empty(order + 1, dtype=complex)
    c[0] = 1.0
    for n in range(order):
        c[n + 1] = c[n] * _poch_ratio(p.A, p.B, n)
    return c


def _order_for(params: HyperParams, radius: float, tol: float) -> int:
    """Smallest order whose tail at ``radius`` is below ``tol`` by the ratio bound."""
    p = params.to_float()
    term, total = 1.0, 1.0
    for n in range(MAX_TERMS):
        term *= abs(_poch_ratio(p.A, p.B, n)) * radius
        total += term
        r_next = abs(_poch_ratio(p.A, p.B, n + 1)) * radius
        if r_next < 1 and term * r_next / (1 - r_next) <= tol * max(1.0, total):
            return n + 1
    raise ArithmeticError("series order cap reached")


def indicial_exponents(params: HyperParams) -> Tuple[Any, Any, Any]:
    """Roots of the indicial polynomial ``(B1-1+r)(B2-1+r) r``."""
    return (0, 1 - params.B1, 1 - params.B2)


def shifted_params(params: HyperParams, rho: Any) -> HyperParams:
    """Parameters of the series multiplying ``z^rho`` for a nonzero exponent ``rho = 1 - B_j``."""
    A = [a + rho for a in params.A]
    B = [b + rho for b in params.B]
    # the exponent's own factor (B_j - 1 + rho = 0) plays the role of n!
    if rho == 1 - params.B1:
        Bs = (B[1], 1 + rho)
    else:
        Bs = (B[0], 1 + rho)
    return HyperParams(A[0], A[1], A[2], Bs[0], Bs[1])


def frobenius_solutions(params: HyperParams, radius: float = 0.8, tol: float = 1e-16
                        ) -> List[SeriesSolution]:
    """Local basis at 0 with exponents 0, 1-B1, 1-B2 (generic, non-resonant case)."""
    ex = indicial_exponents(params)
    for a in range(3):
        for b in range(a + 1, 3):
            d = float(ex[a] - ex[b])
            if abs(d - round(d)) < 1e-12:
                raise ResonantExponents(
                    f"exponents {float(ex[a]):g} and {float(ex[b]):g} differ by an integer; "
                    "logarithmic solutions are not supported")
    out = []
    for rho in ex:
        p = params if rho == 0 else shifted_params(params, rho)
        K = _order_for(p, radius, tol)
        out.append(SeriesSolution(float(rho), series_coefficients(p, K), p))
    return out


def _theta_numeric(H: Callable, z: complex, h: float = 2e-3) -> Tuple[complex, ...]:
    """``H, tH, t^2 H, t^3 H`` by central differences in ``log z``."""
    z = complex(z)
    f = lambda t: complex(H(z * cmath.exp(t)))
    v = {k: f(k * h) for k in (-3, -2, -1, 0, 1, 2, 3)}
    d1 = (-v[2] + 8 * v[1] - 8 * v[-1] + v[-2]) / (12 * h)
    d2 = (-v[2] + 16 * v[1] - 30 * v[0] + 16 * v[-1] - v[-2]) / (12 * h * h)
    d3 = (-v[3] + 8 * v[2] - 13 * v[1] + 13 * v[-1] - 8 * v[-2] + v[-3]) / (8 * h ** 3)
    return v[0], d1, d2, d3


def ode_residual(H, params: HyperParams, z: complex) -> complex:
    """Value of the operator applied to ``H`` at ``z``.

    ``H`` may expose ``theta(z, k)`` (exact term-by-term derivatives) or be any
    callable, in which case the theta powers come from finite differences.
    """
    p = params.to_float()
    if hasattr(H, "theta"):
        t = [H.theta(z, k) for k in range(4)]
    else:
        t = list(_theta_numeric(H, z))
    A1, A2, A3 = p.A
    e1, e2, e3 = A1 + A2 + A3, A1 * A2 + A1 * A3 + A2 * A3, A1 * A2 * A3
    b1, b2 = p.B1 - 1, p.B2 - 1
    upper = t[3] + e1 * t[2] + e2 * t[1] + e3 * t[0]
    lower = t[3] + (b1 + b2) * t[2] + b1 * b2 * t[1]
    return complex(z) * upper - lower


def wronskian_matrix(solutions: Sequence[SeriesSolution], z: complex) -> np.ndarray:
    return np.array([[s.theta(z, k) for s in solutions] for k in range(3)])


def operator_polynomials(params: HyperParams) -> List[np.ndarray]:
    """Coefficients (ascending powers of z) multiplying ``H, H', H'', H'''``."""
    p = params.to_float()
    A1, A2, A3 = p.A
    e1, e2, e3 = A1 + A2 + A3, A1 * A2 + A1 * A3 + A2 * A3, A1 * A2 * A3
    s1, s2 = (p.B1 - 1) + (p.B2 - 1), (p.B1 - 1) * (p.B2 - 1)
    return [np.array([0, e3]),
            np.array([0, -(1 + s1 + s2), 1 + e1 + e2]),
            np.array([0, 0, -(3 + s1), 3 + e1]),
            np.array([0, 0, 0, -1, 1])]


def taylor_continuation(solution: SeriesSolution, center: complex, order: int = 80
                        ) -> Callable[[complex], complex]:
    """Re-expand a solution in a Taylor series at ``center`` (away from 0 and 1)."""
    c = complex(center)
    if c == 0 or c == 1:
        raise ValueError("center must be a regular point")
    polys = []
    for pk in operator_polynomials(solution.params if solution.rho0 == 0 else _unshifted(solution)):
        P = np.polynomial.Polynomial(pk.astype(complex))
        shifted = P(np.polynomial.Polynomial([c, 1]))
        polys.append(np.pad(shifted.coef, (0, 5)))
    h0, h1, h2 = solution.derivatives(c)
    a = np.zeros(order + 4, dtype=complex)
    a[0], a[1], a[2] = h0, h1, h2 / 2
    ff = lambda m, k: math.prod(range(m - k + 1, m + 1)) if k else 1  # m!/(m-k)!
    for m in range(order):
        acc = 0j
        for k, pk in enumerate(polys):
            for j, coef in enumerate(pk):
                if coef == 0 or j > m:
                    continue
                idx = m - j + k
                if k == 3 and j == 0:
                    continue
                acc += coef * a[idx] * ff(idx, k)
        a[m + 3] = -acc / (polys[3][0] * ff(m + 3, 3))
    coeffs = a[:order + 1]
    return lambda z: complex(np.polynomial.polynomial.polyval(complex(z) - c, coeffs))


def _unshifted(solution: SeriesSolution) -> HyperParams:
    """Original operator parameters of a shifted Frobenius solution."""
    rho = solution.rho0
    p = solution.params
    A = [a - rho for a in p.A]
    # shifted B holds (B_other + rho, 1 + rho); recover B_other and B_j = 1 - rho
    b_other = p.B1 - rho
    return HyperParams(A[0], A[1], A[2], b_other, 1 - rho)


@dataclass
class FourPointReduction:
    exponents: Tuple[Any, Any]
    exponents_alt: Tuple[Any, Any]
    params: HyperParams
    config: InsertionConfig
    alpha_inf: CartanVector
    seiberg: alg.SeibergReport

    def to_json(self) -> dict:
        return {"exponents": [float(x) for x in self.exponents],
                "hyper": {k: float(getattr(self.params, k)) for k in ("A1", "A2", "A3", "B1", "B2")},
                "alphas": [[float(a.w1), float(a.w2)] for a in self.config.alphas],
                "alpha_inf": [float(self.alpha_inf.w1), float(self.alpha_inf.w2)],
                "seiberg_ok": self.seiberg.ok}


def prefactor_exponents(chi, kappa, alpha0: CartanVector) -> Tuple[Any, Any]:
    """Exponents of ``|z|`` and ``|z - 1|`` read off the closed form."""
    h1 = alg.H[0]
    return (chi * alg.inner(h1, alpha0), chi * kappa / 3)


def pairing_exponents(alpha: CartanVector, alpha0: CartanVector, alpha1: CartanVector
                      ) -> Tuple[Any, Any]:
    """The same exponents as ``-<alpha0, alpha>`` and ``-<alpha1, alpha>``."""
    return (-alg.inner(alpha0, alpha), -alg.inner(alpha1, alpha))


def fourpoint_reduce(chi, kappa, alpha0: CartanVector, alpha_inf: CartanVector,
                     params: CouplingParams, z: complex = 0.3 + 0.2j) -> FourPointReduction:
    """Reduction of the four-point function with weights (-chi h1, alpha0, -kappa h3, alpha_inf)."""
    h1, h2, h3 = alg.H
    alpha = -(h1 * chi)
    alpha1 = -(h3 * kappa)
    alphas = [alpha, alpha0, alpha1, alpha_inf]
    probe = InsertionConfig.build([z, 0, 1, 2 + 2j], alphas, params)
    rep = alg.seiberg_check(probe)
    if not rep.ok:
        raise ValueError("Seiberg bounds fail: " + "; ".join(rep.violations))
    hp = alg.hypergeom_params(chi, kappa, alpha0, alpha_inf, params)
    cfg = InsertionConfig.build([z, 0, 1], alphas[:3], params)
    return FourPointReduction(prefactor_exponents(chi, kappa, alpha0),
                              pairing_exponents(alpha, alpha0, alpha1), hp, cfg, alpha_inf, rep)
