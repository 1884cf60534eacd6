import random
from fractions import Fraction as F

import pytest
import sympy

from todalab import algebra as alg
from todalab import symbolic as sym
from todalab.symbolic import DiffPoly, MiuraOperator, compose


def test_invalid_symbol_rejected():
    with pytest.raises(ValueError):
        DiffPoly.symbol(1, 0)
    with pytest.raises(ValueError):
        DiffPoly.symbol(3, 1)


def test_canonical_form_and_equality():
    a = DiffPoly({((2, 1), (1, 1)): 2, ((1, 2),): 0})
    b = DiffPoly({((1, 1), (2, 1)): 2})
    assert a == b
    assert list(a.terms) == [((1, 1), (2, 1))]


def test_text_round_trip():
    for poly in (sym.stress_tensor(), sym.w_current(), sym.descendant("L-3")):
        text = poly.to_text()
        again = DiffPoly.from_text(text)
        assert again == poly
        assert again.to_text() == text


def test_derivative_raises_degree():
    T = sym.stress_tensor()
    assert T.is_homogeneous(2)
    assert T.derivative().is_homogeneous(3)


def test_compose_identity_factor():
    a = sym.field_pairing(alg.H[0], 1)
    op = MiuraOperator.factor(a)
    one = MiuraOperator([DiffPoly.const(1)])
    assert compose(op, one) == op
    assert compose(one, op) == op


def test_compose_two_factors_by_hand():
    a = sym.field_pairing(alg.H[0], 1)
    b = sym.field_pairing(alg.H[1], 1)
    prod = compose(MiuraOperator.factor(a), MiuraOperator.factor(b))
    assert prod.coeffs[0] == DiffPoly.const(1)
    assert prod.coeffs[1] == a + b
    assert prod.coeffs[2] == a * b + b.derivative() * (sym.Q / 2)


def test_compose_associative():
    rng = random.Random(2)
    ops = []
    for _ in range(3):
        u = alg.CartanVector(F(rng.randint(-5, 5), 3), F(rng.randint(-5, 5), 2))
        ops.append(MiuraOperator.factor(sym.field_pairing(u, 1)))
    x, y, z = ops
    assert compose(compose(x, y), z) == compose(x, compose(y, z))


def test_miura_low_orders():
    W = sym.miura_expand()
    assert W[0] == DiffPoly.const(1)
    assert W[1].is_zero()
    for i, w in enumerate(W):
        assert w.is_homogeneous(i) or w.is_zero()


def test_stress_tensor_standard_form():
    assert sym.stress_tensor() == sym.stress_tensor_explicit()


def test_w_raw_matches_displayed_expression():
    assert sym.miura_expand()[3] == sym.w_raw_explicit()


def test_w_current_matches_displayed_expression():
    W = sym.w_current()
    assert W == sym.w_current_explicit()
    assert W.is_homogeneous(3)


def test_w_current_third_derivative_coefficient():
    # the d^3 part is -(q^2/8) <h2, d^3 phi>
    W = sym.w_current()
    expected = sym.field_pairing(alg.H[1], 3) * (-sym.Q * sym.Q / 8)
    linear = DiffPoly({m: c for m, c in W.terms.items() if len(m) == 1})
    assert linear == expected


def test_w_current_cubic_part():
    W = sym.w_current()
    cubic = DiffPoly({m: c for m, c in W.terms.items() if len(m) == 3})
    f = [sym.field_pairing(h, 1) for h in alg.H]
    assert cubic == f[0] * f[1] * f[2]


def test_descendant_tags():
    for tag in sym.DESCENDANT_TAGS:
        p = sym.descendant(tag)
        assert isinstance(p, DiffPoly)
    with pytest.raises((KeyError, ValueError)):
        sym.descendant("L-4")


def test_L2_at_zero_weight_is_T():
    assert sym.descendant("L-2", alg.ZERO) == sym.stress_tensor()


def test_level1_families():
    fams = sym.degenerate_level1_solve()
    names = {f.description for f in fams}
    assert {"alpha = chi * omega_1", "alpha = chi * omega_2"} <= names
    assert len(fams) == 3
    assert sym.level1_factor_residuals(fams) == [0, 0, 0]


def test_level1_generic_weight_has_no_solution():
    assert sym.level1_kappa(alg.CartanVector(F(1, 3), F(1, 2)), F(5, 2)) is None


def test_level1_family_member_satisfies_component_equations():
    q = F(29, 10)
    lam = F(7, 11)
    alpha = alg.CartanVector(lam, q - lam)
    kappa = sym.level1_kappa(alpha, q)
    assert kappa is not None
    w1, w2 = sym.level1_components(alpha, q)
    assert w1 == kappa * alpha.w1 and w2 == kappa * alpha.w2


def test_level1_float_weight():
    q = 0.8 + 2 / 0.8
    kappa = sym.level1_kappa(alg.CartanVector(2.0, 0.0), q)
    assert kappa == pytest.approx(q - 4 / 3)


def test_level23_reduction_coefficients():
    chi = sym.CHI
    rep = sym.degenerate_level23_check(alg.CartanVector(-chi, 0), chi)
    assert rep.ok
    c = sympy.Symbol("chi")
    got2 = [sympy.simplify(sym._to_expr(x)) for x in rep.level2.coefficients]
    got3 = [sympy.simplify(sym._to_expr(x)) for x in rep.level3.coefficients]
    assert sympy.simplify(got2[0] + 4 / c) == 0
    assert sympy.simplify(got2[1] + 4 * c / 3) == 0
    assert sympy.simplify(got3[0] + c / 3 + 2 / c) == 0
    assert sympy.simplify(got3[1] - 4 / c) == 0
    assert sympy.simplify(got3[2] - 8 / c ** 3) == 0


def test_level23_fails_for_minus_chi_rho():
    chi = sym.CHI
    rep = sym.degenerate_level23_check(alg.CartanVector(-chi, -chi), chi)
    assert not rep.ok


def test_w_covariance():
    rep = sym.w_covariance_check()
    assert rep.ok
    assert rep.identity_residual == 0
    assert rep.residual_reduced == 0
    # T picks up the Schwarzian anomaly, so the comparison is not vacuous
    assert rep.stress_unreduced != 0
