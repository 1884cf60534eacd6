from fractions import Fraction as F

import mpmath
import numpy as np
import pytest
from scipy.special import hyp2f1

from todalab import algebra as alg
from todalab import hypergeom as hyp
from todalab.algebra import HyperParams

GENERIC = HyperParams(0.3, -1.7, 2.2, 1.45, 0.6)
PAR = alg.CouplingParams(F(4, 5))


def test_series_reduces_to_2f1():
    p = HyperParams(0.4, -0.9, 1.3, 1.7, 1.3)
    for z in (0.2, -0.5 + 0.3j, 0.7j):
        assert hyp.series_3f2(p, z) == pytest.approx(complex(hyp2f1(0.4, -0.9, 1.7, z)), rel=1e-13)


def test_series_matches_independent_3f2():
    for z in (0.35, 0.2 - 0.6j, -0.8):
        ref = complex(mpmath.hyp3f2(*GENERIC.A, *GENERIC.B, z))
        assert hyp.series_3f2(GENERIC, z) == pytest.approx(ref, rel=1e-12)


def test_series_terminates_for_negative_integer_top():
    p = HyperParams(-2, 1.5, 0.5, 2.0, 3.0)
    z = 0.4
    expected = 1 + (-2 * 1.5 * 0.5) / (2 * 3) * z + (-2 * -1 * 1.5 * 2.5 * 0.5 * 1.5) / (2 * 3 * 3 * 4 * 2) * z * z
    assert hyp.series_3f2(p, z) == pytest.approx(expected, rel=1e-14)


def test_series_domain_errors():
    with pytest.raises(ValueError):
        hyp.series_3f2(GENERIC, 1.2)
    with pytest.raises(ValueError):
        hyp.series_3f2(HyperParams(1, 1, 1, -2, 1.5), 0.3)
    assert HyperParams(1, 1, 1, -2, 0).flags() and not GENERIC.flags()


def test_frobenius_basis_solves_ode():
    sols = hyp.frobenius_solutions(GENERIC)
    assert [s.rho0 for s in sols] == pytest.approx([0, 1 - 1.45, 1 - 0.6])
    for s in sols:
        for z in (0.3, 0.1 + 0.5j, -0.6 - 0.2j):
            assert abs(hyp.ode_residual(s, GENERIC, z)) < 1e-11
    # finite-difference theta powers agree with the term-by-term ones
    assert abs(hyp.ode_residual(lambda z: sols[1](z), GENERIC, 0.3 + 0.1j)) < 1e-6


def test_frobenius_basis_is_independent():
    sols = hyp.frobenius_solutions(GENERIC)
    W = hyp.wronskian_matrix(sols, 0.25 + 0.1j)
    assert abs(np.linalg.det(W)) > 1e-3


def test_perturbed_function_fails_ode():
    sols = hyp.frobenius_solutions(GENERIC)
    wrong = lambda z: sols[0](z) + 1e-3 * z ** 2
    assert abs(hyp.ode_residual(wrong, GENERIC, 0.4)) > 1e-4


def test_resonant_exponents_refused():
    with pytest.raises(hyp.ResonantExponents):
        hyp.frobenius_solutions(HyperParams(0.3, 0.2, 0.1, 2.0, 0.5))


def test_indicial_exponents_are_roots():
    p = HyperParams(F(1, 3), F(2, 5), F(-1, 7), F(5, 4), F(2, 9))
    for r in hyp.indicial_exponents(p):
        assert r * (r + p.B1 - 1) * (r + p.B2 - 1) == 0


def test_taylor_continuation_beyond_unit_disk():
    s = hyp.frobenius_solutions(GENERIC)[0]
    c = 0.5 + 0.6j
    cont = hyp.taylor_continuation(s, c)
    inside = 0.4 + 0.45j
    assert cont(inside) == pytest.approx(s(inside), rel=1e-10)
    outside = 0.6 + 1.05j
    assert abs(outside) > 1
    assert abs(hyp.ode_residual(cont, GENERIC, outside)) < 1e-6
    ref = complex(mpmath.hyp3f2(*GENERIC.A, *GENERIC.B, outside))
    assert cont(outside) == pytest.approx(ref, rel=1e-8)
    with pytest.raises(ValueError):
        hyp.taylor_continuation(s, 1)


def test_fourpoint_exponents_exact():
    chi, kappa = F(4, 5), F(3)
    a0 = alg.CartanVector(F(16, 5), F(16, 5))
    red = hyp.fourpoint_reduce(chi, kappa, a0, a0, PAR)
    assert red.exponents == red.exponents_alt
    assert red.exponents == (chi * alg.inner(alg.H[0], a0), chi * kappa / 3)
    assert red.seiberg.ok
    assert set(red.to_json()) >= {"exponents", "hyper", "seiberg_ok"}


def test_fourpoint_seiberg_failure():
    with pytest.raises(ValueError):
        hyp.fourpoint_reduce(F(4, 5), F(3), alg.ZERO, alg.ZERO, PAR)


def test_b_equal_one_at_background_charge():
    Q = alg.background_charge(PAR)
    hp = alg.hypergeom_params(F(4, 5), F(3), Q, Q, PAR)
    assert (hp.B1, hp.B2) == (1, 1)
