import math
from fractions import Fraction as F

import numpy as np
import pytest

from todalab import algebra as alg
from todalab import correlator as cor

PAR = alg.CouplingParams(F(4, 5))
HEAVY = alg.CartanVector(F(5, 2), F(5, 2))
POINTS = [-0.6, 0.6, 0.1 + 0.4j]
CFG = alg.InsertionConfig.build(POINTS, [HEAVY] * 3, PAR)
SMALL = dict(n_samples=400, seed=5, n_base=300)


@pytest.fixture(scope="module")
def ens():
    return cor.Ensemble.for_points(POINTS, 0.8, 400, 5, n_base=300)


def test_theta_cutoff_shape():
    r = np.array([0.0, 0.05, 0.1, 0.15, 0.2, 1.0])
    th = cor.theta_cutoff(r, 0.2)
    assert th[0] == th[1] == th[2] == 0
    assert 0 < th[3] < 1
    assert th[4] == th[5] == 1
    assert np.all(cor.theta_cutoff(r, 0) == 1)
    assert np.all(np.diff(cor.theta_cutoff(np.linspace(0, 1, 50), 0.4)) >= 0)


def test_reduced_weight_trivial_for_zero_weight():
    cfg = alg.InsertionConfig.build([0.3j], [alg.ZERO], PAR)
    x = np.array([1.0, -2 + 1j, 0.1])
    assert np.allclose(cor.reduced_weight(x, 1, cfg), 1)


def test_reduced_weight_exponents_and_value():
    a1, a2 = alg.CartanVector(F(1, 2), F(3, 2)), alg.CartanVector(2, F(-1, 4))
    cfg = alg.InsertionConfig.build([0, 1 + 1j], [a1, a2], PAR)
    g = 0.8
    x = 0.4 - 0.3j
    for i, (p1, p2) in enumerate([(0.5, 2.0), (1.5, -0.25)], start=1):
        tot = p1 + p2
        expected = (4 / (1 + abs(x) ** 2) ** 2) ** (-g / 4 * tot) * abs(x) ** (-g * p1) \
            * abs(1 + 1j - x) ** (-g * p2)
        assert cor.reduced_weight(x, i, cfg) == pytest.approx(expected, rel=1e-12)
    # near z_1 the |z_1 - x| power dominates; the smooth factors shift it slightly
    near = [1e-3, 2e-3]
    w = [cor.reduced_weight(t, 1, cfg) for t in near]
    assert math.log(w[1] / w[0]) / math.log(2) == pytest.approx(-g * 0.5, abs=5e-3)
    with pytest.raises(ValueError):
        cor.reduced_weight(0, 1, cfg)


def test_estimate_non_finite_rejected():
    with pytest.raises(FloatingPointError):
        cor.CorrelationEstimate(float("nan"), 0.0, 1)
    est = cor.estimate_from_samples(np.array([1.0, 2.0, 3.0]))
    assert est.value == 2 and est.stderr == pytest.approx(1 / math.sqrt(3))
    assert est.to_json()["value"] == 2


def test_seiberg_violation_refused(ens):
    cfg = alg.InsertionConfig.build(POINTS, [alg.RHO] * 3, PAR)
    with pytest.raises(cor.SeibergViolation) as e:
        cor.correlation(cfg, ensemble=ens)
    assert e.value.report.violations


def test_kernel_spec_refusals():
    with pytest.raises(ValueError):
        cor.KernelSpec([cor.KernelFactor(0j, 2, 1)])
    with pytest.raises(ValueError):
        cor.KernelSpec([cor.KernelFactor(0j, 1, 3)])
    with pytest.raises(ValueError):
        cor.KernelSpec([cor.KernelFactor(0j, 1, 1)], delta=-1)
    cor.KernelSpec([cor.KernelFactor(0j, 2, 1)], delta=0.1)


def test_batch_closed_after_run(ens):
    b = ens.batch()
    b.add(1, np.ones(ens.grid.size))
    b.run()
    with pytest.raises(RuntimeError):
        b.add(1, np.ones(ens.grid.size))


def test_mu_scaling_is_exact(ens):
    base = cor.correlation(CFG, ensemble=ens)
    par = alg.CouplingParams(F(4, 5), 3.0, 0.5)
    scaled = cor.correlation(alg.InsertionConfig.build(POINTS, [HEAVY] * 3, par), ensemble=ens)
    s1, s2 = (float(s) for s in alg.s_parameters(CFG.alphas, PAR))
    assert scaled.value == pytest.approx(base.value * 3.0 ** -s1 * 0.5 ** -s2, rel=1e-12)


def test_exchange_symmetry_is_bit_identical(ens):
    a = cor.correlation(CFG, ensemble=ens)
    perm = alg.InsertionConfig.build(POINTS[::-1], [HEAVY] * 3, PAR)
    b = cor.correlation(perm, ensemble=ens)
    assert a.value == pytest.approx(b.value, rel=1e-12)


def test_determinism():
    a = cor.correlation(CFG, **SMALL)
    b = cor.correlation(CFG, **SMALL)
    assert a.value == b.value and a.stderr == b.stderr


def test_monotone_in_exponent(ens):
    eng = cor.CorrelatorEngine(CFG, ens.batch())
    I = [np.real(eng.batch.column(c)) for c in eng.base_cols]
    base = eng.base()
    bumped = base * I[0] ** -0.1
    # masses exceed one here, so a larger negative power lowers every sample
    assert np.all(I[0] > 1)
    assert np.all(bumped < base)


def test_constant_kernel_matches_mu_derivative(ens):
    eng = cor.CorrelatorEngine(CFG, ens.batch())
    terms = cor.integrated_insertion_terms(eng, cor.KernelSpec([cor.KernelFactor(0j, 0, 1)]))
    ints = eng.term_samples(terms)
    corr = eng.correlation_samples()
    s1 = eng.s[0]
    # pathwise: mu_1 int <V_{gamma e1} V> = s_1 <V>
    assert np.allclose(ints, s1 * corr / float(PAR.mu1), rtol=1e-10)


def test_kpz_identity_and_probe(ens):
    rep = cor.kpz_residual(CFG, ens)
    assert max(abs(r) for r in rep.residual) < 1e-8 * max(abs(v) for v in rep.lhs)
    probe = cor.kpz_residual(CFG, ens, lhs_alphas=[HEAVY * F(12, 10)] * 3)
    assert any(abs(r) > 5 * s for r, s in zip(probe.residual, probe.stderr))


def test_antisymmetric_kernel_vanishes_on_average():
    z0 = 0.2 - 1.5j
    cfg = CFG
    ens = cor.Ensemble.for_points(POINTS + [z0], 0.8, 800, 3, n_base=600)
    eng = cor.CorrelatorEngine(cfg, ens.batch())
    kernel = lambda x: (x - z0) / np.abs(x - z0) * cor.theta_cutoff(np.abs(x - z0), 0.2) \
        * np.exp(-np.abs(x - z0) ** 2)
    col = eng.kernel(1, kernel, key="odd")
    terms = [cor.Term(1.0, (col,))]
    est = eng.estimate(terms)
    scale = cor.estimate_from_samples(eng.correlation_samples()).value
    # the angular-odd integral is small compared with the weight it carries
    assert abs(est.value) < max(3 * est.stderr, 0.1 * scale)


def test_mobius_identity_exact():
    rep = cor.mobius_check(CFG, cor.Mobius.identity(), **SMALL)
    assert rep.residual == 0 and rep.stderr == 0


def test_mobius_translation_statistical():
    rep = cor.mobius_check(CFG, cor.Mobius.translation(0.3), **SMALL)
    assert rep.weight_factor == 1
    assert rep.within(3.0)


def test_mobius_errors():
    with pytest.raises(ValueError):
        cor.Mobius(1, 1, 1, 1)
    cfg = alg.InsertionConfig.build([0, 1, 2j], [HEAVY] * 3, PAR)
    with pytest.raises(ValueError):
        cor.mobius_check(cfg, cor.Mobius.inversion(), **SMALL)


def test_fusion_argument_errors():
    with pytest.raises(ValueError):
        cor.fusion_slope(CFG, (1, 1), [0.1, 0.2])
    with pytest.raises(ValueError):
        cor.fusion_slope(CFG, (0, 1), [1e-6, 0.1])
