"""Monte-Carlo evaluation of Toda correlation functions.

The correlation of vertex operators reduces to a deterministic prefactor times
``E[prod_i I_i^(-s_i)]`` where ``I_i`` integrates the reduced weight ``f_i``
against the chaos measure of direction i.  Extra integrated insertions of
``V_{gamma e_i}`` are handled inside the same ensemble: each one contributes a
factor ``J_i[K] = int K f_i dM_i`` and raises ``s_i`` by one, which is exactly
what differentiating the expectation in the cosmological constant produces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Any, Callable, Dict, Hashable, List, Sequence, Tuple

import numpy as np
from scipy.special import gammaln

from . import algebra as alg
from .algebra import CartanVector, InsertionConfig
from .field import (GffCovariance, Sampler, SphereGrid, build_covariance, masses_from_fields,
                    metric)


class SeibergViolation(ValueError):
    def __init__(self, report: alg.SeibergReport):
        super().__init__("; ".join(report.violations))
        self.report = report


def theta_cutoff(r, delta: float):
    """Smooth radial cutoff: 0 on [0, delta/2], 1 on [delta, inf), quintic step between."""
    r = np.asarray(r, dtype=float)
    if delta <= 0:
        return np.ones_like(r)
    t = np.clip(2.0 * r / delta - 1.0, 0.0, 1.0)
    return t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)


def root_pairings(alpha: CartanVector) -> Tuple[float, float]:
    return (float(alpha.w1), float(alpha.w2))


def reduced_weight(x, direction: int, config: InsertionConfig) -> np.ndarray:
    """``f_i(x) = g(x)^(-gamma/4 sum <alpha_k,e_i>) prod |z_k - x|^(-gamma <alpha_k,e_i>)``."""
    x = np.asarray(x, dtype=complex)
    g = float(config.couplings.gamma)
    i = direction - 1
    total = sum(root_pairings(a)[i] for a in config.alphas)
    out = metric(x) ** (-g / 4 * total)
    for ins in config.insertions:
        d = np.abs(ins.z - x)
        if np.any(d == 0):
            raise ValueError(f"reduced weight evaluated at the insertion point {ins.z}")
        out = out * d ** (-g * root_pairings(ins.alpha)[i])
    return out


def log_prefactor(config: InsertionConfig) -> float:
    """Log of ``prod_i Gamma(s_i) mu_i^(-s_i) / gamma * prod_{j<k} |z_j - z_k|^(-<a_j,a_k>)``."""
    par = config.couplings
    s = [float(v) for v in alg.s_parameters(config.alphas, par)]
    g = float(par.gamma)
    out = 0.0
    for si, mu in zip(s, par.mu):
        out += gammaln(si) - si * math.log(float(mu)) - math.log(g)
    pts, al = config.points, config.alphas
    for j in range(len(pts)):
        for k in range(j + 1, len(pts)):
            out -= float(alg.inner(al[j], al[k])) * math.log(abs(pts[j] - pts[k]))
    return out


@dataclass
class CorrelationEstimate:
    value: complex
    stderr: float
    n: int
    params: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise FloatingPointError("non-finite correlation estimate")

    def to_json(self) -> dict:
        v = complex(self.value)
        return {"value": v.real if v.imag == 0 else [v.real, v.imag], "stderr": self.stderr,
                "n": self.n, "params": self.params}


def estimate_from_samples(samples: np.ndarray, params: dict | None = None) -> CorrelationEstimate:
    """Mean with standard error; complex samples use the root of the summed component variances."""
    n = len(samples)
    re = math.fsum(np.real(samples)) / n
    im = math.fsum(np.imag(samples)) / n if np.iscomplexobj(samples) else 0.0
    var = float(np.var(np.real(samples), ddof=1))
    if np.iscomplexobj(samples):
        var += float(np.var(np.imag(samples), ddof=1))
    value = complex(re, im) if im != 0.0 else re
    return CorrelationEstimate(value, math.sqrt(var / n), n, params or {})


class Ensemble:
    """Fixed grid, covariance and seed shared by every estimator built on it."""

    def __init__(self, grid: SphereGrid, gamma: float, n_samples: int, seed: int,
                 block_size: int = 256, workers: int = 1, cov: GffCovariance | None = None):
        self.grid = grid
        self.gamma = float(gamma)
        self.n = int(n_samples)
        self.seed = int(seed)
        self.cov = cov if cov is not None else build_covariance(grid)
        self.sampler = Sampler(self.cov, self.seed, block_size, workers)

    @classmethod
    def for_points(cls, points: Sequence[complex], gamma: float, n_samples: int, seed: int,
                   n_base: int = 1000, grid_options: dict | None = None, **kw) -> "Ensemble":
        grid = SphereGrid.build(n_base, foci=points, **(grid_options or {}))
        return cls(grid, gamma, n_samples, seed, **kw)

    def echo(self) -> dict:
        return {"grid": self.grid.grid_id(), "seed": self.seed, "samples": self.n,
                "gamma": self.gamma}

    def integrate(self, columns: Sequence[Tuple[int, np.ndarray]]) -> np.ndarray:
        """Per-sample sums ``sum_c w(c) m_i(c)`` for every ``(direction, w)`` column."""
        cols = list(columns)
        out = np.empty((self.n, len(cols)), dtype=complex)
        if not cols:
            return out
        W = [np.zeros((self.grid.size, len(cols)), dtype=complex) for _ in range(2)]
        for c, (d, w) in enumerate(cols):
            W[d - 1][:, c] = w
        Wr = [np.ascontiguousarray(x.real) for x in W]
        Wi = [np.ascontiguousarray(x.imag) for x in W]

        def work(start, fields):
            m = masses_from_fields(fields, self.cov, self.gamma)
            block = np.zeros((m.shape[0], len(cols)), dtype=complex)
            for i in range(2):
                block += m[:, i, :] @ Wr[i] + 1j * (m[:, i, :] @ Wi[i])
            return start, block

        for start, block in self.sampler.map_blocks(self.n, work):
            out[start:start + len(block)] = block
        return out

    def batch(self) -> "Batch":
        return Batch(self)


class Batch:
    """Collects kernel columns from several estimators and integrates them in one pass."""

    def __init__(self, ensemble: Ensemble):
        self.ensemble = ensemble
        self.columns: List[Tuple[int, np.ndarray]] = []
        self.keys: Dict[Hashable, int] = {}
        self.result: np.ndarray | None = None

    def add(self, direction: int, values: np.ndarray, key: Hashable | None = None) -> int:
        if self.result is not None:
            raise RuntimeError("batch already evaluated")
        if key is not None and key in self.keys:
            return self.keys[key]
        self.columns.append((direction, np.asarray(values, dtype=complex)))
        idx = len(self.columns) - 1
        if key is not None:
            self.keys[key] = idx
        return idx

    def run(self) -> np.ndarray:
        if self.result is None:
            self.result = self.ensemble.integrate(self.columns)
        return self.result

    def column(self, idx: int) -> np.ndarray:
        return self.run()[:, idx]


@dataclass(frozen=True)
class Term:
    """``coef`` times one integrated ``V_{gamma e_i}`` per entry of ``extras``.

    Each extra is a column handle whose kernel already includes ``f_i``; the
    represented quantity carries a factor ``(-mu_i)`` per extra vertex, as in
    the Gaussian integration by parts expansion.
    """

    coef: complex
    extras: Tuple[Tuple[int, int], ...] = ()


def rising(s: float, m: int) -> float:
    out = 1.0
    for j in range(m):
        out *= s + j
    return out


class CorrelatorEngine:
    """Estimator of correlations and integrated insertions for one configuration."""

    def __init__(self, config: InsertionConfig, batch: Batch, validate: bool = True,
                 cutoff: Tuple[complex, float] | None = None):
        rep = alg.seiberg_check(config)
        if validate and not rep.ok:
            raise SeibergViolation(rep)
        self.config = config
        self.batch = batch
        self.grid = batch.ensemble.grid
        self.gamma = float(config.couplings.gamma)
        self.s = (float(rep.s1), float(rep.s2))
        self.cutoff = cutoff
        self.weights = [reduced_weight(self.grid.points, i, config) for i in (1, 2)]
        if cutoff is not None:
            # the potential itself is excised around the cutoff point
            th = theta_cutoff(np.abs(self.grid.points - cutoff[0]), cutoff[1])
            self.weights = [w * th for w in self.weights]
        self.base_cols = [batch.add(i, self.weights[i - 1], key=("I", id(self), i)) for i in (1, 2)]
        self.log_pref = log_prefactor(config)

    def kernel(self, direction: int, values: np.ndarray | Callable, key: Hashable | None = None
               ) -> Tuple[int, int]:
        vals = values(self.grid.points) if callable(values) else values
        full_key = None if key is None else ("K", id(self), direction, key)
        return (direction, self.batch.add(direction, self.weights[direction - 1] * vals, full_key))

    def base(self) -> np.ndarray:
        """Per-sample ``prod_i I_i^(-s_i)`` (without the deterministic prefactor)."""
        I = [np.real(self.batch.column(c)) for c in self.base_cols]
        return np.exp(-self.s[0] * np.log(I[0]) - self.s[1] * np.log(I[1]))

    def term_samples(self, terms: Sequence[Term], include_prefactor: bool = True) -> np.ndarray:
        I = [np.real(self.batch.column(c)) for c in self.base_cols]
        acc = np.zeros(self.batch.ensemble.n, dtype=complex)
        for t in terms:
            counts = [0, 0]
            prod = np.ones(self.batch.ensemble.n, dtype=complex)
            for d, col in t.extras:
                counts[d - 1] += 1
                prod = prod * self.batch.column(col)
            factor = (-1) ** sum(counts)
            for i in (0, 1):
                factor *= rising(self.s[i], counts[i])
                if counts[i]:
                    prod = prod / I[i] ** counts[i]
            acc += t.coef * factor * prod
        out = acc * self.base()
        if include_prefactor:
            out = out * math.exp(self.log_pref)
        return out

    def estimate(self, terms: Sequence[Term], **extra) -> CorrelationEstimate:
        params = {"config": config_echo(self.config), **self.batch.ensemble.echo(), **extra}
        return estimate_from_samples(self.term_samples(terms), params)

    def correlation_samples(self) -> np.ndarray:
        return self.term_samples([Term(1.0)])


def config_echo(config: InsertionConfig) -> dict:
    par = config.couplings
    return {"gamma": float(par.gamma), "mu": [float(par.mu1), float(par.mu2)],
            "insertions": [{"z": [ins.z.real, ins.z.imag],
                            "alpha": [float(ins.alpha.w1), float(ins.alpha.w2)]}
                           for ins in config.insertions]}


def _ensemble_for(config: InsertionConfig, n_samples: int, seed: int, **kw) -> Ensemble:
    return Ensemble.for_points(config.points, float(config.couplings.gamma), n_samples, seed, **kw)


def correlation(config: InsertionConfig, ensemble: Ensemble | None = None, n_samples: int = 4000,
                seed: int = 0, **kw) -> CorrelationEstimate:
    ens = ensemble or _ensemble_for(config, n_samples, seed, **kw)
    batch = ens.batch()
    eng = CorrelatorEngine(config, batch)
    return eng.estimate([Term(1.0)])


@dataclass
class KernelFactor:
    """One integrated vertex: kernel ``(z - x)^(-power)`` (conjugated if ``conj``)."""

    z: complex
    power: int
    direction: int
    conj: bool = False


@dataclass
class KernelSpec:
    factors: List[KernelFactor]
    center: complex | None = None
    delta: float = 0.0

    def __post_init__(self):
        for f in self.factors:
            if f.power < 0:
                raise ValueError("kernel powers must be non-negative")
            if f.direction not in (1, 2):
                raise ValueError("kernel directions must be 1 or 2")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if self.delta == 0:
            for f in self.factors:
                if f.power >= 2:
                    raise ValueError(
                        f"kernel power {f.power} at {f.z} is not absolutely integrable; a cutoff delta > 0 is required")

    def values(self, f: KernelFactor, x: np.ndarray) -> np.ndarray:
        d = np.conj(f.z - x) if f.conj else (f.z - x)
        out = np.ones_like(x, dtype=complex) if f.power == 0 else d ** (-f.power)
        if self.delta > 0:
            c = self.center if self.center is not None else f.z
            out = out * theta_cutoff(np.abs(x - c), self.delta)
        return out


def integrated_insertion_terms(engine: CorrelatorEngine, kernel: KernelSpec) -> List[Term]:
    extras = tuple(engine.kernel(f.direction, lambda x, f=f: kernel.values(f, x),
                                 key=("spec", f.z, f.power, f.conj, kernel.center, kernel.delta))
                   for f in kernel.factors)
    # the Term represents prod(-mu_i) times the integral
    scale = 1.0
    for f in kernel.factors:
        scale *= -1.0 / float(engine.config.couplings.mu[f.direction - 1])
    return [Term(scale, extras)]


def integrated_insertion(config: InsertionConfig, kernel: KernelSpec,
                         ensemble: Ensemble | None = None, n_samples: int = 4000, seed: int = 0,
                         **kw) -> CorrelationEstimate:
    """``int K(x_1..x_m) <prod_b V_{gamma e_{i_b}}(x_b) prod_k V_{alpha_k}(z_k)> d^2x``."""
    ens = ensemble or _ensemble_for(config, n_samples, seed, **kw)
    batch = ens.batch()
    eng = CorrelatorEngine(config, batch)
    return eng.estimate(integrated_insertion_terms(eng, kernel))


@dataclass
class KpzReport:
    residual: List[complex]
    stderr: List[float]
    lhs: List[complex]
    rhs: List[complex]
    omega_residual: List[complex]
    omega_stderr: List[float]
    n: int

    def within(self, k: float = 3.0) -> bool:
        return all(abs(r) <= k * s for r, s in zip(self.residual, self.stderr))


def kpz_residual(config: InsertionConfig, ensemble: Ensemble | None = None,
                 lhs_alphas: Sequence[CartanVector] | None = None, n_samples: int = 4000,
                 seed: int = 0, **kw) -> KpzReport:
    """``(sum alpha - 2Q) <V> - gamma sum_i mu_i e_i int <V_{gamma e_i}(x) V> d^2x``.

    Components are given on the simple-root coordinates (pairings with the
    fundamental weights are the scalar identities ``omega_residual``).
    ``lhs_alphas`` replaces the weights on the left-hand side only, which is
    used as a sensitivity probe.
    """
    ens = ensemble or _ensemble_for(config, n_samples, seed, **kw)
    batch = ens.batch()
    eng = CorrelatorEngine(config, batch)
    par = config.couplings
    Q = alg.background_charge(par)
    tot = alg.ZERO
    for a in (lhs_alphas if lhs_alphas is not None else config.alphas):
        tot = tot + a
    lhs_vec = (tot - Q * 2).to_float()
    terms = [integrated_insertion_terms(eng, KernelSpec([KernelFactor(0j, 0, i)])) for i in (1, 2)]
    corr = eng.correlation_samples()
    ints = [eng.term_samples(t) for t in terms]
    g = float(par.gamma)
    # both sides expanded on omega_1, omega_2
    lhs = [corr * lhs_vec.w1, corr * lhs_vec.w2]
    rhs = [np.zeros_like(corr), np.zeros_like(corr)]
    for i, e in enumerate(alg.ROOTS):
        mu = float(par.mu[i])
        rhs[0] = rhs[0] + g * mu * float(e.w1) * ints[i]
        rhs[1] = rhs[1] + g * mu * float(e.w2) * ints[i]
    res = [estimate_from_samples(l - r) for l, r in zip(lhs, rhs)]
    # pairings with omega_i: <v, omega_i> = (G v)_i
    om = []
    for wv in alg.OMEGA:
        gw = [float(alg.inner(alg.OMEGA1, wv)), float(alg.inner(alg.OMEGA2, wv))]
        om.append(estimate_from_samples(gw[0] * (lhs[0] - rhs[0]) + gw[1] * (lhs[1] - rhs[1])))
    return KpzReport([r.value for r in res], [r.stderr for r in res],
                     [estimate_from_samples(x).value for x in lhs],
                     [estimate_from_samples(x).value for x in rhs],
                     [o.value for o in om], [o.stderr for o in om], ens.n)


@dataclass(frozen=True)
class Mobius:
    a: complex
    b: complex
    c: complex
    d: complex

    def __post_init__(self):
        if self.a * self.d - self.b * self.c == 0:
            raise ValueError("degenerate Moebius map (ad - bc = 0)")

    def __call__(self, z):
        return (self.a * z + self.b) / (self.c * z + self.d)

    def derivative(self, z):
        return (self.a * self.d - self.b * self.c) / (self.c * z + self.d) ** 2

    @classmethod
    def identity(cls):
        return cls(1, 0, 0, 1)

    @classmethod
    def translation(cls, t: complex):
        return cls(1, t, 0, 1)

    @classmethod
    def inversion(cls):
        return cls(0, 1, 1, 0)


@dataclass
class MobiusReport:
    original: CorrelationEstimate
    transformed: CorrelationEstimate
    weight_factor: float
    residual: complex
    stderr: float

    def within(self, k: float = 3.0) -> bool:
        return abs(self.residual) <= k * self.stderr


def mobius_check(config: InsertionConfig, psi: Mobius, n_samples: int = 4000, seed: int = 0,
                 **kw) -> MobiusReport:
    """``<V(z)> - prod |psi'(z_l)|^(2 Delta_l) <V(psi z)>``, each side on its own grid.

    The covariance reads ``<V(psi z)> prod |psi'(z_l)|^(2 Delta_l) = <V(z)>``.
    """
    pts = config.points
    if any(psi.c * z + psi.d == 0 for z in pts):
        raise ValueError("Moebius map sends an insertion to infinity")
    new_pts = [complex(psi(z)) for z in pts]
    moved = config.with_points(new_pts)
    par = config.couplings
    fac = 1.0
    for z, a in zip(pts, config.alphas):
        fac *= abs(psi.derivative(z)) ** (2 * float(alg.conformal_weight(a, par)))
    c0 = correlation(config, n_samples=n_samples, seed=seed, **kw)
    if new_pts == list(pts):
        c1 = c0
        resid, se = c0.value - fac * c1.value, 0.0
    else:
        c1 = correlation(moved, n_samples=n_samples, seed=seed, **kw)
        resid = c0.value - fac * c1.value
        se = math.hypot(c0.stderr, fac * c1.stderr)
    return MobiusReport(c0, c1, fac, resid, se)


@dataclass
class FusionReport:
    distances: List[float]
    values: List[float]
    stderrs: List[float]
    slope: float
    slope_stderr: float
    intercept: float


def fusion_slope(config: InsertionConfig, pair: Tuple[int, int], distances: Sequence[float],
                 n_samples: int = 4000, seed: int = 0, direction: complex = 1.0,
                 min_resolution: float = 1e-4, **kw) -> FusionReport:
    """Weighted log-log fit of the correlation against ``|z_k - z_l|``.

    The pair is placed symmetrically about its configured midpoint,
    ``m -+ r * direction / 2``, so the smooth dependence on the pair's position
    cancels to first order.
    """
    k, l = pair
    if k == l:
        raise ValueError("fusion pair must consist of two distinct insertions")
    rs = sorted(float(r) for r in distances)
    if rs[0] < min_resolution:
        raise ValueError(f"distance {rs[0]} is below the lattice resolution {min_resolution}")
    u = complex(direction) / abs(direction)
    mid = 0.5 * (config.points[k] + config.points[l])
    vals, ses = [], []
    for r in rs:
        pts = list(config.points)
        pts[k] = mid - 0.5 * r * u
        pts[l] = mid + 0.5 * r * u
        est = correlation(config.with_points(pts), n_samples=n_samples, seed=seed, **kw)
        vals.append(float(np.real(est.value)))
        ses.append(est.stderr)
    x = np.log(rs)
    y = np.log(vals)
    sy = np.array(ses) / np.array(vals)
    w = 1.0 / np.maximum(sy, 1e-12) ** 2
    A = np.stack([x, np.ones_like(x)], axis=1)
    cov = np.linalg.inv(A.T @ (A * w[:, None]))
    beta = cov @ (A.T @ (w * y))
    return FusionReport(rs, vals, ses, float(beta[0]), float(math.sqrt(cov[0, 0])), float(beta[1]))
