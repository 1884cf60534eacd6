"""Ward identities, descendants and current insertions by Gaussian integration by parts.

A differential polynomial in ``d^k phi`` evaluated at a point ``w`` is expanded
over set partitions of its factors.  A factor ``<e_d, d^p phi(w)>`` either
contracts with a vertex insertion ``V_{alpha_k}`` (a closed term
``c_p <e_d, alpha_k> / (w - z_k)^p``) or, together with the other factors of its
block, with one extra potential vertex ``V_{gamma e_i}(x)`` integrated against
``(w - x)^(-P)``.  Self contractions at ``w`` are Wick-subtracted, and the
metric terms are dropped since they sum to the KPZ combination, which vanishes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from . import algebra as alg
from . import symbolic as sym
from .algebra import CartanVector, InsertionConfig
from .correlator import (Batch, CorrelationEstimate, CorrelatorEngine, Ensemble, Term,
                         config_echo, estimate_from_samples, theta_cutoff)
from .field import SphereGrid, log_metric_derivative

CARTAN = ((2, -1), (-1, 2))


def contraction_coefficient(p: int) -> float:
    """``d_w^p`` of ``-log|w - x|`` is this constant times ``(w - x)^(-p)``."""
    if p < 1:
        raise ValueError("derivative order must be positive")
    return (-1) ** p * math.factorial(p - 1) / 2


def set_partitions(items: Sequence) -> Iterable[List[List]]:
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        yield [[first]] + part
        for j in range(len(part)):
            yield part[:j] + [[first] + part[j]] + part[j + 1:]


@dataclass(frozen=True)
class Site:
    """Evaluation point of a local polynomial.

    ``skip`` is the index of the vertex sitting at ``w`` (for descendants), whose
    self contraction is already encoded in the polynomial.  ``pv_delta`` is the
    radius of the radial excision applied to every block kernel around ``w``;
    being rotation invariant it only removes angular moments that average out.
    """

    w: complex
    skip: int | None = None
    pv_delta: float = 0.0


def _float_coeff(c) -> complex:
    if isinstance(c, (int, float, complex)):
        return c
    return complex(c)


def gipp_terms(engine: CorrelatorEngine, poly: sym.DiffPoly, site: Site,
               scale: complex = 1.0) -> List[Term]:
    """Terms whose estimator is ``<poly(w) prod V>`` (closed and integrated parts)."""
    cfg = engine.config
    g = engine.gamma
    pts = cfg.points
    al = [a.to_float() for a in cfg.alphas]
    w = site.w
    others = [k for k in range(len(pts)) if k != site.skip]
    for k in others:
        if pts[k] == w:
            raise ValueError(f"evaluation point {w} coincides with insertion {k}")

    def closed(d: int, p: int) -> complex:
        tot = 0j
        for k in others:
            tot += (al[k].w1 if d == 1 else al[k].w2) / (w - pts[k]) ** p
        return contraction_coefficient(p) * tot

    def column(direction: int, P: int) -> Tuple[int, int]:
        delta = site.pv_delta if site.skip is not None else 0.0

        def kern(x, P=P, delta=delta):
            out = (w - x) ** (-P)
            if delta > 0:
                out = out * theta_cutoff(np.abs(x - w), delta)
            return out

        return engine.kernel(direction, kern, key=("gipp", w, P, delta))

    acc: Dict[Tuple, complex] = {}
    for mono, c in poly.terms.items():
        coef0 = _float_coeff(c) * scale
        factors = list(mono)
        for part in set_partitions(range(len(factors))):
            # each singleton may be closed or attached to its own vertex
            options = []
            for block in part:
                opts = []
                if len(block) == 1:
                    d, p = factors[block[0]]
                    opts.append((closed(d, p), None))
                P = sum(factors[j][1] for j in block)
                for i in (1, 2):
                    cf = 1.0
                    for j in block:
                        d, p = factors[j]
                        cf *= contraction_coefficient(p) * g * CARTAN[d - 1][i - 1]
                    opts.append((cf, (i, P)))
                options.append(opts)
            for choice in _product(options):
                cf = coef0
                extras = []
                for val, ext in choice:
                    cf *= val
                    if ext is not None:
                        extras.append(ext)
                if cf == 0:
                    continue
                key = tuple(sorted(extras))
                acc[key] = acc.get(key, 0) + cf
    terms = []
    for key, cf in acc.items():
        terms.append(Term(cf, tuple(column(i, P) for i, P in key)))
    return terms


def _product(options):
    if not options:
        yield ()
        return
    for head in options[0]:
        for tail in _product(options[1:]):
            yield (head,) + tail


def scaled(terms: Sequence[Term], c: complex) -> List[Term]:
    return [Term(t.coef * c, t.extras) for t in terms]


def correlation_term(c: complex = 1.0) -> List[Term]:
    return [Term(c)]


def default_pv_delta(grid: SphereGrid, z: complex) -> float:
    """Lattice principal value: radius of the innermost ring of the patch at ``z``."""
    p = grid.patch_for(z)
    if p is None:
        raise ValueError(f"no refinement patch at {z}; descendant kernels need one")
    return float(p.ring_radii[-1])


DESCENDANT_RADIUS = 0.05


def descendant_radius(config: InsertionConfig, l: int, factor: float = DESCENDANT_RADIUS) -> float:
    """Default excision radius at ``z_l``: a fixed fraction of the distance to its nearest neighbour."""
    z = config.points[l]
    return factor * min(abs(z - w) for k, w in enumerate(config.points) if k != l)


def _engine(config: InsertionConfig, ensemble: Ensemble, batch: Batch | None = None,
            cutoff=None) -> CorrelatorEngine:
    return CorrelatorEngine(config, batch if batch is not None else ensemble.batch(),
                            cutoff=cutoff)


def _numeric_q(config: InsertionConfig) -> float:
    return float(config.couplings.q)


def descendant_poly(config: InsertionConfig, l: int, tag: str) -> sym.DiffPoly:
    return sym.descendant(tag, config.alphas[l].to_float(), _numeric_q(config))


def descendant_terms(engine: CorrelatorEngine, l: int, tag: str, pv_delta: float | None = None,
                     scale: complex = 1.0) -> List[Term]:
    cfg = engine.config
    z = cfg.points[l]
    pv = descendant_radius(cfg, l) if pv_delta is None else pv_delta
    return gipp_terms(engine, descendant_poly(cfg, l, tag), Site(z, l, pv), scale)


def current_terms(engine: CorrelatorEngine, z0: complex, which: str, scale: complex = 1.0
                  ) -> List[Term]:
    q = _numeric_q(engine.config)
    if which == "T":
        poly = sym.stress_tensor(q)
    elif which == "W":
        poly = sym.w_current(q)
    else:
        raise ValueError(f"current must be 'T' or 'W', got {which!r}")
    return gipp_terms(engine, poly, Site(z0), scale)


def _check_z0(config: InsertionConfig, z0: complex, delta: float):
    if delta <= 0:
        raise ValueError("current insertions need a cutoff delta > 0")
    if any(z == z0 for z in config.points):
        raise ValueError("z0 must differ from every insertion point")


def _ensemble(config: InsertionConfig, ensemble: Ensemble | None, extra_points=(), n_samples=4000,
              seed=0, **kw) -> Ensemble:
    if ensemble is not None:
        return ensemble
    pts = list(config.points) + [complex(z) for z in extra_points]
    return Ensemble.for_points(pts, float(config.couplings.gamma), n_samples, seed, **kw)


def _estimate(engine: CorrelatorEngine, terms: Sequence[Term], **extra) -> CorrelationEstimate:
    return engine.estimate(terms, **extra)


def gipp_insertion(config: InsertionConfig, alpha: CartanVector, p: int, z0: complex,
                   delta: float, ensemble: Ensemble | None = None, **kw) -> CorrelationEstimate:
    """``<<alpha, d^p phi(z0)> prod V>_delta`` with the potential excised around ``z0``."""
    if p >= 2 and delta <= 0:
        raise ValueError("p >= 2 needs a cutoff delta > 0")
    ens = _ensemble(config, ensemble, [z0], **kw)
    eng = _engine(config, ens, cutoff=(z0, delta) if delta > 0 else None)
    poly = sym.field_pairing(alpha.to_float(), p)
    return _estimate(eng, gipp_terms(eng, poly, Site(z0)), z0=[z0.real, z0.imag], delta=delta)


def metric_term_residual(config: InsertionConfig, alpha: CartanVector, p: int, z0: complex,
                         delta: float, ensemble: Ensemble | None = None, **kw) -> CorrelationEstimate:
    """The dropped metric contributions of ``<<alpha, d^p phi(z0)> prod V>_delta``.

    Each contraction carries ``-1/4 d^p log g(z0)`` and the background charge
    adds ``<alpha, Q/2> d^p log g(z0)``; the sum is the KPZ combination paired
    with ``alpha`` and should vanish.
    """
    ens = _ensemble(config, ensemble, [z0], **kw)
    eng = _engine(config, ens, cutoff=(z0, delta) if delta > 0 else None)
    par = config.couplings
    a = alpha.to_float()
    lg = complex(log_metric_derivative(z0, p))
    tot = config.total_weight().to_float()
    Q = alg.background_charge(par).to_float()
    closed = -0.25 * lg * float(alg.inner(a, tot)) + 0.5 * lg * float(alg.inner(a, Q))
    terms = [Term(closed)]
    g = float(par.gamma)
    for i, e in enumerate(alg.ROOTS, 1):
        col = eng.kernel(i, lambda x: np.ones_like(x), key=("one",))
        terms.append(Term(-0.25 * lg * g * float(alg.inner(a, e)), (col,)))
    return _estimate(eng, terms)


def derivative_terms(engine: CorrelatorEngine, l: int, scale: complex = 1.0) -> List[Term]:
    return descendant_terms(engine, l, "L-1", pv_delta=0.0, scale=scale)


def derivative_estimate(config: InsertionConfig, l: int, ensemble: Ensemble | None = None,
                        **kw) -> CorrelationEstimate:
    """``d/dz_l <prod V>`` (holomorphic derivative)."""
    ens = _ensemble(config, ensemble, **kw)
    eng = _engine(config, ens)
    return _estimate(eng, derivative_terms(eng, l))


def descendant_estimate(config: InsertionConfig, l: int, which: str,
                        ensemble: Ensemble | None = None, pv_delta: float | None = None,
                        **kw) -> CorrelationEstimate:
    if which not in sym.DESCENDANT_TAGS:
        raise KeyError(f"unknown descendant {which!r}")
    ens = _ensemble(config, ensemble, **kw)
    eng = _engine(config, ens)
    return _estimate(eng, descendant_terms(eng, l, which, pv_delta), descendant=which, index=l)


def current_insertion(config: InsertionConfig, z0: complex, which: str, delta: float,
                      ensemble: Ensemble | None = None, **kw) -> CorrelationEstimate:
    """``<T(z0) prod V>_delta`` or ``<W(z0) prod V>_delta``."""
    _check_z0(config, z0, delta)
    ens = _ensemble(config, ensemble, [z0], **kw)
    eng = _engine(config, ens, cutoff=(z0, delta))
    return _estimate(eng, current_terms(eng, z0, which), current=which, z0=[z0.real, z0.imag],
                     delta=delta)


@dataclass
class WardReport:
    lhs: CorrelationEstimate
    rhs: CorrelationEstimate
    residual: complex
    stderr: float
    deltas: List[float] = dc_field(default_factory=list)
    ladder: List[dict] = dc_field(default_factory=list)
    config: dict = dc_field(default_factory=dict)
    label: str = ""

    def within(self, k: float = 3.0) -> bool:
        return abs(self.residual) <= k * self.stderr

    @property
    def sigma(self) -> float:
        return abs(self.residual) / self.stderr if self.stderr > 0 else (0.0 if self.residual == 0 else math.inf)

    def to_json(self) -> dict:
        r = complex(self.residual)
        return {"label": self.label, "lhs": self.lhs.to_json(), "rhs": self.rhs.to_json(),
                "residual": [r.real, r.imag], "stderr": self.stderr, "sigma": self.sigma,
                "deltas": self.deltas, "ladder": self.ladder, "config": self.config}


def _report(engine: CorrelatorEngine, lhs: Sequence[Term], rhs: Sequence[Term], label: str,
            deltas=(), ladder=()) -> WardReport:
    a = engine.term_samples(lhs)
    b = engine.term_samples(rhs)
    ea, eb = estimate_from_samples(a), estimate_from_samples(b)
    d = estimate_from_samples(a - b)
    return WardReport(ea, eb, complex(ea.value) - complex(eb.value), d.stderr, list(deltas),
                      list(ladder), {"config": config_echo(engine.config),
                                     **engine.batch.ensemble.echo()}, label)


def _weights(config: InsertionConfig):
    par = config.couplings
    return ([float(alg.conformal_weight(a, par)) for a in config.alphas],
            [float(alg.quantum_number(a, par)) for a in config.alphas])


def local_ward_terms(engine: CorrelatorEngine, z0: complex, spin: int,
                     delta_scale: Sequence[float] | None = None, pv_delta=None):
    """LHS and RHS term lists of the local Ward identity at ``z0``.

    ``delta_scale`` optionally rescales the conformal weights on the right-hand
    side (used as a sensitivity probe).
    """
    cfg = engine.config
    pts = cfg.points
    Delta, wq = _weights(cfg)
    if delta_scale is not None:
        Delta = [d * s for d, s in zip(Delta, delta_scale)]
    if spin == 2:
        lhs = current_terms(engine, z0, "T")
        rhs = []
        for l, z in enumerate(pts):
            rhs += correlation_term(Delta[l] / (z0 - z) ** 2)
            rhs += derivative_terms(engine, l, 1 / (z0 - z))
    elif spin == 3:
        lhs = current_terms(engine, z0, "W")
        rhs = []
        for l, z in enumerate(pts):
            u = 1 / (z0 - z)
            rhs += correlation_term(-wq[l] * u ** 3 / 8)
            rhs += descendant_terms(engine, l, "W-1", pv_delta, -u ** 2 / 8)
            rhs += descendant_terms(engine, l, "W-2", pv_delta, -u / 8)
    else:
        raise ValueError(f"spin must be 2 or 3, got {spin}")
    return lhs, rhs


def nearest_distance(config: InsertionConfig, z0: complex) -> float:
    return min(abs(z0 - z) for z in config.points)


def default_ladder(config: InsertionConfig, z0: complex) -> List[float]:
    d = nearest_distance(config, z0)
    return [0.2 * d, 0.1 * d, 0.05 * d]


def local_ward_residual(config: InsertionConfig, z0: complex, spin: int,
                        deltas: Sequence[float] | None = None, ensemble: Ensemble | None = None,
                        delta_scale: Sequence[float] | None = None, **kw) -> WardReport:
    """Local Ward residual on a shared ensemble, for each cutoff of the ladder.

    The headline residual is the one at the smallest cutoff.
    """
    ladder = list(deltas) if deltas is not None else default_ladder(config, z0)
    if any(b >= a for a, b in zip(ladder, ladder[1:])) or ladder[-1] <= 0:
        raise ValueError("delta ladder must be positive and strictly decreasing")
    _check_z0(config, z0, ladder[-1])
    ens = _ensemble(config, ensemble, [z0], **kw)
    batch = ens.batch()
    plans = []
    for delta in ladder:
        eng = CorrelatorEngine(config, batch, cutoff=(z0, delta))
        plans.append((delta, eng, *local_ward_terms(eng, z0, spin, delta_scale)))
    rows, last = [], None
    for delta, eng, lhs, rhs in plans:
        rep = _report(eng, lhs, rhs, f"local spin-{spin}")
        rows.append({"delta": delta, "lhs": [complex(rep.lhs.value).real, complex(rep.lhs.value).imag],
                     "residual": [rep.residual.real, rep.residual.imag], "stderr": rep.stderr})
        last = rep
    last.deltas = ladder
    last.ladder = rows
    last.config["z0"] = [complex(z0).real, complex(z0).imag]
    return last


def global_ward_terms(engine: CorrelatorEngine, n: int, spin: int, pv_delta=None) -> List[Term]:
    cfg = engine.config
    pts = cfg.points
    Delta, wq = _weights(cfg)
    terms: List[Term] = []
    if spin == 2:
        if n not in (0, 1, 2):
            raise ValueError("spin-2 global identities exist for n in 0..2")
        for l, z in enumerate(pts):
            terms += derivative_terms(engine, l, z ** n)
            if n:
                terms += correlation_term(n * z ** (n - 1) * Delta[l])
    elif spin == 3:
        if n not in range(5):
            raise ValueError("spin-3 global identities exist for n in 0..4")
        for l, z in enumerate(pts):
            terms += descendant_terms(engine, l, "W-2", pv_delta, z ** n)
            if n >= 1:
                terms += descendant_terms(engine, l, "W-1", pv_delta, n * z ** (n - 1))
            if n >= 2:
                terms += correlation_term(n * (n - 1) / 2 * z ** (n - 2) * wq[l])
    else:
        raise ValueError(f"spin must be 2 or 3, got {spin}")
    return terms


def global_ward_residual(config: InsertionConfig, n: int, spin: int,
                         ensemble: Ensemble | None = None, pv_delta=None, **kw) -> WardReport:
    ens = _ensemble(config, ensemble, **kw)
    eng = _engine(config, ens)
    terms = global_ward_terms(eng, n, spin, pv_delta)
    rep = _report(eng, terms, [], f"global spin-{spin} n={n}")
    rep.config["n"] = n
    return rep


def global_ward_residuals(config: InsertionConfig, ns: Sequence[int], spin: int,
                          ensemble: Ensemble | None = None, pv_delta=None, **kw) -> List[WardReport]:
    """Several global identities from one integration pass."""
    ens = _ensemble(config, ensemble, **kw)
    eng = _engine(config, ens)
    plans = [(n, global_ward_terms(eng, n, spin, pv_delta)) for n in ns]
    out = []
    for n, terms in plans:
        rep = _report(eng, terms, [], f"global spin-{spin} n={n}")
        rep.config["n"] = n
        out.append(rep)
    return out


def level2_terms(engine: CorrelatorEngine, l: int, which: str, pv_delta=None):
    """``<L_{-2} V>`` or ``<L_{-3} V>`` at insertion l and the Virasoro side."""
    cfg = engine.config
    pts = cfg.points
    Delta, _ = _weights(cfg)
    zl = pts[l]
    if which == "L-2":
        lhs = descendant_terms(engine, l, "L-2", pv_delta)
        rhs = []
        for k, z in enumerate(pts):
            if k == l:
                continue
            rhs += derivative_terms(engine, k, 1 / (zl - z))
            rhs += correlation_term(Delta[k] / (zl - z) ** 2)
    elif which == "L-3":
        lhs = descendant_terms(engine, l, "L-3", pv_delta)
        rhs = []
        for k, z in enumerate(pts):
            if k == l:
                continue
            # mode L_{-3}: sum_k (2 Delta_k / (z_k - z_l)^3 - d_k / (z_k - z_l)^2)
            rhs += derivative_terms(engine, k, -1 / (zl - z) ** 2)
            rhs += correlation_term(-2 * Delta[k] / (zl - z) ** 3)
    else:
        raise ValueError(f"expected 'L-2' or 'L-3', got {which!r}")
    return lhs, rhs


def level2_descendant_check(config: InsertionConfig, l: int, which: str = "L-2",
                            ensemble: Ensemble | None = None, pv_delta=None, **kw) -> WardReport:
    ens = _ensemble(config, ensemble, **kw)
    eng = _engine(config, ens)
    lhs, rhs = level2_terms(eng, l, which, pv_delta)
    rep = _report(eng, lhs, rhs, f"{which} at insertion {l}")
    rep.config["index"] = l
    return rep


def fd_step(grid: SphereGrid, z: complex, rel: float = 1e-2) -> float:
    """Finite-difference step: a fraction of the innermost lattice radius at ``z``.

    On a fixed grid the estimator is a smooth function of ``z_l`` only on the
    scale of the distance to the nearest cell.
    """
    p = grid.patch_for(z)
    scale = float(p.ring_radii[-1]) if p is not None else float(np.min(np.abs(grid.points - z)))
    return rel * scale


def moved_samples(config: InsertionConfig, batch: Batch, l: int, shifts: Sequence[complex]):
    """Correlation samples with ``z_l`` displaced by each shift, on one fixed grid."""
    engines = []
    for s in shifts:
        pts = list(config.points)
        pts[l] = pts[l] + s
        engines.append(CorrelatorEngine(config.with_points(pts), batch))
    return engines


def finite_difference_derivative(config: InsertionConfig, l: int, ensemble: Ensemble,
                                 h: float | None = None) -> Tuple[CorrelationEstimate, CorrelationEstimate]:
    """Central-difference ``d/dz_l`` and the GIPP estimator from the same draws."""
    h = fd_step(ensemble.grid, config.points[l]) if h is None else h
    batch = ensemble.batch()
    eng = CorrelatorEngine(config, batch)
    terms = derivative_terms(eng, l)
    e = moved_samples(config, batch, l, [h, -h, 1j * h, -1j * h])
    c = [x.correlation_samples() for x in e]
    fd = 0.5 * ((c[0] - c[1]) / (2 * h) - 1j * (c[2] - c[3]) / (2 * h))
    return estimate_from_samples(fd), estimate_from_samples(eng.term_samples(terms))


def second_derivative_samples(config: InsertionConfig, l: int, batch: Batch, h: float) -> List:
    """Engines for the nine-point stencil of ``d^2/dz_l^2 = (d_xx - d_yy - 2i d_xy) / 4``."""
    shifts = [0, h, -h, 1j * h, -1j * h, h + 1j * h, h - 1j * h, -h + 1j * h, -h - 1j * h]
    return moved_samples(config, batch, l, shifts)


def combine_second_derivative(engines, h: float) -> np.ndarray:
    c = [e.correlation_samples() for e in engines]
    dxx = (c[1] - 2 * c[0] + c[2]) / h ** 2
    dyy = (c[3] - 2 * c[0] + c[4]) / h ** 2
    dxy = (c[5] - c[6] - c[7] + c[8]) / (4 * h ** 2)
    return (dxx - dyy - 2j * dxy) / 4


def degenerate_w2_check(config: InsertionConfig, l: int, chi: float, ensemble: Ensemble | None = None,
                        h: float | None = None, pv_delta=None, **kw) -> WardReport:
    """For ``alpha_l = -chi omega_1``: ``W_{-2} = -(4/chi) d^2 - (4 chi / 3) L_{-2}``."""
    ens = _ensemble(config, ensemble, **kw)
    h = fd_step(ens.grid, config.points[l]) if h is None else h
    batch = ens.batch()
    eng = CorrelatorEngine(config, batch)
    w2 = descendant_terms(eng, l, "W-2", pv_delta)
    l2 = descendant_terms(eng, l, "L-2", pv_delta)
    stencil = second_derivative_samples(config, l, batch, h)
    a = eng.term_samples(w2)
    b = -(4 / chi) * combine_second_derivative(stencil, h) - (4 * chi / 3) * eng.term_samples(l2)
    ea, eb = estimate_from_samples(a), estimate_from_samples(b)
    d = estimate_from_samples(a - b)
    return WardReport(ea, eb, complex(ea.value) - complex(eb.value), d.stderr, [], [],
                      {"config": config_echo(config), **ens.echo(), "index": l, "chi": chi},
                      "degenerate W-2")


def degenerate_w1_check(config: InsertionConfig, l: int, ensemble: Ensemble | None = None,
                        pv_delta=None, **kw) -> WardReport:
    """``W_{-1} V = (3 w / 2 Delta) L_{-1} V`` for a level-one degenerate weight at ``z_l``.

    Both sides use the same excision radius, so the comparison is pathwise.
    """
    par = config.couplings
    alpha = config.alphas[l]
    kappa = sym.level1_kappa(alpha.to_float(), float(par.q))
    if kappa is None:
        raise ValueError(f"weight {alpha} at insertion {l} is not level-one degenerate")
    factor = 3 * float(alg.quantum_number(alpha, par)) / (2 * float(alg.conformal_weight(alpha, par)))
    ens = _ensemble(config, ensemble, **kw)
    eng = _engine(config, ens)
    lhs = descendant_terms(eng, l, "W-1", pv_delta)
    rhs = descendant_terms(eng, l, "L-1", pv_delta, factor)
    rep = _report(eng, lhs, rhs, "degenerate W-1")
    rep.config.update({"index": l, "factor": factor, "kappa": float(kappa)})
    return rep
