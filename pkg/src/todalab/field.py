"""Sphere discretisation, Green kernel, vector GFF sampling and chaos masses.

The plane is identified with the unit sphere through stereographic projection
from the north pole, under which the round metric reads
``4 / (1 + |z|^2)^2 |dz|^2``.  Cells are spherical Voronoi cells of a
quasi-uniform point set, refined by polar patches around chosen focus points.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, List, Sequence

import numpy as np
from scipy.spatial import SphericalVoronoi, cKDTree

LOG2_MINUS_HALF = math.log(2.0) - 0.5
CARTAN = np.array([[2.0, -1.0], [-1.0, 2.0]])
# mean of log(1/|x-y|) over a disk of radius a is log(1/a) + 1/4
_DISK_SELF_SHIFT = math.exp(-0.25)


def metric(z) -> np.ndarray:
    """Round metric density ``4 / (1 + |z|^2)^2``."""
    z = np.asarray(z)
    return 4.0 / (1.0 + np.abs(z) ** 2) ** 2


def log_metric_derivative(z, p: int):
    """``d^p/dz^p log metric(z)`` (holomorphic derivative, p >= 1)."""
    z = np.asarray(z, dtype=complex)
    zb = np.conj(z)
    return 2.0 * (-1) ** p * math.factorial(p - 1) * zb ** p / (1.0 + np.abs(z) ** 2) ** p


def green(x, y):
    """Green kernel of the round sphere with vanishing mean."""
    x = np.asarray(x, dtype=complex)
    y = np.asarray(y, dtype=complex)
    d = np.abs(x - y)
    if np.any(d == 0):
        raise ValueError("green kernel evaluated at coincident points")
    out = -np.log(d) - 0.25 * (np.log(metric(x)) + np.log(metric(y))) + LOG2_MINUS_HALF
    return out if out.ndim else float(out)


def to_sphere(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    r2 = np.abs(z) ** 2
    return np.stack([2 * z.real, 2 * z.imag, r2 - 1.0], axis=-1) / (r2 + 1.0)[..., None]


def from_sphere(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return (v[..., 0] + 1j * v[..., 1]) / (1.0 - v[..., 2])


def fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    zc = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - zc ** 2)
    phi = math.pi * (3.0 - math.sqrt(5.0)) * np.arange(n)
    return np.stack([r * np.cos(phi), r * np.sin(phi), zc], axis=-1)


@dataclass
class Patch:
    center: complex
    radius: float
    ring_radii: np.ndarray
    n_sectors: int
    start: int
    auxiliary: bool = False

    @property
    def size(self) -> int:
        return len(self.ring_radii) * self.n_sectors

    def ring_slice(self, j: int) -> slice:
        a = self.start + j * self.n_sectors
        return slice(a, a + self.n_sectors)


@dataclass
class SphereGrid:
    points: np.ndarray
    areas: np.ndarray
    patches: List[Patch] = field(default_factory=list)
    n_base: int = 0
    sector_eps: np.ndarray | None = None

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def flat_areas(self) -> np.ndarray:
        return self.areas / metric(self.points)

    @property
    def eps(self) -> np.ndarray:
        """Effective radius of each cell, matched to the disk self-average of the log.

        Patch cells use the annular sector between neighbouring rings rather
        than their Voronoi area, which for the innermost ring also contains the
        central disk.  Other cells are capped at half the distance to their
        nearest neighbour, which only binds for irregular cells squeezed
        against a patch.
        """
        eps = np.sqrt(self.flat_areas / math.pi) * _DISK_SELF_SHIFT
        xy = np.stack([self.points.real, self.points.imag], axis=1)
        nn = cKDTree(xy).query(xy, k=2)[0][:, 1]
        eps = np.minimum(eps, 0.5 * nn)
        if self.sector_eps is not None:
            mask = np.isfinite(self.sector_eps)
            eps[mask] = self.sector_eps[mask]
        return eps

    @property
    def total_area(self) -> float:
        return math.fsum(self.areas)

    def patch_for(self, z: complex, tol: float = 1e-12) -> Patch | None:
        for p in self.patches:
            if not p.auxiliary and abs(p.center - z) <= tol * (1 + abs(z)):
                return p
        return None

    def grid_id(self) -> str:
        focal = sum(1 for p in self.patches if not p.auxiliary)
        return f"fib{self.n_base}-p{focal}-M{self.size}"

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["re", "im", "area", "eps"])
            for z, a, e in zip(self.points, self.areas, self.eps):
                w.writerow([repr(z.real), repr(z.imag), repr(a), repr(e)])

    @classmethod
    def build(cls, n_base: int = 1000, foci: Sequence[complex] = (), n_rings: int = 9,
              n_sectors: int = 16, ratio: float = 0.6, patch_radius: float | None = None,
              max_patch_fraction: float = 0.35) -> "SphereGrid":
        """Quasi-uniform grid with polar refinement patches around ``foci``.

        Each patch is a family of ``n_rings`` concentric rings at geometric
        radii ``R * ratio**(j + 1/2)`` carrying ``n_sectors`` points each.
        Within a ring all cells are given the same flat area, so that angular
        sums of ``(x - c)^(-p)`` cancel exactly for ``p`` not a multiple of
        ``n_sectors``.
        """
        foci = [complex(c) for c in foci]
        for a in range(len(foci)):
            for b in range(a + 1, len(foci)):
                if abs(foci[a] - foci[b]) == 0:
                    raise ValueError("duplicate focus points")
        base = from_sphere(fibonacci_sphere(n_base))
        h_sphere = math.sqrt(4 * math.pi / n_base)

        def default_radius(c):
            if patch_radius is not None:
                return patch_radius * (1 + abs(c) ** 2) / 2
            return n_sectors * h_sphere * (1 + abs(c) ** 2) / 2 / (2 * math.pi)

        # (center, outer radius, ring count, auxiliary flag)
        specs = []
        for a, c in enumerate(foci):
            R = default_radius(c)
            others = [abs(c - o) for b, o in enumerate(foci) if b != a]
            if others:
                R = min(R, max_patch_fraction * min(others))
            specs.append((c, R, n_rings, False))
        for members in _close_clusters(foci, [default_radius(c) for c in foci]):
            # bridge the gap between the base grid and tightly capped patches
            pts_c = [foci[m] for m in members]
            center = sum(pts_c) / len(pts_c)
            inner = 2 * max(abs(z - center) for z in pts_c)
            R = default_radius(center)
            count = int(math.floor(math.log(inner / R) / math.log(ratio) - 0.5))
            if count >= 1:
                specs.append((center, R, count, True))
        keep = np.ones(len(base), dtype=bool)
        for c, R, _, _ in specs:
            keep &= np.abs(base - c) >= R
        pts = [base[keep]]
        patches = []
        start = int(keep.sum())
        for c, R, count, aux in specs:
            rr = R * ratio ** (np.arange(count) + 0.5)
            ring_pts = []
            for j, r in enumerate(rr):
                ang = 2 * math.pi * (np.arange(n_sectors) + 0.5 * (j % 2)) / n_sectors
                ring_pts.append(c + r * np.exp(1j * ang))
            pts.append(np.concatenate(ring_pts))
            patches.append(Patch(c, R, rr, n_sectors, start, aux))
            start += count * n_sectors
        points = np.concatenate(pts)
        sv = SphericalVoronoi(to_sphere(points), radius=1.0, center=np.zeros(3))
        areas = sv.calculate_areas()
        g = metric(points)
        sector_eps = np.full(len(points), np.nan)
        for p in patches:
            for j, r in enumerate(p.ring_radii):
                sl = p.ring_slice(j)
                areas[sl] = areas[sl].sum() * g[sl] / g[sl].sum()
                sector = math.pi * r ** 2 * (1 / ratio - ratio) / n_sectors
                sector_eps[sl] = math.sqrt(sector / math.pi) * _DISK_SELF_SHIFT
        return cls(points=points, areas=areas, patches=patches, n_base=n_base,
                   sector_eps=sector_eps)


def _close_clusters(foci: Sequence[complex], radii: Sequence[float]) -> List[List[int]]:
    """Groups of foci linked by separations below their default patch radius."""
    parent = list(range(len(foci)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a in range(len(foci)):
        for b in range(a + 1, len(foci)):
            if abs(foci[a] - foci[b]) < 0.5 * min(radii[a], radii[b]):
                parent[find(a)] = find(b)
    groups: dict = {}
    for a in range(len(foci)):
        groups.setdefault(find(a), []).append(a)
    return [g for g in groups.values() if len(g) > 1]


class NotPositiveSemidefinite(ValueError):
    def __init__(self, eigenvalue: float, index: int, tolerance: float):
        super().__init__(
            f"regularised Green matrix is not PSD: eigenvalue {eigenvalue:.6g} "
            f"(index {index}) below tolerance -{tolerance:.3g}")
        self.eigenvalue = eigenvalue
        self.index = index


@dataclass
class GffCovariance:
    """Covariance ``A (x) G`` of the two omega-components of the field."""

    grid: SphereGrid
    green_matrix: np.ndarray
    factor: np.ndarray
    cell_variance: np.ndarray
    min_eigenvalue: float

    @property
    def cartan(self) -> np.ndarray:
        return CARTAN

    def dense(self) -> np.ndarray:
        """Full matrix over (direction, point) pairs, direction-major."""
        return np.kron(CARTAN, self.green_matrix)

    def entry(self, m: int, i: int, n: int, j: int) -> float:
        return CARTAN[i - 1, j - 1] * self.green_matrix[m, n]


def green_matrix(grid: SphereGrid) -> np.ndarray:
    z = grid.points
    with np.errstate(divide="ignore"):
        G = -np.log(np.abs(z[:, None] - z[None, :]))
    lg = np.log(metric(z))
    G += -0.25 * (lg[:, None] + lg[None, :]) + LOG2_MINUS_HALF
    np.fill_diagonal(G, -np.log(grid.eps) - 0.5 * lg + LOG2_MINUS_HALF)
    return G


def center_green(G: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Project out the weighted mean so the sampled field has zero sphere average.

    The continuum kernel integrates to zero against the metric; the
    quadrature version only does so approximately, and the small residual
    shows up as a negative eigenvalue along the constant direction.
    """
    W = weights.sum()
    a = G @ weights / W
    b = weights @ a / W
    return G - a[:, None] - a[None, :] + b


def build_covariance(grid: SphereGrid, tolerance: float = 1e-9) -> GffCovariance:
    """Regularised, mean-projected Green matrix and its square-root factor.

    Negative eigenvalues smaller in size than ``tolerance * max eigenvalue``
    are clipped; anything larger raises :class:`NotPositiveSemidefinite`.
    """
    if grid.size < 2:
        raise ValueError("grid needs at least two points")
    G = center_green(green_matrix(grid), grid.areas)
    lam, vec = np.linalg.eigh(G)
    tol = tolerance * lam[-1]
    if lam[0] < -tol:
        raise NotPositiveSemidefinite(float(lam[0]), 0, tol)
    keep = lam > tol
    L = vec[:, keep] * np.sqrt(lam[keep])
    var = np.einsum("ij,ij->i", L, L)
    return GffCovariance(grid, G, L, var, float(lam[0]))


def block_generator(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(block)])))


@dataclass
class GffSample:
    values: np.ndarray  # shape (2, M): omega-components X_1, X_2
    index: int
    seed: int


def _block_fields(cov: GffCovariance, seed: int, block: int, count: int) -> np.ndarray:
    rng = block_generator(seed, block)
    Mr = cov.factor.shape[1]
    z = rng.standard_normal((count, 2, Mr))
    y = z @ cov.factor.T
    la = np.linalg.cholesky(CARTAN)
    return np.einsum("ij,bjm->bim", la, y)


@dataclass
class Sampler:
    """Counter-based sampler: sample ``n`` always comes from block ``n // block_size``."""

    cov: GffCovariance
    seed: int
    block_size: int = 256
    workers: int = 1

    def blocks(self, n: int) -> List[tuple]:
        out = []
        for b in range(0, (n + self.block_size - 1) // self.block_size):
            start = b * self.block_size
            out.append((b, start, min(self.block_size, n - start)))
        return out

    def fields(self, block: int, count: int) -> np.ndarray:
        return _block_fields(self.cov, self.seed, block, self.block_size)[:count]

    def map_blocks(self, n: int, fn) -> list:
        """Apply ``fn(start, fields)`` to every block; results are in block order."""
        jobs = self.blocks(n)

        def run(job):
            b, start, count = job
            return fn(start, self.fields(b, count))

        if self.workers <= 1:
            return [run(j) for j in jobs]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(run, jobs))


def sample_gff(cov: GffCovariance, n: int, seed: int, block_size: int = 256) -> Iterator[GffSample]:
    sampler = Sampler(cov, seed, block_size)
    for b, start, count in sampler.blocks(n):
        vals = sampler.fields(b, count)
        for j in range(count):
            yield GffSample(vals[j], start + j, seed)


@dataclass
class GmcSample:
    masses: np.ndarray
    direction: int


def mass_normalizer(cov: GffCovariance, gamma: float) -> np.ndarray:
    """``-1/2 Var <gamma e_i, X(cell)>``; identical for both directions."""
    return -0.5 * gamma ** 2 * CARTAN[0, 0] * cov.cell_variance


def masses_from_fields(fields: np.ndarray, cov: GffCovariance, gamma: float) -> np.ndarray:
    """Cell masses for both directions from an array of fields ``(..., 2, M)``.

    Since ``<e_i, X> = X_i`` in the omega basis, the chaos in direction i
    exponentiates the i-th component.
    """
    if gamma == 0:
        return np.broadcast_to(cov.grid.areas, fields.shape).copy()
    return cov.grid.areas * np.exp(gamma * fields + mass_normalizer(cov, gamma))


def gmc_masses(sample: GffSample, direction: int, gamma: float, cov: GffCovariance) -> GmcSample:
    if direction not in (1, 2):
        raise ValueError(f"direction must be 1 or 2, got {direction}")
    m = masses_from_fields(sample.values[direction - 1], cov, gamma)
    return GmcSample(m, direction)


def disk_second_moment(radius: float, gamma: float, tol: float = 1e-10) -> float:
    """Quadrature value of ``E[M(D)^2]`` for the disk ``|z| < radius`` in one direction.

    Equals the double integral of ``exp(2 gamma^2 G(x, y))`` against the round
    metric. The angular integral is done in closed form through
    ``2F1(a/2, a/2; 1; t^2)`` with ``a = 2 gamma^2``.
    """
    from scipy.integrate import quad
    from scipy.special import hyp2f1

    a = 2.0 * gamma ** 2
    b = 1.0 - 0.5 * gamma ** 2

    def radial(u):
        return u * metric(u) ** b

    def angular(u, v):
        hi, lo = max(u, v), min(u, v)
        return 2.0 * math.pi * hi ** (-a) * hyp2f1(a / 2, a / 2, 1.0, (lo / hi) ** 2)

    def inner(u):
        val, _ = quad(lambda v: radial(v) * angular(u, v), 0.0, radius, points=[u],
                      epsabs=tol, epsrel=tol, limit=200)
        return radial(u) * val

    outer, _ = quad(inner, 0.0, radius, epsabs=tol, epsrel=tol, limit=200)
    return 2.0 * math.pi * math.exp(a * LOG2_MINUS_HALF) * outer
