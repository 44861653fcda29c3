"""Domains, metrics, grids and matching distances.

Frequencies live either on the torus T^d (identified with [0,1)^d with
periodic boundary) or inside an axis-aligned box in R^d.  Everything else in
the package measures distances, separations and grid resolutions through the
functions collected here.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Domain:
    """Parameter domain: ``torus`` (T^d) or an axis-aligned ``box``.

    Torus points are canonicalized to [0,1)^d.  Box bounds are a (d, 2) array
    of finite per-coordinate lower/upper limits with lower < upper.
    """

    kind: str
    d: int
    bounds: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("torus", "box"):
            raise GeometryError(f"unknown domain kind {self.kind!r}")
        if self.d < 1:
            raise GeometryError("dimension must be a positive integer")
        if self.kind == "box":
            if self.bounds is None:
                object.__setattr__(self, "bounds", np.array([[0.0, 1.0]] * self.d))
            b = np.asarray(self.bounds, dtype=float)
            if b.shape != (self.d, 2):
                raise GeometryError(f"box bounds must have shape ({self.d}, 2)")
            if not np.all(np.isfinite(b)) or not np.all(b[:, 0] < b[:, 1]):
                raise GeometryError("box bounds must be finite with lower < upper")
            object.__setattr__(self, "bounds", b)
        elif self.bounds is not None:
            raise GeometryError("torus domains carry no bounds")

    @property
    def side_lengths(self) -> np.ndarray:
        if self.kind == "torus":
            return np.ones(self.d)
        return self.bounds[:, 1] - self.bounds[:, 0]

    def canonicalize(self, points):
        """Wrap torus points into [0,1)^d; box points are returned unchanged."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[-1] != self.d:
            raise GeometryError(f"points have dimension {pts.shape[-1]}, expected {self.d}")
        if self.kind == "torus":
            return np.mod(pts, 1.0)
        return pts

    def contains(self, points) -> bool:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[-1] != self.d:
            return False
        if self.kind == "torus":
            return bool(np.all(np.isfinite(pts)))
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return bool(np.all(pts >= lo - 1e-12) and np.all(pts <= hi + 1e-12))

    def diff(self, u, v) -> np.ndarray:
        """Representative of u - v: coordinatewise wrapped into [-1/2, 1/2)
        on the torus, plain difference on a box."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        delta = u - v
        if self.kind == "torus":
            delta = delta - np.round(delta)
        return delta

    def distance(self, u, v) -> float:
        return float(np.linalg.norm(self.diff(u, v)))

    def pairwise_distances(self, pts_a, pts_b) -> np.ndarray:
        """All distances between rows of ``pts_a`` (n, d) and ``pts_b`` (k, d)."""
        a = np.atleast_2d(np.asarray(pts_a, dtype=float))
        b = np.atleast_2d(np.asarray(pts_b, dtype=float))
        delta = a[:, None, :] - b[None, :, :]
        if self.kind == "torus":
            delta = delta - np.round(delta)
        return np.linalg.norm(delta, axis=-1)

    def to_json(self) -> dict:
        out = {"kind": self.kind, "d": self.d}
        if self.kind == "box":
            out["bounds"] = self.bounds.tolist()
        return out

    @staticmethod
    def from_json(obj: dict) -> "Domain":
        bounds = np.asarray(obj["bounds"], dtype=float) if "bounds" in obj else None
        return Domain(kind=obj["kind"], d=int(obj["d"]), bounds=bounds)


def torus_distance(u, v, d: Optional[int] = None) -> float:
    """Wrapped Euclidean distance min_{n in Z^d} |u - v + n| on T^d."""
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    if u.shape != v.shape:
        raise GeometryError(f"dimension mismatch: {u.shape} vs {v.shape}")
    if d is not None and u.size != d:
        raise GeometryError(f"points have dimension {u.size}, expected {d}")
    delta = u - v
    delta = delta - np.round(delta)
    return float(np.linalg.norm(delta))


def euclidean_distance(u, v) -> float:
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    if u.shape != v.shape:
        raise GeometryError(f"dimension mismatch: {u.shape} vs {v.shape}")
    return float(np.linalg.norm(u - v))


def min_separation(points, domain: Domain) -> float:
    """Minimum pairwise distance of a point set in the domain metric.

    Returns +inf for a single point: no pair exists, and downstream
    exclusion radii built from the separation then impose no constraint.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 0:
        raise GeometryError("empty point set has no separation")
    if pts.shape[0] == 1:
        return math.inf
    dist = domain.pairwise_distances(pts, pts)
    iu = np.triu_indices(pts.shape[0], k=1)
    return float(dist[iu].min())


@dataclass(frozen=True)
class Grid:
    """Finite evaluation grid.

    Uniform lattices carry per-axis ``counts`` and ``spacing`` and enumerate
    their points lexicographically (first axis slowest); the mesh norm of such
    a lattice is known in closed form.  Arbitrary point sets are supported
    through ``from_points`` with an estimated mesh.
    """

    domain: Domain
    counts: Optional[tuple] = None
    spacing: Optional[np.ndarray] = None
    explicit_points: Optional[np.ndarray] = field(default=None, repr=False)
    mesh: float = float("nan")
    mesh_is_estimate: bool = False

    @property
    def size(self) -> int:
        if self.counts is not None:
            return int(np.prod(self.counts))
        return self.explicit_points.shape[0]

    @property
    def is_uniform(self) -> bool:
        return self.counts is not None

    @cached_property
    def points(self) -> np.ndarray:
        if self.explicit_points is not None:
            return self.explicit_points
        axes = self._axes()
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def _axes(self):
        d = self.domain.d
        axes = []
        for j in range(d):
            n = self.counts[j]
            g = self.spacing[j]
            if self.domain.kind == "torus":
                axes.append(np.arange(n) * g)
            else:
                lo = self.domain.bounds[j, 0]
                axes.append(lo + (np.arange(n) + 0.5) * g)
        return axes

    def index_to_point(self, index) -> np.ndarray:
        """Coordinates of a multi-index without materializing all points."""
        idx = np.asarray(index, dtype=int)
        g = self.spacing
        if self.domain.kind == "torus":
            return idx * g
        return self.domain.bounds[:, 0] + (idx + 0.5) * g

    def to_json(self) -> dict:
        if not self.is_uniform:
            raise GeometryError("only uniform grids serialize to descriptors")
        return {
            "domain": self.domain.to_json(),
            "counts": list(self.counts),
            "spacing": self.spacing.tolist(),
            "mesh": self.mesh,
        }

    @staticmethod
    def uniform(domain: Domain, counts) -> "Grid":
        counts = tuple(int(n) for n in np.atleast_1d(counts))
        if len(counts) == 1 and domain.d > 1:
            counts = counts * domain.d
        if len(counts) != domain.d:
            raise GeometryError("one count per axis required")
        if any(n < 1 for n in counts):
            raise GeometryError("counts must be positive")
        spacing = domain.side_lengths / np.asarray(counts, dtype=float)
        mesh = 0.5 * float(np.linalg.norm(spacing))
        return Grid(domain=domain, counts=counts, spacing=spacing, mesh=mesh)

    @staticmethod
    def from_points(domain: Domain, points, probe_factor: int = 4) -> "Grid":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[0] == 0:
            raise GeometryError("empty grid")
        est = _probe_mesh_norm(pts, domain, probe_factor)
        return Grid(domain=domain, explicit_points=pts, mesh=est, mesh_is_estimate=True)


def _probe_mesh_norm(points, domain: Domain, probe_factor: int) -> float:
    """Covering radius estimate against a dense probe lattice."""
    n_pts = points.shape[0]
    per_axis = max(2, int(math.ceil(probe_factor * n_pts ** (1.0 / domain.d))))
    per_axis = min(per_axis, max(2, int((2 ** 22) ** (1.0 / domain.d))))
    probe = Grid.uniform(domain, per_axis).points
    best = np.full(probe.shape[0], np.inf)
    chunk = max(1, (2 ** 22) // max(n_pts, 1))
    for start in range(0, probe.shape[0], chunk):
        block = probe[start:start + chunk]
        dist = domain.pairwise_distances(block, points)
        best[start:start + block.shape[0]] = dist.min(axis=1)
    return float(best.max())


def mesh_norm(grid: Grid) -> float:
    """Covering radius of a grid: max over the domain of the distance to
    the nearest grid point.  Closed form for uniform lattices, probe-based
    estimate otherwise."""
    if grid.size == 0:
        raise GeometryError("empty grid")
    if grid.is_uniform:
        return 0.5 * float(np.linalg.norm(grid.spacing))
    return grid.mesh


def make_uniform_grid(domain: Domain, target_mesh: float,
                      max_points: int = 2 ** 24) -> Grid:
    """Power-of-two-per-axis lattice resolving ``target_mesh``.

    Axis counts double until the full cell diagonal ``||spacing||`` drops to
    ``target_mesh``, so the realized mesh norm is at most half the target.
    Power-of-two counts keep the landscape evaluation FFT-friendly.  Raises if
    the requested resolution would exceed the point budget.
    """
    if target_mesh <= 0:
        raise GeometryError("target_mesh must be positive")
    sides = domain.side_lengths
    counts = np.ones(domain.d, dtype=int)
    while True:
        spacing = sides / counts
        if float(np.linalg.norm(spacing)) <= target_mesh:
            break
        j = int(np.argmax(spacing))
        counts[j] *= 2
        if np.prod(counts.astype(float)) > max_points:
            raise GeometryError(
                f"target mesh {target_mesh} needs more than {max_points} points")
    return Grid.uniform(domain, counts)


def matching_distance(truth, estimate, domain: Domain) -> float:
    """Bottleneck matching distance between equally sized point sets.

    Binary search over the candidate pairwise distances; feasibility of each
    candidate is a bipartite perfect-matching test.  Exact, and zero iff the
    two sets coincide as multisets.
    """
    a = np.atleast_2d(np.asarray(truth, dtype=float))
    b = np.atleast_2d(np.asarray(estimate, dtype=float))
    if a.shape[0] != b.shape[0]:
        raise GeometryError(f"size mismatch: {a.shape[0]} vs {b.shape[0]}")
    s = a.shape[0]
    if s == 0:
        return 0.0
    dist = domain.pairwise_distances(a, b)
    if s == 1:
        return float(dist[0, 0])
    candidates = np.unique(dist)
    lo, hi = 0, candidates.size - 1
    # smallest candidate radius admitting a perfect matching
    while lo < hi:
        mid = (lo + hi) // 2
        if _perfect_matching_exists(dist <= candidates[mid]):
            hi = mid
        else:
            lo = mid + 1
    return float(candidates[lo])


def _perfect_matching_exists(adjacency: np.ndarray) -> bool:
    s = adjacency.shape[0]
    if not adjacency.any(axis=1).all() or not adjacency.any(axis=0).all():
        return False
    match = maximum_bipartite_matching(csr_matrix(adjacency), perm_type="column")
    return bool((match >= 0).all())


def matching_distance_bruteforce(truth, estimate, domain: Domain) -> float:
    """Exhaustive min-over-permutations oracle; practical for s <= 8."""
    a = np.atleast_2d(np.asarray(truth, dtype=float))
    b = np.atleast_2d(np.asarray(estimate, dtype=float))
    if a.shape[0] != b.shape[0]:
        raise GeometryError("size mismatch")
    dist = domain.pairwise_distances(a, b)
    s = a.shape[0]
    best = math.inf
    for perm in itertools.permutations(range(s)):
        cost = max(dist[i, perm[i]] for i in range(s))
        best = min(best, cost)
    return float(best)
