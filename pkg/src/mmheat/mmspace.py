"""Continuum domain descriptions and their discretization into weighted grids.

All grids live on one global lattice: the cell with integer index ``(i, j)``
has its center at ``((i + 1/2) h, (j + 1/2) h)``.  Grids built from different
domains at the same spacing are therefore aligned, which the comparison
routines in :mod:`mmheat.heatflow` rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import DisconnectedDomain, FeatureTooFine, UnsupportedShape


def _as_points(x, dim):
    pts = np.asarray(x, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(1, -1) if pts.shape[0] == dim else pts.reshape(-1, 1)
    if pts.shape[-1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {pts.shape}")
    return pts


def segment_distance(pts, a, b):
    """Euclidean distance from each row of ``pts`` to the closed segment [a, b]."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    ab = b - a
    denom = float(ab @ ab)
    t = np.clip((pts - a) @ ab / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(pts - proj, axis=1)


@dataclass(frozen=True)
class Interval:
    """Open interval ``(a, b)`` of the real line."""

    a: float = 0.0
    b: float = 1.0
    label: str = "interval"

    def __post_init__(self):
        if not self.b > self.a:
            raise ValueError("interval needs b > a")

    dim = 1

    def sdf(self, x):
        x = _as_points(x, 1)[:, 0]
        return np.minimum(x - self.a, self.b - x)

    def bbox(self):
        return np.array([self.a]), np.array([self.b])

    def area(self):
        return self.b - self.a

    def perimeter(self):
        return 2.0

    def feature_size(self):
        return self.b - self.a


@dataclass(frozen=True)
class Disk:
    """Open ball; the ambient dimension is ``len(center)`` (2 or 3)."""

    center: tuple = (0.0, 0.0)
    radius: float = 1.0
    label: str = "disk"

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if len(self.center) not in (2, 3):
            raise ValueError("disk center must be a 2D or 3D point")

    @property
    def dim(self):
        return len(self.center)

    def sdf(self, x):
        pts = _as_points(x, self.dim)
        return self.radius - np.linalg.norm(pts - np.asarray(self.center), axis=1)

    def bbox(self):
        c = np.asarray(self.center)
        return c - self.radius, c + self.radius

    def area(self):
        if self.dim == 2:
            return math.pi * self.radius**2
        return 4.0 / 3.0 * math.pi * self.radius**3

    def perimeter(self):
        if self.dim == 2:
            return 2.0 * math.pi * self.radius
        return 4.0 * math.pi * self.radius**2

    def feature_size(self):
        return self.radius


@dataclass(frozen=True)
class Rect:
    """Open axis-aligned rectangle with lower-left corner ``origin``."""

    origin: tuple = (0.0, 0.0)
    width: float = 1.0
    height: float = 1.0
    label: str = "rect"

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(c) for c in self.origin))
        if not (self.width > 0 and self.height > 0):
            raise ValueError("width and height must be positive")

    dim = 2

    @property
    def center(self):
        return np.array([self.origin[0] + self.width / 2, self.origin[1] + self.height / 2])

    def sdf(self, x):
        pts = _as_points(x, 2)
        half = np.array([self.width / 2, self.height / 2])
        q = np.abs(pts - self.center) - half
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(np.max(q, axis=1), 0.0)
        return -(outside + inside)

    def bbox(self):
        lo = np.asarray(self.origin)
        return lo, lo + np.array([self.width, self.height])

    def vertices(self):
        x0, y0 = self.origin
        return [(x0, y0), (x0 + self.width, y0), (x0 + self.width, y0 + self.height), (x0, y0 + self.height)]

    def area(self):
        return self.width * self.height

    def perimeter(self):
        return 2.0 * (self.width + self.height)

    def feature_size(self):
        return min(self.width, self.height)

    def lattice_aligned(self, h):
        vals = [self.origin[0] / h, self.origin[1] / h, self.width / h, self.height / h]
        return all(abs(v - round(v)) < 1e-9 for v in vals)


def _segments_intersect(p1, p2, q1, q2):
    """Vectorized closed-segment intersection test; p1, p2 are (n, 2) arrays."""

    def orient(a, b, c):
        return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])

    q1 = np.broadcast_to(np.asarray(q1, float), p1.shape)
    q2 = np.broadcast_to(np.asarray(q2, float), p1.shape)
    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    proper = (d1 * d2 <= 0) & (d3 * d4 <= 0)
    # collinear pieces that are disjoint still pass the sign test; reject by bounding boxes
    lo_p = np.minimum(p1, p2)
    hi_p = np.maximum(p1, p2)
    lo_q = np.minimum(q1, q2)
    hi_q = np.maximum(q1, q2)
    overlap = np.all(lo_p <= hi_q + 1e-15, axis=1) & np.all(lo_q <= hi_p + 1e-15, axis=1)
    return proper & overlap


@dataclass(frozen=True)
class Polygon:
    """Open simple polygon; vertices listed counterclockwise."""

    vertices: tuple
    label: str = "polygon"

    def __post_init__(self):
        verts = tuple(tuple(float(c) for c in v) for v in self.vertices)
        object.__setattr__(self, "vertices", verts)
        if len(verts) < 3:
            raise ValueError("polygon needs at least 3 vertices")
        if self.signed_area() <= 0:
            raise ValueError("polygon vertices must be counterclockwise")
        if not self._is_simple():
            raise ValueError("polygon is self-intersecting")

    dim = 2

    def edges(self):
        v = np.asarray(self.vertices)
        return v, np.roll(v, -1, axis=0)

    def signed_area(self):
        v = np.asarray(self.vertices)
        x, y = v[:, 0], v[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def _is_simple(self):
        a, b = self.edges()
        n = len(a)
        for i in range(n):
            for j in range(i + 1, n):
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue
                if _segments_intersect(a[i : i + 1], b[i : i + 1], a[j], b[j])[0]:
                    return False
        return True

    def contains(self, x):
        pts = _as_points(x, 2)
        a, b = self.edges()
        px, py = pts[:, 0:1], pts[:, 1:2]
        ax, ay, bx, by = a[:, 0], a[:, 1], b[:, 0], b[:, 1]
        straddle = (ay > py) != (by > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xcross = ax + (py - ay) * (bx - ax) / (by - ay)
        crossings = np.sum(straddle & (px < xcross), axis=1)
        return crossings % 2 == 1

    def sdf(self, x):
        pts = _as_points(x, 2)
        a, b = self.edges()
        dist = np.min(np.stack([segment_distance(pts, a[k], b[k]) for k in range(len(a))]), axis=0)
        return np.where(self.contains(pts), dist, -dist)

    def bbox(self):
        v = np.asarray(self.vertices)
        return v.min(axis=0), v.max(axis=0)

    def area(self):
        return self.signed_area()

    def perimeter(self):
        a, b = self.edges()
        return float(np.sum(np.linalg.norm(b - a, axis=1)))

    def feature_size(self):
        a, b = self.edges()
        return float(np.min(np.linalg.norm(b - a, axis=1)))


@dataclass(frozen=True)
class Slit:
    """Closed segment removed from a domain; it has no volume and no perimeter."""

    p: tuple
    q: tuple
    label: str = "slit"

    def __post_init__(self):
        object.__setattr__(self, "p", tuple(float(c) for c in self.p))
        object.__setattr__(self, "q", tuple(float(c) for c in self.q))
        if len(self.p) != len(self.q):
            raise ValueError("slit endpoints must share a dimension")

    @property
    def dim(self):
        return len(self.p)

    def distance(self, x):
        return segment_distance(_as_points(x, self.dim), self.p, self.q)

    def sdf(self, x):
        return -self.distance(x)

    def length(self):
        return float(np.linalg.norm(np.subtract(self.q, self.p)))


@dataclass(frozen=True)
class Difference:
    """``outer`` minus the closures of ``removed`` (shapes or slits)."""

    outer: "DomainSpec"
    removed: tuple = ()
    label: str = "difference"

    def __post_init__(self):
        object.__setattr__(self, "removed", tuple(self.removed))
        for r in self.removed:
            if r.dim != self.outer.dim:
                raise ValueError("removed pieces must live in the ambient space of the outer shape")

    @property
    def dim(self):
        return self.outer.dim

    def sdf(self, x):
        pts = _as_points(x, self.dim)
        d_out = self.outer.sdf(pts)
        inside = d_out > 0
        unsigned = np.abs(d_out)
        for r in self.removed:
            if isinstance(r, Slit):
                d = r.distance(pts)
                inside &= d > 0
            else:
                s = r.sdf(pts)
                inside &= s < 0
                d = np.abs(s)
            unsigned = np.minimum(unsigned, d)
        return np.where(inside, unsigned, -unsigned)

    def bbox(self):
        return self.outer.bbox()

    def area(self):
        return self.outer.area() - sum(r.area() for r in self.removed if not isinstance(r, Slit))

    def perimeter(self):
        return self.outer.perimeter() + sum(r.perimeter() for r in self.removed if not isinstance(r, Slit))

    def solids(self):
        return [r for r in self.removed if not isinstance(r, Slit)]

    def slits(self):
        return [r for r in self.removed if isinstance(r, Slit)]

    def feature_size(self):
        sizes = [self.outer.feature_size()]
        for r in self.removed:
            if isinstance(r, Slit):
                sizes.append(r.length())
                continue
            sizes.append(r.feature_size())
            # clearance between a removed solid and the outer boundary
            samples = _boundary_samples(r, 256)
            if len(samples):
                sizes.append(float(np.min(self.outer.sdf(samples))))
        return min(sizes)


DomainSpec = Union[Interval, Disk, Rect, Polygon, Difference]


def _boundary_samples(shape, n):
    if isinstance(shape, Disk) and shape.dim == 2:
        th = np.linspace(0, 2 * np.pi, n, endpoint=False)
        return np.asarray(shape.center) + shape.radius * np.c_[np.cos(th), np.sin(th)]
    if isinstance(shape, (Rect, Polygon)):
        v = np.asarray(shape.vertices() if isinstance(shape, Rect) else shape.vertices)
        w = np.roll(v, -1, axis=0)
        s = np.linspace(0, 1, max(n // len(v), 2), endpoint=False)
        return np.concatenate([a + s[:, None] * (b - a) for a, b in zip(v, w)])
    return np.zeros((0, shape.dim))


def continuum_measure(spec) -> float:
    """Exact Lebesgue measure of the open domain (slits are null sets)."""
    if isinstance(spec, Slit):
        raise UnsupportedShape("a slit is not a domain")
    return float(spec.area())


def continuum_perimeter(spec) -> float:
    """Perimeter of the measure-theoretic boundary; slits do not contribute."""
    if isinstance(spec, Slit):
        raise UnsupportedShape("a slit is not a domain")
    return float(spec.perimeter())


@dataclass(frozen=True, eq=False)
class WeightedGrid:
    """Discrete metric measure space on a block of the global lattice.

    Cell arrays cover the whole block (inside and outside cells); ``edges``
    join adjacent inside cells, and ``boundary_cells`` lists inside cells with a
    lattice neighbor across the Dirichlet boundary.  ``boundary_theta`` is the
    fraction of the lattice step at which the continuum boundary is met, and
    ``boundary_conductance`` already carries the ``1/theta`` factor.
    """

    h: float
    shape: tuple
    index_origin: tuple
    centers: np.ndarray
    measure: np.ndarray
    inside: np.ndarray
    edges: np.ndarray
    conductance: np.ndarray
    boundary_cells: np.ndarray
    boundary_theta: np.ndarray
    boundary_conductance: np.ndarray
    spec: object = None
    meta: dict = field(default_factory=dict)

    @property
    def dim(self):
        return len(self.shape)

    @property
    def n_cells(self):
        return self.centers.shape[0]

    @property
    def inside_index(self):
        return np.flatnonzero(self.inside)

    def total_measure(self):
        return float(self.measure[self.inside].sum())

    def lattice_index(self):
        """Integer global lattice coordinates of every cell, shape (n, dim)."""
        idx = np.indices(self.shape).reshape(self.dim, -1).T
        return idx + np.asarray(self.index_origin)

    def lattice_neighbors(self):
        """All lattice-adjacent pairs ``(a, b)`` of the block, inside or not."""
        ids = np.arange(self.n_cells).reshape(self.shape)
        pairs = []
        for axis in range(self.dim):
            lo = [slice(None)] * self.dim
            hi = [slice(None)] * self.dim
            lo[axis] = slice(0, -1)
            hi[axis] = slice(1, None)
            pairs.append(np.c_[ids[tuple(lo)].ravel(), ids[tuple(hi)].ravel()])
        return np.concatenate(pairs)

    def grid_values(self, values):
        """Reshape per-cell values to the lattice block for plotting."""
        return np.asarray(values).reshape(self.shape)


MIN_THETA = 1e-2


def _boundary_fraction(spec, x_in, x_out, iters=60):
    lo = np.zeros(len(x_in))
    hi = np.ones(len(x_in))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        pts = x_in + mid[:, None] * (x_out - x_in)
        pos = spec.sdf(pts) > 0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    return 0.5 * (lo + hi)


def _check_resolution(spec, h):
    if isinstance(spec, Rect) and spec.lattice_aligned(h):
        # exactly tiled by the lattice; only ask for two cells across
        if h > spec.feature_size() / 2:
            raise FeatureTooFine(f"h={h} leaves fewer than two cells across {spec.label}")
        return
    feature = spec.feature_size()
    if not h < feature / 8:
        raise FeatureTooFine(f"h={h} must be below 1/8 of the smallest feature ({feature:g}) of {spec.label}")


def discretize(spec, h: float, pad: int = 2) -> WeightedGrid:
    """Build the weighted grid of ``spec`` at spacing ``h``.

    Inside cells are those whose centers lie in the open continuum domain.
    Adjacent inside cells are joined by 5-point (2D) or 3-point (1D) edges;
    edges crossing a slit are dropped.
    """
    if spec.dim not in (1, 2):
        raise UnsupportedShape(f"heat grids are 1D or 2D, got a {spec.dim}D domain")
    if not h > 0:
        raise FeatureTooFine("h must be positive")
    _check_resolution(spec, h)

    lo, hi = spec.bbox()
    i_lo = np.floor(np.asarray(lo) / h - 1e-9).astype(int) - pad
    i_hi = np.ceil(np.asarray(hi) / h + 1e-9).astype(int) + pad
    shape = tuple(int(n) for n in (i_hi - i_lo))
    idx = np.indices(shape).reshape(len(shape), -1).T + i_lo
    centers = (idx + 0.5) * h
    inside = spec.sdf(centers) > 0
    n = centers.shape[0]
    cell_measure = h ** spec.dim
    measure = np.full(n, cell_measure)
    base_conductance = cell_measure / h**2

    grid_ids = np.arange(n).reshape(shape)
    edges = []
    b_cells = []
    b_theta = []
    slits = spec.slits() if isinstance(spec, Difference) else []
    for axis in range(spec.dim):
        lo_sl = [slice(None)] * spec.dim
        hi_sl = [slice(None)] * spec.dim
        lo_sl[axis] = slice(0, -1)
        hi_sl[axis] = slice(1, None)
        a = grid_ids[tuple(lo_sl)].ravel()
        b = grid_ids[tuple(hi_sl)].ravel()
        both = inside[a] & inside[b]
        ea, eb = a[both], b[both]
        if slits:
            cut = np.zeros(len(ea), dtype=bool)
            for s in slits:
                cut |= _segments_intersect(centers[ea], centers[eb], s.p, s.q)
            ea, eb = ea[~cut], eb[~cut]
        edges.append(np.c_[ea, eb])
        for src, dst in ((a, b), (b, a)):
            m = inside[src] & ~inside[dst]
            b_cells.append(src[m])
            b_theta.append(_boundary_fraction(spec, centers[src[m]], centers[dst[m]]))

    edges = np.concatenate(edges) if edges else np.zeros((0, 2), int)
    b_cells = np.concatenate(b_cells)
    b_theta = np.clip(np.concatenate(b_theta), MIN_THETA, 1.0)

    ins = np.flatnonzero(inside)
    if len(ins) == 0:
        raise DisconnectedDomain(f"no cell center of {spec.label} lies inside the domain at h={h}")
    local = -np.ones(n, dtype=int)
    local[ins] = np.arange(len(ins))
    adj = coo_matrix((np.ones(len(edges)), (local[edges[:, 0]], local[edges[:, 1]])), shape=(len(ins), len(ins)))
    n_comp, _ = connected_components(adj, directed=False)
    if n_comp > 1:
        raise DisconnectedDomain(f"{spec.label} splits into {n_comp} components at h={h}")

    return WeightedGrid(
        h=float(h),
        shape=shape,
        index_origin=tuple(int(v) for v in i_lo),
        centers=centers,
        measure=measure,
        inside=inside,
        edges=edges,
        conductance=np.full(len(edges), base_conductance),
        boundary_cells=b_cells,
        boundary_theta=b_theta,
        boundary_conductance=base_conductance / b_theta,
        spec=spec,
    )


def collar_box(spec, width: float, h: float) -> Rect:
    """Lattice-aligned rectangle containing ``spec`` with a margin of at least ``width``."""
    if spec.dim != 2:
        raise UnsupportedShape("collar boxes are built for planar domains")
    lo, hi = spec.bbox()
    lo = np.floor((np.asarray(lo) - width) / h) * h
    hi = np.ceil((np.asarray(hi) + width) / h) * h
    return Rect(tuple(lo), float(hi[0] - lo[0]), float(hi[1] - lo[1]), label=f"collar({spec.label})")


def collar_interval(spec, width: float, h: float) -> Interval:
    lo, hi = spec.bbox()
    return Interval(float(np.floor((lo[0] - width) / h) * h), float(np.ceil((hi[0] + width) / h) * h),
                    label=f"collar({spec.label})")


def discretize_with_collar(spec, h: float, width: float):
    """Grid of a box enclosing ``spec`` plus ``width``, and the mask of cells inside ``spec``."""
    box = collar_interval(spec, width, h) if spec.dim == 1 else collar_box(spec, width, h)
    grid = discretize(box, h, pad=1)
    omega = grid.inside & (spec.sdf(grid.centers) > 0)
    return grid, omega
