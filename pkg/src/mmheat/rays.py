"""Transport rays of the signed distance on analytically tractable domains.

Every boundary piece of a supported domain is a *feature*: a sphere (circle),
a flat piece (segment edge, slit face, interval endpoint), a 3D line segment,
or a point (polygon vertex, slit endpoint).  The rays leaving a feature are
known in closed form up to their length, and along such a ray the
disintegration density is ``(a + b s)^k`` with ``s = delta``:

========================  ======================  =========
feature                   density                 ``k``
========================  ======================  =========
sphere of radius R        ``(1 -/+ s/R)^k``       ``n - 1``
flat piece                ``1``                   0
line in 3D                ``s``                   1
point (fan)               ``s^k``                 ``n - 1``
========================  ======================  =========

Ray lengths are computed, not assumed: ``s -> delta(foot + s d) - s`` is
nonincreasing along any unit-speed line because ``delta`` is 1-Lipschitz,
so the length of the ray is found by bisection on the exact distance.

Sign convention: ``[Delta delta]^reg`` is reported as ``+d/ds log h`` along the
ray parameterized from the boundary (``s = delta``).  This equals the
classical Laplacian of ``delta`` where it exists, e.g. ``-1/|x|`` on the unit
disk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .errors import MigcViolated, OnCutLocus, UnsupportedShape
from .mmspace import Difference, Disk, Interval, Polygon, Rect, Slit

#: absolute slack used when testing ``delta(foot + s d) >= s``
RAY_TOL = 1e-11
#: q-measure below which a set of rays counts as null
NULL_MEASURE = 1e-9


# ----------------------------------------------------------------------------- model functions


@dataclass(frozen=True)
class ModelFunction:
    """``s_kappa``: ``sin(sqrt(k) t)/sqrt(k)``, ``t`` or ``sinh(sqrt(-k) t)/sqrt(-k)``."""

    kappa: float

    @property
    def J(self):
        return math.pi / math.sqrt(self.kappa) if self.kappa > 0 else math.inf

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        k = self.kappa
        if k > 0:
            return np.sin(math.sqrt(k) * t) / math.sqrt(k)
        if k < 0:
            return np.sinh(math.sqrt(-k) * t) / math.sqrt(-k)
        return t.copy() if t.ndim else float(t)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        k = self.kappa
        if k > 0:
            return np.cos(math.sqrt(k) * t)
        if k < 0:
            return np.cosh(math.sqrt(-k) * t)
        return np.ones_like(t) if t.ndim else 1.0

    def log_derivative(self, t):
        """``s'/s``, with the limit value at ``t = inf``."""
        t = np.asarray(t, dtype=float)
        k = self.kappa
        with np.errstate(divide="ignore", invalid="ignore"):
            if k > 0:
                out = math.sqrt(k) / np.tan(math.sqrt(k) * t)
            elif k < 0:
                out = math.sqrt(-k) / np.tanh(math.sqrt(-k) * t)
            else:
                out = 1.0 / t
        if k < 0:
            out = np.where(np.isinf(t), math.sqrt(-k), out)
        elif k == 0:
            out = np.where(np.isinf(t), 0.0, out)
        return out


# ----------------------------------------------------------------------------- features


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _perp_basis(e):
    """Two unit vectors completing ``e`` (3D) to an orthonormal frame."""
    e = _unit(e)
    a = np.array([1.0, 0.0, 0.0]) if abs(e[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = _unit(a - (a @ e) * e)
    return u, np.cross(e, u)


class _Feature:
    """Base class: ``nodes`` gives feet, directions and measure weights."""

    kind = "feature"
    a = 1.0
    b = 0.0
    k = 0

    def hhat(self, s):
        return (self.a + self.b * np.asarray(s, dtype=float)) ** self.k

    def log_derivative(self, s):
        if self.k == 0 or self.b == 0:
            return np.zeros_like(np.asarray(s, dtype=float))
        return self.k * self.b / (self.a + self.b * np.asarray(s, dtype=float))

    def project(self, x):
        """Distance from each point to the feature, foot points and validity mask."""
        raise NotImplementedError

    def nodes(self, n):
        raise NotImplementedError

    def samples(self, n):
        """Boundary points with candidate interior and exterior directions."""
        raise NotImplementedError

    def bbox(self, pad):
        raise NotImplementedError


class _SphereFeature(_Feature):
    kind = "sphere"

    def __init__(self, center, radius, hole=False):
        self.c = np.asarray(center, dtype=float)
        self.R = float(radius)
        self.dim = len(self.c)
        self.hole = hole
        self.sign = -1.0 if hole else 1.0
        self.a, self.b, self.k = 1.0, -self.sign / self.R, self.dim - 1

    def project(self, x):
        v = x - self.c
        r = np.linalg.norm(v, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            u = v / r[:, None]
        foot = self.c + self.R * u
        return np.abs(self.R - r), foot, r > 0

    def _inward(self, u):
        return -self.sign * u

    def nodes(self, n):
        if self.dim == 2:
            th = 2 * np.pi * (np.arange(n) + 0.5) / n
            u = np.c_[np.cos(th), np.sin(th)]
            w = np.full(n, 2 * np.pi * self.R / n)
        else:
            nt = max(8, int(round(math.sqrt(n / 2))))
            x, wx = np.polynomial.legendre.leggauss(nt)
            nphi = 2 * nt
            phi = 2 * np.pi * (np.arange(nphi) + 0.5) / nphi
            ct, ph = np.meshgrid(x, phi, indexing="ij")
            st = np.sqrt(1 - ct**2)
            u = np.c_[(st * np.cos(ph)).ravel(), (st * np.sin(ph)).ravel(), ct.ravel()]
            w = (np.repeat(wx, nphi) * (2 * np.pi / nphi)) * self.R**2
        return self.c + self.R * u, self._inward(u), w

    def samples(self, n):
        feet, dirs, _ = self.nodes(n)
        return [(f, d[None, :], -d[None, :]) for f, d in zip(feet, dirs)]

    def bbox(self, pad):
        return self.c - self.R - pad, self.c + self.R + pad


class _FlatFeature(_Feature):
    """Segment edge or slit face in 2D, or an interval endpoint in 1D, with a fixed normal into the domain."""

    kind = "flat"

    def __init__(self, p, q, normal):
        self.p = np.asarray(p, dtype=float)
        self.q = np.asarray(q, dtype=float)
        self.n = _unit(normal)
        self.dim = len(self.p)
        self.length = float(np.linalg.norm(self.q - self.p))

    def project(self, x):
        if self.length == 0:
            v = x - self.p
            side = v @ self.n
            return np.abs(side), np.repeat(self.p[None, :], len(x), axis=0), side > 0
        e = (self.q - self.p) / self.length
        t = (x - self.p) @ e
        foot = self.p + t[:, None] * e
        side = (x - foot) @ self.n
        return np.abs(side), foot, (t > 0) & (t < self.length) & (side > 0)

    def nodes(self, n):
        if self.length == 0:
            return self.p[None, :], self.n[None, :], np.ones(1)
        # two Gauss-Legendre panels: on a rectangle the ray length has a kink at the edge midpoint
        m = max(2, n // 2)
        x, w = np.polynomial.legendre.leggauss(m)
        half = self.length / 2
        t = np.concatenate([half * (x + 1) / 2, half + half * (x + 1) / 2])
        ww = np.concatenate([w, w]) * half / 2
        e = (self.q - self.p) / self.length
        feet = self.p + t[:, None] * e
        return feet, np.repeat(self.n[None, :], len(t), axis=0), ww

    def adaptive_nodes(self, spec, n, tol=1e-10, max_depth=40):
        """Gauss-Legendre panels split wherever the ray length is not resolved.

        The length of the ray from ``p + t e`` is only piecewise smooth in
        ``t`` (it kinks where the ray end switches between ridge branches),
        so panels are bisected until one 8-point rule, the rule on both
        halves and a 9-point Lobatto rule agree to ``tol`` times the panel
        width.  The Lobatto rule sees the panel ends, which catches kinks
        that sit closer to an end than the outermost Gauss node.
        """
        x, w = np.polynomial.legendre.leggauss(8)
        P8 = np.polynomial.legendre.Legendre.basis(8)
        xl = np.concatenate([[-1.0], np.sort(P8.deriv().roots().real), [1.0]])
        wl = 2.0 / (9 * 8 * P8(xl) ** 2)
        e = (self.q - self.p) / self.length

        def lengths(t):
            return inner_lengths(spec, self.p + t[:, None] * e, np.repeat(self.n[None, :], len(t), axis=0))

        def rule(a, b):
            t = a + (b - a) * (x + 1) / 2
            return t, w * (b - a) / 2, float(np.sum(w * lengths(t)) * (b - a) / 2)

        def lobatto(a, b):
            return float(np.sum(wl * lengths(a + (b - a) * (xl + 1) / 2)) * (b - a) / 2)

        base = max(2, n // 16)
        edges = np.linspace(0, self.length, base + 1)
        todo = [(a, b, rule(a, b), 0) for a, b in zip(edges[:-1], edges[1:])]
        T, W = [], []
        while todo:
            a, b, (t, ww, whole), depth = todo.pop()
            m = 0.5 * (a + b)
            left, right = rule(a, m), rule(m, b)
            err = abs(left[2] + right[2] - whole) + abs(lobatto(a, b) - whole)
            if err <= tol * (b - a) or depth >= max_depth:
                T += [left[0], right[0]]
                W += [left[1], right[1]]
            else:
                todo += [(a, m, left, depth + 1), (m, b, right, depth + 1)]
        t = np.concatenate(T)
        order = np.argsort(t)
        t, ww = t[order], np.concatenate(W)[order]
        return self.p + t[:, None] * e, np.repeat(self.n[None, :], len(t), axis=0), ww

    def samples(self, n):
        if self.length == 0:
            return [(self.p, self.n[None, :], -self.n[None, :])]
        t = np.linspace(0, 1, n)[1:-1]
        return [(self.p + s * (self.q - self.p), self.n[None, :], -self.n[None, :]) for s in t]

    def bbox(self, pad):
        return np.minimum(self.p, self.q) - pad, np.maximum(self.p, self.q) + pad


class _LineFeature(_Feature):
    """A slit segment in 3D: rays leave perpendicular to it in every azimuth."""

    kind = "line"
    a, b, k = 0.0, 1.0, 1

    def __init__(self, p, q):
        self.p = np.asarray(p, dtype=float)
        self.q = np.asarray(q, dtype=float)
        self.dim = 3
        self.length = float(np.linalg.norm(self.q - self.p))
        self.e = (self.q - self.p) / self.length
        self.u, self.v = _perp_basis(self.e)

    def project(self, x):
        t = (x - self.p) @ self.e
        foot = self.p + t[:, None] * self.e
        return np.linalg.norm(x - foot, axis=1), foot, (t > 0) & (t < self.length)

    def _azimuths(self, m, offset=0.5):
        psi = 2 * np.pi * (np.arange(m) + offset) / m
        return np.cos(psi)[:, None] * self.u + np.sin(psi)[:, None] * self.v

    def nodes(self, n):
        # two panels meeting at the midpoint, where stock slits cross each other
        m = max(16, n // 8)
        x, w = np.polynomial.legendre.leggauss(m)
        half = self.length / 2
        t = np.concatenate([half * (x + 1) / 2, half + half * (x + 1) / 2])
        wt = np.concatenate([w, w]) * half / 2
        dirs = self._azimuths(max(32, n // 4))
        feet = np.repeat(self.p + t[:, None] * self.e, len(dirs), axis=0)
        D = np.tile(dirs, (len(t), 1))
        W = np.repeat(wt, len(dirs)) * (2 * np.pi / len(dirs))
        return feet, D, W

    def samples(self, n):
        m = n if n % 2 else n + 1
        t = np.linspace(0, self.length, m + 2)[1:-1]
        dirs = self._azimuths(32, offset=0.0)
        return [(self.p + s * self.e, dirs, dirs) for s in t]

    def bbox(self, pad):
        return np.minimum(self.p, self.q) - pad, np.maximum(self.p, self.q) + pad


class _PointFeature(_Feature):
    """A vertex or slit endpoint.  Rays fan out over ``fan`` (2D angle range or 3D cap axis)."""

    kind = "point"

    def __init__(self, p, dim, fan=None, exterior=None):
        self.p = np.asarray(p, dtype=float)
        self.dim = dim
        self.a, self.b, self.k = 0.0, 1.0, dim - 1
        self.fan = fan
        self.exterior = exterior

    def project(self, x):
        v = x - self.p
        d = np.linalg.norm(v, axis=1)
        return d, np.repeat(self.p[None, :], len(x), axis=0), d > 0

    def _fan_dirs(self, m, fan):
        if fan is None:
            return np.zeros((0, self.dim)), np.zeros(0)
        if self.dim == 2:
            a0, span = fan
            x, w = np.polynomial.legendre.leggauss(m)
            ang = a0 + span * (x + 1) / 2
            return np.c_[np.cos(ang), np.sin(ang)], w * span / 2
        axis = _unit(fan)
        u, v = _perp_basis(axis)
        nt = max(4, int(round(math.sqrt(m / 2))))
        x, w = np.polynomial.legendre.leggauss(nt)
        ct = (x + 1) / 2
        nphi = 2 * nt
        phi = 2 * np.pi * (np.arange(nphi) + 0.5) / nphi
        C, P = np.meshgrid(ct, phi, indexing="ij")
        S = np.sqrt(1 - C**2)
        d = C.ravel()[:, None] * axis + (S * np.cos(P)).ravel()[:, None] * u + (S * np.sin(P)).ravel()[:, None] * v
        return d, np.repeat(w / 2, nphi) * (2 * np.pi / nphi)

    def nodes(self, n):
        dirs, w = self._fan_dirs(max(8, n // 8), self.fan)
        return np.repeat(self.p[None, :], len(dirs), axis=0), dirs, w

    def samples(self, n):
        inner, _ = self._fan_dirs(16, self.fan)
        outer, _ = self._fan_dirs(16, self.exterior)
        return [(self.p, inner, outer)]

    def bbox(self, pad):
        return self.p - pad, self.p + pad


# ----------------------------------------------------------------------------- feature extraction


def _angle(v):
    return math.atan2(v[1], v[0])


def _wedge(n0, n1, through):
    """Angular range from ``n0`` to ``n1`` (2D unit vectors) that contains ``through``."""
    a0 = _angle(n0)
    span = (_angle(n1) - a0) % (2 * np.pi)
    t = (_angle(through) - a0) % (2 * np.pi)
    if t <= span:
        return (a0, span)
    a1 = _angle(n1)
    return (a1, (a0 - a1) % (2 * np.pi))


def _loop_features(vertices, omega_inside, sdf):
    """Edges and vertices of a closed polygonal loop.

    ``omega_inside`` says whether the domain lies inside the loop (outer
    boundary) or outside it (removed solid).  Vertices get an interior fan when
    the domain wedge there exceeds a half-plane and an exterior fan otherwise.
    """
    v = np.asarray(vertices, dtype=float)
    nv = len(v)
    area2 = sum(v[i, 0] * v[(i + 1) % nv, 1] - v[(i + 1) % nv, 0] * v[i, 1] for i in range(nv))
    ccw = area2 > 0
    feats = []
    normals = []
    for i in range(nv):
        p, q = v[i], v[(i + 1) % nv]
        e = q - p
        left = np.array([-e[1], e[0]])
        # left normal points into the loop iff counterclockwise
        into_loop = left if ccw else -left
        n = into_loop if omega_inside else -into_loop
        normals.append(_unit(n))
        feats.append(_FlatFeature(p, q, n))
    scale = float(np.max(np.ptp(v, axis=0)))
    for i in range(nv):
        n_prev, n_next = normals[i - 1], normals[i]
        mid = _unit(n_prev + n_next) if np.linalg.norm(n_prev + n_next) > 1e-12 else None
        reflex = False
        if mid is not None:
            eta = 1e-6 * scale
            reflex = abs(float(sdf(v[i] + eta * mid)[0]) - eta) < 1e-9 * scale
        if reflex:
            feats.append(_PointFeature(v[i], 2, fan=_wedge(n_prev, n_next, mid)))
        else:
            ext = _wedge(-n_prev, -n_next, -mid) if mid is not None else None
            feats.append(_PointFeature(v[i], 2, fan=None, exterior=ext))
    return feats


def _slit_features(s: Slit):
    p, q = np.asarray(s.p), np.asarray(s.q)
    e = _unit(q - p)
    if s.dim == 2:
        n = np.array([-e[1], e[0]])
        return [
            _FlatFeature(p, q, n),
            _FlatFeature(p, q, -n),
            _PointFeature(p, 2, fan=(_angle(n), np.pi)),
            _PointFeature(q, 2, fan=(_angle(-n), np.pi)),
        ]
    if s.dim == 3:
        return [_LineFeature(p, q), _PointFeature(p, 3, fan=-e), _PointFeature(q, 3, fan=e)]
    raise UnsupportedShape("slits must live in 2D or 3D")


def boundary_features(spec) -> List[_Feature]:
    """Decompose the boundary of a supported domain into features."""
    if isinstance(spec, Interval):
        return [_FlatFeature([spec.a], [spec.a], [1.0]), _FlatFeature([spec.b], [spec.b], [-1.0])]
    if isinstance(spec, Disk):
        return [_SphereFeature(spec.center, spec.radius)]
    if isinstance(spec, Rect):
        return _loop_features(spec.vertices(), True, spec.sdf)
    if isinstance(spec, Polygon):
        return _loop_features(spec.vertices, True, spec.sdf)
    if isinstance(spec, Difference):
        feats = boundary_features(spec.outer)
        for r in spec.removed:
            if isinstance(r, Slit):
                feats += _slit_features(r)
            elif isinstance(r, Disk):
                feats.append(_SphereFeature(r.center, r.radius, hole=True))
            elif isinstance(r, (Rect, Polygon)):
                verts = r.vertices() if isinstance(r, Rect) else r.vertices
                feats += _loop_features(verts, False, spec.sdf)
            else:
                raise UnsupportedShape(f"cannot build rays around a removed {type(r).__name__}")
        return feats
    raise UnsupportedShape(f"no ray construction for {type(spec).__name__}")


# ----------------------------------------------------------------------------- ray lengths


def _scale(spec):
    lo, hi = spec.bbox()
    return float(np.max(np.asarray(hi) - np.asarray(lo)))


def inner_lengths(spec, feet, dirs, iters=64):
    """Length of the transport ray from each foot along each direction (``delta`` grows at unit rate)."""
    feet = np.atleast_2d(np.asarray(feet, dtype=float))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    if len(feet) == 0:
        return np.zeros(0)
    D = 2 * _scale(spec)
    tol = RAY_TOL * max(1.0, D)
    lo = np.zeros(len(feet))
    hi = np.full(len(feet), D)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        ok = spec.sdf(feet + mid[:, None] * dirs) >= mid - tol
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
    return lo


def outer_lengths(spec, feet, dirs, iters=64, cap_factor=1e3):
    """Length of the continuation outside the domain (``delta`` decreases at unit rate); ``inf`` if unbounded."""
    feet = np.atleast_2d(np.asarray(feet, dtype=float))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    if len(feet) == 0:
        return np.zeros(0)
    scale = _scale(spec)
    tol = RAY_TOL * max(1.0, scale)
    cap = cap_factor * scale
    far = spec.sdf(feet - cap * dirs) <= -cap + tol
    lo = np.zeros(len(feet))
    hi = np.full(len(feet), cap)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        ok = spec.sdf(feet - mid[:, None] * dirs) <= -mid + tol
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
    # lengths within the bisection slack are zero (vertex and slit fans)
    lo = np.where(lo <= 10 * tol, 0.0, lo)
    return np.where(far, np.inf, lo)


# ----------------------------------------------------------------------------- decomposition


@dataclass
class TransportRay:
    """One ray ``s -> foot + s * direction`` on ``[0, inner_length]`` with ``delta = s``."""

    foot: np.ndarray
    direction: np.ndarray
    inner_length: float
    outer_length: float
    density: Callable
    weight: float
    family: str

    @property
    def endpoint_a(self):
        return self.foot + self.inner_length * self.direction

    @property
    def endpoint_b(self):
        if math.isinf(self.outer_length):
            return None
        return self.foot - self.outer_length * self.direction


@dataclass
class RayDecomposition:
    """Rays of a domain with quotient weights ``q`` (a probability) and densities ``h = Z * hhat``.

    Arrays are stored column-wise; :attr:`rays` builds :class:`TransportRay`
    objects on demand.  ``normalization`` records the convention.
    """

    spec: object
    features: list
    feature_index: np.ndarray
    feet: np.ndarray
    dirs: np.ndarray
    inner: np.ndarray
    outer: np.ndarray
    q: np.ndarray
    Z: float
    normalization: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.feet.shape[1]

    def __len__(self):
        return len(self.q)

    @property
    def mu(self):
        """Unnormalized boundary weights (arc length, angle, solid angle)."""
        return self.q * self.Z

    def hhat(self, s):
        """Unnormalized densities of all rays at ``s`` (scalar or one value per ray)."""
        s = np.broadcast_to(np.asarray(s, dtype=float), self.q.shape)
        out = np.empty_like(s)
        for j, f in enumerate(self.features):
            m = self.feature_index == j
            out[m] = f.hhat(s[m])
        return out

    def log_derivative(self, s):
        s = np.broadcast_to(np.asarray(s, dtype=float), self.q.shape)
        out = np.empty_like(s)
        for j, f in enumerate(self.features):
            m = self.feature_index == j
            out[m] = f.log_derivative(s[m])
        return out

    @property
    def rays(self):
        out = []
        for i in range(len(self.q)):
            f = self.features[self.feature_index[i]]
            Z = self.Z
            out.append(TransportRay(
                foot=self.feet[i], direction=self.dirs[i], inner_length=float(self.inner[i]),
                outer_length=float(self.outer[i]), density=lambda s, f=f, Z=Z: Z * f.hhat(s),
                weight=float(self.q[i]), family=f.kind))
        return out

    def reconstruct(self, f, n_s=16):
        """``sum_a q_a int_0^{L_a} f(gamma_a(s)) h_a(s) ds`` by Gauss-Legendre along each ray."""
        x, w = np.polynomial.legendre.leggauss(n_s)
        total = 0.0
        for xi, wi in zip(x, w):
            s = self.inner * (xi + 1) / 2
            pts = self.feet + s[:, None] * self.dirs
            vals = np.asarray(f(pts), dtype=float)
            total += float(np.sum(self.mu * wi * self.inner / 2 * vals * self.hhat(s)))
        return total

    def level_integral(self, f, r):
        """``int f dPer({delta > r})`` by the ray formula."""
        alive = self.inner > r
        pts = self.feet + r * self.dirs
        vals = np.asarray(f(pts), dtype=float)
        return float(np.sum((self.mu * vals * self.hhat(np.full(len(self.q), float(r))))[alive]))

    def short_measure(self, eps):
        """q-measure of rays whose inner length is below ``eps``."""
        return float(np.sum(self.q[self.inner < eps * (1 - 1e-9)]))

    def locate(self, x):
        """Foot, direction, distance and feature of the ray through each point (nearest feature)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        best = np.full(len(x), np.inf)
        feet = np.zeros_like(x)
        fid = -np.ones(len(x), dtype=int)
        for j, f in enumerate(self.features):
            d, foot, ok = f.project(x)
            d = np.where(ok, d, np.inf)
            better = d < best
            best = np.where(better, d, best)
            feet[better] = foot[better]
            fid[better] = j
        with np.errstate(invalid="ignore", divide="ignore"):
            dirs = (x - feet) / best[:, None]
        return feet, dirs, best, fid


def _without_null_sets(spec):
    """``spec`` with removed slits of codimension >= 2 dropped (segments in 3D have zero capacity)."""
    if not isinstance(spec, Difference):
        return spec
    keep = tuple(r for r in spec.removed if not (isinstance(r, Slit) and r.dim >= 3))
    if len(keep) == len(spec.removed):
        return spec
    return Difference(spec.outer, keep, label=spec.label) if keep else spec.outer


def decompose(spec, n_rays: int = 256, drop_null_sets: bool = False) -> RayDecomposition:
    """Analytic ray decomposition of a supported domain with about ``n_rays`` rays per feature.

    By default ``delta`` is the distance to the topological boundary, slits
    included.  With ``drop_null_sets`` removed segments in 3D, which the heat
    flow does not see, are ignored and the rays are those of the outer shape.
    """
    if n_rays < 64:
        raise ValueError("n_rays must be at least 64")
    if drop_null_sets:
        spec = _without_null_sets(spec)
    feats = boundary_features(spec)
    F, D, W, I = [], [], [], []
    for j, f in enumerate(feats):
        if isinstance(f, _FlatFeature) and f.length > 0:
            feet, dirs, w = f.adaptive_nodes(spec, n_rays)
        else:
            feet, dirs, w = f.nodes(n_rays)
        if len(w) == 0:
            continue
        F.append(feet)
        D.append(dirs)
        W.append(w)
        I.append(np.full(len(w), j))
    feet = np.concatenate(F)
    dirs = np.concatenate(D)
    w = np.concatenate(W)
    idx = np.concatenate(I)
    L = inner_lengths(spec, feet, dirs)
    outer = outer_lengths(spec, feet, dirs)
    Z = float(w.sum())
    return RayDecomposition(
        spec=spec, features=feats, feature_index=idx, feet=feet, dirs=dirs, inner=L, outer=outer,
        q=w / Z, Z=Z,
        normalization={"q": "probability", "h": "Z * hhat", "Z": Z,
                       "hhat": "(a + b s)^k per feature, 1 at the foot of smooth pieces"},
    )


# ----------------------------------------------------------------------------- pointwise quantities


def _ray_through(decomp, x):
    feet, dirs, s, fid = decomp.locate(x)
    if np.any(~np.isfinite(s)) or np.any(fid < 0):
        raise OnCutLocus("no ray passes through the point")
    return feet, dirs, s, fid


def laplacian_delta_reg(decomp: RayDecomposition, x, cut_tol=1e-7):
    """``[Delta delta]^reg`` at ``x`` (one point or an array of points).

    Raises :class:`OnCutLocus` when the foot point is ambiguous or the ray
    through ``x`` ends within ``cut_tol`` of it.
    """
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    single = np.asarray(x).ndim == 1
    sd = decomp.spec.sdf(pts)
    if np.any(sd <= 0):
        raise ValueError("points must lie inside the domain")
    feet, dirs, s, fid = decomp.locate(pts)
    bad = ~np.all(np.isfinite(dirs), axis=1) | (s < cut_tol)
    L = inner_lengths(decomp.spec, feet[~bad], dirs[~bad])
    near = np.zeros(len(pts), dtype=bool)
    near[~bad] = L - s[~bad] < cut_tol
    if np.any(bad | near):
        i = int(np.flatnonzero(bad | near)[0])
        raise OnCutLocus(f"point {pts[i].tolist()} lies within {cut_tol:g} of the cut locus")
    out = np.array([decomp.features[j].log_derivative(si) for j, si in zip(fid, s)], dtype=float)
    return float(out[0]) if single else out


def laplacian_field(decomp: RayDecomposition, x):
    """Vectorized ``[Delta delta]^reg`` without cut-locus checks; NaN where the foot is ambiguous."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    feet, dirs, s, fid = decomp.locate(pts)
    out = np.full(len(pts), np.nan)
    for j, f in enumerate(decomp.features):
        m = fid == j
        out[m] = f.log_derivative(s[m])
    out[~np.all(np.isfinite(dirs), axis=1)] = np.nan
    return out


@dataclass
class ComparisonReport:
    values: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    max_violation: float
    violations: int

    @property
    def passed(self):
        return self.violations == 0


def comparison_check(decomp: RayDecomposition, kappa: float, N: float, samples, tol=1e-9) -> ComparisonReport:
    """Check ``-(N-1) s'/s(d_a) <= [Delta delta]^reg <= (N-1) s'/s(d_b)`` at sample points.

    Violations are measured relative to ``max(1, |value|)``.

    ``d_a`` is the distance to the inner ray end and ``d_b`` the distance to
    the outer end (``inf`` when the ray leaves to infinity; the bound is then
    the limit of ``s'/s``).
    """
    pts = np.atleast_2d(np.asarray(samples, dtype=float))
    vals = laplacian_delta_reg(decomp, pts)
    vals = np.atleast_1d(vals)
    feet, dirs, s, _ = decomp.locate(pts)
    L = inner_lengths(decomp.spec, feet, dirs)
    out = outer_lengths(decomp.spec, feet, dirs)
    sk = ModelFunction(kappa)
    lower = -(N - 1) * sk.log_derivative(L - s)
    upper = (N - 1) * sk.log_derivative(s + out)
    # both bounds are attained (disk centre ray, vertex fans), so compare relative to the value
    viol = np.maximum(lower - vals, vals - upper) / np.maximum(1.0, np.abs(vals))
    return ComparisonReport(values=vals, lower=lower, upper=upper, max_violation=float(max(viol.max(), 0.0)),
                            violations=int(np.sum(viol > tol)))


def random_interior_points(decomp: RayDecomposition, n, seed=0, margin=0.05):
    """Points on random rays at random ``s`` away from both ray ends."""
    rng = np.random.default_rng(seed)
    i = rng.choice(len(decomp.q), size=n, p=decomp.q)
    u = rng.uniform(margin, 1 - margin, size=n)
    s = u * decomp.inner[i]
    return decomp.feet[i] + s[:, None] * decomp.dirs[i]


def cd_concavity(decomp: RayDecomposition, N: float, n_s=64):
    """Largest positive second difference of ``h^(1/(N-1))`` along rays (0 means concave)."""
    worst = 0.0
    u = np.linspace(0, 1, n_s)
    for j, f in enumerate(decomp.features):
        m = decomp.feature_index == j
        if not np.any(m):
            continue
        s = decomp.inner[m][:, None] * u[None, :]
        g = (decomp.Z * f.hhat(s)) ** (1.0 / (N - 1))
        d2 = g[:, 2:] - 2 * g[:, 1:-1] + g[:, :-2]
        worst = max(worst, float(np.max(d2)))
    return worst


# ----------------------------------------------------------------------------- profiles and norms


def ray_profile(decomp: RayDecomposition, radii):
    """Volume and perimeter of ``{delta > r}`` from the ray formula."""
    from .coarea import LevelProfile

    radii = np.asarray(radii, dtype=float)
    vol = []
    per = []
    x, w = np.polynomial.legendre.leggauss(16)
    for r in radii:
        alive = decomp.inner > r
        per.append(float(np.sum((decomp.mu * decomp.hhat(np.full(len(decomp.q), r)))[alive])))
        v = 0.0
        span = np.clip(decomp.inner - r, 0, None)
        for xi, wi in zip(x, w):
            s = r + span * (xi + 1) / 2
            v += float(np.sum(decomp.mu * wi * span / 2 * decomp.hhat(s)))
        vol.append(v)
    return LevelProfile(radii=radii, volume=np.array(vol), perimeter=np.array(per), source="ray-formula")


def _require_migc(decomp, eps):
    short = decomp.short_measure(eps)
    if short > NULL_MEASURE:
        raise MigcViolated(f"rays shorter than eps={eps:g} carry q-measure {short:.3g}")


@dataclass
class L1Bound:
    max_per_ray: float
    total: float
    status: str


def halpha_l1_bound(decomp: RayDecomposition, eps, check=True) -> L1Bound:
    """``max_a ||hhat_a'||_{L1(0, eps)}`` and ``int_{0<delta<eps} |[Delta delta]^reg| dm``.

    ``hhat`` is monotone along every ray, so the variation over ``[0, u]`` is
    ``|hhat(u) - hhat(0)|`` exactly, with ``u = min(eps, inner length)``.
    ``check=False`` skips the mIGC_eps precondition (rays shorter than
    ``eps`` then contribute over their own length).
    """
    if check:
        _require_migc(decomp, eps)
    u = np.minimum(float(eps), decomp.inner)
    var = np.abs(decomp.hhat(u) - decomp.hhat(np.zeros(len(decomp.q))))
    total = float(np.sum(decomp.mu * var))
    mx = float(var.max()) if len(var) else 0.0
    return L1Bound(max_per_ray=mx, total=total, status="bounded" if np.isfinite(mx) else "unbounded")


def _power_integral(a, b, e, u):
    """``int_0^u (a + b s)^e ds`` for ``a + b s > 0`` on ``(0, u)``; ``inf`` when it diverges."""
    lo, hi = a, a + b * u
    if b == 0:
        return u * a**e if a > 0 else (0.0 if e >= 0 else math.inf)
    if (lo <= 0 or hi <= 0) and e <= -1:
        return math.inf
    if e == -1:
        return (math.log(hi) - math.log(lo)) / b
    return (max(hi, 0.0) ** (e + 1) - max(lo, 0.0) ** (e + 1)) / (b * (e + 1))


def lp_norm_laplacian(decomp: RayDecomposition, eps, p, check=True) -> float:
    """``(int_{0<delta<eps} |[Delta delta]^reg|^p dm)^(1/p)`` in closed form per ray; ``inf`` if divergent."""
    if check:
        _require_migc(decomp, eps)
    total = 0.0
    for j, f in enumerate(decomp.features):
        m = decomp.feature_index == j
        if not np.any(m) or f.k == 0 or f.b == 0:
            continue
        coef = abs(f.k * f.b) ** p
        for mu, L in zip(decomp.mu[m], decomp.inner[m]):
            I = _power_integral(f.a, f.b, f.k - p, min(eps, L))
            if math.isinf(I):
                return math.inf
            total += mu * coef * I
    return total ** (1.0 / p)


# ----------------------------------------------------------------------------- classifiers


def _boundary_samples(decomp_or_spec, n):
    feats = decomp_or_spec.features if isinstance(decomp_or_spec, RayDecomposition) else boundary_features(decomp_or_spec)
    out = []
    for f in feats:
        out += f.samples(n)
    return out


def _ball_radii(spec, samples):
    """Per boundary sample: longest interior ray and longest exterior continuation over candidate directions."""
    inner = []
    outer = []
    for z, din, dout in samples:
        if len(din):
            inner.append(float(np.max(inner_lengths(spec, np.repeat(z[None, :], len(din), axis=0), din))))
        else:
            inner.append(0.0)
        if dout is not None and len(dout):
            # exterior direction e: the ray runs backwards along d = -e
            outer.append(float(np.max(outer_lengths(spec, np.repeat(z[None, :], len(dout), axis=0), -dout))))
        else:
            outer.append(0.0)
    return np.array(inner), np.array(outer)


@dataclass
class Classification:
    migc: bool
    uniform_interior_ball: bool
    exterior_ball_everywhere: bool
    short_ray_measure: float
    min_interior_radius: float
    min_exterior_radius: float

    def lines(self, eps):
        yes = {True: "yes", False: "no"}
        return [
            f"mIGC_eps (eps={eps:g}): {yes[self.migc]}  (q-measure of short rays {self.short_ray_measure:.3g})",
            f"uniform interior ball (radius {eps:g}): {yes[self.uniform_interior_ball]}  "
            f"(min radius {self.min_interior_radius:.6g})",
            f"exterior ball at every boundary point: {yes[self.exterior_ball_everywhere]}  "
            f"(min radius {self.min_exterior_radius:.6g})",
        ]


def migc_check(spec, eps: float, n_samples: int = 64, n_rays: int = 256) -> Classification:
    """Classify a domain: mIGC_eps by ray lengths, ball conditions by probing boundary samples."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    decomp = decompose(spec, n_rays)
    short = decomp.short_measure(eps)
    samples = _boundary_samples(decomp, n_samples)
    rin, rout = _ball_radii(spec, samples)
    tol = 1e-9 * max(1.0, _scale(spec))
    return Classification(
        migc=short <= NULL_MEASURE,
        uniform_interior_ball=bool(np.min(rin) >= eps * (1 - 1e-9)),
        exterior_ball_everywhere=bool(np.min(rout) > 1e3 * tol),
        short_ray_measure=short,
        min_interior_radius=float(np.min(rin)),
        min_exterior_radius=float(np.min(rout)),
    )


@dataclass
class CoverageReport:
    some_ray: float
    full_fiber: float
    n_points: int
    uncovered: np.ndarray

    @property
    def covered(self):
        return self.full_fiber == 1.0


def foot_map_surjectivity(decomp: RayDecomposition, eps, n_samples: int = 64) -> CoverageReport:
    """Fraction of boundary samples reached by a ray of inner length ``>= eps``.

    ``some_ray`` asks for one such ray; ``full_fiber`` requires every ray with
    that foot (every candidate direction of positive length) to be that long.
    """
    spec = decomp.spec
    some = []
    full = []
    pts = []
    for z, din, _ in _boundary_samples(decomp, n_samples):
        L = inner_lengths(spec, np.repeat(z[None, :], len(din), axis=0), din) if len(din) else np.zeros(0)
        rays = L[L > 1e-9]
        some.append(bool(len(rays) and rays.max() >= eps * (1 - 1e-9)))
        full.append(bool(len(rays) and rays.min() >= eps * (1 - 1e-9)))
        pts.append(z)
    some = np.array(some)
    full = np.array(full)
    return CoverageReport(some_ray=float(some.mean()), full_fiber=float(full.mean()), n_points=len(full),
                          uncovered=np.array(pts)[~full])


def _sdf_gradient(spec, x, step=1e-7):
    g = np.zeros_like(x)
    for k in range(x.shape[1]):
        e = np.zeros(x.shape[1])
        e[k] = step
        g[:, k] = (spec.sdf(x + e) - spec.sdf(x - e)) / (2 * step)
    return g


def geodesic_coverage_mc(spec, eps, n=20000, seed=0):
    """Monte-Carlo estimate of ``m({0 < delta < eps} minus O_eps)``.

    Points are drawn uniformly in a padded box around each boundary feature
    and counted in the box of their nearest feature (a stratification of the
    band).  A point ``x`` belongs to ``O_eps`` when the segment from its foot
    ``x - delta grad delta`` through ``x`` stays a distance ray up to length
    ``eps``.  Feet and directions come from finite differences of the exact
    distance, independently of the ray construction.
    """
    rng = np.random.default_rng(seed)
    feats = boundary_features(spec)
    lo_all, hi_all = (np.asarray(b, dtype=float) for b in spec.bbox())
    tol = 1e-7 * max(1.0, _scale(spec))
    total = 0.0
    for j, f in enumerate(feats):
        lo, hi = f.bbox(eps)
        lo = np.maximum(lo, lo_all)
        hi = np.minimum(hi, hi_all)
        vol = float(np.prod(hi - lo))
        if vol <= 0:
            continue
        x = rng.uniform(lo, hi, size=(n, len(lo)))
        d = spec.sdf(x)
        band = (d > 0) & (d < eps)
        # nearest feature must be this one
        best = np.full(n, np.inf)
        arg = -np.ones(n, dtype=int)
        for i, g in enumerate(feats):
            dist, _, ok = g.project(x)
            dist = np.where(ok, dist, np.inf)
            arg = np.where(dist < best, i, arg)
            best = np.minimum(best, dist)
        sel = band & (arg == j)
        if not np.any(sel):
            continue
        xs = x[sel]
        ds = d[sel]
        grad = _sdf_gradient(spec, xs)
        nrm = np.linalg.norm(grad, axis=1)
        dirs = grad / nrm[:, None]
        feet = xs - ds[:, None] * dirs
        far = spec.sdf(feet + eps * dirs)
        fail = far < eps - tol
        total += vol * float(np.sum(fail)) / n
    return total


# ----------------------------------------------------------------------------- stock domains


def stock_names():
    return ["interval", "disk", "disk2", "square", "figA", "figB", "slit-disk"]


def stock_domain(name: str, eps: float = 0.05):
    """Named test domains.  ``figB`` depends on ``eps`` through the slit length ``1 - 4 eps``."""
    if name == "interval":
        return Interval(0.0, 1.0, label="interval")
    if name == "disk":
        return Disk((0.0, 0.0), 1.0, label="disk")
    if name == "disk2":
        return Disk((0.0, 0.0), 2.0, label="disk2")
    if name == "square":
        return Rect((0.0, 0.0), 1.0, 1.0, label="square")
    if name == "figA":
        return Difference(Disk((0.0, 0.0), 10.0), (Rect((0.0, 0.0), 1.0, 1.0),), label="figA")
    if name == "figB":
        a = 1.0 - 4.0 * eps
        return Difference(Disk((0.0, 0.0, 0.0), 1.0),
                          (Slit((-a, 0.0, 0.0), (a, 0.0, 0.0)), Slit((0.0, -a, 0.0), (0.0, a, 0.0))), label="figB")
    if name == "slit-disk":
        return Difference(Disk((0.0, 0.0), 1.0), (Slit((-0.5, 0.0), (0.5, 0.0)),), label="slit-disk")
    raise UnsupportedShape(f"unknown stock domain {name!r}; choose from {', '.join(stock_names())}")
