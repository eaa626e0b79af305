"""Level sets of the signed distance: volume and perimeter profiles, coarea and Gauss-Green checks,
and the boundary mean-value function ``F(t, r)`` used in the heat content expansion."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .distfield import SignedDistanceField, _shift
from .errors import CutoffUnsupported, RadiiTooFine

SOURCES = ("band-differencing", "ray-formula", "exact")


@dataclass
class LevelProfile:
    """Volumes ``m({delta > r})`` and (optionally) perimeters ``Per({delta > r})`` on increasing radii."""

    radii: np.ndarray
    volume: np.ndarray
    perimeter: Optional[np.ndarray] = None
    source: str = "band-differencing"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown profile source {self.source!r}")

    def coarea_gap(self):
        """Largest ``|V(r_i) - V(r_j) - int P|`` over consecutive radii (trapezoid in ``r``)."""
        if self.perimeter is None:
            raise ValueError("perimeter not filled")
        dv = -np.diff(self.volume)
        ip = 0.5 * (self.perimeter[1:] + self.perimeter[:-1]) * np.diff(self.radii)
        return float(np.max(np.abs(dv - ip))) if len(dv) else 0.0


def _inside_delta(field: SignedDistanceField):
    g = field.grid
    return field.delta[g.inside], g.measure[g.inside]


def _smeared_volume(d, m, r, h):
    return float(np.sum(m * np.clip(0.5 + (d - r) / h, 0.0, 1.0)))


def volume_profile(field: SignedDistanceField, radii, jitter=True, mode="cells") -> LevelProfile:
    """Cell measure of ``{delta > r}`` for every radius.

    ``mode="cells"`` sums the measure of cells with ``delta > r`` (exact on the
    discrete space, a staircase in ``r``).  ``mode="smeared"`` counts each
    cell with the fraction ``clip(1/2 + (delta - r)/h, 0, 1)``, which removes
    the staircase and makes derivatives in ``r`` usable at spacings of a few
    ``h``.

    With ``jitter`` (cells mode), a radius at which the volume drops by more than
    ``10 h Per`` over a single lattice step (a plateau of equal ``delta``
    values) is moved by up to ``h/2`` to the least jumpy nearby level.
    """
    radii = np.asarray(radii, dtype=float)
    if np.any(np.diff(radii) <= 0):
        raise ValueError("radii must be strictly increasing")
    d, m = _inside_delta(field)
    if np.any(radii < 0) or (len(d) and np.any(radii > d.max() + field.grid.h)):
        raise ValueError("radii must lie in [0, max delta]")
    order = np.argsort(d)
    ds = d[order]
    cum = np.concatenate([[0.0], np.cumsum(m[order][::-1])])[::-1]  # cum[k] = mass of ds[k:]

    def vol(r):
        return cum[np.searchsorted(ds, r, side="right")]

    h = field.grid.h
    moved = {}
    if mode == "smeared":
        V = np.array([_smeared_volume(d, m, r, h) for r in radii])
        return LevelProfile(radii=radii, volume=V, source="band-differencing", meta={"h": h, "mode": mode})
    if mode != "cells":
        raise ValueError(f"unknown volume mode {mode!r}")
    if jitter:
        radii = radii.copy()
        for j, r in enumerate(radii):
            def jump(x):
                per = (vol(x - 2 * h) - vol(x + 2 * h)) / (4 * h)
                return vol(x - h / 2) - vol(x + h / 2), per
            j0, per = jump(r)
            if per > 0 and j0 > 10 * h * per:
                cands = r + h * np.array([-0.5, -0.25, 0.25, 0.5])
                cands = cands[cands >= 0]
                best = min(cands, key=lambda x: jump(x)[0])
                moved[j] = (float(r), float(best))
                radii[j] = best
    V = np.array([vol(r) for r in radii])
    return LevelProfile(radii=radii, volume=V, source="band-differencing", meta={"h": h, "mode": mode, "jittered": moved})


def perimeter_profile(profile: LevelProfile, h: float | None = None) -> LevelProfile:
    """Fill ``perimeter = -dV/dr`` by central differences (one-sided, second order at the ends)."""
    r = profile.radii
    h = profile.meta.get("h") if h is None else h
    if len(r) < 3:
        raise ValueError("need at least three radii")
    if h is not None and np.min(np.diff(r)) < 2 * h * (1 - 1e-9):
        raise RadiiTooFine(f"radius spacing {np.min(np.diff(r)):.3g} is below 2h = {2 * h:.3g}")
    P = -np.gradient(profile.volume, r, edge_order=2)
    return LevelProfile(radii=r, volume=profile.volume, perimeter=P, source=profile.source, meta=dict(profile.meta))


def exact_profile(spec, radii) -> LevelProfile:
    """Continuum level profile for interval, disk and rectangle specs."""
    from .mmspace import Disk, Interval, Rect

    r = np.asarray(radii, dtype=float)
    if isinstance(spec, Interval):
        L = spec.b - spec.a
        V = np.clip(L - 2 * r, 0, None)
        P = np.where(L - 2 * r > 0, 2.0, 0.0)
    elif isinstance(spec, Disk) and spec.dim == 2:
        R = np.clip(spec.radius - r, 0, None)
        V, P = np.pi * R**2, 2 * np.pi * R
    elif isinstance(spec, Rect):
        w = np.clip(spec.width - 2 * r, 0, None)
        hh = np.clip(spec.height - 2 * r, 0, None)
        V, P = w * hh, np.where(w * hh > 0, 2 * (w + hh), 0.0)
    else:
        from .errors import UnsupportedShape
        raise UnsupportedShape(f"no closed-form level profile for {type(spec).__name__}")
    return LevelProfile(radii=r, volume=V, perimeter=P, source="exact")


def band_integral(field: SignedDistanceField, f_cells, r, width):
    """``(1/width) sum_{|delta - r| < width/2} f m``: the level-set integral of ``f`` on ``{delta = r}``."""
    g = field.grid
    d = field.delta[g.inside]
    f = np.asarray(f_cells, dtype=float)
    if f.shape[0] == g.n_cells:
        f = f[g.inside]
    sel = np.abs(d - r) < width / 2
    return float(np.sum(f[sel] * g.measure[g.inside][sel]) / width)


def _cell_values(field, f):
    g = field.grid
    if callable(f):
        return np.asarray(f(g.centers), dtype=float)
    return np.asarray(f, dtype=float)


def coarea_defect(field: SignedDistanceField, f, r1, r2, decomp=None, width=None, n_nodes=48):
    """Relative gap between ``sum_{r1 < delta < r2} f m`` and ``int_{r1}^{r2} (int f dPer_r) dr``.

    The level-set integrals come from the ray disintegration when ``decomp``
    is given (``f`` must then be callable on points) and from band averages
    of width ``width`` (default ``4h``) otherwise.  The outer integral is
    Gauss-Legendre with ``n_nodes`` nodes.
    """
    g = field.grid
    fc = _cell_values(field, f)
    d = field.delta
    sel = g.inside & (d > r1) & (d < r2)
    lhs = float(np.sum(fc[sel] * g.measure[sel]))
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    rs = 0.5 * (r2 - r1) * x + 0.5 * (r1 + r2)
    ws = 0.5 * (r2 - r1) * w
    if decomp is not None:
        if not callable(f):
            raise TypeError("the ray route needs f as a callable on points")
        level = np.array([decomp.level_integral(f, r) for r in rs])
    else:
        width = 4 * g.h if width is None else width
        level = np.array([band_integral(field, fc, r, width) for r in rs])
    rhs = float(np.sum(ws * level))
    scale = max(abs(lhs), abs(rhs), 1e-300)
    return abs(lhs - rhs) / scale, lhs, rhs


def edge_fluxes(grid, w):
    """Face fluxes of a vector field ``w`` (callable on points) over ``grid.lattice_neighbors()``.

    The flux of pair ``(a, b)`` is ``w(midpoint) . e * h^(dim-1)`` with ``e`` the
    unit vector from ``a`` to ``b``.
    """
    pairs = grid.lattice_neighbors()
    a, b = pairs[:, 0], pairs[:, 1]
    mid = 0.5 * (grid.centers[a] + grid.centers[b])
    e = (grid.centers[b] - grid.centers[a]) / grid.h
    vals = np.asarray(w(mid), dtype=float).reshape(len(mid), grid.dim)
    return np.sum(vals * e, axis=1) * grid.h ** (grid.dim - 1)


def _divergence(grid, flux):
    pairs = grid.lattice_neighbors()
    out = np.bincount(pairs[:, 0], flux, minlength=grid.n_cells) - np.bincount(pairs[:, 1], flux, minlength=grid.n_cells)
    return out / grid.measure


def _cell_vectors(grid, flux):
    """Cell-centered vector field from face fluxes (average of the two faces per axis)."""
    pairs = grid.lattice_neighbors()
    e = np.rint((grid.centers[pairs[:, 1]] - grid.centers[pairs[:, 0]]) / grid.h).astype(int)
    axis = np.argmax(np.abs(e), axis=1)
    area = grid.h ** (grid.dim - 1)
    vec = np.zeros((grid.n_cells, grid.dim))
    cnt = np.zeros((grid.n_cells, grid.dim))
    for k in range(grid.dim):
        sel = axis == k
        for col in (0, 1):
            np.add.at(vec[:, k], pairs[sel, col], flux[sel] / area)
            np.add.at(cnt[:, k], pairs[sel, col], 1.0)
    return vec / np.maximum(cnt, 1)


def gradient_cells(field: SignedDistanceField):
    """Centered-difference gradient of ``delta`` per cell (one-sided at the block edge)."""
    d = field.as_lattice()
    h = field.grid.h
    comps = []
    for ax in range(d.ndim):
        fwd, bwd = _shift(d, 1, ax), _shift(d, -1, ax)
        c = (fwd - bwd) / (2 * h)
        c = np.where(np.isnan(fwd), (d - bwd) / h, c)
        c = np.where(np.isnan(bwd), (fwd - d) / h, c)
        comps.append(c.ravel())
    return np.stack(comps, axis=1)


def gauss_green_sides(grid, field: SignedDistanceField, w, r, width=None):
    """Both sides of ``int_{delta > r} div w dm = -int <w, grad delta> dPer``.

    ``w`` is a callable vector field or an array of face fluxes aligned with
    ``grid.lattice_neighbors()``.  The right side averages the normal
    component over the level band of width ``width`` (default ``4h``).
    """
    flux = edge_fluxes(grid, w) if callable(w) else np.asarray(w, dtype=float)
    div = _divergence(grid, flux)
    sup = grid.inside & (field.delta > r)
    lhs = float(np.sum(div[sup] * grid.measure[sup]))
    width = 4 * grid.h if width is None else width
    vec = _cell_vectors(grid, flux)
    normal = np.sum(vec * gradient_cells(field), axis=1)
    rhs = -band_integral(field, normal, r, width)
    return lhs, rhs


def gauss_green_defect(grid, field: SignedDistanceField, w, r, width=None) -> float:
    lhs, rhs = gauss_green_sides(grid, field, w, r, width)
    return abs(lhs - rhs)


# ----------------------------------------------------------------------------- cutoff and bumps


@dataclass(frozen=True)
class Cutoff:
    """Radial cutoff ``phi = psi(delta)`` with ``psi = 1`` below ``eps/2`` and ``0`` above ``eps``.

    The default profile is a cubic smoothstep on ``[eps/2, eps]``.
    """

    eps: float
    psi: Optional[Callable] = None

    def __call__(self, d):
        d = np.asarray(d, dtype=float)
        if self.psi is not None:
            return np.asarray(self.psi(d), dtype=float)
        x = np.clip((d - self.eps / 2) / (self.eps / 2), 0.0, 1.0)
        return 1.0 - x * x * (3 - 2 * x)

    def validate(self, n=2001, tol=1e-12):
        s = np.linspace(0, 2 * self.eps, n)
        v = self(s)
        low = s < self.eps / 2
        high = s >= self.eps
        if np.any(np.abs(v[low] - 1) > tol) or np.any(np.abs(v[high]) > tol):
            raise CutoffUnsupported(f"cutoff must equal 1 on delta < {self.eps / 2:g} and vanish on delta >= {self.eps:g}")
        return self


@dataclass(frozen=True)
class Bump:
    """``exp(-1 / (1 - z^2))`` with ``z = (r - center) / half_width``, and its derivative and primitive."""

    center: float
    half_width: float

    def __call__(self, r):
        z = (np.asarray(r, dtype=float) - self.center) / self.half_width
        out = np.zeros_like(z)
        m = np.abs(z) < 1
        out[m] = np.exp(-1.0 / (1.0 - z[m] ** 2))
        return out

    def derivative(self, r):
        z = (np.asarray(r, dtype=float) - self.center) / self.half_width
        out = np.zeros_like(z)
        m = np.abs(z) < 1
        zz = z[m]
        out[m] = np.exp(-1.0 / (1.0 - zz**2)) * (-2 * zz / (1 - zz**2) ** 2) / self.half_width
        return out

    def primitive(self, r, n=20001):
        lo = self.center - self.half_width
        hi = self.center + self.half_width
        s = np.linspace(lo, hi, n)
        cum = cumulative_trapezoid(self(s), s, initial=0.0)
        return np.interp(np.asarray(r, dtype=float), s, cum, left=0.0, right=cum[-1])


def default_bumps(eps):
    return [Bump(eps * c, 0.2 * eps) for c in (0.25, 0.5, 0.75)]


# ----------------------------------------------------------------------------- F(t, r)


@dataclass
class MeanValueSurface:
    """``F(t, r) = int_{delta > r} (1 - u_t) phi dm`` on a (time, radius) grid plus derived checks."""

    times: np.ndarray
    radii: np.ndarray
    F: np.ndarray
    dF0: np.ndarray
    band_mean: np.ndarray
    identity: list
    eps: float

    @property
    def perimeter_estimate(self):
        return -self.dF0 / self.band_mean


def _graph_laplacian(grid, values_inside):
    """``Delta v`` on inside cells with the free (no-flux) condition at the boundary."""
    n = grid.n_cells
    v = np.zeros(n)
    v[grid.inside] = values_inside
    a, b = grid.edges[:, 0], grid.edges[:, 1]
    c = grid.conductance
    diff = c * (v[b] - v[a])
    out = np.bincount(a, diff, minlength=n) - np.bincount(b, diff, minlength=n)
    return (out / grid.measure)[grid.inside]


def second_derivative_identity(grid, delta, v, lap_reg, bump):
    """Both sides of ``<F'', bump>``.

    Left: ``int F bump'' dr = int v bump'(delta) dm``.  Right:
    ``int Delta v Bump(delta) dm - int v bump(delta) [Delta delta]^reg dm`` with
    ``Bump`` the primitive of ``bump`` vanishing at 0.
    """
    m = grid.measure[grid.inside]
    lhs = float(np.sum(v * bump.derivative(delta) * m))
    lap_v = _graph_laplacian(grid, v)
    rhs = float(np.sum(lap_v * bump.primitive(delta) * m) - np.sum(v * bump(delta) * lap_reg * m))
    return lhs, rhs


def mean_value_F(trace, field: SignedDistanceField, cutoff, radii, lap_reg=None, bumps=None) -> MeanValueSurface:
    """Tabulate ``F`` and test the distributional identity for ``F''`` against smooth bumps.

    ``trace`` must carry snapshots of a Dirichlet solve on ``field.grid``.
    ``lap_reg`` gives ``[Delta delta]^reg`` per inside cell (array, or callable
    on points); without it the discrete Laplacian of ``delta`` is used.
    ``dF0`` is the difference quotient of ``F`` over the first radius step
    and ``band_mean`` the mean of ``(1 - u_t) phi`` on that same band, so
    ``-dF0 / band_mean`` estimates the perimeter.
    """
    if not isinstance(cutoff, Cutoff):
        cutoff = Cutoff(float(cutoff))
    cutoff.validate()
    if trace.snapshots is None:
        raise ValueError("trace has no snapshots")
    grid = field.grid
    if trace.grid is not None and trace.grid is not grid:
        if trace.grid.shape != grid.shape or trace.grid.index_origin != grid.index_origin:
            raise ValueError("trace and field live on different grids")
    radii = np.asarray(radii, dtype=float)
    d = field.delta[grid.inside]
    m = grid.measure[grid.inside]
    phi = cutoff(d)
    if lap_reg is None:
        lap_reg = _graph_laplacian(grid, d)
    elif callable(lap_reg):
        lap_reg = np.asarray(lap_reg(grid.centers[grid.inside]), dtype=float)
    else:
        lap_reg = np.asarray(lap_reg, dtype=float)
        if lap_reg.shape[0] == grid.n_cells:
            lap_reg = lap_reg[grid.inside]
    bumps = default_bumps(cutoff.eps) if bumps is None else bumps
    dr = radii[1] - radii[0] if len(radii) > 1 else grid.h
    F = np.zeros((len(trace.times), len(radii)))
    dF0 = np.zeros(len(trace.times))
    band = np.zeros(len(trace.times))
    identity = []
    for i, t in enumerate(trace.times):
        v = (1.0 - trace.snapshots[i]) * phi
        F[i] = [np.sum(v[d > r] * m[d > r]) for r in radii]
        first = d <= dr
        dF0[i] = -float(np.sum(v[first] * m[first])) / dr
        band[i] = float(np.sum(v[first] * m[first]) / np.sum(m[first]))
        for k, b in enumerate(bumps):
            lhs, rhs = second_derivative_identity(grid, d, v, lap_reg, b)
            scale = max(abs(lhs), abs(rhs), 1e-300)
            identity.append({"t": float(t), "bump": k, "lhs": lhs, "rhs": rhs, "defect": abs(lhs - rhs) / scale})
    return MeanValueSurface(times=np.asarray(trace.times), radii=radii, F=F, dF0=dF0, band_mean=band,
                            identity=identity, eps=cutoff.eps)


def perimeter_derivative_law(field: SignedDistanceField, lap_reg, radii, width=None):
    """``dPer/dr`` from the volume profile next to ``int [Delta delta]^reg dPer_r`` from level bands.

    Returns ``(radii, lhs, rhs)``; the first is minus the second central
    difference of the smeared volume with spacing ``2 width`` (default ``width = 8h``).
    """
    g = field.grid
    width = 8 * g.h if width is None else width
    radii = np.asarray(radii, dtype=float)
    lap = _cell_values(field, lap_reg) if callable(lap_reg) else np.asarray(lap_reg, dtype=float)
    if lap.shape[0] != g.n_cells:
        full = np.zeros(g.n_cells)
        full[g.inside] = lap
        lap = full
    lhs = []
    rhs = []
    for r in radii:
        prof = volume_profile(field, r + width * np.arange(-2, 3), mode="smeared")
        V = prof.volume
        # d/dr Per = d/dr (-V') = -V''
        lhs.append(-(V[0] - 2 * V[2] + V[4]) / (2 * width) ** 2)
        rhs.append(band_integral(field, lap, r, 2 * width))
    return radii, np.array(lhs), np.array(rhs)
