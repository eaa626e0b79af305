"""Dirichlet and whole-space heat flows on weighted grids.

Time integration is implicit Euler with a geometric (octave-blocked) step
schedule: the octave ``[T, 2T]`` is covered by ``steps_per_octave`` steps of
size ``T / steps_per_octave``.  Step sizes therefore repeat across runs, and a
run with twice as many steps per octave reuses the factorizations of the
coarse run, which makes Richardson extrapolation over ``dt`` cheap.
"""

from __future__ import annotations

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CollarTooThin, EmptyCompactSet, GridMisaligned, LinearSolveFailure
from .mmspace import WeightedGrid, discretize, discretize_with_collar

log = logging.getLogger(__name__)

SOLVE_TOL = 1e-12
START_FRACTION = 1e-6
DEFAULT_STEPS_PER_OCTAVE = 16
#: bytes of LU factors the step solver may keep alive at once
LU_MEMORY_BUDGET = 2.5e9


@dataclass
class DirichletOperator:
    """Stiffness ``K`` and lumped mass ``M`` on the inside cells of a grid.

    The restricted Laplacian is ``-M^{-1} K``; ``laplacian`` returns the
    symmetric matrix ``L = -K`` so that ``u @ L @ u <= 0``.
    """

    grid: WeightedGrid
    cells: np.ndarray
    stiffness: sp.csr_matrix
    mass: np.ndarray

    @property
    def laplacian(self):
        return -self.stiffness

    def energy(self, u):
        return float(u @ (self.stiffness @ u))

    def apply_laplacian(self, u):
        """Pointwise discrete Laplacian ``-M^{-1} K u`` of inside-cell values."""
        return -(self.stiffness @ u) / self.mass


def build_operator(grid: WeightedGrid) -> DirichletOperator:
    cells = grid.inside_index
    local = -np.ones(grid.n_cells, dtype=int)
    local[cells] = np.arange(len(cells))
    a = local[grid.edges[:, 0]]
    b = local[grid.edges[:, 1]]
    c = grid.conductance
    n = len(cells)
    diag = np.bincount(a, c, minlength=n) + np.bincount(b, c, minlength=n)
    diag += np.bincount(local[grid.boundary_cells], grid.boundary_conductance, minlength=n)
    off = sp.coo_matrix((np.r_[-c, -c], (np.r_[a, b], np.r_[b, a])), shape=(n, n))
    K = (off + sp.diags(diag)).tocsr()
    return DirichletOperator(grid=grid, cells=cells, stiffness=K, mass=grid.measure[cells].copy())


@dataclass
class HeatTrace:
    """Heat content samples of one trajectory.

    ``snapshots`` holds inside-cell values (rows follow ``times``) when
    requested.  ``steps`` and ``residual`` are per sample: implicit Euler
    steps taken so far and the worst relative linear-solve residual.
    """

    times: np.ndarray
    Q: np.ndarray
    steps: np.ndarray
    residual: np.ndarray
    snapshots: np.ndarray | None = None
    solver_meta: dict = field(default_factory=dict)
    grid: WeightedGrid | None = None
    cells: np.ndarray | None = None

    def __len__(self):
        return len(self.times)


class _StepSolver:
    """Solves ``(M + dt K) x = M u`` with cached sparse factorizations.

    Small or well-conditioned systems go to Jacobi-preconditioned CG; the
    rest use a cached LU factorization per distinct ``dt``.
    """

    def __init__(self, op: DirichletOperator, tol=SOLVE_TOL, cache_size=3, cg_threshold=8.0):
        self.op = op
        self.tol = tol
        self.cache = OrderedDict()
        self.cache_size = cache_size
        self.cg_threshold = cg_threshold
        self.kdiag = op.stiffness.diagonal()
        self.mass = op.mass
        # interior rate 2*dim/h^2; boundary cells with tiny theta are outliers Jacobi absorbs
        self.typical_rate = float(np.median(self.kdiag / self.mass)) if len(self.mass) else 0.0
        self.worst_residual = 0.0
        self.factorizations = 0
        self.cg_solves = 0
        self.factor_bytes = 0.0

    def _limit(self):
        if not self.factor_bytes:
            return self.cache_size
        return max(1, min(self.cache_size, int(LU_MEMORY_BUDGET // self.factor_bytes)))

    def _key(self, dt):
        return float(f"{dt:.14e}")

    def _system(self, dt):
        return (sp.diags(self.mass) + dt * self.op.stiffness).tocsc()

    def solve(self, dt, u, cache=True):
        rhs = self.mass * u
        key = self._key(dt)
        stiff = dt * self.typical_rate
        if key in self.cache:
            self.cache.move_to_end(key)
            x = self.cache[key][1].solve(rhs)
            A = self.cache[key][0]
        elif cache and stiff > self.cg_threshold:
            A = self._system(dt)
            # make room first so the peak stays within the budget
            while self.cache and len(self.cache) >= self._limit():
                self.cache.popitem(last=False)
            # minimum degree on A + A^T: the system is symmetric, and this ordering
            # keeps the fill of 2D grids several times below the column default
            lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A")
            self.factorizations += 1
            self.cache[key] = (A, lu)
            self.factor_bytes = 12.0 * (lu.L.nnz + lu.U.nnz)
            x = lu.solve(rhs)
        else:
            A = (sp.diags(self.mass) + dt * self.op.stiffness).tocsr()
            dinv = 1.0 / (self.mass + dt * self.kdiag)
            pre = spla.LinearOperator(A.shape, matvec=lambda v: dinv * v)
            x, info = spla.cg(A, rhs, x0=u.copy(), rtol=self.tol, atol=0.0, M=pre, maxiter=20000)
            self.cg_solves += 1
            if info != 0:
                res = np.linalg.norm(A @ x - rhs) / np.linalg.norm(rhs)
                raise LinearSolveFailure(f"CG did not converge (info={info}, residual={res:.3e})", residual=res)
        norm = np.linalg.norm(rhs)
        res = float(np.linalg.norm(A @ x - rhs) / norm) if norm > 0 else 0.0
        if res > 1e3 * self.tol:
            raise LinearSolveFailure(f"linear solve residual {res:.3e} exceeds tolerance", residual=res)
        self.worst_residual = max(self.worst_residual, res)
        return x


def step_schedule(t_end, steps_per_octave=DEFAULT_STEPS_PER_OCTAVE, t_start=None):
    """Step end times and sizes of the octave-blocked geometric schedule on ``(0, t_end]``."""
    if t_start is None:
        t_start = START_FRACTION * t_end
    n_oct = max(1, int(math.ceil(math.log2(t_end / t_start))))
    base = t_end * 2.0**-n_oct
    times = [base * (j + 1) / steps_per_octave for j in range(steps_per_octave)]
    sizes = [base / steps_per_octave] * steps_per_octave
    for k in range(n_oct, 0, -1):
        T = t_end * 2.0**-k
        dt = T / steps_per_octave
        for j in range(steps_per_octave):
            times.append(T + (j + 1) * dt)
            sizes.append(dt)
    return np.array(times), np.array(sizes)


def schedule_samples(t_max, per_octave=4, octaves=8, steps_per_octave=DEFAULT_STEPS_PER_OCTAVE):
    """Sample times lying exactly on the step schedule ending at ``t_max``."""
    if steps_per_octave % per_octave:
        raise ValueError("per_octave must divide steps_per_octave")
    out = []
    for k in range(octaves, 0, -1):
        T = t_max * 2.0**-k
        out.extend(T * (1 + j / per_octave) for j in range(per_octave))
    out.append(t_max)
    return np.array(out)


def _integrate(solver, u0, sample_times, schedules, keep, t_start):
    """Advance one trajectory per schedule in lockstep between samples.

    Returns, per schedule, the list of sample values; snapshots and step
    counts refer to the first schedule.
    """
    plans = [step_schedule(sample_times[-1], n, t_start) for n in schedules]
    state = [[u0.copy(), 0.0, 0] for _ in plans]
    out = [[] for _ in plans]
    snaps = []
    steps_at = []
    for ts in sample_times:
        for p, (times, sizes) in enumerate(plans):
            u, t, k = state[p]
            while k < len(times) and times[k] <= ts * (1 + 1e-12):
                u = solver.solve(sizes[k], u)
                t = times[k]
                k += 1
            state[p] = [u, t, k]
            if abs(t - ts) <= 1e-12 * ts:
                v = u
            else:
                # off-schedule sample: branch a single step without perturbing the trajectory
                v = solver.solve(ts - t, u, cache=False)
            out[p].append(v)
        steps_at.append(state[0][2])
        if keep:
            snaps.append(out[0][-1].copy())
    return out, snaps, steps_at


def _run(op, u0, sample_times, *, keep_snapshots, richardson, steps_per_octave, tol, t_start=None):
    sample_times = np.asarray(sample_times, dtype=float)
    if sample_times.ndim != 1 or len(sample_times) == 0:
        raise ValueError("sample_times must be a non-empty 1D sequence")
    if np.any(sample_times <= 0) or np.any(np.diff(sample_times) <= 0):
        raise ValueError("sample_times must be positive and strictly increasing")
    if t_start is None:
        t_start = min(START_FRACTION * sample_times[-1], sample_times[0])
    schedules = [steps_per_octave]
    if richardson:
        if steps_per_octave % 2:
            raise ValueError("richardson needs an even steps_per_octave")
        schedules.append(steps_per_octave // 2)
    solver = _StepSolver(op, tol=tol)
    runs, snaps, steps = _integrate(solver, u0, sample_times, schedules, keep_snapshots, t_start)
    mass = op.mass
    Q = np.array([mass @ v for v in runs[0]])
    meta = {
        "scheme": "implicit-euler",
        "steps_per_octave": steps_per_octave,
        "t_start": t_start,
        "tolerance": tol,
        "richardson": richardson,
    }
    if richardson:
        Qc = np.array([mass @ v for v in runs[1]])
        meta["Q_implicit_euler"] = Q.tolist()
        meta["Q_coarse"] = Qc.tolist()
        # first order in dt, and the coarse step is exactly twice the fine one
        meta["dt_error_estimate"] = float(np.max(np.abs(Q - Qc)))
        Q = 2.0 * Q - Qc
    meta["factorizations"] = solver.factorizations
    meta["cg_solves"] = solver.cg_solves
    meta["max_residual"] = solver.worst_residual
    return HeatTrace(
        times=sample_times,
        Q=Q,
        steps=np.asarray(steps),
        residual=np.full(len(sample_times), solver.worst_residual),
        snapshots=np.array(snaps) if keep_snapshots else None,
        solver_meta=meta,
        grid=op.grid,
        cells=op.cells,
    )


def dirichlet_heat_solve(grid: WeightedGrid, sample_times, *, initial=None, keep_snapshots=False,
                         richardson=True, steps_per_octave=DEFAULT_STEPS_PER_OCTAVE, tol=SOLVE_TOL) -> HeatTrace:
    """Heat content of the Dirichlet flow started from the indicator of the domain.

    ``initial`` optionally replaces the indicator by per-cell values (full
    grid length); they are restricted to inside cells.
    """
    op = build_operator(grid)
    if initial is None:
        u0 = np.ones(len(op.cells))
    else:
        u0 = np.asarray(initial, dtype=float)[op.cells]
    trace = _run(op, u0, sample_times, keep_snapshots=keep_snapshots, richardson=richardson,
                 steps_per_octave=steps_per_octave, tol=tol)
    trace.solver_meta["h"] = grid.h
    trace.solver_meta["measure"] = grid.total_measure()
    return trace


def collar_width(t_max, tol=1e-12):
    """Smallest collar for which the Gaussian tail ``exp(-w^2/4t)`` stays below ``tol``."""
    return 2.0 * math.sqrt(t_max * math.log(1.0 / tol))


def default_collar(t_max):
    return 3.0 * math.sqrt(t_max * math.log(1e12))


def _distance_to_far_edge(grid, support):
    """Distance from the support of ``f`` to the Dirichlet edge of the collar box."""
    box = grid.spec
    return float(np.min(box.sdf(grid.centers[support]))) if support.any() else math.inf


def global_heat_solve(collar_grid: WeightedGrid, f, sample_times, *, keep_snapshots=True, tol=SOLVE_TOL,
                      steps_per_octave=DEFAULT_STEPS_PER_OCTAVE, check_collar=True) -> HeatTrace:
    """Whole-space heat flow ``h_t f`` approximated on a wide collar box.

    Only the far edge of the box is absorbing; ``f`` is given per cell of the
    collar grid.
    """
    f = np.asarray(f, dtype=float)
    t_max = float(np.max(sample_times))
    if check_collar:
        support = collar_grid.inside & (np.abs(f) > 0)
        if _distance_to_far_edge(collar_grid, support) < collar_width(t_max):
            raise CollarTooThin(
                f"collar {_distance_to_far_edge(collar_grid, support):.3g} thinner than "
                f"{collar_width(t_max):.3g} needed for t_max={t_max:g}")
    op = build_operator(collar_grid)
    trace = _run(op, f[op.cells], sample_times, keep_snapshots=keep_snapshots, richardson=False,
                 steps_per_octave=steps_per_octave, tol=tol)
    trace.solver_meta["h"] = collar_grid.h
    return trace


@dataclass
class Report:
    passed: bool
    worst: float
    detail: str = ""
    data: dict = field(default_factory=dict)

    def __bool__(self):
        return self.passed


def check_max_principle(trace: HeatTrace, tol=1e-9) -> Report:
    """Cell-wise ``0 <= u <= 1`` over all retained snapshots."""
    if trace.snapshots is None:
        raise ValueError("trace has no snapshots")
    snaps = np.asarray(trace.snapshots)
    below = -snaps
    above = snaps - 1.0
    viol = np.maximum(below, above)
    k, c = np.unravel_index(int(np.argmax(viol)), viol.shape)
    worst = float(max(viol[k, c], 0.0))
    cell = int(trace.cells[c]) if trace.cells is not None else int(c)
    ok = worst <= tol
    detail = "ok" if ok else f"cell {cell} at t={trace.times[k]:g} has u={snaps[k, c]:.6g}"
    return Report(ok, worst, detail, {"cell": cell, "time": float(trace.times[k])})


def check_domain_monotonicity(spec1, spec2, h, t, tol=1e-9, grids=None) -> Report:
    """Compare Dirichlet flows of ``chi_{spec1}`` on ``spec1`` and on ``spec2``."""
    g1, g2 = grids if grids is not None else (discretize(spec1, h), discretize(spec2, h))
    if not math.isclose(g1.h, g2.h, rel_tol=1e-12):
        raise GridMisaligned("grids have different spacing")
    k1 = {tuple(v) for v in g1.lattice_index()[g1.inside]}
    idx2 = g2.lattice_index()
    pos2 = {tuple(v): i for i, v in enumerate(idx2)}
    lat1 = g1.lattice_index()[g1.inside]
    try:
        in2 = np.array([pos2[tuple(v)] for v in lat1])
    except KeyError:
        raise GridMisaligned("inside cells of the smaller domain are not cells of the larger grid")
    if not np.all(g2.inside[in2]):
        raise GridMisaligned("inside cells of the smaller domain are not inside the larger one")
    times = np.atleast_1d(np.asarray(t, dtype=float))
    tr1 = dirichlet_heat_solve(g1, times, keep_snapshots=True)
    f2 = np.zeros(g2.n_cells)
    f2[in2] = 1.0
    tr2 = dirichlet_heat_solve(g2, times, initial=f2, keep_snapshots=True)
    local2 = -np.ones(g2.n_cells, dtype=int)
    local2[tr2.cells] = np.arange(len(tr2.cells))
    u2 = tr2.snapshots[:, local2[in2]]
    diff = tr1.snapshots - u2
    worst = float(max(diff.max(), 0.0))
    ok = worst <= tol
    return Report(ok, worst, "ok" if ok else f"u1 exceeds u2 by {worst:.3e}",
                  {"max_abs_difference": float(np.abs(diff).max()), "cells": len(k1)})


def kac_defect(spec, h, K_margin, times, collar=None):
    """``(t, ||h_t chi - h_t^Omega chi||_{L1(K)} / t)`` for ``K = {delta > K_margin}``."""
    times = np.asarray(times, dtype=float)
    order = np.argsort(times)
    if K_margin < 8 * h:
        raise EmptyCompactSet(f"K_margin={K_margin} must be at least 8h={8 * h}")
    grid = discretize(spec, h)
    width = collar if collar is not None else default_collar(times.max())
    cgrid, omega = discretize_with_collar(spec, h, width)
    delta = spec.sdf(grid.centers)
    K = grid.inside & (delta > K_margin)
    if not K.any():
        raise EmptyCompactSet(f"no cell of {spec.label} is farther than {K_margin} from the boundary")
    sorted_t = times[order]
    dtr = dirichlet_heat_solve(grid, sorted_t, keep_snapshots=True)
    gtr = global_heat_solve(cgrid, omega.astype(float), sorted_t, keep_snapshots=True)

    lat = grid.lattice_index()
    kc = np.flatnonzero(K)
    pos = lat[kc] - np.asarray(cgrid.index_origin)
    flat_c = np.ravel_multi_index(pos.T, cgrid.shape)
    loc_d = -np.ones(grid.n_cells, dtype=int)
    loc_d[dtr.cells] = np.arange(len(dtr.cells))
    loc_c = -np.ones(cgrid.n_cells, dtype=int)
    loc_c[gtr.cells] = np.arange(len(gtr.cells))
    m = grid.measure[kc]
    out = []
    for i, t in enumerate(sorted_t):
        diff = gtr.snapshots[i, loc_c[flat_c]] - dtr.snapshots[i, loc_d[kc]]
        out.append((float(t), float(np.sum(m * np.abs(diff)) / t)))
    return out
