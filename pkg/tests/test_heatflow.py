import math

import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings, strategies as st

from mmheat.errors import CollarTooThin, EmptyCompactSet, GridMisaligned
from mmheat.heatflow import (HeatTrace, build_operator, check_domain_monotonicity, check_max_principle,
                             default_collar, dirichlet_heat_solve, global_heat_solve, kac_defect, schedule_samples)
from mmheat.mmspace import Disk, Interval, Rect, discretize, discretize_with_collar

# sum over odd k <= 1e5 of 8/(k pi)^2 exp(-(k pi)^2 t) at t = 0.01, evaluated once with mpmath
INTERVAL_Q_001 = 0.77432417


def test_interval_oracle_value():
    from mmheat.asympt import interval_heat_content

    assert interval_heat_content(0.01, terms=50000)[0] == pytest.approx(INTERVAL_Q_001, abs=1e-8)


def test_interval_solve_matches_fourier():
    tr = dirichlet_heat_solve(discretize(Interval(0.0, 1.0), 1 / 512), [0.01])
    assert abs(tr.Q[0] - INTERVAL_Q_001) <= 1e-3


def test_tiny_time_keeps_the_mass(unit_square):
    g = discretize(unit_square, 1 / 64)
    tr = dirichlet_heat_solve(g, [1e-6, 1e-3])
    assert tr.Q[0] >= 0.999 * g.total_measure()


def test_disk_against_three_term_expansion(unit_disk):
    t = 1e-3
    tr = dirichlet_heat_solve(discretize(unit_disk, 1 / 256), [t])
    ref = math.pi - math.sqrt(4 * t / math.pi) * 2 * math.pi + math.pi * t
    assert abs(tr.Q[0] - ref) / ref < 0.01


def test_operator_structure(unit_disk):
    op = build_operator(discretize(unit_disk, 1 / 32))
    K = op.stiffness
    assert abs(K - K.T).max() == 0
    # L = -M^{-1} K: row sums of -K are <= 0, strictly negative at Dirichlet cells
    rows = -np.asarray(K.sum(axis=1)).ravel()
    assert np.all(rows <= 1e-12)
    assert np.any(rows < -1e-6)
    lam = spla.eigsh(K.tocsc(), k=1, sigma=0, which="LM", return_eigenvectors=False)
    assert lam[0] > 0


def test_constants_are_invariant_for_the_global_flow(unit_disk):
    cg, om = discretize_with_collar(unit_disk, 1 / 32, default_collar(1e-4))
    tr = global_heat_solve(cg, np.ones(cg.n_cells), [1e-4], check_collar=False)
    inner = om[tr.cells]
    assert np.max(np.abs(tr.snapshots[0][inner] - 1.0)) < 1e-9


def test_global_flow_center_and_mass(unit_disk):
    cg, om = discretize_with_collar(unit_disk, 1 / 32, default_collar(1e-4))
    tr = global_heat_solve(cg, om.astype(float), [1e-4])
    c = np.argmin(np.linalg.norm(cg.centers[tr.cells], axis=1))
    assert abs(tr.snapshots[0][c] - 1.0) <= 1e-8
    m0 = float(np.sum(cg.measure * om))
    assert abs(tr.Q[0] - m0) <= 1e-6 * m0


def test_collar_too_thin(unit_disk):
    cg, om = discretize_with_collar(unit_disk, 1 / 32, 0.02)
    with pytest.raises(CollarTooThin):
        global_heat_solve(cg, om.astype(float), [1e-2])


@pytest.fixture(scope="module")
def small_disk_trace():
    g = discretize(Disk((0, 0), 1.0), 1 / 64)
    return dirichlet_heat_solve(g, schedule_samples(2.0**-6, 4, 8), keep_snapshots=True)


def test_max_principle_disk(small_disk_trace):
    rep = check_max_principle(small_disk_trace)
    assert rep.passed and rep.worst <= 1e-9


def test_max_principle_interval():
    tr = dirichlet_heat_solve(discretize(Interval(0, 1), 1 / 256), [1e-4, 1e-3, 1e-2], keep_snapshots=True)
    assert check_max_principle(tr).passed


def test_max_principle_flags_corruption(small_disk_trace):
    tr = small_disk_trace
    snaps = tr.snapshots.copy()
    snaps[3, 17] = 1.5
    bad = HeatTrace(tr.times, tr.Q, tr.steps, tr.residual, snaps, tr.solver_meta, tr.grid, tr.cells)
    rep = check_max_principle(bad)
    assert not rep.passed
    assert rep.data["cell"] == int(tr.cells[17])
    assert f"cell {int(tr.cells[17])}" in rep.detail


def test_heat_content_monotone(small_disk_trace):
    Q = small_disk_trace.Q
    assert np.all(np.diff(Q) <= 0)
    assert np.all(Q <= small_disk_trace.solver_meta["measure"])


def test_domain_monotonicity_nested_disks():
    assert check_domain_monotonicity(Disk((0, 0), 0.5), Disk((0, 0), 1.0), 1 / 128, 1e-3).passed


def test_domain_monotonicity_equal_domains():
    rep = check_domain_monotonicity(Disk((0, 0), 0.5), Disk((0, 0), 0.5), 1 / 64, 1e-3)
    assert rep.data["max_abs_difference"] <= 1e-12


def test_domain_monotonicity_square_in_disk():
    assert check_domain_monotonicity(Rect((-0.5, -0.5), 1, 1), Disk((0, 0), 1.0), 1 / 128, 1e-3).passed


def test_domain_monotonicity_misaligned():
    with pytest.raises(GridMisaligned):
        check_domain_monotonicity(Disk((0, 0), 1.0), Disk((0, 0), 0.5), 1 / 32, 1e-3)


def test_kac_margin_monotone(unit_disk):
    (_, a), = kac_defect(unit_disk, 1 / 32, 0.3, [1e-2])
    (_, b), = kac_defect(unit_disk, 1 / 32, 0.6, [1e-2])
    assert 0 < b < a


def test_kac_errors(unit_disk):
    with pytest.raises(EmptyCompactSet):
        kac_defect(unit_disk, 1 / 32, 0.1, [1e-3])
    with pytest.raises(EmptyCompactSet):
        kac_defect(unit_disk, 1 / 32, 1.5, [1e-3])


def test_global_and_dirichlet_agree_when_omega_is_the_box(unit_disk):
    g = discretize(unit_disk, 1 / 32)
    a = dirichlet_heat_solve(g, [1e-3, 1e-2], keep_snapshots=True)
    b = global_heat_solve(g, g.inside.astype(float), [1e-3, 1e-2], check_collar=False)
    assert np.max(np.abs(a.snapshots - b.snapshots)) == 0.0


def test_energy_decays(small_disk_trace):
    op = build_operator(small_disk_trace.grid)
    E = [op.energy(u) for u in small_disk_trace.snapshots]
    assert np.all(np.diff(E) <= 1e-12 * max(E))


def test_richardson_in_dt_recorded(small_disk_trace):
    meta = small_disk_trace.solver_meta
    Q1 = np.array(meta["Q_implicit_euler"])
    Qc = np.array(meta["Q_coarse"])
    assert np.allclose(small_disk_trace.Q, 2 * Q1 - Qc, rtol=0, atol=1e-13)
    assert meta["dt_error_estimate"] > 0


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_order_preservation(seed):
    rng = np.random.default_rng(seed)
    g = discretize(Rect((0, 0), 1, 1), 1 / 16)
    f = rng.uniform(0, 1, g.n_cells)
    gg = f + rng.uniform(0, 0.5, g.n_cells)
    times = [1e-3, 1e-2]
    a = dirichlet_heat_solve(g, times, initial=f, keep_snapshots=True, richardson=False)
    b = dirichlet_heat_solve(g, times, initial=gg, keep_snapshots=True, richardson=False)
    assert np.all(a.snapshots <= b.snapshots + 1e-12)


@settings(max_examples=8, deadline=None)
@given(st.floats(0.6, 1.0), st.sampled_from([1 / 16, 1 / 32]))
def test_global_minus_dirichlet_is_nonnegative(radius, h):
    spec = Disk((0, 0), radius)
    t = [1e-3]
    g = discretize(spec, h)
    cg, om = discretize_with_collar(spec, h, default_collar(t[-1]))
    d = dirichlet_heat_solve(g, t, keep_snapshots=True, richardson=False)
    w = global_heat_solve(cg, om.astype(float), t)
    loc = {tuple(v): i for i, v in enumerate(cg.lattice_index()[w.cells])}
    lat = g.lattice_index()[d.cells]
    idx = np.array([loc[tuple(v)] for v in lat])
    assert np.all(w.snapshots[0][idx] - d.snapshots[0] >= -1e-12)
