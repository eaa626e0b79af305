import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmheat.acceptance import C1_DISK, DISK_EPS
from mmheat.asympt import (SQRT_4_OVER_PI, Trace, auto_window, disk_heat_content, fit_expansion,
                           interval_heat_content, mean_curvature_target, perimeter_from_heat, remainder_exponent,
                           richardson_in_h, second_order_check)
from mmheat.errors import ResidualBelowNoise, UnsupportedShape, WindowTooNarrow
from mmheat.heatflow import dirichlet_heat_solve, schedule_samples
from mmheat.mmspace import Disk, Interval, Rect, discretize

TIMES = np.geomspace(1e-5, 1e-2, 30)


def synthetic(c0, c1, c2, times=TIMES, extra=None):
    t = np.asarray(times)
    Q = c0 - c1 * np.sqrt(t) + c2 * t
    if extra is not None:
        Q = Q + extra(t)
    return Trace(times=t, Q=Q, solver_meta={"tolerance": 1e-12})


def test_interval_oracle_value():
    # independent of the series: the t -> 0 expansion has exponentially small corrections
    t = 1e-3
    assert interval_heat_content(t)[0] == pytest.approx(1 - 2 * math.sqrt(4 * t / math.pi), abs=1e-12)
    assert interval_heat_content(0.01)[0] == pytest.approx(0.77432417, abs=1e-8)


def test_disk_oracle_value():
    # pi - 4 sqrt(pi t) + pi t up to O(t^{3/2})
    t = 1e-5
    Q = disk_heat_content(t)[0]
    assert Q == pytest.approx(math.pi - 4 * math.sqrt(math.pi * t) + math.pi * t, abs=1e-6)


def test_synthetic_exact_recovery():
    fit = fit_expansion(synthetic(3.0, 2.0, 5.0), "sqrt_plus_linear")
    assert (fit.c0, fit.c1, fit.c2) == pytest.approx((3.0, 2.0, 5.0), abs=1e-10)
    assert fit.residual_rms <= 1e-12
    assert fit.n_samples == len(TIMES)


def test_sqrt_only_model():
    fit = fit_expansion(synthetic(1.0, 0.5, 0.0), "sqrt_only")
    assert fit.c2 is None
    assert fit.c1 == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(ValueError):
        fit_expansion(synthetic(1.0, 0.5, 0.0), "cubic")


def test_interval_fourier_fit():
    t = np.geomspace(1e-5, 1e-2, 40)
    tr = Trace(times=t, Q=interval_heat_content(t))
    fit = fit_expansion(tr, "sqrt_plus_linear")
    assert abs(fit.c1 - 2 * SQRT_4_OVER_PI) <= 0.005 * 2 * SQRT_4_OVER_PI
    assert perimeter_from_heat(fit) == pytest.approx(2.0, rel=5e-3)
    assert abs(fit.c2) <= 0.02


def test_disk_trace_coefficients(disk_trace_256):
    fit = fit_expansion(disk_trace_256, "sqrt_plus_linear", eps=DISK_EPS)
    assert abs(fit.c1 - C1_DISK) / C1_DISK <= 0.02
    assert abs(fit.perimeter_est - 2 * math.pi) / (2 * math.pi) <= 0.02
    lo, hi = fit.window
    assert lo >= 100 * (1 / 256) ** 2 * (1 - 1e-12)
    assert math.sqrt(hi) <= DISK_EPS / 4 * (1 + 1e-12)


def test_auto_window(disk_trace_256):
    lo, hi = auto_window(disk_trace_256, eps=0.2)
    assert lo == pytest.approx(100 / 256**2)
    assert hi == pytest.approx(0.05**2)


def test_remainder_exponent_synthetic():
    tr = synthetic(3.0, 2.0, 0.0, extra=lambda t: t**0.75)
    assert remainder_exponent(tr, 3.0, 2.0) == pytest.approx(0.75, abs=0.02)


def test_remainder_exponent_disk(disk_trace_256):
    slope = remainder_exponent(disk_trace_256, math.pi, C1_DISK, eps=DISK_EPS)
    assert abs(slope - 1.0) <= 0.15


def test_interval_remainder_below_noise():
    t = np.geomspace(1e-5, 5e-3, 20)
    tr = Trace(times=t, Q=interval_heat_content(t), solver_meta={"tolerance": 1e-12})
    with pytest.raises(ResidualBelowNoise):
        remainder_exponent(tr, 1.0, 2 * SQRT_4_OVER_PI)


def test_window_too_narrow():
    tr = synthetic(1.0, 1.0, 0.0, times=np.geomspace(1e-4, 1e-3, 5))
    with pytest.raises(WindowTooNarrow):
        fit_expansion(tr)
    with pytest.raises(WindowTooNarrow):
        fit_expansion(synthetic(1.0, 1.0, 0.0), window=(1e-3, 1.2e-3))


def test_mean_curvature_targets():
    assert mean_curvature_target(Disk((0, 0), 3.0)) == pytest.approx(math.pi)
    assert mean_curvature_target(Interval(0, 1)) == 0.0
    with pytest.raises(UnsupportedShape):
        mean_curvature_target(Rect((0, 0), 1, 1))


def test_second_order_interval_absolute():
    t = np.geomspace(1e-5, 1e-2, 40)
    res = second_order_check(Trace(times=t, Q=interval_heat_content(t)), Interval(0, 1))
    assert not res.relative
    assert res.defect <= 0.02


def test_second_order_disk_bessel_oracle():
    # continuum trace of the radius-2 disk: c2 = (1/2) int H = pi for every radius
    t = np.geomspace(1e-5, 4e-3, 40)
    tr = Trace(times=t, Q=disk_heat_content(t, radius=2.0))
    res = second_order_check(tr, Disk((0, 0), 2.0))
    assert res.relative
    assert res.defect <= 0.10
    assert res.fit.c1 == pytest.approx(SQRT_4_OVER_PI * 4 * math.pi, rel=1e-3)


def test_richardson_in_h_checks():
    a = Trace(times=TIMES, Q=np.ones(len(TIMES)), solver_meta={"h": 1 / 64})
    b = Trace(times=TIMES, Q=np.ones(len(TIMES)), solver_meta={"h": 1 / 128})
    c = Trace(times=TIMES, Q=np.ones(len(TIMES)), solver_meta={"h": 1 / 96})
    assert np.allclose(richardson_in_h(a, b).Q, 1.0)
    with pytest.raises(ValueError):
        richardson_in_h(a, c)
    with pytest.raises(ValueError):
        richardson_in_h(a, Trace(times=TIMES[:-1], Q=np.ones(len(TIMES) - 1), solver_meta={"h": 1 / 128}))


def test_richardson_in_h_cancels_quadratic_error():
    exact = 2.0 - np.sqrt(TIMES)
    a = Trace(times=TIMES, Q=exact + 0.3 * (1 / 64) ** 2, solver_meta={"h": 1 / 64})
    b = Trace(times=TIMES, Q=exact + 0.3 * (1 / 128) ** 2, solver_meta={"h": 1 / 128})
    assert np.allclose(richardson_in_h(a, b).Q, exact, atol=1e-14)


def test_scale_covariance():
    # the radius-2 disk at h = 1/64 is the unit disk at h = 1/128 magnified twice
    t1 = schedule_samples(2.0**-8, 2, 4)
    q1 = dirichlet_heat_solve(discretize(Disk((0, 0), 1.0), 1 / 128), t1).Q
    q2 = dirichlet_heat_solve(discretize(Disk((0, 0), 2.0), 1 / 64), 4 * t1).Q
    assert np.allclose(q2, 4 * q1, rtol=1e-8)


def test_pinning_within_measure_gap(disk_trace_256):
    # the free (c1, c2) are admissible for the pinned problem, so pinning costs at most the c0 gap
    free = fit_expansion(disk_trace_256, eps=DISK_EPS)
    pinned = fit_expansion(disk_trace_256, eps=DISK_EPS, pin_c0=math.pi)
    assert pinned.pinned and pinned.c0 == math.pi
    assert pinned.residual_rms <= free.residual_rms + abs(free.c0 - math.pi) + 1e-15
    assert pinned.c1 >= 0
    assert abs(pinned.c1 - C1_DISK) / C1_DISK <= 0.02


def test_pinning_at_most_doubles_rms_when_model_complete(rng):
    t = np.geomspace(1e-5, 1e-2, 40)
    tr = Trace(times=t, Q=interval_heat_content(t))
    free = fit_expansion(tr)
    pinned = fit_expansion(tr, pin_c0=1.0)
    assert pinned.residual_rms <= 2 * free.residual_rms + 1e-12
    noisy = synthetic(3.0, 2.0, 5.0, times=t, extra=lambda s: 1e-6 * rng.standard_normal(len(s)))
    free = fit_expansion(noisy)
    pinned = fit_expansion(noisy, pin_c0=3.0)
    assert pinned.residual_rms <= 2 * free.residual_rms


def test_pin_c0_true_uses_grid_spec():
    t = schedule_samples(2.0**-6, 4, 4)
    tr = dirichlet_heat_solve(discretize(Interval(0.0, 1.0), 1 / 256), t)
    fit = fit_expansion(tr, pin_c0=True)
    assert fit.c0 == 1.0


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 10.0), st.floats(0.0, 10.0), st.floats(-10.0, 10.0))
def test_fit_recovers_any_expansion(c0, c1, c2):
    fit = fit_expansion(synthetic(c0, c1, c2), "sqrt_plus_linear")
    assert fit.c0 == pytest.approx(c0, abs=1e-9)
    assert fit.c1 == pytest.approx(c1, abs=1e-8)
    assert fit.c2 == pytest.approx(c2, abs=1e-6)
    assert fit.perimeter_est == pytest.approx(fit.c1 / SQRT_4_OVER_PI)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 10.0), st.floats(0.0, 10.0), st.floats(-10.0, 10.0), st.floats(-1e-3, 1e-3),
       st.floats(-1.0, 1.0))
def test_pinning_bound_property(c0, c1, c2, gap, c3):
    tr = synthetic(c0, c1, c2, extra=lambda t: c3 * t**1.5)
    free = fit_expansion(tr)
    pinned = fit_expansion(tr, pin_c0=c0 + gap)
    assert pinned.residual_rms <= free.residual_rms + abs(free.c0 - c0 - gap) + 1e-12


@settings(max_examples=30, deadline=None)
@given(st.floats(0.5, 1.5), st.floats(0.1, 3.0))
def test_remainder_exponent_recovers_power(p, a):
    tr = synthetic(1.0, 1.0, 0.0, extra=lambda t: a * t**p)
    assert remainder_exponent(tr, 1.0, 1.0) == pytest.approx(p, abs=1e-6)
