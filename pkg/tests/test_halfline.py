import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.linalg import solve_banded
from scipy.special import erf

from mmheat.errors import QuadratureFailure
from mmheat.halfline import (HalfLineProblem, default_profile, duhamel_solve, local_slopes, log_log_slope,
                             neumann_kernel, predicted_exponent, remainder_exponent_model, remainder_series)


def crank_nicolson_neumann(sigma, t, length=20.0, n=8000, steps=2000):
    """Independent reference: CN for v_t = v_rr + sigma(r) on (0, L), v_r = 0 at both ends, v(0) = 0."""
    dr = length / n
    r = np.arange(n + 1) * dr
    dt = t / steps
    lam = dt / dr**2
    # ghost-point Neumann rows
    ab = np.zeros((3, n + 1))
    ab[0, 1:] = -lam / 2
    ab[1, :] = 1 + lam
    ab[2, :-1] = -lam / 2
    ab[0, 1] = -lam
    ab[2, -2] = -lam
    f = sigma(r) * dt
    v = np.zeros(n + 1)
    for _ in range(steps):
        lap = np.empty_like(v)
        lap[1:-1] = v[:-2] - 2 * v[1:-1] + v[2:]
        lap[0] = 2 * (v[1] - v[0])
        lap[-1] = 2 * (v[-2] - v[-1])
        v = solve_banded((1, 1), ab, v + lam / 2 * lap + f)
    return r, v


def test_kernel_values_and_symmetry():
    e = neumann_kernel(0.25, 0.0, 0.0)
    assert e == pytest.approx(2 / math.sqrt(math.pi), rel=1e-15)
    assert neumann_kernel(0.1, 0.3, 0.7) == pytest.approx(neumann_kernel(0.1, 0.7, 0.3), rel=1e-15)
    arr = neumann_kernel(0.1, 0.2, np.linspace(0, 1, 5))
    assert arr.shape == (5,)


@pytest.mark.parametrize("t,r", [(1e-4, 0.0), (1e-2, 0.0), (1e-2, 0.3), (1.0, 2.0), (10.0, 0.5)])
def test_kernel_unit_mass(t, r):
    w = math.sqrt(t)
    pts = sorted({0.0, r, r + 40 * w})
    mass = sum(quad(lambda s: neumann_kernel(t, r, s), a, b, epsabs=1e-14, epsrel=1e-13, limit=200)[0]
               for a, b in zip(pts[:-1], pts[1:]))
    assert abs(mass - 1.0) <= 1e-12


def test_constant_initial_data_is_stationary():
    p = HalfLineProblem(v0=lambda s: 1.0)
    for r in (0.0, 0.1, 1.0):
        assert duhamel_solve(p, 0.5, r) == pytest.approx(1.0, abs=1e-8)


def test_gaussian_initial_data():
    p = HalfLineProblem(v0=lambda s: math.exp(-s * s))
    for t, r in [(0.01, 0.0), (0.1, 0.5), (1.0, 1.5)]:
        exact = math.exp(-r * r / (1 + 4 * t)) / math.sqrt(1 + 4 * t)
        assert duhamel_solve(p, t, r, tol=1e-11) == pytest.approx(exact, abs=1e-9)


def test_constant_flux():
    c = 0.7
    p = HalfLineProblem(v1=lambda tau: c)
    t = 0.09
    assert duhamel_solve(p, t, 0.0, tol=1e-12) == pytest.approx(-2 * c * math.sqrt(t / math.pi), abs=1e-10)


def test_constant_source():
    p = HalfLineProblem(sigma=lambda tau, s: 1.0, t_max=0.2)
    assert duhamel_solve(p, 0.2, 0.4, tol=1e-10) == pytest.approx(0.2, abs=1e-8)


def test_indicator_source_against_erf_integral():
    t = 0.01
    p = HalfLineProblem(sigma=lambda tau, s: 1.0 if s < 1 else 0.0, t_max=t, breakpoints=(1.0,))
    got = duhamel_solve(p, t, 0.0, tol=1e-12)
    exact = quad(lambda tau: erf(1 / (2 * math.sqrt(tau))), 0, t, epsabs=1e-15)[0]
    assert got == pytest.approx(exact, abs=1e-10)


def test_indicator_source_against_crank_nicolson():
    t = 0.01
    p = HalfLineProblem(sigma=lambda tau, s: 1.0 if s < 1 else 0.0, t_max=t, breakpoints=(1.0,))
    got = duhamel_solve(p, t, 0.0, tol=1e-12)
    r, v = crank_nicolson_neumann(lambda r: np.where(r < 1, 1.0, np.where(r == 1, 0.5, 0.0)), t)
    assert got == pytest.approx(v[0], abs=1e-6)


def test_linearity():
    f = lambda s: math.exp(-s)  # noqa: E731
    g = lambda s: 1.0 / (1 + s * s)  # noqa: E731
    a, b = 2.5, -0.75
    one = duhamel_solve(HalfLineProblem(v0=f), 0.05, 0.2, tol=1e-11)
    two = duhamel_solve(HalfLineProblem(v0=g), 0.05, 0.2, tol=1e-11)
    both = duhamel_solve(HalfLineProblem(v0=lambda s: a * f(s) + b * g(s)), 0.05, 0.2, tol=1e-11)
    assert both == pytest.approx(a * one + b * two, abs=1e-9)


def test_pde_residual_and_neumann_condition():
    p = HalfLineProblem(v0=lambda s: math.exp(-s * s), sigma=lambda tau, s: math.cos(s) * math.exp(-tau),
                        t_max=1.0)
    t, r, k = 0.3, 0.5, 1e-3

    def v(tt, rr):
        return duhamel_solve(p, tt, rr, tol=1e-13, rtol=1e-13)

    vt = (v(t + k, r) - v(t - k, r)) / (2 * k)
    vrr = (v(t, r + k) - 2 * v(t, r) + v(t, r - k)) / k**2
    assert abs(vt - vrr - math.cos(r) * math.exp(-t)) <= 1e-4
    assert abs((v(t, k) - v(t, 0.0)) / k) <= 1e-3


def test_refinement_agrees():
    p = HalfLineProblem(v0=lambda s: math.exp(-s), sigma=lambda tau, s: s * math.exp(-s), t_max=0.5)
    a = duhamel_solve(p, 0.5, 0.1, tol=1e-8)
    b = duhamel_solve(p, 0.5, 0.1, tol=1e-11)
    assert abs(a - b) <= 1e-8


def test_argument_checks():
    p = HalfLineProblem(v0=lambda s: 1.0, t_max=1.0)
    with pytest.raises(ValueError):
        duhamel_solve(p, 2.0, 0.0)
    with pytest.raises(ValueError):
        duhamel_solve(p, 0.5, -0.1)
    with pytest.raises(ValueError):
        remainder_exponent_model(0.0)


def test_quadrature_failure_reported():
    p = HalfLineProblem(v1=lambda tau: math.sin(1e7 * tau))
    with pytest.raises(QuadratureFailure) as info:
        duhamel_solve(p, 1.0, 0.0, tol=1e-14)
    assert info.value.achieved is not None


def test_remainder_exponent_rho_one():
    slope = remainder_exponent_model(1.0)
    assert predicted_exponent(1.0) == 0.75
    assert slope >= 0.70


def test_bounded_source_slope_one():
    slope = remainder_exponent_model(1.0, profile=lambda s: 1.0 if s < 1 else 0.0)
    assert abs(slope - 1.0) <= 0.05


def test_zero_source_gives_zero_remainder():
    t = np.array([1e-4, 1e-3])
    assert np.all(remainder_series(None, t) == 0)
    assert math.isnan(log_log_slope(t, np.zeros(2)))


def test_local_slopes_power_law():
    t = 2.0 ** -np.arange(20, 10, -1)
    assert np.allclose(local_slopes(t, 3 * t**0.6), 0.6)


def test_default_profile_integrability():
    g = default_profile(1.0)
    # exponent 1/2 - 0.01 keeps g in L^2 near zero, but only just
    assert g(0.5) == pytest.approx(0.5 ** -0.49)
    assert g(1.5) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-4, 10.0), st.floats(0, 5.0), st.floats(0, 5.0))
def test_kernel_positive_and_symmetric(t, r, s):
    e = neumann_kernel(t, r, s)
    assert e >= 0
    assert e == pytest.approx(neumann_kernel(t, s, r), rel=1e-12)
    # reflection makes the r-derivative vanish at the boundary
    k = 1e-6
    assert abs(neumann_kernel(t, k, s) - neumann_kernel(t, 0.0, s)) <= 1e-6 * max(e, 1.0) / math.sqrt(t)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.001, 0.5), st.floats(0.0, 2.0), st.floats(-2.0, 2.0))
def test_constant_data_property(t, r, c):
    p = HalfLineProblem(v0=lambda s: c, t_max=1.0)
    assert duhamel_solve(p, t, r) == pytest.approx(c, abs=1e-8)
