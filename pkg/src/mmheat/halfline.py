"""Heat equation on the half-line with Neumann data: kernel, Duhamel formula, remainder model."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import IntegrationWarning, quad

from .errors import QuadratureFailure

#: half-width of the Gaussian window, in units of sqrt(t), outside which kernels are < 1e-300
_WINDOW = 40.0


def neumann_kernel(t, r, s):
    """Reflected Gaussian ``(4 pi t)^{-1/2} (exp(-(r-s)^2/4t) + exp(-(r+s)^2/4t))``."""
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    out = (np.exp(-((r - s) ** 2) / (4 * t)) + np.exp(-((r + s) ** 2) / (4 * t))) / np.sqrt(4 * np.pi * t)
    return out if out.ndim else float(out)


@dataclass
class HalfLineProblem:
    """Data of ``(d_t - d_r^2) v = sigma`` on ``(0, inf)`` with ``d_r v(t, 0) = v1(t)``.

    Any of the three data may be ``None`` (zero).  ``breakpoints`` lists
    ``r``-locations where ``v0`` or ``sigma`` are not smooth; they are handed
    to the quadrature.
    """

    v0: Optional[Callable[[float], float]] = None
    v1: Optional[Callable[[float], float]] = None
    sigma: Optional[Callable[[float, float], float]] = None
    t_max: float = 1.0
    breakpoints: Sequence[float] = ()


def _quad(f, a, b, tol, rtol=0.0):
    if b <= a:
        return 0.0
    with warnings.catch_warnings():
        # accuracy is judged below and reported as QuadratureFailure
        warnings.simplefilter("ignore", IntegrationWarning)
        val, err = quad(f, a, b, epsabs=tol, epsrel=rtol, limit=400)
    if err > 10 * max(tol, rtol * abs(val)):
        raise QuadratureFailure(f"quadrature on [{a:g}, {b:g}] reached only {err:.2e}", achieved=err)
    return val


def _space_integral(f, r, width, tol, breakpoints, rtol=0.0):
    """``int_0^inf f(s) ds`` for ``f`` concentrated within ``width`` of ``r`` (and of 0).

    The first panel is integrated in ``s = u^2`` so that integrable algebraic
    singularities of the data at ``s = 0`` become harmless.
    """
    hi = r + _WINDOW * width
    cuts = sorted({0.0, hi, *(p for p in breakpoints if 0 < p < hi), *([r] if 0 < r < hi else [])})
    total = 0.0
    first = cuts[1]
    total += _quad(lambda u: 2.0 * u * f(u * u), 0.0, math.sqrt(first), tol / len(cuts), rtol)
    for a, b in zip(cuts[1:-1], cuts[2:]):
        total += _quad(f, a, b, tol / len(cuts), rtol)
    return total


def duhamel_solve(p: HalfLineProblem, t: float, r: float, tol: float = 1e-9, rtol: float = 0.0) -> float:
    """Evaluate the Duhamel representation of the half-line solution at ``(t, r)``.

    ``tol`` is an absolute and ``rtol`` a relative accuracy target for each
    quadrature; :class:`QuadratureFailure` is raised when neither is met.

    The time integrals use ``tau = t - w^2`` to remove the ``(t - tau)^{-1/2}``
    endpoint singularity of the kernel.
    """
    if not 0 < t <= p.t_max * (1 + 1e-12):
        raise ValueError(f"t={t} outside (0, {p.t_max}]")
    if r < 0:
        raise ValueError("r must be nonnegative")
    parts = sum(x is not None for x in (p.v0, p.v1, p.sigma)) or 1
    each = tol / parts
    total = 0.0
    if p.v0 is not None:
        total += _space_integral(lambda s: neumann_kernel(t, r, s) * p.v0(s), r, math.sqrt(t), each, p.breakpoints,
                                 rtol)
    if p.v1 is not None:
        def flux(w):
            return 2.0 / math.sqrt(math.pi) * math.exp(-r * r / (4 * w * w)) * p.v1(t - w * w) if w > 0 else \
                (2.0 / math.sqrt(math.pi) * p.v1(t) if r == 0 else 0.0)
        total -= _quad(flux, 0.0, math.sqrt(t), each, rtol)
    if p.sigma is not None:
        inner_tol = each / max(1.0, math.sqrt(t))

        def source(w):
            if w == 0:
                return 0.0
            tau = t - w * w
            val = _space_integral(lambda s: neumann_kernel(w * w, r, s) * p.sigma(tau, s), r, w, inner_tol,
                                  p.breakpoints, rtol)
            return 2.0 * w * val
        total += _quad(source, 0.0, math.sqrt(t), each, rtol)
    return total


def default_profile(rho: float) -> Callable[[float], float]:
    """``s^{-1/(1+rho) + 0.01}`` on ``(0, 1)``: in ``L^{1+rho}`` near 0 but not much better."""
    a = 1.0 / (1.0 + rho) - 0.01

    def g(s):
        return s ** (-a) if 0 < s < 1 else 0.0
    return g


def remainder_series(profile: Callable[[float], float] | None, times, rtol=1e-10, breakpoints=(1.0,)):
    """``R2(t) = int_0^t int e(t - tau, 0, s) g(s) ds dtau`` for a time-independent source ``g``."""
    times = np.asarray(times, dtype=float)
    if profile is None:
        return np.zeros_like(times)
    out = []
    for t in times:
        p = HalfLineProblem(sigma=lambda tau, s: profile(s), t_max=float(t), breakpoints=breakpoints)
        out.append(duhamel_solve(p, float(t), 0.0, tol=0.0, rtol=rtol))
    return np.array(out)


def default_times():
    return 2.0 ** -np.arange(24, 9, -1, dtype=float)


def log_log_slope(times, values):
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if np.all(values == 0):
        return math.nan
    return float(np.polyfit(np.log(times), np.log(np.abs(values)), 1)[0])


def local_slopes(times, values):
    lt = np.log(np.asarray(times, dtype=float))
    lv = np.log(np.abs(np.asarray(values, dtype=float)))
    return np.gradient(lv, lt)


def remainder_exponent_model(rho: float, profile: Callable[[float], float] | None = "default", times=None) -> float:
    """Log-log slope of the source remainder ``R2(t)`` on a dyadic time grid.

    The default source is :func:`default_profile`; the theory predicts a
    slope of at least ``(2(1+rho) - 1) / (2(1+rho))``.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    if isinstance(profile, str):
        profile = default_profile(rho)
    times = default_times() if times is None else np.asarray(times, dtype=float)
    return log_log_slope(times, remainder_series(profile, times))


def predicted_exponent(rho: float) -> float:
    return (2 * (1 + rho) - 1) / (2 * (1 + rho))
