"""Small-time expansion ``Q(t) = c0 - c1 sqrt(t) + c2 t + ...`` of heat content traces."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ResidualBelowNoise, UnsupportedShape, WindowTooNarrow
from .mmspace import Disk, Interval, continuum_measure

MODELS = ("sqrt_only", "sqrt_plus_linear")
MIN_SAMPLES = 8
#: ``t_lo >= FLOOR_FACTOR * h^2`` keeps the fit off the spatial discretization plateau
FLOOR_FACTOR = 100.0
SQRT_4_OVER_PI = math.sqrt(4.0 / math.pi)


@dataclass
class Trace:
    """Minimal heat content trace: sample times, values and free-form metadata."""

    times: np.ndarray
    Q: np.ndarray
    solver_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.Q = np.asarray(self.Q, dtype=float)


@dataclass
class AsymptoticFit:
    c0: float
    c1: float
    c2: Optional[float]
    window: tuple
    residual_rms: float
    exponent_estimate: float
    model: str = "sqrt_plus_linear"
    n_samples: int = 0
    pinned: bool = False

    @property
    def perimeter_est(self):
        return self.c1 / SQRT_4_OVER_PI


def _trace_h(trace):
    meta = getattr(trace, "solver_meta", {}) or {}
    if "h" in meta:
        return float(meta["h"])
    grid = getattr(trace, "grid", None)
    return float(grid.h) if grid is not None else None


def auto_window(trace, eps=None, h=None):
    """``(t_lo, t_hi)`` with ``t_lo >= 100 h^2`` and ``sqrt(t_hi) <= eps/4``."""
    t = np.asarray(trace.times, dtype=float)
    h = _trace_h(trace) if h is None else h
    lo = float(t.min()) if h is None else max(float(t.min()), FLOOR_FACTOR * h * h)
    hi = float(t.max()) if eps is None else min(float(t.max()), (eps / 4.0) ** 2)
    return lo, hi


def _slope(t, r):
    r = np.abs(r)
    ok = r > 0
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(t[ok]), np.log(r[ok]), 1)[0])


def fit_expansion(trace, model="sqrt_plus_linear", eps=None, window=None, pin_c0=None, h=None) -> AsymptoticFit:
    """Least-squares fit of ``Q`` on ``{1, sqrt t}`` or ``{1, sqrt t, t}`` over a window.

    ``pin_c0`` fixes ``c0`` (pass a number, or ``True`` to use the exact
    measure of ``trace.grid.spec``).  Raises :class:`WindowTooNarrow` when
    fewer than 8 samples fall in the window.
    """
    if model not in MODELS:
        raise ValueError(f"model must be one of {MODELS}")
    t = np.asarray(trace.times, dtype=float)
    Q = np.asarray(trace.Q, dtype=float)
    lo, hi = window if window is not None else auto_window(trace, eps, h)
    sel = (t >= lo * (1 - 1e-12)) & (t <= hi * (1 + 1e-12))
    if sel.sum() < MIN_SAMPLES:
        raise WindowTooNarrow(f"only {int(sel.sum())} samples in [{lo:.3g}, {hi:.3g}]; need {MIN_SAMPLES}")
    ts, qs = t[sel], Q[sel]
    cols = [np.ones_like(ts), -np.sqrt(ts)]
    if model == "sqrt_plus_linear":
        cols.append(ts)
    A = np.column_stack(cols)
    if pin_c0 is True:
        pin_c0 = continuum_measure(trace.grid.spec)
    if pin_c0 is not None and pin_c0 is not False:
        coef = np.linalg.lstsq(A[:, 1:], qs - pin_c0, rcond=None)[0]
        coef = np.concatenate([[float(pin_c0)], coef])
    else:
        coef = np.linalg.lstsq(A, qs, rcond=None)[0]
    resid = qs - A @ coef
    c0, c1 = float(coef[0]), float(coef[1])
    c2 = float(coef[2]) if model == "sqrt_plus_linear" else None
    return AsymptoticFit(
        c0=c0, c1=c1, c2=c2, window=(float(ts.min()), float(ts.max())),
        residual_rms=float(np.sqrt(np.mean(resid**2))),
        exponent_estimate=_slope(ts, qs - c0 + c1 * np.sqrt(ts)),
        model=model, n_samples=int(sel.sum()), pinned=pin_c0 is not None and pin_c0 is not False,
    )


def perimeter_from_heat(trace_or_fit, **fit_kw) -> float:
    """``c1 / sqrt(4/pi)``."""
    fit = trace_or_fit if isinstance(trace_or_fit, AsymptoticFit) else fit_expansion(trace_or_fit, **fit_kw)
    return fit.perimeter_est


def remainder_exponent(trace, true_c0, true_c1, window=None, eps=None, h=None, noise_factor=10.0) -> float:
    """Log-log slope of ``|Q - c0 + c1 sqrt t|`` over the fit window.

    Raises :class:`ResidualBelowNoise` when the remainder never exceeds
    ``noise_factor`` times the solver tolerance (relative to ``c0``).
    """
    t = np.asarray(trace.times, dtype=float)
    Q = np.asarray(trace.Q, dtype=float)
    lo, hi = window if window is not None else auto_window(trace, eps, h)
    sel = (t >= lo * (1 - 1e-12)) & (t <= hi * (1 + 1e-12))
    if sel.sum() < 2:
        raise WindowTooNarrow("fewer than two samples in the window")
    r = Q[sel] - true_c0 + true_c1 * np.sqrt(t[sel])
    tol = float((getattr(trace, "solver_meta", {}) or {}).get("tolerance", 1e-12))
    noise = noise_factor * tol * max(abs(true_c0), 1.0)
    if np.max(np.abs(r)) <= noise:
        raise ResidualBelowNoise(f"remainder {np.max(np.abs(r)):.3e} is within the noise floor {noise:.1e}")
    return _slope(t[sel], r)


def richardson_in_h(trace_coarse, trace_fine, order=2.0):
    """``(2^p Q_fine - Q_coarse) / (2^p - 1)`` for traces at ``h`` and ``h/2`` on common times."""
    tc = np.asarray(trace_coarse.times)
    tf = np.asarray(trace_fine.times)
    if len(tc) != len(tf) or not np.allclose(tc, tf, rtol=1e-12, atol=0):
        raise ValueError("Richardson extrapolation needs both traces on the same times")
    hc, hf = _trace_h(trace_coarse), _trace_h(trace_fine)
    if hc is not None and hf is not None and not math.isclose(hc, 2 * hf, rel_tol=1e-9):
        raise ValueError(f"grid spacings {hc:g} and {hf:g} are not in ratio 2")
    f = 2.0**order
    Q = (f * np.asarray(trace_fine.Q) - np.asarray(trace_coarse.Q)) / (f - 1)
    meta = {"h": hf, "richardson_h_order": order, "tolerance": (trace_fine.solver_meta or {}).get("tolerance", 1e-12)}
    return Trace(times=tf, Q=Q, solver_meta=meta)


def mean_curvature_target(spec) -> float:
    """``(1/2) int H dsigma`` for smooth-boundary specs (disk, interval)."""
    if isinstance(spec, Interval):
        return 0.0
    if isinstance(spec, Disk) and spec.dim == 2:
        # H = 1/R on a circle of length 2 pi R
        return 0.5 * (1.0 / spec.radius) * 2 * math.pi * spec.radius
    raise UnsupportedShape(f"second-order coefficient needs a smooth boundary; {type(spec).__name__} is not supported")


@dataclass
class SecondOrderResult:
    c2: float
    target: float
    defect: float
    relative: bool
    fit: AsymptoticFit


def second_order_check(trace, spec, fine=None, order=2.0, eps=None, window=None) -> SecondOrderResult:
    """Compare the fitted ``c2`` with ``(1/2) int H dsigma``.

    With ``fine`` (a trace at half the spacing), ``Q`` is first extrapolated
    in ``h``.  The defect is relative, except for a zero target where it is
    absolute.
    """
    target = mean_curvature_target(spec)
    src = richardson_in_h(trace, fine, order) if fine is not None else trace
    fit = fit_expansion(src, "sqrt_plus_linear", eps=eps, window=window)
    if target == 0:
        return SecondOrderResult(fit.c2, target, abs(fit.c2), False, fit)
    return SecondOrderResult(fit.c2, target, abs(fit.c2 - target) / abs(target), True, fit)


# ----------------------------------------------------------------------------- continuum oracles


def interval_heat_content(t, length=1.0, terms=4000):
    """Fourier series ``sum_{k odd} 8 L/(k pi)^2 exp(-(k pi/L)^2 t)`` for the interval ``(0, L)``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    k = np.arange(1, 2 * terms, 2, dtype=float)
    lam = (k * np.pi / length) ** 2
    return np.sum(8 * length / (k * np.pi) ** 2 * np.exp(-np.outer(t, lam)), axis=1)


def disk_heat_content(t, radius=1.0, terms=30000):
    """Bessel series ``sum_k 4 pi R^2 / j_k^2 exp(-j_k^2 t / R^2)`` for the disk."""
    from scipy.special import jn_zeros

    t = np.atleast_1d(np.asarray(t, dtype=float))
    j = jn_zeros(0, terms)
    out = np.empty(len(t))
    for i, ti in enumerate(t):
        out[i] = np.sum(4 * np.pi * radius**2 / j**2 * np.exp(-(j**2) * ti / radius**2))
    return out
