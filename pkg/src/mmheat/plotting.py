"""Figures for heat content traces, written as self-contained SVG (or any matplotlib format)."""

from __future__ import annotations

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# glyphs as paths: the SVG carries no font references
plt.rcParams["svg.fonttype"] = "path"
plt.rcParams["svg.hashsalt"] = "mmheat"


def deficit_plot(times, Q, measure, fit=None, path="plot.svg", title=None):
    """``(m - Q) / sqrt(t)`` against ``sqrt(t)``, with the fitted line ``c1 - c2 sqrt(t)`` if given.

    ``fit`` is anything with ``c0``, ``c1`` and ``c2`` attributes (``c2`` may
    be ``None``).  Returns ``path``.
    """
    t = np.asarray(times, dtype=float)
    s = np.sqrt(t)
    y = (measure - np.asarray(Q, dtype=float)) / s
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    ax.plot(s, y, "o", ms=3.5, label="trace")
    if fit is not None:
        grid = np.linspace(s.min(), s.max(), 200)
        c2 = fit.c2 or 0.0
        # m - Q = (m - c0) + c1 sqrt t - c2 t
        line = (measure - fit.c0) / grid + fit.c1 - c2 * grid
        ax.plot(grid, line, "-", lw=1.2, label=f"fit: c1={fit.c1:.5g}, c2={c2:.4g}")
        lo, hi = getattr(fit, "window", (None, None))
        if lo is not None:
            ax.axvspan(np.sqrt(lo), np.sqrt(hi), color="0.9", zorder=0, label="fit window")
    ax.set_xlabel(r"$\sqrt{t}$")
    ax.set_ylabel(r"$(m(\Omega) - Q(t)) / \sqrt{t}$")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None} if str(path).endswith(".svg") else None)
    plt.close(fig)
    return path


def profile_plot(radii, perimeter, exact=None, path="profile.svg"):
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    ax.plot(radii, perimeter, "o-", ms=3, label="band differencing")
    if exact is not None:
        ax.plot(radii, exact, "--", label="exact")
    ax.set_xlabel("r")
    ax.set_ylabel(r"Per$(\{\delta > r\})$")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None} if str(path).endswith(".svg") else None)
    plt.close(fig)
    return path
