"""Command line entry point: ``mmheat <subcommand> ...``.

Exit status is 0 on success, 2 on a precondition or invariant failure (any
:class:`~mmheat.errors.MMHeatError`, or a usage error) and 1 on anything else.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, MigcViolated, MMHeatError

log = logging.getLogger("mmheat")


def thread_cap():
    """Worker/BLAS thread cap from ``MMHEAT_THREADS`` (default 1)."""
    raw = os.environ.get("MMHEAT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"MMHEAT_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise ConfigError("MMHEAT_THREADS must be at least 1")
    return n


def fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path, header, rows):
    """Fixed header, 17 significant digits, ``\\n`` line ends."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigError(f"{path} has no data rows")
    return rows


def _meta_path(path):
    return Path(str(path) + ".json")


def write_meta(path, meta):
    clean = {k: v for k, v in meta.items() if isinstance(v, (int, float, str, bool, type(None)))}
    with open(_meta_path(path), "w") as fh:
        json.dump(clean, fh, indent=1, sort_keys=True)


def read_meta(path):
    p = _meta_path(path)
    return json.loads(p.read_text()) if p.exists() else {}


# ----------------------------------------------------------------------------- pipeline steps


def heat_trace(cfg):
    from .heatflow import dirichlet_heat_solve
    from .mmspace import continuum_measure, discretize

    grid = discretize(cfg.spec, cfg.h)
    trace = dirichlet_heat_solve(grid, cfg.sample_times(), tol=cfg.tolerance,
                                 steps_per_octave=cfg.steps_per_octave)
    trace.solver_meta["continuum_measure"] = continuum_measure(cfg.spec)
    trace.solver_meta["label"] = cfg.spec.label
    if cfg.eps is not None:
        trace.solver_meta["eps"] = cfg.eps
    # sparse LU and CG are run with a fixed ordering on one thread, so repeated runs agree bit for bit
    trace.solver_meta["byte_exact"] = True
    return trace


def write_trace(path, trace):
    rows = zip(trace.times, trace.Q, trace.steps, trace.residual)
    write_csv(path, ["t", "Q", "steps", "residual"], rows)
    write_meta(path, trace.solver_meta)


def read_trace(path):
    from .asympt import Trace

    rows = read_csv(path)
    try:
        t = np.array([float(r["t"]) for r in rows])
        Q = np.array([float(r["Q"]) for r in rows])
    except KeyError as exc:
        raise ConfigError(f"{path}: missing column {exc}") from exc
    return Trace(t, Q, read_meta(path))


def profile_rows(cfg, field=None):
    from .coarea import perimeter_profile, volume_profile
    from .distfield import signed_distance_field
    from .mmspace import discretize

    if field is None:
        field = signed_distance_field(discretize(cfg.spec, cfg.h))
    dmax = float(field.inside_values().max())
    r_hi = cfg.eps if cfg.eps is not None else 0.5 * dmax
    r_hi = min(r_hi, 0.9 * dmax)
    n = max(3, min(cfg.n_radii, int(r_hi / (2 * cfg.h)) + 1))
    radii = np.linspace(0.0, r_hi, n)
    prof = perimeter_profile(volume_profile(field, radii, mode="smeared"), cfg.h)
    return [(r, v, p, prof.source) for r, v, p in zip(prof.radii, prof.volume, prof.perimeter)]


def fit_trace(trace, model="sqrt_plus_linear", eps=None, h=None, pin_c0=False):
    from .asympt import fit_expansion

    meta = trace.solver_meta or {}
    eps = meta.get("eps") if eps is None else eps
    h = meta.get("h") if h is None else h
    pin = meta.get("continuum_measure") if pin_c0 else None
    if pin_c0 and pin is None:
        raise ConfigError("pinning c0 needs the continuum measure in the trace metadata")
    return fit_expansion(trace, model, eps=eps, h=h, pin_c0=pin)


def write_fit(path, fit):
    c2 = fit.c2 if fit.c2 is not None else math.nan
    write_csv(path, ["c0", "c1", "c2", "perimeter_est", "residual_rms", "exponent"],
              [(fit.c0, fit.c1, c2, fit.perimeter_est, fit.residual_rms, fit.exponent_estimate)])
    write_meta(path, {"t_lo": fit.window[0], "t_hi": fit.window[1], "model": fit.model,
                      "n_samples": fit.n_samples, "pinned": fit.pinned})


def read_fit(path):
    from .asympt import AsymptoticFit

    row = read_csv(path)[0]
    meta = read_meta(path)
    c2 = float(row["c2"])
    return AsymptoticFit(c0=float(row["c0"]), c1=float(row["c1"]), c2=None if math.isnan(c2) else c2,
                         window=(meta.get("t_lo"), meta.get("t_hi")), residual_rms=float(row["residual_rms"]),
                         exponent_estimate=float(row["exponent"]), model=meta.get("model", "sqrt_plus_linear"))


def check_eps(cfg):
    """Refuse ray-dependent analysis when ``eps`` fails the measured interior geodesic condition."""
    if cfg.eps is None or cfg.spec.dim == 1:
        return None
    from .rays import migc_check

    cls = migc_check(cfg.spec, cfg.eps)
    if not cls.migc:
        raise MigcViolated(f"eps={cfg.eps:g} fails the measured interior geodesic condition on "
                           f"{cfg.spec.label}: short rays carry q-measure {cls.short_ray_measure:.3g}")
    return cls


def run_pipeline(cfg, out=None):
    """discretize, distance, heat solve, profile, fit and plot; returns the written paths."""
    out = out or sys.stdout
    from .distfield import signed_distance_field
    from .mmspace import discretize
    from .plotting import deficit_plot

    check_eps(cfg)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    if cfg.spec.dim == 2:
        field = signed_distance_field(discretize(cfg.spec, cfg.h))
        paths["profile"] = write_csv(cfg.output("profile"), ["r", "volume", "perimeter", "source"],
                                     profile_rows(cfg, field))
    trace = heat_trace(cfg)
    paths["trace"] = cfg.output("trace")
    write_trace(paths["trace"], trace)
    fit = fit_trace(trace, cfg.model, pin_c0=cfg.pin_c0)
    paths["fit"] = cfg.output("fit")
    write_fit(paths["fit"], fit)
    paths["plot"] = deficit_plot(trace.times, trace.Q, trace.solver_meta["continuum_measure"], fit,
                                 cfg.output("plot"), title=cfg.spec.label)
    print(f"perimeter_est={fit.perimeter_est:.10g} c1={fit.c1:.10g} window=[{fit.window[0]:.4g}, "
          f"{fit.window[1]:.4g}] samples={fit.n_samples}", file=out)
    for k, p in paths.items():
        print(f"{k}: {p}", file=out)
    return paths


# ----------------------------------------------------------------------------- subcommands


def _cmd_heat_content(a):
    from .config import load_config

    cfg = load_config(a.config)
    trace = heat_trace(cfg)
    write_trace(a.out, trace)


def _cmd_dist(a):
    from .config import load_config
    from .distfield import exact_field, signed_distance_field
    from .mmspace import discretize

    cfg = load_config(a.config)
    grid = discretize(cfg.spec, cfg.h)
    field = exact_field(grid) if a.exact else signed_distance_field(grid)
    c = grid.centers
    y = c[:, 1] if grid.dim == 2 else np.zeros(len(c))
    write_csv(a.out, ["cell_id", "x", "y", "delta"], zip(range(grid.n_cells), c[:, 0], y, field.delta))


def _cmd_profile(a):
    from .config import load_config

    cfg = load_config(a.config)
    if cfg.spec.dim != 2:
        raise ConfigError("profiles need a 2D [domain]")
    write_csv(a.out, ["r", "volume", "perimeter", "source"], profile_rows(cfg))


def _cmd_rays(a):
    from .rays import decompose, stock_domain

    spec = stock_domain(a.domain, a.eps)
    dec = decompose(spec, a.n_rays)
    if a.eps is not None and dec.short_measure(a.eps) > 0:
        log.warning("rays shorter than eps=%g carry q-measure %.3g", a.eps, dec.short_measure(a.eps))
    header = ["foot_x", "foot_y", "dir_x", "dir_y", "inner_length", "weight"]
    feet, dirs = dec.feet, dec.dirs
    if dec.dim == 1:
        feet = np.column_stack([feet, np.zeros(len(feet))])
        dirs = np.column_stack([dirs, np.zeros(len(dirs))])
    cols = [feet[:, 0], feet[:, 1], dirs[:, 0], dirs[:, 1], dec.inner, dec.q]
    if dec.dim == 3:
        header += ["foot_z", "dir_z"]
        cols += [feet[:, 2], dirs[:, 2]]
    write_csv(a.out, header, zip(*cols))


def _cmd_check_igc(a):
    from .rays import migc_check, stock_domain

    spec = stock_domain(a.domain, a.eps)
    cls = migc_check(spec, a.eps, n_samples=a.samples)
    for line in cls.lines(a.eps):
        print(line)
    if not cls.migc:
        raise MigcViolated(f"{a.domain}: mIGC fails at eps={a.eps:g}")


def _cmd_duhamel(a):
    from .halfline import default_profile, local_slopes, log_log_slope, remainder_series

    if not 0 < a.tmin < a.tmax:
        raise ConfigError("need 0 < tmin < tmax")
    k = np.arange(math.floor(math.log2(a.tmin)), math.ceil(math.log2(a.tmax)) + 1)
    t = np.clip(2.0 ** k.astype(float), a.tmin, a.tmax)
    t = np.unique(t)
    R2 = remainder_series(default_profile(a.rho), t)
    write_csv(a.out, ["t", "R2", "local_slope"], zip(t, R2, local_slopes(t, R2)))
    print(f"slope={log_log_slope(t, R2):.6f}")


def _cmd_fit(a):
    trace = read_trace(a.input)
    fit = fit_trace(trace, a.model, eps=a.eps, h=a.h, pin_c0=a.pin_c0)
    write_fit(a.out, fit)
    print(f"c0={fit.c0:.10g} c1={fit.c1:.10g} perimeter_est={fit.perimeter_est:.10g}")


def _cmd_plot(a):
    from .plotting import deficit_plot

    trace = read_trace(a.input)
    fit = read_fit(a.fit) if a.fit else None
    m = a.measure
    if m is None:
        m = trace.solver_meta.get("continuum_measure")
    if m is None:
        if fit is None:
            raise ConfigError("plot needs --measure, a trace with metadata, or --fit")
        m = fit.c0
    deficit_plot(trace.times, trace.Q, m, fit, a.out)


def _cmd_accept(a):
    from .acceptance import run_suite

    results = run_suite(a.suite, out=a.out, workers=thread_cap())
    failed = [r for r in results if not r["passed"]]
    return 2 if failed else 0


def _cmd_run(a):
    from .config import load_config

    run_pipeline(load_config(a.config))


def build_parser():
    from .rays import stock_names

    p = argparse.ArgumentParser(prog="mmheat", description="Heat content experiments on discretized domains.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("heat-content", help="Dirichlet heat content trace")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_heat_content)

    s = sub.add_parser("dist", help="signed distance per cell")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--exact", action="store_true", help="sample the exact distance instead of fast marching")
    s.set_defaults(func=_cmd_dist)

    s = sub.add_parser("profile", help="volume and perimeter of level sets")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_profile)

    s = sub.add_parser("rays", help="transport rays of a stock domain")
    s.add_argument("--domain", required=True, choices=stock_names())
    s.add_argument("--eps", type=float, default=0.05)
    s.add_argument("--n-rays", type=int, default=256)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_rays)

    s = sub.add_parser("check-igc", help="mIGC and ball-condition classification")
    s.add_argument("--domain", required=True, choices=stock_names())
    s.add_argument("--eps", type=float, required=True)
    s.add_argument("--samples", type=int, default=64)
    s.set_defaults(func=_cmd_check_igc)

    s = sub.add_parser("duhamel", help="half-line source remainder on a dyadic time grid")
    s.add_argument("--rho", type=float, required=True)
    s.add_argument("--tmin", type=float, default=2.0**-24)
    s.add_argument("--tmax", type=float, default=2.0**-10)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_duhamel)

    s = sub.add_parser("fit", help="fit c0 - c1 sqrt(t) + c2 t to a trace")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--model", default="sqrt_plus_linear", choices=("sqrt_only", "sqrt_plus_linear"))
    s.add_argument("--eps", type=float, default=None)
    s.add_argument("--h", type=float, default=None)
    s.add_argument("--pin-c0", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_fit)

    s = sub.add_parser("plot", help="SVG of (m - Q)/sqrt(t) against sqrt(t)")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--fit", default=None)
    s.add_argument("--measure", type=float, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_plot)

    s = sub.add_parser("accept", help="run the acceptance suite")
    s.add_argument("--suite", default="fast", choices=("fast", "full"))
    s.add_argument("--out", default=None, help="JSON-lines report (default: stdout)")
    s.set_defaults(func=_cmd_accept)

    s = sub.add_parser("run", help="full pipeline from a config file")
    s.add_argument("--config", required=True)
    s.set_defaults(func=_cmd_run)
    return p


def main(argv=None):
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        n = thread_cap()
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=n):
            status = a.func(a)
    except MMHeatError as exc:
        print(f"mmheat: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"mmheat: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return status or 0


if __name__ == "__main__":
    sys.exit(main())
