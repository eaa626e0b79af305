"""Experiment configuration: TOML tables ``[domain]``, ``[solve]``, ``[analysis]``, ``[output]``."""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .mmspace import Difference, Disk, Interval, Polygon, Rect, Slit

TABLES = ("domain", "solve", "analysis", "output")
_SHAPES = ("interval", "disk", "rect", "polygon", "slit", "stock")


def _num(tab, key, where, default=None, positive=False):
    if key not in tab:
        if default is None:
            raise ConfigError(f"[{where}] is missing required key '{key}'")
        return default
    v = tab[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"[{where}] key '{key}' must be a number, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(f"[{where}] key '{key}' must be positive, got {v!r}")
    return float(v)


def _point(tab, key, where, default=None, dim=None):
    if key not in tab:
        if default is None:
            raise ConfigError(f"[{where}] is missing required key '{key}'")
        return tuple(default)
    v = tab[key]
    if not isinstance(v, list) or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in v):
        raise ConfigError(f"[{where}] key '{key}' must be a list of numbers, got {v!r}")
    if dim is not None and len(v) != dim:
        raise ConfigError(f"[{where}] key '{key}' must have {dim} coordinates")
    return tuple(float(c) for c in v)


def parse_shape(tab: dict, where: str = "domain"):
    """Build a domain spec from one config table (recursing into ``removed``)."""
    if not isinstance(tab, dict):
        raise ConfigError(f"[{where}] must be a table")
    shape = tab.get("shape")
    if shape not in _SHAPES:
        raise ConfigError(f"[{where}] key 'shape' must be one of {', '.join(_SHAPES)}; got {shape!r}")
    label = str(tab.get("label", shape))
    try:
        if shape == "stock":
            from .rays import stock_domain

            name = tab.get("name")
            if not isinstance(name, str):
                raise ConfigError(f"[{where}] shape 'stock' needs a string key 'name'")
            base = stock_domain(name, float(tab.get("eps", 0.05)))
        elif shape == "interval":
            base = Interval(_num(tab, "a", where, 0.0), _num(tab, "b", where, 1.0), label=label)
        elif shape == "disk":
            base = Disk(_point(tab, "center", where, (0.0, 0.0)), _num(tab, "radius", where, positive=True),
                        label=label)
        elif shape == "rect":
            base = Rect(_point(tab, "origin", where, (0.0, 0.0), dim=2), _num(tab, "width", where, positive=True),
                        _num(tab, "height", where, positive=True), label=label)
        elif shape == "polygon":
            verts = tab.get("vertices")
            if not isinstance(verts, list) or len(verts) < 3:
                raise ConfigError(f"[{where}] key 'vertices' must list at least three points")
            base = Polygon(tuple(_point({"v": p}, "v", f"{where}.vertices", dim=2) for p in verts), label=label)
        else:
            base = Slit(_point(tab, "p", where), _point(tab, "q", where))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}] invalid {shape}: {exc}") from exc
    removed = tab.get("removed", [])
    if removed:
        if not isinstance(removed, list):
            raise ConfigError(f"[{where}] key 'removed' must be an array of tables")
        parts = tuple(parse_shape(r, f"{where}.removed[{i}]") for i, r in enumerate(removed))
        try:
            base = Difference(base, parts, label=label)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{where}] invalid removal: {exc}") from exc
    return base


@dataclass
class ExperimentConfig:
    spec: object
    h: float
    t_min: float = 1e-5
    t_max: float = 1.5625e-2
    samples: int = 33
    tolerance: float = 1e-12
    steps_per_octave: int = 16
    model: str = "sqrt_plus_linear"
    eps: float | None = None
    rho: float | None = None
    n_radii: int = 16
    pin_c0: bool = False
    output_dir: Path = Path("mmheat-out")
    files: dict = field(default_factory=dict)
    source: str = ""

    def output(self, key):
        return self.output_dir / self.files[key]

    def sample_times(self):
        """Sample times on the solver's step schedule, close to ``samples`` points in ``[t_min, t_max]``."""
        from .heatflow import schedule_samples

        octaves = max(1, int(math.ceil(math.log2(self.t_max / self.t_min) - 1e-9)))
        per = max(1, (self.samples - 1) / octaves)
        choices = [d for d in (1, 2, 4, 8, 16, 32) if self.steps_per_octave % d == 0]
        per_octave = min(choices, key=lambda d: (abs(d - per), d))
        return schedule_samples(self.t_max, per_octave, octaves, self.steps_per_octave)


_FILES = {"trace": "trace.csv", "profile": "profile.csv", "fit": "fit.csv", "plot": "plot.svg",
          "delta": "delta.csv"}


def config_from_dict(data: dict, source: str = "<dict>", base_dir: Path | None = None) -> ExperimentConfig:
    unknown = set(data) - set(TABLES)
    if unknown:
        raise ConfigError(f"{source}: unknown table(s) {', '.join(sorted(unknown))}")
    if "domain" not in data:
        raise ConfigError(f"{source}: missing [domain] table")
    dom = data["domain"]
    spec = parse_shape(dom, "domain")
    h = _num(dom, "h", "domain", positive=True)
    solve = data.get("solve", {})
    ana = data.get("analysis", {})
    out = data.get("output", {})
    cfg = ExperimentConfig(spec=spec, h=h, source=source)
    cfg.t_min = _num(solve, "t_min", "solve", cfg.t_min, positive=True)
    cfg.t_max = _num(solve, "t_max", "solve", cfg.t_max, positive=True)
    if cfg.t_min >= cfg.t_max:
        raise ConfigError("[solve] needs t_min < t_max")
    cfg.samples = int(_num(solve, "samples", "solve", cfg.samples, positive=True))
    cfg.tolerance = _num(solve, "tolerance", "solve", cfg.tolerance, positive=True)
    cfg.steps_per_octave = int(_num(solve, "steps_per_octave", "solve", cfg.steps_per_octave, positive=True))
    cfg.model = ana.get("model", cfg.model)
    if cfg.model not in ("sqrt_only", "sqrt_plus_linear"):
        raise ConfigError(f"[analysis] key 'model' must be sqrt_only or sqrt_plus_linear, got {cfg.model!r}")
    if "eps" in ana:
        cfg.eps = _num(ana, "eps", "analysis", positive=True)
    if "rho" in ana:
        cfg.rho = _num(ana, "rho", "analysis", positive=True)
    cfg.n_radii = int(_num(ana, "n_radii", "analysis", cfg.n_radii, positive=True))
    cfg.pin_c0 = bool(ana.get("pin_c0", False))
    d = Path(out.get("dir", "mmheat-out"))
    if base_dir is not None and not d.is_absolute():
        d = base_dir / d
    cfg.output_dir = d
    cfg.files = {k: str(out.get(k, v)) for k, v in _FILES.items()}
    return cfg


def load_config(path) -> ExperimentConfig:
    """Read and validate a TOML experiment file.

    Relative output directories are taken relative to the working directory.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data, str(path))
