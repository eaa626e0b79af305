import csv
import json
import math
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from mmheat.cli import main
from mmheat.config import load_config

ROOT = Path(__file__).resolve().parents[1]

DISK_128 = """
[domain]
shape = "disk"
radius = 1.0
h = 0.0078125

[solve]
t_min = 6.103515625e-05
t_max = 0.015625
samples = 65

[analysis]
eps = 0.5
n_radii = 8

[output]
dir = "{out}"
"""


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def write_cfg(tmp_path, text, name="cfg.toml", out="out"):
    p = tmp_path / name
    p.write_text(text.format(out=(tmp_path / out).as_posix()))
    return p


def test_run_disk_config(tmp_path, monkeypatch, capsys):
    # the shipped config, with output redirected
    monkeypatch.chdir(tmp_path)
    shutil.copy(ROOT / "configs" / "disk.toml", tmp_path / "disk.toml")
    assert main(["run", "--config", "disk.toml"]) == 0
    out = tmp_path / "out" / "disk"
    fit = rows(out / "fit.csv")
    assert fit[0] == ["c0", "c1", "c2", "perimeter_est", "residual_rms", "exponent"]
    per = float(fit[1][3])
    assert abs(per - 2 * math.pi) / (2 * math.pi) <= 0.02
    assert rows(out / "trace.csv")[0] == ["t", "Q", "steps", "residual"]
    assert rows(out / "profile.csv")[0] == ["r", "volume", "perimeter", "source"]
    assert (out / "plot.svg").stat().st_size > 0
    assert "perimeter_est=" in capsys.readouterr().out


def test_run_is_deterministic(tmp_path):
    a = write_cfg(tmp_path, DISK_128, "a.toml", "a")
    b = write_cfg(tmp_path, DISK_128, "b.toml", "b")
    assert main(["run", "--config", str(a)]) == 0
    assert main(["run", "--config", str(b)]) == 0
    for name in ("trace.csv", "fit.csv", "profile.csv", "plot.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    meta = json.loads((tmp_path / "a" / "trace.csv.json").read_text())
    assert meta["byte_exact"] is True and meta["h"] == 0.0078125


def test_svg_is_self_contained(tmp_path):
    cfg = write_cfg(tmp_path, DISK_128)
    assert main(["run", "--config", str(cfg)]) == 0
    svg = (tmp_path / "out" / "plot.svg").read_text()
    assert "<svg" in svg
    assert "font-family" not in svg and "@font-face" not in svg
    assert "xlink:href=\"http" not in svg and "href=\"file" not in svg


def test_eps_beyond_inradius_rejected(tmp_path, capsys):
    cfg = write_cfg(tmp_path, DISK_128.replace("eps = 0.5", "eps = 1.5"))
    assert main(["run", "--config", str(cfg)]) == 2
    assert "MigcViolated" in capsys.readouterr().err
    assert not (tmp_path / "out" / "trace.csv").exists()


def test_missing_domain_table(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text("[solve]\nt_max = 0.01\n")
    assert main(["heat-content", "--config", str(p), "--out", str(tmp_path / "t.csv")]) == 2
    err = capsys.readouterr().err
    assert "ConfigError" in err and "[domain]" in err


def test_config_errors_name_the_key(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text('[domain]\nshape = "disk"\nradius = -1.0\nh = 0.01\n')
    assert main(["dist", "--config", str(p), "--out", str(tmp_path / "d.csv")]) == 2
    assert "radius" in capsys.readouterr().err
    p.write_text('[domain]\nshape = "disk"\nradius = 1.0\nh = 0.01\n[extra]\n')
    assert main(["dist", "--config", str(p), "--out", str(tmp_path / "d.csv")]) == 2
    assert "extra" in capsys.readouterr().err
    p.write_text('[domain\nshape = "disk"\n')
    assert main(["dist", "--config", str(p), "--out", str(tmp_path / "d.csv")]) == 2
    assert "line" in capsys.readouterr().err


def test_dist_and_profile_outputs(tmp_path):
    cfg = write_cfg(tmp_path, DISK_128.replace("0.0078125", "0.03125"))
    d = tmp_path / "d.csv"
    assert main(["dist", "--config", str(cfg), "--out", str(d)]) == 0
    r = rows(d)
    assert r[0] == ["cell_id", "x", "y", "delta"]
    assert len(r) > 100
    e = tmp_path / "e.csv"
    assert main(["dist", "--config", str(cfg), "--out", str(e), "--exact"]) == 0
    # fast marching is first-order accurate: within a couple of cells of the exact distance
    diff = max(abs(float(a[3]) - float(b[3])) for a, b in zip(r[1:], rows(e)[1:]))
    assert diff <= 2 * 0.03125
    p = tmp_path / "p.csv"
    assert main(["profile", "--config", str(cfg), "--out", str(p)]) == 0
    assert rows(p)[0] == ["r", "volume", "perimeter", "source"]


def test_rays_output(tmp_path):
    out = tmp_path / "rays.csv"
    assert main(["rays", "--domain", "disk", "--out", str(out), "--eps", "0.5"]) == 0
    r = rows(out)
    assert r[0] == ["foot_x", "foot_y", "dir_x", "dir_y", "inner_length", "weight"]
    assert sum(float(x[5]) for x in r[1:]) == pytest.approx(1.0)
    out3 = tmp_path / "rays3.csv"
    assert main(["rays", "--domain", "figB", "--out", str(out3)]) == 0
    assert rows(out3)[0][-2:] == ["foot_z", "dir_z"]


def test_check_igc_exit_codes(capsys):
    assert main(["check-igc", "--domain", "disk", "--eps", "0.5"]) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 3
    assert main(["check-igc", "--domain", "figB", "--eps", "0.05"]) == 2
    captured = capsys.readouterr()
    assert len(captured.out.strip().splitlines()) == 3
    assert "MigcViolated" in captured.err


def test_duhamel_output(tmp_path, capsys):
    out = tmp_path / "r2.csv"
    assert main(["duhamel", "--rho", "1.0", "--tmin", "1e-6", "--tmax", "1e-3", "--out", str(out)]) == 0
    r = rows(out)
    assert r[0] == ["t", "R2", "local_slope"]
    slope = float(capsys.readouterr().out.strip().split("=")[1])
    assert slope >= 0.70
    assert main(["duhamel", "--rho", "1.0", "--tmin", "1e-3", "--tmax", "1e-6", "--out", str(out)]) == 2


def test_fit_and_plot_roundtrip(tmp_path, capsys):
    cfg = write_cfg(tmp_path, DISK_128)
    trace = tmp_path / "trace.csv"
    assert main(["heat-content", "--config", str(cfg), "--out", str(trace)]) == 0
    fit = tmp_path / "fit.csv"
    assert main(["fit", "--in", str(trace), "--out", str(fit)]) == 0
    assert rows(fit)[0] == ["c0", "c1", "c2", "perimeter_est", "residual_rms", "exponent"]
    assert main(["fit", "--in", str(trace), "--out", str(fit), "--pin-c0"]) == 0
    assert float(rows(fit)[1][0]) == pytest.approx(math.pi, rel=1e-15)
    svg = tmp_path / "p.svg"
    assert main(["plot", "--in", str(trace), "--fit", str(fit), "--out", str(svg)]) == 0
    assert svg.read_text().lstrip().startswith("<?xml")
    assert main(["fit", "--in", str(trace), "--out", str(fit), "--eps", "0.01"]) == 2
    assert "WindowTooNarrow" in capsys.readouterr().err


def test_unknown_suite_rejected():
    with pytest.raises(SystemExit) as info:
        main(["accept", "--suite", "bogus"])
    assert info.value.code == 2


def test_bad_thread_cap(monkeypatch, tmp_path, capsys):
    monkeypatch.setenv("MMHEAT_THREADS", "zero")
    assert main(["rays", "--domain", "disk", "--out", str(tmp_path / "r.csv")]) == 2
    assert "MMHEAT_THREADS" in capsys.readouterr().err


def test_shipped_configs_parse():
    for p in sorted((ROOT / "configs").glob("*.toml")):
        cfg = load_config(p)
        assert cfg.h > 0
        assert len(cfg.sample_times()) >= 8


def test_console_script(tmp_path):
    exe = shutil.which("mmheat")
    cmd = [exe] if exe else [sys.executable, "-m", "mmheat.cli"]
    res = subprocess.run(cmd + ["check-igc", "--domain", "figA", "--eps", "0.1"], capture_output=True, text=True,
                         timeout=300)
    assert res.returncode == 0, res.stderr
    assert "mIGC" in res.stdout


def test_slit_disk_config(tmp_path, monkeypatch):
    # cut edges make the slit a wall for heat, while the distance still sees it
    monkeypatch.chdir(tmp_path)
    assert main(["run", "--config", str(ROOT / "configs" / "slit_disk.toml")]) == 0
    out = tmp_path / "out" / "slit_disk"
    per = float(rows(out / "fit.csv")[1][3])
    assert abs(per - 2 * math.pi) / (2 * math.pi) <= 0.02
    prof = rows(out / "profile.csv")[1:]
    assert abs(float(prof[2][2]) - (2 * math.pi + 2)) <= 0.1


def test_square_config(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["run", "--config", str(ROOT / "configs" / "square.toml")]) == 0
    per = float(rows(tmp_path / "out" / "square" / "fit.csv")[1][3])
    assert abs(per - 4.0) / 4.0 <= 0.02
