import csv
import json
import subprocess
import sys

import pytest

from erds.cli import build_parser, run_command, sweep_points
from erds.config import parse_config

SHORT = """
[scenario]
kind = "torus"
[grid]
n = 64
[run]
t_end = 0.5
cadence = 0.05
[diagnostics]
trials = 2
"""


@pytest.fixture
def short_cfg(tmp_path):
    path = tmp_path / "short.toml"
    path.write_text(SHORT)
    return path


def test_equilibrium_command(capsys):
    assert run_command(["equilibrium", "--C0", "1.5", "--E0", "1", "--c", "1"]) == 0
    out = capsys.readouterr().out
    assert "C_n=2\n" in out and "C_p=0.5\n" in out and "Sigma_e=1.75\n" in out


def test_equilibrium_needs_input(capsys):
    assert run_command(["equilibrium"]) == 1
    assert "error:" in capsys.readouterr().err


def test_run_writes_outputs(short_cfg, tmp_path, capsys):
    out = tmp_path / "out"
    assert run_command(["run", str(short_cfg), "--output", str(out)]) == 0
    (run_dir,) = list(out.iterdir())
    assert run_dir.name == parse_config(SHORT).hash()
    rows = list(csv.DictReader(open(run_dir / "series.csv")))
    assert len(rows) == 11 and float(rows[-1]["t"]) == pytest.approx(0.5)
    H = [float(r["H"]) for r in rows]
    assert all(b <= a for a, b in zip(H, H[1:]))
    summary = json.loads((run_dir / "summary.json").read_text())
    for key in ("K_hat", "k_fit", "r_squared", "eep_worst_ratio", "max_dissipation_residual", "flags"):
        assert key in summary
    assert parse_config((run_dir / "config.toml").read_text()) == parse_config(SHORT)
    assert "K_hat" in capsys.readouterr().out


def test_run_is_deterministic(short_cfg, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_command(["run", str(short_cfg), "--output", str(a)]) == 0
    assert run_command(["run", str(short_cfg), "--output", str(b)]) == 0
    (da,), (db,) = list(a.iterdir()), list(b.iterdir())
    for name in ("series.csv", "summary.json", "config.toml"):
        assert (da / name).read_bytes() == (db / name).read_bytes()


def test_invalid_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[entropy]\nc = 0.0\n[run]\ndt = -1.0\n")
    assert run_command(["run", str(bad)]) == 1
    err = capsys.readouterr().err
    assert err.count("error:") >= 2
    assert run_command(["run", str(tmp_path / "missing.toml")]) == 1


def test_numerical_failure_exit_code(short_cfg, tmp_path, monkeypatch, capsys):
    from erds import runner
    from erds.errors import NumericalError

    def boom(cfg):
        raise NumericalError("negative density", time=0.25, extrema={"n_min": -1e-3})

    monkeypatch.setattr(runner, "execute", boom)
    assert run_command(["run", str(short_cfg), "--output", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "t = 0.25" in err and "n_min" in err


def test_check_inequalities(capsys):
    assert run_command(["check-inequalities", "--samples", "2000", "--seed", "3"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 6 and all(l.startswith("PASS") and "worst_ratio=" in l for l in lines)


def test_constants_command(capsys):
    assert run_command(["constants", "--n", "64", "--trials", "1"]) == 0
    out = capsys.readouterr().out
    cp = float(out.split("C_P=")[1].split()[0])
    assert cp == pytest.approx(1 / (4 * 3.141592653589793**2), rel=1e-3)


def test_sweep(tmp_path, monkeypatch, capsys):
    cfg = tmp_path / "sweep.toml"
    cfg.write_text(SHORT.replace("t_end = 0.5", "t_end = 0.2") + '[sweep]\n"run.kappa" = [0.1, 0.2]\n')
    monkeypatch.setenv("ERDS_WORKERS", "2")
    out = tmp_path / "sw"
    assert run_command(["sweep", str(cfg), "--output", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "sweep_index.csv")))
    assert [r["run.kappa"] for r in rows] == ["0.1", "0.2"]
    assert all(r["status"] == "ok" for r in rows)
    assert len({r["hash"] for r in rows}) == 2


def test_sweep_points_product():
    cfg = parse_config(SHORT + '[sweep]\n"run.kappa" = [0.1, 0.2, 0.3]\n"grid.n" = [16, 32]\n')
    pts = sweep_points(cfg)
    assert len(pts) == 6
    assert {(c.run.kappa, c.grid.n) for c, _ in pts} == {(k, n) for k in (0.1, 0.2, 0.3) for n in (16, 32)}


def test_parser_rejects_unknown_subcommand():
    assert run_command(["frobnicate"]) == 1
    assert set(build_parser()._subparsers._group_actions[0].choices) == {
        "run", "equilibrium", "check-inequalities", "sweep", "constants"}


def test_console_script_module():
    res = subprocess.run([sys.executable, "-m", "erds.cli", "equilibrium", "--C0", "0"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "C_n=1" in res.stdout
