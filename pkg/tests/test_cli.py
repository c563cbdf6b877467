import json
import subprocess
import sys

import numpy as np
import pytest

from stochdc import engine
from stochdc.cli import main
from stochdc.io import read_table


def run(*argv):
    return main(list(argv))


def test_check_default_passes(capsys):
    assert run("check") == 0
    out = capsys.readouterr().out
    assert out.count("PASS assumption") == 3 and "FAIL" not in out


def test_check_fails_on_violated_assumption(tmp_path, base, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text(base.with_document(stochastic={"mu_P": 0.25, "sigma_P": 0.5}).dump())
    assert run("check", "-s", str(path)) == 1
    assert "FAIL assumption power" in capsys.readouterr().out


def test_simulate_byte_identical(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        assert run("simulate", "--seed", "7", "--t-end", "0.05", "-o", str(path)) == 0
    assert a.read_bytes() == b.read_bytes()
    header, rows = read_table(a)
    assert header[0] == "time" and header[1:] == engine.state_columns(4, 4)
    assert rows.shape == (51, 1 + 36)


def test_simulate_csv_precision(tmp_path):
    path = tmp_path / "t.csv"
    run("simulate", "--t-end", "0.001", "-o", str(path))
    line = path.read_text().splitlines()[1]
    values = line.split(",")
    assert values[0] == "0"
    assert all(float(format(float(v), ".17g")) == float(v) for v in values)
    assert "e" not in values[5] and len(values[5].replace(".", "").lstrip("0")) >= 15


def test_simulate_stdout_and_svg(tmp_path, capsys):
    svg = tmp_path / "plot.svg"
    assert run("simulate", "--t-end", "0.002", "--svg", str(svg)) == 0
    out = capsys.readouterr().out
    assert out.startswith("time,I_g0,")
    assert svg.read_text().lstrip().startswith("<?xml")


def test_ensemble_outputs(tmp_path, monkeypatch):
    monkeypatch.setenv(engine.WORKERS_ENV, "2")
    csv_path, summary = tmp_path / "e.csv", tmp_path / "s.json"
    assert run("ensemble", "-n", "4", "--t-end", "0.05", "-o", str(csv_path), "--summary", str(summary)) == 0
    header, rows = read_table(csv_path)
    assert header[:3] == ["time", "count", "I_g0_mean"] and np.all(rows[:, 1] == 4)
    report = json.loads(summary.read_text())
    assert report["runs"] == 4 and report["failed_runs"] == 0 and len(report["segments"]) == 1


def test_equilibrium_report(tmp_path, capsys):
    out = tmp_path / "eq.json"
    assert run("equilibrium", "-o", str(out)) == 0
    report = json.loads(out.read_text())
    assert len(report["segments"]) == 2
    assert all(s["max_residual"] < 1e-10 for s in report["segments"])
    assert "Newton" in capsys.readouterr().out


def test_scan_outputs(tmp_path, capsys):
    csv_path = tmp_path / "scan.csv"
    code = run("scan", "-o", str(csv_path), "--points", "20", "--v-range", "100,600")
    header, rows = read_table(csv_path)
    assert header == ["V", "P_star", "L_ii"] and rows.shape == (400, 3)
    assert code == 0 and "PASS scan" in capsys.readouterr().out


def test_scan_published_range_reports_negative_cells(tmp_path, capsys):
    # the conductance term outgrows the constant part just below V = 800
    assert run("scan", "-o", str(tmp_path / "s.csv")) == 1
    assert "FAIL scan" in capsys.readouterr().out


def test_lyapunov_certified_weights(capsys):
    code = run("lyapunov", "--samples", "300", "--inputs", "5", "--form", "exact", "--Sigma", "1",
               "--Lambda", "1e8", "--eta-gain")
    out = capsys.readouterr().out
    assert "identity ZIP" in out and "closed-loop sign" in out
    assert code == 0, out


@pytest.mark.parametrize("argv", [["bogus"], ["simulate", "--nope"], [], ["scan", "--v-range", "5"]])
def test_usage_errors_exit_2(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2


def test_runtime_error_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("network: {nodes: 2}\n")
    assert run("simulate", "-s", str(bad)) == 1
    assert "error" in capsys.readouterr().err


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "stochdc.cli", "check"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "stochdc.cli", "nope"], capture_output=True, text=True)
    assert proc.returncode == 2
