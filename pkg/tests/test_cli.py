import json
import subprocess
import sys

import pytest

from carnot_nonlocal.cli import main

from conftest import CONFIGS, ROOT

SMALL = {
    "id": "cli-small", "group": {"builtin": "R1"}, "kernel": {"nodes": 32},
    "coefficients": {"preset": "sin-perturbed"}, "time": {"T": 0.02, "outputs": 2},
    "operator": {"kind": "K", "epsilon": 0.2},
    "data": {"u0": "sin(pi*x1) + 0.5 + 0.25*x1", "g": "0.5 + 0.25*x1"},
    "sweep": {"epsilons": [0.4, 0.2, 0.1]}, "reference": {"h_ref": 1 / 256},
    "thresholds": {"min_rate": 0.5, "max_residual": 0.3},
}


def write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def test_validate_group_builtin(capsys):
    assert main(["validate-group", "--config", str(CONFIGS / "heisenberg_group.json"), "--trials", "2000"]) == 0
    out = capsys.readouterr().out
    assert "associativity" in out and out.strip().endswith("PASS")


def test_validate_group_rejects_bad_structure(tmp_path, capsys):
    cfg = {"group": {"dimension": 3, "strata": [2, 1], "structure_constants": [[1, 2, 4, 1.0]]}}
    assert main(["validate-group", "--config", write(tmp_path, cfg)]) == 2
    assert "error" in capsys.readouterr().err


def test_validate_kernel(tmp_path, capsys):
    assert main(["validate-kernel", "--config", str(CONFIGS / "drift_diffusion_1d.json")]) == 0
    assert "C(J)   0.142857142857" in capsys.readouterr().out
    bad = write(tmp_path, {"group": {"builtin": "R2"}, "kernel": {"shape": "indicator", "nodes": 8}})
    assert main(["validate-kernel", "--config", bad]) == 1


def test_consistency(tmp_path, capsys):
    assert main(["consistency", "--config", str(CONFIGS / "consistency_r2_E.json"), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    slope = float(out.split("slope ")[1].split()[0])
    assert slope == pytest.approx(2.0, abs=0.1)
    lines = (tmp_path / "consistency.csv").read_text().splitlines()
    assert lines[0] == "epsilon,error" and len(lines) == 5


def test_consistency_needs_section(tmp_path):
    assert main(["consistency", "--config", write(tmp_path, SMALL)]) == 2


def test_converge_and_report(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["converge", "--config", write(tmp_path, SMALL), "--out", str(out)]) == 0
    assert {p.name for p in out.iterdir()} == {"report.csv", "report.json", "plot.gp"}
    csv_before = (out / "report.csv").read_text()
    (out / "report.csv").unlink()
    capsys.readouterr()
    assert main(["report", "--config", write(tmp_path, SMALL), "--out", str(out)]) == 0
    assert (out / "report.csv").read_text() == csv_before
    assert json.loads(capsys.readouterr().out)["passed"] is True


def test_converge_failing_thresholds(tmp_path):
    cfg = dict(SMALL, thresholds={"min_rate": 5.0})
    assert main(["converge", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 1


def test_solve(tmp_path, capsys):
    assert main(["solve", "--config", write(tmp_path, SMALL), "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert len(rows) > 2
    assert "K eps = 0.2" in capsys.readouterr().out


def test_missing_config_file(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "nope.json")]) == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "carnot_nonlocal", "validate-group", "--trials", "500"],
                         capture_output=True, text=True, cwd=ROOT)
    assert res.returncode == 0, res.stderr
    assert "group R1" in res.stdout
    res = subprocess.run([sys.executable, "-m", "carnot_nonlocal"], capture_output=True, text=True)
    assert res.returncode == 2
