import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from reachbound.cli import main
from reachbound.fileio import load_result, verify_result

PROBLEMS = Path(__file__).resolve().parents[1] / "problems"
GRID = ["--grid", "0.05:0.05:0.95"]


def _write(path, raw):
    path.write_text(json.dumps(raw))
    return str(path)


@pytest.fixture
def scalar_file(tmp_path):
    return _write(tmp_path / "scalar.json", {
        "system": {"F": [[0.5]], "G": [[1.0]]},
        "bounds": {"gamma": [8.0]},
        "danger": [{"c": [1.0], "b": 1.0}],
        "montecarlo": {"n_traj": 50, "horizon": 60, "seed": 1, "policy": "mixed"},
    })


def test_analyze(tmp_path, scalar_file, capsys):
    out = tmp_path / "r.json"
    assert main(["analyze", "-i", scalar_file, "-o", str(out), *GRID]) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("analysis: a*=0.5 volume=")
    rec = load_result(out)
    assert rec["kind"] == "analysis" and rec["P"]["data"][0] == pytest.approx(0.25 / 8, rel=1e-6)
    verify_result(rec)


def test_zero_gamma_is_a_validation_error(tmp_path, capsys):
    path = _write(tmp_path / "p.json", {"system": {"F": [[0.5]], "G": [[1.0]]},
                                        "bounds": {"gamma": [0]}})
    assert main(["analyze", "-i", path, "-o", str(tmp_path / "r.json")]) == 1
    assert "gamma[0]" in capsys.readouterr().err


def test_unstable_system_is_infeasible(tmp_path, capsys, caplog):
    path = _write(tmp_path / "p.json", {"system": {"F": [[2.0]], "G": [[1.0]]},
                                        "bounds": {"gamma": [1]}})
    assert main(["analyze", "-i", path, "-o", str(tmp_path / "r.json"), *GRID]) == 2
    assert "infeasible" in capsys.readouterr().err
    assert "Unbounded" in caplog.text
    assert not (tmp_path / "r.json").exists()


def test_missing_file_is_an_io_error(tmp_path, capsys):
    assert main(["analyze", "-i", str(tmp_path / "nope.json"), "-o", str(tmp_path / "r.json")]) == 1


def test_malformed_json(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["analyze", "-i", str(p), "-o", str(tmp_path / "r.json")]) == 1
    assert "not valid JSON" in capsys.readouterr().err


def test_bad_grid_flag(tmp_path, scalar_file, capsys):
    assert main(["analyze", "-i", scalar_file, "-o", str(tmp_path / "r.json"), "--grid", "0:1"]) == 1


def test_synthesize_needs_danger(tmp_path, capsys):
    path = _write(tmp_path / "p.json", {"system": {"F": [[0.5]], "G": [[1.0]]},
                                        "bounds": {"gamma": [1]}})
    assert main(["synthesize", "-i", path, "-o", str(tmp_path / "r.json")]) == 1
    assert "danger" in capsys.readouterr().err


def test_synthesize_empty_danger_echoes_bounds(tmp_path, capsys):
    path = _write(tmp_path / "p.json", {"system": {"F": [[0.5]], "G": [[1.0]]},
                                        "bounds": {"gamma": [3.0]}, "danger": []})
    out = tmp_path / "r.json"
    assert main(["synthesize", "-i", path, "-o", str(out), *GRID]) == 0
    assert load_result(out)["gamma_hat"] == [3.0]


def test_synthesize_scalar_both_paths(tmp_path, scalar_file, capsys):
    out = tmp_path / "r.json"
    assert main(["synthesize", "-i", scalar_file, "-o", str(out), *GRID]) == 0
    rec = load_result(out)
    assert rec["gamma_hat"][0] == pytest.approx(0.25, rel=1e-6) and rec["method"] == "trace"
    verify_result(rec)
    assert main(["synthesize", "-i", scalar_file, "-o", str(out), *GRID, "--equal-bounds"]) == 0
    rec = load_result(out)
    assert rec["gamma_hat"][0] == pytest.approx(0.25, rel=1e-6) and rec["method"] == "equal"
    verify_result(rec)
    assert "gamma_hat=[0.25]" in capsys.readouterr().out


def test_sample_reports_and_is_deterministic(tmp_path, scalar_file, capsys):
    res = tmp_path / "r.json"
    main(["synthesize", "-i", scalar_file, "-o", str(res), *GRID])
    capsys.readouterr()
    c1, c2 = tmp_path / "c1.csv", tmp_path / "c2.csv"
    assert main(["sample", "-i", scalar_file, "--result", str(res), "-o", str(c1)]) == 0
    out = capsys.readouterr().out
    assert "containment=1 " in out and "violations=0" in out and "states=3000" in out
    assert main(["sample", "-i", scalar_file, "--result", str(res), "-o", str(c2)]) == 0
    assert c1.read_bytes() == c2.read_bytes()
    assert main(["sample", "-i", scalar_file, "--result", str(res), "-o", str(c2), "--seed", "2"]) == 0
    assert c1.read_bytes() != c2.read_bytes()


def test_sample_dimension_mismatch(tmp_path, scalar_file, capsys):
    res = tmp_path / "r.json"
    main(["analyze", "-i", scalar_file, "-o", str(res), *GRID])
    other = _write(tmp_path / "p2.json", {"system": {"F": [[0.5, 0], [0, 0.5]], "G": [[1], [1]]},
                                          "bounds": {"gamma": [1]}})
    assert main(["sample", "-i", other, "--result", str(res), "-o", str(tmp_path / "c.csv")]) == 1
    assert "dimension" in capsys.readouterr().err


def test_platoon_commands(tmp_path, capsys):
    out = str(tmp_path / "t.csv")
    assert main(["platoon", "-i", str(PROBLEMS / "platoon_attack.json"), "-o", out]) == 0
    assert "crash between vehicles 1 and 2" in capsys.readouterr().out
    assert main(["platoon", "-i", str(PROBLEMS / "platoon_safe.json"), "-o", out]) == 0
    assert "no crash over 200 s" in capsys.readouterr().out
    assert main(["platoon", "-i", str(PROBLEMS / "platoon_attack.json"), "-o", out, "--no-attack"]) == 0
    assert "final gaps=[1, 1]" in capsys.readouterr().out
    data = np.loadtxt(out, delimiter=",", skiprows=1)
    assert np.allclose(data[-1, 1:3], 1.0, atol=1e-3)


def test_platoon_needs_block(tmp_path, scalar_file, capsys):
    assert main(["platoon", "-i", scalar_file, "-o", str(tmp_path / "t.csv")]) == 1


def test_ellipse_command(tmp_path, capsys):
    path = _write(tmp_path / "p.json", {"system": {"F": [[0.5, 0], [0, 0.5]], "G": [[1, 0], [0, 1]]},
                                        "bounds": {"gamma": [1, 1]}})
    res, poly = tmp_path / "r.json", tmp_path / "e.csv"
    assert main(["analyze", "-i", path, "-o", str(res), *GRID]) == 0
    assert main(["ellipse", "-i", str(res), "-o", str(poly), "--samples", "16"]) == 0
    lines = poly.read_text().splitlines()
    assert lines[0] == "x_1,x_2" and len(lines) == 18
    assert main(["ellipse", "-i", str(res), "-o", str(poly), "--plane", "1,3"]) == 1


def test_outputs_are_reproducible(tmp_path, scalar_file):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    main(["synthesize", "-i", scalar_file, "-o", str(a), *GRID])
    main(["synthesize", "-i", scalar_file, "-o", str(b), *GRID, "--threads", "3"])
    assert a.read_bytes() == b.read_bytes()


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "reachbound.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("reachbound ")
    r = subprocess.run([sys.executable, "-m", "reachbound.cli"], capture_output=True, text=True)
    assert r.returncode == 1  # usage error


@pytest.mark.slow
def test_demo_files_through_cli(tmp_path, capsys):
    out = tmp_path / "r.json"
    assert main(["synthesize", "-i", str(PROBLEMS / "example_d1.json"), "-o", str(out)]) == 0
    rec = load_result(out)
    assert np.allclose(rec["gamma_hat"], [7.54, 5.14], rtol=5e-3)
    verify_result(rec)
    assert main(["synthesize", "-i", str(PROBLEMS / "example_d1.json"), "-o", str(out),
                 "--equal-bounds"]) == 0
    rec = load_result(out)
    assert rec["gamma_hat"] == pytest.approx([5.9, 5.9], rel=1e-3)
    verify_result(rec)
