import json
import subprocess
import sys

import numpy as np
import pytest

from ratelqg.cli import CURVE_HEADER, emit_curve, read_curve, run
from ratelqg.model import StationaryPlant, TimeVaryingPlant, example_plant, save_plant
from ratelqg.synthesis import tradeoff_curve


@pytest.fixture(scope="module")
def plant_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("plants") / "benchmark.json"
    save_plant(example_plant(), path)
    return str(path)


def invoke(argv, capsys):
    code = run(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_synthesize_writes_design(plant_file, tmp_path, capsys):
    out = tmp_path / "design.json"
    code, _, err = invoke(["synthesize", "--plant", plant_file, "--budget", "80", "--out", str(out)], capsys)
    assert code == 0 and err == ""
    design = json.loads(out.read_text())
    assert design["DI_bits"] == pytest.approx(1.602, abs=0.02)


def test_negative_budget_is_invalid(plant_file, capsys):
    code, out, err = invoke(["synthesize", "--plant", plant_file, "--budget", "-1"], capsys)
    assert code == 3 and out == ""
    assert err.count("\n") == 1 and "budget must be positive" in err


def test_budget_below_floor_is_infeasible(plant_file, capsys):
    code, _, err = invoke(["synthesize", "--plant", plant_file, "--budget", "20"], capsys)
    assert code == 2 and err.startswith("ratelqg: infeasible")


@pytest.mark.parametrize("argv", [
    ["bogus"],
    [],
    ["synthesize", "--budget", "40"],
    ["tradeoff", "--plant", "p.json", "--dmin", "1", "--dmax", "2", "--points", "0"],
    ["simulate", "--plant", "p.json", "--budget", "40", "--seed", "-3"],
    ["synthesize", "--plant", "p.json", "--budget", "40", "--rank-threshold", "2"],
])
def test_usage_errors_are_invalid_input(argv, capsys):
    code, _, err = invoke(argv, capsys)
    assert code == 3 and err.count("\n") == 1


def test_missing_and_malformed_plant_files(tmp_path, capsys):
    code, _, err = invoke(["synthesize", "--plant", str(tmp_path / "none.json"), "--budget", "40"], capsys)
    assert code == 3 and "cannot read" in err
    bad = tmp_path / "bad.json"
    bad.write_text('{"type": "stationary", "A": [[1.0]]')
    code, _, err = invoke(["asymptote", "--plant", str(bad)], capsys)
    assert code == 3 and "parse error" in err


def test_unstabilizable_plant_rejected(tmp_path, capsys):
    path = tmp_path / "p.json"
    save_plant(StationaryPlant([[2.0]], [[0.0]], [[1.0]], [[1.0]], [[1.0]]), path)
    code, _, err = invoke(["synthesize", "--plant", str(path), "--budget", "40"], capsys)
    assert code == 3 and "not stabilizable" in err


def test_asymptote(plant_file, capsys):
    code, out, _ = invoke(["asymptote", "--plant", plant_file], capsys)
    res = json.loads(out)
    assert code == 0
    assert res["asymptote_bits"] == pytest.approx(1.169, abs=1e-3)
    assert 20 < res["Dmin"] < 33


def test_tradeoff_marks_points_below_floor(plant_file, tmp_path, capsys):
    out = tmp_path / "curve.csv"
    code, _, _ = invoke(["tradeoff", "--plant", plant_file, "--dmin", "20", "--dmax", "120",
                         "--points", "11", "--out", str(out)], capsys)
    assert code == 0
    rows = read_curve(out)
    assert [float(r["D"]) for r in rows] == list(np.linspace(20, 120, 11))
    assert rows[0]["feasible"] == "0" and rows[0]["DI_bits"] == ""
    assert all(r["feasible"] == "1" for r in rows[2:])
    rates = [float(r["DI_bits"]) for r in rows if r["feasible"] == "1"]
    assert all(a >= b for a, b in zip(rates, rates[1:]))


def test_tradeoff_rejects_reversed_range_and_tv_plant(plant_file, tmp_path, capsys):
    code, _, err = invoke(["tradeoff", "--plant", plant_file, "--dmin", "80", "--dmax", "40"], capsys)
    assert code == 3 and "dmax" in err
    path = tmp_path / "tv.json"
    save_plant(TimeVaryingPlant([[[2.0]]], [[[1.0]]], [[[1.0]]], [[[1.0]]], [[[1.0]]], [[1.0]]), path)
    code, _, err = invoke(["tradeoff", "--plant", str(path), "--dmin", "10", "--dmax", "20"], capsys)
    assert code == 3 and "stationary" in err


def test_simulate_summary(plant_file, tmp_path, capsys):
    traj = tmp_path / "traj.csv"
    code, out, _ = invoke(["simulate", "--plant", plant_file, "--budget", "40", "--steps", "200",
                           "--trials", "20", "--seed", "3", "--trajectory", str(traj)], capsys)
    res = json.loads(out)
    assert code == 0
    assert res["J_analytic_per_stage"] == pytest.approx(40.0, rel=1e-6)
    assert abs(res["cost_per_stage"] - 40.0) < 5 * res["cost_stderr"]
    assert res["diverged_trials"] == 0
    assert len(traj.read_text().splitlines()) == 201


# -- curve files ----------------------------------------------------------------------

def test_curve_round_trip(tmp_path):
    curve = tradeoff_curve(example_plant(), [33.0, 40.0, 80.0])
    path = tmp_path / "c.csv"
    text = emit_curve(curve, path)
    assert text.splitlines()[2] == ",".join(CURVE_HEADER)
    assert text.startswith("# asymptote_bits=")
    rows = read_curve(path)
    assert len(rows) == 3
    for row, s in zip(rows, curve.samples):
        # full precision survives the text form
        assert float(row["D"]) == s[0] and float(row["DI_bits"]) == s[1]
        assert int(row["rank"]) == s[2] and float(row["R_upper_bits"]) == s[3]
    assert [int(r["rank"]) for r in rows] == [3, 2, 1]


def test_all_infeasible_curve(tmp_path):
    curve = tradeoff_curve(example_plant(), [5.0, 10.0])
    emit_curve(curve, tmp_path / "c.csv")
    rows = read_curve(tmp_path / "c.csv")
    assert [r["feasible"] for r in rows] == ["0", "0"]
    assert all(r["DI_bits"] == "" and r["rank"] == "" for r in rows)


def test_single_point_curve(tmp_path):
    text = emit_curve(tradeoff_curve(example_plant(), [60.0]))
    lines = text.splitlines()
    assert len(lines) == 4 and lines[2] == ",".join(CURVE_HEADER)


# -- process level ----------------------------------------------------------------------

def cli(*args, cwd):
    return subprocess.run([sys.executable, "-m", "ratelqg", *args], cwd=cwd,
                          capture_output=True, text=True, timeout=300)


def test_module_entry_point_and_determinism(plant_file, tmp_path):
    outputs = []
    for k in range(2):
        out = tmp_path / f"d{k}.json"
        proc = cli("synthesize", "--plant", plant_file, "--budget", "40", "--out", str(out), cwd=tmp_path)
        assert proc.returncode == 0, proc.stderr
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1]
    proc = cli("synthesize", "--plant", plant_file, "--budget", "-1", cwd=tmp_path)
    assert proc.returncode == 3
