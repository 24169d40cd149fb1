import copy
import csv
import json
import math
import re

import pytest

from tbgflow import cli
from tbgflow.dynamics import Problem

SHORT_5_6 = {"t_end": 1.2}


def _doc(name="example_5_6", **changes):
    d = cli.bundled_scenario(name).to_dict()
    d = copy.deepcopy(d)
    d.update(changes)
    return d


def test_bundled_catalog_present():
    names = [p.stem for p in cli.bundled_scenario_paths()]
    assert names == [f"example_5_{k}" for k in range(1, 9)]


def test_load_5_1():
    s = cli.bundled_scenario("example_5_1")
    assert s.problem is Problem.RAP
    assert s.n_agents == 4 and s.q0 == 145.0
    assert s.demands == (36.25,) * 4
    assert s.aux0["y"] == (0.0,) * 4
    assert s.baseline and s.baseline_gain == 2.0


@pytest.mark.parametrize("name", [f"example_5_{k}" for k in range(1, 9)])
def test_round_trip(tmp_path, name):
    s = cli.bundled_scenario(name)
    path = tmp_path / "s.json"
    cli.write_scenario(s, path)
    assert cli.load_scenario(path) == s


@pytest.mark.parametrize("mutate,field", [
    (lambda d: d["costs"].pop(), "costs"),
    (lambda d: d.pop("t_p"), "t_p"),
    (lambda d: d["initial"].update(x=[1.0]), "initial.x"),
    (lambda d: d["costs"][0].update(kind="nope"), "costs[0]"),
    (lambda d: d["graph"].update(edges=[[0, 1]]), "graph"),
    (lambda d: d["tbg"].update(alpha=-1), "tbg.alpha"),
    (lambda d: d["integrator"].update(sample_every=0), "integrator.sample_every"),
    (lambda d: d.update(problem="lp"), "problem"),
    (lambda d: d["baseline"].update(gain=None), "baseline.gain"),
])
def test_validation_names_field(mutate, field):
    d = _doc()
    mutate(d)
    with pytest.raises(cli.ScenarioError, match=re.escape(f"'{field}")):
        cli.scenario_from_dict(d)


def test_parse_error_has_position(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "name": "x",\n  "problem": \n}\n')
    with pytest.raises(cli.ScenarioError, match=r"bad\.json:4:1"):
        cli.load_scenario(p)


def test_varrho_auto_uses_selector():
    s = cli.scenario_from_dict(_doc(varrho="auto"))
    assert s.varrho_auto
    assert s.varrho == pytest.approx(cli.coefficients_for(s, selected=True).varrho)
    assert s.varrho == pytest.approx(9.0)


def test_epsilon_auto_has_floor():
    s = cli.scenario_from_dict(_doc(epsilon="auto"))
    assert s.epsilon >= cli.DEFAULT_EPSILON


def _short(name="example_5_6"):
    import dataclasses
    return dataclasses.replace(cli.bundled_scenario(name), **SHORT_5_6)


def test_run_writes_artifacts(tmp_path):
    s = _short()
    result = cli.run_scenario(s, tmp_path / "out", baseline=True)
    out = tmp_path / "out"
    for f in ["trajectory.csv", "baseline_trajectory.csv", "report.json", "oscillation.json",
              "plot/x_1.dat", "plot/baseline_x_1.dat", "plot/lyapunov.dat"]:
        assert (out / f).exists(), f
    with (out / "trajectory.csv").open() as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    assert header[:4] == ["t", "x_1", "x_2", "x_3"]
    assert header[-3:] == ["V", "grad_spread", "consensus_residual"]
    assert len(header) == 1 + 2 * 3 + 3
    assert all(len(r) == len(header) for r in rows)
    assert len(rows) - 1 == len(result.trajectory.times)
    # Full precision: every float survives a round trip through the file.
    assert float(rows[5][1]) == result.trajectory.states[4, 0]
    report = json.loads((out / "report.json").read_text())
    assert report["scenario"] == "example_5_6"
    assert math.isfinite(report["oscillation_new"])


def test_csv_deterministic(tmp_path):
    s = _short()
    cli.run_scenario(s, tmp_path / "a")
    cli.run_scenario(s, tmp_path / "b")
    assert (tmp_path / "a/trajectory.csv").read_bytes() == (tmp_path / "b/trajectory.csv").read_bytes()


def test_rap_csv_columns(tmp_path):
    import dataclasses
    s = dataclasses.replace(cli.bundled_scenario("example_5_1"), t_end=7.5, baseline=False)
    cli.run_scenario(s, tmp_path)
    header = (tmp_path / "trajectory.csv").read_text().splitlines()[0].split(",")
    assert len(header) == 1 + 4 * 4 + 3
    assert header[-1] == "demand_gap"


def test_main_run(tmp_path, capsys):
    path = tmp_path / "s.json"
    cli.write_scenario(_short(), path)
    code = cli.main(["run", "--scenario", str(path), "--out", str(tmp_path / "o"), "--dt", "5e-5"])
    assert code == cli.EXIT_OK
    assert "PredefinedTimeOptimal" in capsys.readouterr().out
    assert json.loads((tmp_path / "o/report.json").read_text())["dt"] == pytest.approx(5e-5)


def test_main_usage_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert cli.main(["run", "--scenario", str(bad), "--out", str(tmp_path / "o")]) == cli.EXIT_USAGE
    assert "error" in capsys.readouterr().err
    path = tmp_path / "s.json"
    cli.write_scenario(_short(), path)
    assert cli.main(["run", "--scenario", str(path), "--out", str(tmp_path / "o"), "--dt", "0.5"]) == cli.EXIT_USAGE
    assert cli.main(["verify-tbg", "--kind", "zeta", "--alpha", "1", "--tp", "1"]) == cli.EXIT_USAGE
    with pytest.raises(SystemExit):
        cli.main(["run"])


def test_main_verify_tbg(capsys):
    assert cli.main(["verify-tbg", "--kind", "theta", "--alpha", "100", "--tp", "1"]) == cli.EXIT_OK
    assert cli.main(["verify-tbg", "--kind", "gamma", "--alpha", "1", "--tp", "1"]) == cli.EXIT_FAIL
    out = capsys.readouterr().out
    assert out.count("pass") == 1 and out.count("FAIL") == 1


def test_main_catalog_filter(tmp_path, capsys):
    out = tmp_path / "cat"
    assert cli.main(["catalog", "--filter", "5_6", "--out", str(out)]) == cli.EXIT_OK
    lines = (out / "summary.csv").read_text().splitlines()
    assert lines[0] == "scenario,verdict,dist_at_tp,runtime_s"
    assert [l.split(",")[0] for l in lines[1:]] == ["example_5_6"]
    assert (out / "example_5_6" / "trajectory.csv").exists()
    assert cli.main(["catalog", "--filter", "nothing*", "--out", str(tmp_path / "empty")]) == cli.EXIT_OK
    assert (tmp_path / "empty" / "summary.csv").read_text().count("\n") == 1


def test_main_verify_theorems(tmp_path):
    assert cli.main(["verify-theorems", "--out", str(tmp_path / "th")]) == cli.EXIT_OK
    report = json.loads((tmp_path / "th" / "theorems.json").read_text())
    assert report["passed"] and len(report["scalar_suite"]) == 6
