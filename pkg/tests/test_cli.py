"""Command line behavior: subcommands, outputs, exit codes."""

from __future__ import annotations

import json

import numpy as np
import pytest

import cctuner.cli as cli
from cctuner.cli import main
from cctuner.tuner import TuningError

SMALL_CFG = """
case = rts24
modes = single
distributions = gaussian
eps = 0.1
replications = 2
tuning.samples = 1500
oos.samples = 1500
gamma = 1e-3
seed = 11
gaussian.std_mw = 9.4, 13.1
gaussian.correlation = 0.2
"""


@pytest.fixture()
def cfg_path(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL_CFG)
    return str(path)


@pytest.fixture()
def case_path():
    import cctuner.data
    from importlib.resources import files

    return str(files("cctuner.data") / "ieee_rts24.case")


def test_parse_summary(case_path, capsys):
    assert main(["parse", case_path]) == 0
    out = capsys.readouterr().out
    assert "buses=24" in out and "lines=38" in out
    assert "load_mw=2850" in out and "capacity_mw=3405" in out


def test_parse_missing_file(capsys):
    assert main(["parse", "/no/such/file.case"]) == 1
    assert "error" in capsys.readouterr().err


def test_unknown_subcommand(capsys):
    assert main(["bogus"]) == 1


def test_usage_error_exit_code(capsys):
    # argparse defaults to exit 2; the CLI reserves 2 for solver failures.
    assert main(["tune", "--mode", "sideways"]) == 1
    assert main(["experiment"]) == 1


def test_ptdf_output(tmp_path, capsys):
    out = tmp_path / "ptdf.csv"
    assert main(["ptdf", "--out", str(out)]) == 0
    rows = out.read_text().strip().split("\n")
    assert len(rows) == 38
    assert all(len(r.split(",")) == 24 for r in rows)


def test_sample_respects_uncertain_buses(cfg_path, capsys):
    assert main(["sample", "--config", cfg_path, "--n", "4", "--seed", "3"]) == 0
    rows = capsys.readouterr().out.strip().split("\n")
    data = np.array([[float(v) for v in r.split(",")] for r in rows])
    assert data.shape == (4, 24)
    nonzero_cols = {int(j) + 1 for j in np.nonzero(np.any(data != 0.0, axis=0))[0]}
    assert nonzero_cols == {8, 15}


def test_solve_and_infeasible_exit(cfg_path, capsys):
    assert main(["solve", "--config", cfg_path, "--s", "1.3"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("s=1.3\ncost=")
    assert main(["solve", "--config", cfg_path, "--s", "50"]) == 2
    assert "infeasible" in capsys.readouterr().err


def test_tune_with_trace_outputs(cfg_path, tmp_path, capsys):
    trace = tmp_path / "trace.csv"
    assert main(
        ["tune", "--config", cfg_path, "--eps", "0.1", "--mode", "single",
         "--seed", "5", "--out", str(trace)]
    ) == 0
    out = capsys.readouterr().out
    assert "s=" in out and "terminated_by=" in out
    lines = trace.read_text().strip().split("\n")
    assert lines[0] == "iteration,s,feasible,eps_single,eps_joint,cost"
    assert len(lines) >= 2

    trace_json = tmp_path / "trace.json"
    assert main(
        ["tune", "--config", cfg_path, "--seed", "5", "--format", "json",
         "--out", str(trace_json)]
    ) == 0
    payload = json.loads(trace_json.read_text())
    assert payload["trace"] and payload["s"] > 0
    assert payload["terminated_by"] in ("eps_tolerance", "interval_collapse", "iteration_cap")


def test_tune_failure_maps_to_exit_2(cfg_path, monkeypatch, capsys):
    def boom(*args, **kwargs):
        raise TuningError("no feasible conservative anchor")

    monkeypatch.setattr(cli, "tune", boom)
    assert main(["tune", "--config", cfg_path]) == 2
    assert "conservative anchor" in capsys.readouterr().err


def test_evaluate_json_report(cfg_path, tmp_path, capsys):
    out = tmp_path / "report.json"
    assert main(
        ["evaluate", "--config", cfg_path, "--s", "1.3", "--n", "500",
         "--seed", "2", "--out", str(out)]
    ) == 0
    data = json.loads(out.read_text())
    assert data["n_samples"] == 500
    assert len(data["constraints"]) == 124
    assert main(["evaluate", "--config", cfg_path, "--s", "50"]) == 2


def test_experiment_end_to_end(cfg_path, tmp_path, capsys):
    out = tmp_path / "results.csv"
    assert main(
        ["experiment", "--config", cfg_path, "--out", str(out), "--jobs", "2"]
    ) == 0
    console = capsys.readouterr().out
    assert "s_true=" in console
    lines = out.read_text().strip().split("\n")
    assert lines[0].startswith("mode,distribution,eps_des,replication")
    assert len(lines) == 1 + 2 + 1
    assert lines[-1].split(",")[3] == "avg"

    out_json = tmp_path / "results.json"
    assert main(
        ["experiment", "--config", cfg_path, "--seed", "12",
         "--out", str(out_json), "--format", "json"]
    ) == 0
    data = json.loads(out_json.read_text())
    assert data["config"]["seed"] == "12"
    assert len(data["rows"]) == 2


def test_experiment_eps_and_mode_overrides(cfg_path, tmp_path):
    out = tmp_path / "narrow.csv"
    assert main(
        ["experiment", "--config", cfg_path, "--eps", "0.05", "--mode", "single",
         "--out", str(out)]
    ) == 0
    rows = out.read_text().strip().split("\n")[1:]
    assert all(r.split(",")[2] == "0.05" for r in rows)
