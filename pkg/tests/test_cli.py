import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from ivxq import data_path
from ivxq.cli import (
    EXIT_CONFIG,
    EXIT_ESTIMATION,
    EXIT_INPUT,
    EXIT_OK,
    EXIT_TOO_SHORT,
    EXIT_USAGE,
    main,
)

SIM = str(data_path("sim_example.csv"))
SYSTEM = str(data_path("example_system.ini"))


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def _error(err):
    return json.loads(err.strip().splitlines()[-1])["error"]


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def test_experiment_on_bundled_null_config(tmp_path, capsys):
    code, out, _ = _run(capsys, "experiment", "--config", data_path("null_experiment.ini"), "--out", tmp_path)
    assert code == EXIT_OK
    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert len(lines) == 3
    header = lines[0].split(",")
    for row in lines[1:]:
        rate = float(row.split(",")[header.index("rejection_rate")])
        assert 0.0 <= rate <= 1.0
    assert "ivx_wald_beta" in out


def test_experiment_is_byte_identical_across_runs_and_threads(tmp_path, capsys):
    cfg = data_path("null_experiment.ini")
    _run(capsys, "experiment", "--config", cfg, "--out", tmp_path / "a", "--threads", 1)
    _run(capsys, "experiment", "--config", cfg, "--out", tmp_path / "b", "--threads", 2)
    _run(capsys, "experiment", "--config", cfg, "--out", tmp_path / "c", "--threads", 1)
    a = (tmp_path / "a" / "report.csv").read_bytes()
    assert a == (tmp_path / "b" / "report.csv").read_bytes() == (tmp_path / "c" / "report.csv").read_bytes()


def test_fit_covar_json(tmp_path, capsys):
    code, _, _ = _run(capsys, "fit-covar", "--config", SYSTEM, "--input", SIM, "--out", tmp_path)
    assert code == EXIT_OK
    payload = json.loads((tmp_path / "fit_covar.json").read_text())
    assert {"coef", "naive_cov", "corrected_cov", "delta_wald", "stage1", "names"} <= set(payload)
    k = len(payload["coef"])
    assert np.array(payload["corrected_cov"]).shape == (k, k)
    assert payload["names"][-1] == "generated"
    assert (tmp_path / "fit_covar.csv").exists()


def test_simulate_then_fit_var(tmp_path, capsys):
    code, _, _ = _run(capsys, "simulate", "--config", SYSTEM, "--out", tmp_path, "--seed", 5)
    assert code == EXIT_OK
    sim = tmp_path / "simulated.csv"
    assert sim.read_text().splitlines()[0].split(",")[:3] == ["t", "y1", "y2"]
    code, _, _ = _run(capsys, "fit-var", "--config", SYSTEM, "--input", sim, "--out", tmp_path, "--tau", "mean")
    assert code == EXIT_OK
    payload = json.loads((tmp_path / "fit_var.json").read_text())
    assert payload["mode"] == "mean" and payload["names"] == ["intercept", "x1_1"]
    assert (tmp_path / "fitted_var.csv").exists()


def test_forecast_and_backtest(tmp_path, capsys):
    assert _run(capsys, "forecast", "--config", SYSTEM, "--input", SIM, "--out", tmp_path)[0] == EXIT_OK
    fc = json.loads((tmp_path / "forecast.json").read_text())
    assert {"index", "tau", "var", "covar"} <= set(fc)
    code, _, _ = _run(capsys, "backtest", "--config", SYSTEM, "--input", SIM, "--out", tmp_path, "--threads", 2)
    assert code == EXIT_OK
    rows = (tmp_path / "backtest.csv").read_text().splitlines()
    assert rows[0].startswith("n,tau,hits")
    assert len((tmp_path / "forecasts.csv").read_text().splitlines()) == int(rows[1].split(",")[0]) + 1


def test_outputs_are_byte_identical_on_rerun(tmp_path, capsys):
    for d in ("a", "b"):
        _run(capsys, "fit-covar", "--config", SYSTEM, "--input", SIM, "--out", tmp_path / d)
    for name in ("fit_covar.json", "fit_covar.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_no_temporary_files_are_left(tmp_path, capsys):
    _run(capsys, "fit-covar", "--config", SYSTEM, "--input", SIM, "--out", tmp_path)
    assert sorted(os.listdir(tmp_path)) == ["fit_covar.csv", "fit_covar.json"]


def test_missing_column_names_field(tmp_path, capsys):
    bad = _write(tmp_path / "in.csv", ["t", "y1", "x1_1"], [[i, 0.1 * i, i] for i in range(30)])
    code, _, err = _run(capsys, "fit-covar", "--input", bad, "--out", tmp_path)
    assert code == EXIT_INPUT
    assert _error(err)["field"] == "y2"


def test_non_finite_value_names_field(tmp_path, capsys):
    rows = [[i, 0.1 * i, 0.2, i, i] for i in range(30)]
    rows[10][3] = "nan"
    bad = _write(tmp_path / "in.csv", ["t", "y1", "y2", "x1_1", "x2_1"], rows)
    code, _, err = _run(capsys, "fit-var", "--input", bad, "--out", tmp_path)
    assert code == EXIT_INPUT
    e = _error(err)
    assert e["field"] == "x1_1" and e["code"] == EXIT_INPUT and e["type"] == "input"


def test_too_short_input(tmp_path, capsys):
    short = _write(tmp_path / "in.csv", ["t", "y1", "x1_1"], [[i, 0.1 * i, i] for i in range(10)])
    code, _, err = _run(capsys, "fit-var", "--input", short, "--out", tmp_path)
    assert code == EXIT_TOO_SHORT
    assert json.loads(err)["schema_version"] == 1


def test_identical_regressors_report_collinear_column(tmp_path, capsys):
    rng = np.random.default_rng(0)
    x = np.cumsum(rng.standard_normal(100))
    rows = [[t, rng.standard_normal(), rng.standard_normal(), x[t], x[t]] for t in range(100)]
    path = _write(tmp_path / "in.csv", ["t", "y1", "y2", "x1_1", "x2_1"], rows)
    code, _, err = _run(capsys, "fit-covar", "--input", path, "--out", tmp_path, "--tau", "0.5")
    assert code == EXIT_ESTIMATION
    assert _error(err)["field"] == "generated"


def test_usage_and_config_errors(tmp_path, capsys):
    assert _run(capsys, "fit-var", "--out", tmp_path)[0] == EXIT_USAGE
    assert _run(capsys, "nonsense")[0] == EXIT_USAGE
    bad = tmp_path / "bad.ini"
    bad.write_text("[estimation]\ntau = often\n")
    assert _run(capsys, "simulate", "--config", bad, "--out", tmp_path)[0] == EXIT_CONFIG
    assert _run(capsys, "experiment", "--config", SYSTEM, "--out", tmp_path)[0] == EXIT_CONFIG


def test_module_entry_point_reports_version():
    out = subprocess.run(
        [sys.executable, "-m", "ivxq.cli", "--version"], capture_output=True, text=True, check=True
    )
    assert "0.1.0" in out.stdout
