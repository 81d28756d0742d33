import json
import subprocess
import sys

import numpy as np
import pytest

from mvassoc.cli import EXIT_CONFIG, EXIT_DATA, main
from mvassoc.data import write_csv
from mvassoc.simulation import simulate_dgp1


@pytest.fixture(scope="module")
def csv_path(tmp_path_factory):
    p = tmp_path_factory.mktemp("data") / "dgp1.csv"
    write_csv(p, simulate_dgp1(1000, 123))
    return p


def _run(*args):
    return main(["--quiet", *map(str, args)])


def test_analyze_default_config(csv_path, tmp_path):
    out = tmp_path / "run"
    assert _run("analyze", "--data", csv_path, "--outcomes", "Y1,Y2,Y3", "--out-dir", out, "--threads", 1) == 0
    rep = json.loads((out / "report.json").read_text())
    assert 0.70 <= rep["association"]["r2"] <= 0.88
    assert rep["fit_counts"]["instrumented"] == rep["fit_counts"]["predicted_total"]
    assert set(rep["data"]["outcome_standardization"]) == {"Y1", "Y2", "Y3"}
    assert rep["config"]["seed"] == 0 and rep["seed"] == 0
    assert "full_data_weights" in rep
    rows = (out / "per_fold.csv").read_text().splitlines()
    assert len(rows) == 11 and rows[0].startswith("fold,size")


def test_analyze_rerun_byte_identical_and_from_embedded_config(csv_path, tmp_path):
    args = ["analyze", "--data", csv_path, "--outcomes", "Y1,Y2,Y3", "--folds", "4,3,3", "--seed", 9,
            "--groups", "g2=X2", "--baselines", "wilks,pca-f", "--permutations", 49, "--threads", 1]
    assert _run(*args, "--out-dir", tmp_path / "a") == 0
    assert _run(*args, "--out-dir", tmp_path / "b") == 0
    for f in ("report.json", "per_fold.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    # feeding the report back in as a config reproduces every number
    assert _run("analyze", "--config", tmp_path / "a" / "report.json", "--out-dir", tmp_path / "c", "--threads", 1) == 0
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "c" / "report.json").read_bytes()
    rep = json.loads((tmp_path / "a" / "report.json").read_text())
    assert set(rep["baselines"]) == {"wilks", "pca-f"}
    assert rep["importance"]["g2"]["columns"] == ["X2"]


def test_importance_requires_groups(csv_path, tmp_path):
    assert _run("importance", "--data", csv_path, "--outcomes", "Y1,Y2", "--out-dir", tmp_path) == EXIT_CONFIG


def test_importance_command(csv_path, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(f"data: {csv_path}\noutcomes: [Y1, Y2, Y3]\nfolds: [3, 3, 3]\nlibrary: [mean, ols]\n"
                   "groups:\n  shared: [X1, X2]\n")
    assert _run("importance", "--config", cfg, "--out-dir", tmp_path / "o", "--threads", 1) == 0
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["importance"]["shared"]["delta"] > 0
    assert "baselines" not in rep


def test_baselines_command(csv_path, tmp_path):
    assert _run("baselines", "--data", csv_path, "--outcomes", "Y1,Y2,Y3", "--permutations", 19,
                "--out-dir", tmp_path) == 0
    rep = json.loads((tmp_path / "baselines.json").read_text())
    assert set(rep["baselines"]) == {"wilks", "hotelling-lawley", "pillai-bartlett", "roy", "pca-f"}
    assert rep["baselines"]["wilks"]["p_value"] == pytest.approx(1 / 20)


def test_config_errors(csv_path, tmp_path, capsys):
    assert _run("analyze", "--data", csv_path, "--outcomes", "Y1", "--covariates", "Y1,X2") == EXIT_CONFIG
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"data": str(csv_path), "outcomes": ["Y1"], "library": ["mean", {"kind": "svm"}]}))
    assert _run("analyze", "--config", cfg) == EXIT_CONFIG
    assert "library entry #2" in capsys.readouterr().err
    cfg.write_text(json.dumps({"data": str(csv_path), "outcomes": ["Y1"], "typo": 1}))
    assert _run("analyze", "--config", cfg) == EXIT_CONFIG
    assert _run("analyze", "--data", tmp_path / "missing.csv", "--outcomes", "Y1") == EXIT_DATA
    assert _run("analyze", "--data", csv_path, "--outcomes", "Q") == EXIT_DATA
    assert _run("analyze", "--data", csv_path, "--outcomes", "Y1", "--folds", "a,b") == EXIT_CONFIG


def test_unknown_scenario_usage_error():
    r = subprocess.run([sys.executable, "-m", "mvassoc.cli", "simulate", "sim2-power", "--scenario", "bogus"],
                       capture_output=True, text=True)
    assert r.returncode == 2
    for name in ("null", "linear", "nonlinear"):
        assert name in r.stderr


def test_simulate_byte_identical(tmp_path):
    args = ["simulate", "sim1-bias-coverage", "--n", 60, "--reps", 2, "--seed", 7, "--folds", 3, "--threads", 1]
    assert _run(*args, "--out-dir", tmp_path / "a") == 0
    assert _run(*args, "--out-dir", tmp_path / "b") == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == ["sim1-bias-coverage_n60.csv", "sim1-bias-coverage_n60.json"]
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


@pytest.mark.slow
def test_simulate_spec_example_byte_identical(tmp_path):
    """`simulate sim1-bias-coverage --n 500 --reps 50 --seed 7` twice gives identical files."""
    args = ["simulate", "sim1-bias-coverage", "--n", 500, "--reps", 50, "--seed", 7]
    assert _run(*args, "--out-dir", tmp_path / "a") == 0
    assert _run(*args, "--out-dir", tmp_path / "b") == 0
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_console_script_entry_point():
    r = subprocess.run([sys.executable, "-m", "mvassoc.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "analyze" in r.stdout and "simulate" in r.stdout
