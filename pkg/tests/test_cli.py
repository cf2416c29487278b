import csv
import json

import numpy as np

from wendy_irls.cli import main
from wendy_irls.harness import RAW_COLUMNS, RESULTS_COLUMNS
from wendy_irls.models import get_benchmark


def run(*args):
    return main([str(a) for a in args])


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_golden_headers():
    assert RESULTS_COLUMNS == [
        "level_kind", "level_value", "param", "coverage", "bias",
        "rel_bias", "mean_se", "emp_sd", "n_success", "n_fail",
    ]
    assert RAW_COLUMNS == [
        "level_kind", "level_value", "replicate", "param", "estimate",
        "se", "ci_lo", "ci_hi", "covered", "status",
    ]


def test_simulate_row_count(tmp_path):
    assert run("simulate", "--model", "logistic", "--points", 103, "--out-dir", tmp_path) == 0
    rows = read_rows(tmp_path / "trajectory.csv")
    assert rows[0] == ["t", "u1"] and len(rows) == 104
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["command"] == "simulate" and man["seed"] == 0
    assert (tmp_path / "trajectory.svg").read_text().startswith("<svg")


def test_simulate_is_deterministic(tmp_path):
    for d in ("a", "b"):
        assert run("simulate", "--model", "lv", "--noise", "mln", "--gamma", 0.05,
                   "--seed", 7, "--out-dir", tmp_path / d) == 0
    a = (tmp_path / "a" / "trajectory.csv").read_bytes()
    assert a == (tmp_path / "b" / "trajectory.csv").read_bytes()
    run("simulate", "--model", "lv", "--noise", "mln", "--gamma", 0.05, "--seed", 8, "--out-dir", tmp_path / "c")
    assert a != (tmp_path / "c" / "trajectory.csv").read_bytes()


def test_unknown_model_lists_names(tmp_path, capsys):
    assert run("simulate", "--model", "unknown", "--out-dir", tmp_path) == 2
    err = capsys.readouterr().err
    assert "logistic" in err and "ptb" in err


def test_usage_errors(tmp_path):
    assert run("simulate", "--out-dir", tmp_path) == 2  # no model
    assert run("simulate", "--model", "lv", "--gamma", 1.5, "--out-dir", tmp_path) == 2
    assert run("experiment", "--model", "lv", "--replicates", 0, "--out-dir", tmp_path) == 2
    assert run("simulate", "--model", "fhn", "--noise", "atn", "--gamma", 0.1, "--out-dir", tmp_path) == 2
    assert run("bogus") == 2


def test_fit_noise_free_logistic(tmp_path):
    assert run("fit", "--model", "logistic", "--out-dir", tmp_path) == 0
    rep = json.loads((tmp_path / "fit.json").read_text())
    est = [p["estimate"] for p in rep["params"]]
    np.testing.assert_allclose(est, [1.0, -1.0], atol=1e-3)


def test_fit_from_file_and_ci_levels(tmp_path):
    run("simulate", "--model", "lv", "--noise", "normal", "--gamma", 0.05, "--seed", 3, "--out-dir", tmp_path / "s")
    data = tmp_path / "s" / "trajectory.csv"
    for lvl in ("0.95", "0.99"):
        assert run("fit", "--model", "lv", "--input", data, "--ci-level", lvl, "--out-dir", tmp_path / lvl) == 0
    a = json.loads((tmp_path / "0.95" / "fit.json").read_text())["params"]
    b = json.loads((tmp_path / "0.99" / "fit.json").read_text())["params"]
    for p, q in zip(a, b):
        assert q["ci_hi"] - q["ci_lo"] > p["ci_hi"] - p["ci_lo"]
        assert q["estimate"] == p["estimate"]
    assert (tmp_path / "0.95" / "fit.svg").exists()


def test_fit_missing_input(tmp_path):
    assert run("fit", "--model", "lv", "--input", tmp_path / "nope.csv", "--out-dir", tmp_path) == 2


def test_fit_failure_is_structured(tmp_path, capsys):
    path = tmp_path / "flat.csv"
    with open(path, "w") as fh:
        fh.write("t,u1,u2\n" + "".join(f"{0.1 * i},1.0,1.0\n" for i in range(60)))
    assert run("fit", "--model", "lv", "--input", path, "--out-dir", tmp_path / "o") == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "rank"


def test_single_replicate_experiment(tmp_path):
    assert run("experiment", "--model", "logistic", "--gamma", 0.05, "--replicates", 1, "--out-dir", tmp_path) == 0
    rows = read_rows(tmp_path / "results.csv")
    assert rows[0] == RESULTS_COLUMNS and len(rows) == 3
    assert all(r[-2:] == ["1", "0"] for r in rows[1:])
    raw = read_rows(tmp_path / "raw_estimates.csv")
    assert raw[0] == RAW_COLUMNS and len(raw) == 3
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["coverage_recheck"] is True


def test_sweep_rows_and_manifest_replay(tmp_path):
    args = ["sweep-resolution", "--model", "lv", "--gamma", 0.1, "--points", "103,205",
            "--replicates", 5, "--seed", 4, "--no-svg"]
    assert run(*args, "--out-dir", tmp_path / "a") == 0
    rows = read_rows(tmp_path / "a" / "results.csv")
    P = get_benchmark("lv").n_params
    assert len(rows) - 1 == 2 * P
    assert [r[1] for r in rows[1:]] == ["103.0"] * P + ["205.0"] * P
    assert not (tmp_path / "a" / "coverage.svg").exists()
    assert run("sweep-resolution", "--config", tmp_path / "a" / "manifest.json", "--out-dir", tmp_path / "b") == 0
    for name in ("results.csv", "raw_estimates.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_cli_flags_override_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": "logistic", "gamma": [0.05], "replicates": 4}))
    assert run("experiment", "--config", cfg, "--replicates", 2, "--out-dir", tmp_path / "o", "--no-raw") == 0
    rows = read_rows(tmp_path / "o" / "results.csv")
    assert rows[1][-2:] == ["2", "0"]
    assert not (tmp_path / "o" / "raw_estimates.csv").exists()


def test_noise_sweep_parameter_ordering(tmp_path):
    # the decay coefficient loses coverage first as noise grows
    assert run("sweep-noise", "--model", "logistic", "--noise", "normal", "--out-dir", tmp_path / "s", "--no-raw") == 0
    rows = read_rows(tmp_path / "s" / "results.csv")[1:]
    cov = {(float(r[1]), r[2]): float(r[3]) for r in rows}
    assert cov[(0.5, "w1")] >= cov[(0.5, "w2")]
    assert run("experiment", "--model", "logistic", "--gamma", 0.7, "--out-dir", tmp_path / "e", "--no-raw") == 0
    rows = read_rows(tmp_path / "e" / "results.csv")[1:]
    assert float(rows[0][3]) >= float(rows[1][3])
    summary = json.loads((tmp_path / "s" / "summary.json").read_text())
    assert summary["stop_reason"] in ("coverage below 0.5", "schedule exhausted", "max level")


def test_bootstrap_outputs(tmp_path):
    assert run("bootstrap", "--model", "lv", "--noise", "normal", "--gamma", 0.05,
               "--samples", 7, "--bins", 5, "--out-dir", tmp_path) == 0
    rows = read_rows(tmp_path / "cloud.csv")
    assert rows[0] == ["sample", "t", "u1", "u2"]
    n = 205
    assert len(rows) - 1 == 8 * n
    hist = read_rows(tmp_path / "histograms.csv")
    assert hist[0] == ["index", "t", "state", "bin", "lo", "hi", "count"]
    counts = {}
    for r in hist[1:]:
        counts[(r[0], r[2])] = counts.get((r[0], r[2]), 0) + int(r[6])
    assert set(counts.values()) == {7} and len(counts) == 16
    info = json.loads((tmp_path / "bootstrap.json").read_text())
    assert info["n_samples"] == 7
