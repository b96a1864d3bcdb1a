import json
import subprocess
import sys

import jsonschema
import numpy as np
import pytest

from ipwgee.cli import main
from ipwgee.longcsv import export
from ipwgee.simulate import SimDesign, generate

from test_estimator import pooled_logistic_mle

NUMBER_OR_NULL = {"type": ["number", "null"]}
COEF = {"type": "object", "required": ["name", "estimate", "std_error", "z", "p_value"],
        "properties": {"name": {"type": "string"}, "estimate": {"type": "number"},
                       "std_error": NUMBER_OR_NULL, "p_value": NUMBER_OR_NULL}}
FIT_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "command", "status", "input", "settings", "missingness",
                 "correlation", "coefficients", "fit", "diagnostics"],
    "properties": {
        "schema_version": {"const": "1.0"},
        "status": {"enum": ["converged", "not_converged"]},
        "coefficients": {"type": "array", "items": COEF},
        "missingness": {"type": "object", "required": ["fitted", "gamma_hat", "pi_floor", "clamp_activations"]},
        "diagnostics": {"type": ["object", "null"]},
    },
}
VEC = {"type": "array", "items": {"type": "number"}}
SIM_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "command", "design", "settings", "summary"],
    "properties": {
        "summary": {
            "type": "object",
            "required": ["K", "bias", "rmse", "coverage95", "ks_stats", "score_mean_norm", "nonconverged",
                         "nonconverged_flag"],
            "properties": {"K": {"type": "integer", "minimum": 100}, "bias": VEC, "rmse": VEC,
                           "coverage95": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
                           "ks_stats": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
                           "nonconverged": {"type": "integer", "minimum": 0}},
        }
    },
}

MAR_DESIGN = SimDesign(n=150, m=4, family="logit", beta_true=(0.2, 0.5, -0.4),
                       covariates=("intercept", "uniform(-1,1)", "cluster_bernoulli(0.5)"),
                       gamma_true=(1.9, 1.05, 0.0), corr_true="exchangeable", rho=(0.5,), seed=21)


@pytest.fixture
def mar_csv(tmp_path):
    path = tmp_path / "mar.csv"
    export(generate(MAR_DESIGN, 0), path)
    return path


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_fit_report_and_table(mar_csv, tmp_path, capsys):
    out = tmp_path / "r.json"
    code, text, _ = run(["fit", mar_csv, "--family", "binomial", "--correlation", "exchangeable", "--out", out], capsys)
    assert code == 0
    report = json.loads(out.read_text())
    jsonschema.validate(report, FIT_SCHEMA)
    assert report["missingness"]["fitted"] and len(report["missingness"]["gamma_hat"]) == 3
    assert len(report["correlation"]["alpha_hat"]) == 1
    head = [line for line in text.splitlines() if "estimate" in line][0]
    assert "s.e." in head and "p-value" in head
    assert "diagnostics" in text and "iw_ratio" in text


def test_one_dependent_flag(mar_csv, capsys):
    code, text, _ = run(["fit", mar_csv, "--family", "binomial", "--correlation", "one-dependent"], capsys)
    assert code == 0 and "alpha_hat" in text


def test_fit_json_byte_identical(mar_csv, tmp_path, capsys):
    outs = []
    for k in range(2):
        p = tmp_path / f"r{k}.json"
        run(["fit", mar_csv, "--family", "binomial", "--out", p], capsys)
        outs.append(p.read_bytes())
    assert outs[0] == outs[1]
    assert b"NaN" not in outs[0] and b"Infinity" not in outs[0]


def test_complete_binomial_independence_is_pooled_mle(tmp_path, capsys):
    d = SimDesign(n=80, m=3, family="logit", beta_true=(0.3, -0.7), seed=22)
    ds = generate(d, 0)
    export(ds, tmp_path / "c.csv")
    out = tmp_path / "c.json"
    code, _, _ = run(["fit", tmp_path / "c.csv", "--family", "binomial", "--correlation", "independence",
                      "--tol", "1e-11", "--out", out], capsys)
    assert code == 0
    report = json.loads(out.read_text())
    assert report["missingness"]["fitted"] is False
    est = [c["estimate"] for c in report["coefficients"]]
    np.testing.assert_allclose(est, pooled_logistic_mle(ds.covariates, ds.responses), atol=1e-6)


def test_all_missing_is_input_error(tmp_path, capsys):
    p = tmp_path / "e.csv"
    p.write_text("id,time,y,x\n1,1,,0\n1,2,,1\n2,1,,0\n2,2,,1\n")
    code, _, err = run(["fit", p], capsys)
    assert code == 1 and "all responses missing" in err and "ipwgee." in err


def test_exit_codes(mar_csv, tmp_path, capsys):
    assert run(["fit", mar_csv, "--family", "binomial"], capsys)[0] == 0
    assert run(["fit", tmp_path / "nope.csv"], capsys)[0] == 1
    assert run(["fit", mar_csv, "--family", "gamma"], capsys)[0] == 1
    bad = tmp_path / "bad.csv"
    bad.write_text("id,time,y,x\n1,1,0,a\n")
    assert run(["fit", bad], capsys)[0] == 1
    assert run([], capsys)[0] == 1
    out = tmp_path / "nc.json"
    code, _, _ = run(["fit", mar_csv, "--family", "binomial", "--max-iter", "1", "--tol", "1e-15", "--out", out],
                     capsys)
    assert code == 2
    assert json.loads(out.read_text())["status"] == "not_converged"


def test_simulate_usage_error(capsys):
    code, _, err = run(["simulate", "--n", 50, "--m", 3, "--beta", "0,1", "-K", 0], capsys)
    assert code == 1 and "usage" in err
    assert run(["simulate", "--n", 50], capsys)[0] == 1


def test_simulate_smoke_json(tmp_path, capsys):
    cfg = tmp_path / "d.cfg"
    cfg.write_text("n = 50\nm = 3\nfamily = binomial\nbeta = 0.2, 0.5\ngamma = 1.5, 0.5\nseed = 4\nK = 100\n")
    out, csv_path = tmp_path / "s.json", tmp_path / "s.csv"
    code, text, _ = run(["simulate", "--config", cfg, "--working", "independence", "--out", out, "--csv", csv_path],
                        capsys)
    assert code == 0
    payload = json.loads(out.read_text())
    jsonschema.validate(payload, SIM_SCHEMA)
    assert payload["design"]["n"] == 50 and payload["summary"]["K"] == 100
    assert csv_path.exists() and "K=100" in text
    run(["simulate", "--config", cfg, "--working", "independence", "--out", tmp_path / "s2.json"], capsys)
    assert (tmp_path / "s2.json").read_bytes() == out.read_bytes()


def test_diagnose_converged_and_refusal(mar_csv, tmp_path, capsys):
    good = tmp_path / "good.json"
    run(["fit", mar_csv, "--family", "binomial", "--out", good], capsys)
    dg = tmp_path / "dg.json"
    code, text, _ = run(["diagnose", mar_csv, "--fit", good, "--out", dg], capsys)
    assert code == 0 and "gamma_star" in text
    assert json.loads(dg.read_text())["diagnostics"] == json.loads(good.read_text())["diagnostics"]
    bad = tmp_path / "bad.json"
    run(["fit", mar_csv, "--family", "binomial", "--max-iter", "1", "--tol", "1e-15", "--out", bad], capsys)
    code, _, err = run(["diagnose", mar_csv, "--fit", bad], capsys)
    assert code == 1 and "refusing" in err
    assert run(["diagnose", mar_csv], capsys)[0] == 1


def test_diagnose_trend(tmp_path, capsys):
    cfg = tmp_path / "d.cfg"
    cfg.write_text("n = 10\nm = 3\nfamily = binomial\nbeta = 0.2, 0.5\ngamma = 1.5, 0.5\nseed = 4\n"
                   "working = exchangeable\n")
    out = tmp_path / "t.csv"
    code, _, _ = run(["diagnose", "--trend", "--config", cfg, "--sizes", "100,200,400", "--out", out], capsys)
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("n,iw_ratio,gamma_star") and len(lines) == 4
    assert run(["diagnose", "--trend", "--config", cfg, "--sizes", "100,200"], capsys)[0] == 1


def test_module_entry_point(mar_csv):
    proc = subprocess.run([sys.executable, "-m", "ipwgee", "fit", str(mar_csv), "--family", "binomial"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "estimate" in proc.stdout
