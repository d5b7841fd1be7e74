"""Tests for configuration handling, orchestration, and the CLI."""

import json

import pytest

from singcert.cli import main
from singcert.pipeline import (
    ConfigError,
    DEFAULT_CONFIG,
    emit,
    load_config,
    run_check,
    run_sweep,
)

FAST = {
    "certificate": {"n_samples": 16, "grid_points": 9},
    "falsifier": {"n_samples": 6},
    "galerkin_k": [8],
}


def test_defaults_materialized():
    cfg = load_config({})
    assert cfg == DEFAULT_CONFIG
    cfg = load_config({"horizon": 2.0})
    assert cfg["horizon"] == 2.0
    assert cfg["dt"] == DEFAULT_CONFIG["dt"]
    assert cfg["falsifier"]["n_samples"] == 200


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError):
        load_config({"horizonn": 1.0})
    with pytest.raises(ConfigError):
        load_config({"system": {"kind": "dubins", "frobnicate": 1}})
    with pytest.raises(ConfigError):
        load_config({"falsifier": {"samples": 10}})


def test_bad_values_rejected():
    with pytest.raises(ConfigError):
        load_config({"dt": -0.1})
    with pytest.raises(ConfigError):
        load_config({"system": {"kind": "dubins", "N": 2}})


def test_empty_checks_is_echo_only():
    report = run_check({"checks": []})
    assert report["verdict"] == "no checks requested"
    assert report["stages"] == {}
    assert report["config"]["system"]["N"] == 3


def test_flipped_drift_fails_conditions_and_skips(tmp_path):
    report = run_check({"system": {"kind": "dubins", "drift_sign": -1},
                        **FAST})
    assert report["stages"]["conditions"]["status"] == "failed"
    names = report["stages"]["conditions"]["report"]["checks"]
    assert not names["sglc"]["passed"]
    for later in ("coercivity", "certificate", "falsifier"):
        assert report["stages"][later]["status"] == "skipped"
    assert report["verdict"] == "not certified"


def test_full_run_certified():
    report = run_check(FAST)
    assert report["verdict"] == "optimality certified"
    assert report["stages"]["coercivity"]["verdicts_agree"]
    assert set(report["timings_s"]) == set(report["config"]["checks"])
    assert all(v == 0.0 for v in report["timings_s"].values())


def test_report_byte_deterministic():
    a = emit(run_check(FAST))
    b = emit(run_check(FAST))
    assert a == b


def test_emit_round_trip(tmp_path):
    report = run_check({"checks": ["conditions"]})
    path = tmp_path / "report.json"
    text = emit(report, path)
    assert path.read_text() == text
    assert json.loads(text) == json.loads(emit(report))


def test_csv_artifacts(tmp_path):
    csv_dir = tmp_path / "csv"
    run_check({**FAST, "output": {"csv_dir": str(csv_dir)}})
    for name in ("trajectory.csv", "det_trace.csv", "flow.csv", "sweep.csv"):
        assert (csv_dir / name).exists(), name


def test_sweep_empty_values():
    assert run_sweep({}, "N", []) == []


def test_sweep_horizon():
    reports = run_sweep({**FAST, "checks": ["coercivity"]},
                        "horizon", [0.5, 1.0])
    assert len(reports) == 2
    for rep, t in zip(reports, (0.5, 1.0)):
        assert rep["config"]["horizon"] == t
        assert rep["stages"]["coercivity"]["status"] == "passed"
        assert rep["stages"]["coercivity"]["galerkin"]["margin"] > 0


def test_sweep_unknown_parameter():
    with pytest.raises(ConfigError):
        run_sweep({}, "coolness", [1])


def test_cli_dubins_emit_config(capsys):
    code = main(["dubins", "--N", "4", "--space", "sphere", "--emit-config"])
    out = capsys.readouterr().out
    assert code == 0
    cfg = json.loads(out)
    assert cfg["system"]["N"] == 4
    assert cfg["system"]["space_form"] == "sphere"


def test_cli_check_certified(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({**FAST, "checks": ["conditions"]}))
    code = main(["check", str(cfg_path)])
    report = json.loads(capsys.readouterr().out)
    assert code == 2    # conditions alone do not certify optimality
    assert report["stages"]["conditions"]["status"] == "passed"
    assert report["verdict"] == "checks passed, not certified"


def test_cli_check_exit_codes(tmp_path, capsys):
    good = tmp_path / "good.json"
    good.write_text(json.dumps(FAST))
    assert main(["check", str(good)]) == 0
    capsys.readouterr()
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**FAST,
                               "system": {"kind": "dubins",
                                          "drift_sign": -1}}))
    assert main(["check", str(bad)]) == 2
    capsys.readouterr()


def test_cli_operational_errors(tmp_path, capsys):
    assert main(["check", str(tmp_path / "missing.json")]) == 1
    junk = tmp_path / "junk.json"
    junk.write_text("{not json")
    assert main(["check", str(junk)]) == 1
    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps({"wat": 1}))
    assert main(["check", str(unknown)]) == 1
    capsys.readouterr()


def test_cli_sweep(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({**FAST, "checks": ["coercivity"]}))
    code = main(["sweep", str(cfg_path), "--param", "K", "--values", "8,16"])
    reports = json.loads(capsys.readouterr().out)
    assert code == 2    # coercivity alone does not certify
    assert len(reports) == 2
    assert [r["config"]["galerkin_k"] for r in reports] == [[8], [16]]


def test_verdict_hierarchy_mixed_stages():
    report = run_check({**FAST, "checks": ["conditions", "coercivity"]})
    assert report["verdict"] == "checks passed, not certified"
    full = run_check(FAST)
    assert full["verdict"] == "optimality certified"
