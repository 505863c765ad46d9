#!/usr/bin/env python3
"""
Command-line tests: validate, simulate, train/evaluate round trip, selftest, exit
codes and settings precedence.
"""

import contextlib
import io
import json
import math
import os
import sys
import tempfile
from unittest import mock

import joblib
import pandas as pd

import cli
from errors import ConfigError
from evaluation import TrainingBundle
from experiment_config import ExperimentConfig, apply_environment_overrides, load_config, parse_cell, validate_config

BASE_CONFIG = {"simulator": {"name": "filecall"},
               "axes": {"delta": [0.95], "n_train": [60], "n_decision_points": [2]},
               "methods": ["random", "bank"], "base_models": ["ridge"], "n_test": 30, "seeds": 1}
CELL = "delta=0.95,n_train=60,n_decision_points=2,seed=0"


def _write_config(directory: str, **overrides) -> str:
    path = os.path.join(directory, "config.json")
    with open(path, "w", encoding="utf-8") as handle:
        json.dump({**BASE_CONFIG, **overrides}, handle)
    return path


def _run(argv):
    buffer = io.StringIO()
    with contextlib.redirect_stdout(buffer):
        code = cli.main(argv)
    return code, buffer.getvalue()


def test_validate_reports_errors_and_warnings():
    with tempfile.TemporaryDirectory() as directory:
        code, out = _run(["validate", "--config", _write_config(directory)])
        assert code == 0 and "✅" in out
        code, out = _run(["validate", "--config", _write_config(
            directory, axes={"delta": [1.2], "n_train": [60], "n_decision_points": [2]})])
        assert code == 1 and "axes.delta" in out
        code, out = _run(["validate", "--config", _write_config(directory, methods=["scope-s", "oracle"])])
        assert code == 1 and "unknown method 'oracle'" in out
        code, out = _run(["validate", "--config", _write_config(
            directory, axes={"delta": [0.95], "n_train": [60], "n_decision_points": [7]})])
        assert code == 0 and "2^7" in out and "⚠️" in out


def test_validate_reports_wrongly_typed_values():
    axes = {"n_train": [60], "n_decision_points": [2]}
    cases = [
        ({"axes": {**axes, "delta": ["abc"]}}, "axes.delta"),
        ({"axes": {**axes, "delta": [0.95], "n_train": [60.5]}}, "axes.n_train"),
        ({"hyperparameters": {"ridge": {"l2": "x"}}}, "hyperparameters.ridge"),
        ({"hyperparameters": {"mlp": {"hidden_sizes": "ab"}}}, "hyperparameters.mlp"),
        ({"hyperparameters": {"ridge": 3}}, "hyperparameters.ridge"),
        ({"hyperparameters": {"kmeans-q": {"alpha": "fast"}}}, "hyperparameters.kmeans-q.alpha"),
        ({"search_spaces": {"ridge": {"l2": [1.0, "x"]}}}, "search_spaces.ridge.l2"),
        ({"stage_models": {"2": {"kind": "ridge", "bogus": 1}}}, "stage_models.2.bogus"),
        ({"stage_models": {"2": {"kind": "ridge", "params": [1]}}}, "stage_models.2.params"),
        ({"tuning": {"enabled": "yes"}}, "tuning.enabled"),
        ({"n_test": "many"}, "n_test"),
        ({"simulator": {"name": "filecall", "params": {"cost_call": "x"}}}, "simulator.params"),
    ]
    with tempfile.TemporaryDirectory() as directory:
        for overrides, key in cases:
            path = _write_config(directory, **overrides)
            diagnostics = validate_config(path)
            assert not diagnostics.ok, overrides
            assert diagnostics.errors[0].startswith(key), (overrides, diagnostics.errors)
            code, out = _run(["validate", "--config", path])
            assert code == 1 and "❌" in out, overrides


def test_simulate_writes_log():
    with tempfile.TemporaryDirectory() as directory:
        out_dir = os.path.join(directory, "out")
        code, _ = _run(["simulate", "--config", _write_config(directory), "--out-dir", out_dir, "--cell", CELL])
        assert code == 0
        written = os.listdir(out_dir)
        assert written == ["log_filecall_d0.95_n60_K2_s0.csv"]
        with open(os.path.join(out_dir, written[0]), encoding="utf-8") as handle:
            header = handle.readline()
        assert header.startswith("case_id,activity,timestamp")


def test_train_then_evaluate():
    with tempfile.TemporaryDirectory() as directory:
        out_dir = os.path.join(directory, "out")
        config = _write_config(directory)
        code, _ = _run(["train", "--config", config, "--out-dir", out_dir, "--cell", CELL, "--method", "scope-s"])
        assert code == 0
        policy_path = os.path.join(out_dir, "policy_scope-s_ridge_d0.95_n60_K2_s0.joblib")
        assert os.path.exists(policy_path)
        code, out = _run(["evaluate", "--policy", policy_path])
        assert code == 0 and "📊" in out
        with open(os.path.join(out_dir, "evaluation.json"), encoding="utf-8") as handle:
            result = json.load(handle)
        assert result["method"] == "scope-s" and result["base_model"] == "ridge"
        assert result["n_test"] == 30 and result["n_train"] == 60
        assert set(result) >= {"total_kpi", "bank_total_kpi", "gain_pct"}


def test_simulate_full_confounding_follows_bank_rule():
    axes = {"delta": [1.0], "n_train": [10], "n_decision_points": [2]}
    cell = "delta=1.0,n_train=10,n_decision_points=2,seed=0"
    with tempfile.TemporaryDirectory() as directory:
        out_dir = os.path.join(directory, "out")
        code, _ = _run(["simulate", "--config", _write_config(directory, axes=axes), "--out-dir", out_dir,
                        "--cell", cell])
        assert code == 0
        frame = pd.read_csv(os.path.join(out_dir, "log_filecall_d1_n10_K2_s0.csv"))
    assert frame["case_id"].nunique() == 10
    bundle = TrainingBundle.build(ExperimentConfig.from_dict({**BASE_CONFIG, "axes": axes}), parse_cell(cell))
    sim, simulated = bundle.simulator, bundle.simulated
    for case in simulated.cases:
        actions = simulated.actions[case.case_id]
        for k in range(1, 3):
            assert actions[k - 1] == sim.historical_action(sim.observe(case, list(actions[:k - 1]), k), k)
    logged = frame.groupby("case_id", sort=False)["outcome"].first()
    assert set(logged.index) == set(simulated.outcomes)
    assert all(math.isclose(logged[case_id], kpi) for case_id, kpi in simulated.outcomes.items())


def test_sweep_restricted_to_one_cell():
    axes = {"delta": [0.9, 0.95], "n_train": [40], "n_decision_points": [2]}
    with tempfile.TemporaryDirectory() as directory:
        out_dir = os.path.join(directory, "out")
        code, out = _run(["sweep", "--config", _write_config(directory, axes=axes), "--out-dir", out_dir,
                          "--cell", "delta=0.95,n_train=40,n_decision_points=2,seed=0", "--jobs", "1"])
        assert code == 0, out
        rows = pd.read_csv(os.path.join(out_dir, "rows.csv"))
    assert len(rows) == 2 and set(rows["delta"]) == {0.95}
    assert set(rows["method"]) == {"random", "bank"}


def test_exit_codes():
    with tempfile.TemporaryDirectory() as directory:
        config = _write_config(directory)
        assert _run(["train", "--config", os.path.join(directory, "missing.json"), "--method", "random"])[0] == 1
        assert _run(["train", "--config", config, "--method", "upper-bound"])[0] == 1
        assert _run(["train", "--config", config, "--method", "scope-q"])[0] == 1
        assert _run(["simulate", "--config", config, "--cell", "delta=0.95"])[0] == 1
        bogus = os.path.join(directory, "bogus.joblib")
        joblib.dump({"format_version": 0}, bogus)
        assert _run(["evaluate", "--policy", bogus])[0] == 2


def test_selftest_passes():
    code, out = _run(["selftest"])
    assert code == 0, out
    assert "📊 8/8 checks passed" in out and "❌" not in out


def test_parse_cell():
    cell = parse_cell("delta=0.9, n_train=500, n_decision_points=3, seed=4")
    assert (cell.delta, cell.n_train, cell.n_decision_points, cell.seed) == (0.9, 500, 3, 4)
    for bad in ("delta=0.9", "delta=0.9,n_train=x,n_decision_points=3,seed=0", "alpha=1,delta=0.9"):
        try:
            parse_cell(bad)
            raise AssertionError(f"{bad} should be rejected")
        except ConfigError as exc:
            assert exc.key.startswith("cell")


def test_settings_precedence():
    config = ExperimentConfig.from_dict(BASE_CONFIG)
    overridden = apply_environment_overrides(config, {"SCOPE_OUT_DIR": "env_out", "SCOPE_JOBS": "3"})
    assert (overridden.out_dir, overridden.jobs) == ("env_out", 3)
    assert config.out_dir == "results" and config.jobs == 1
    try:
        apply_environment_overrides(config, {"SCOPE_JOBS": "many"})
        raise AssertionError("non-integer jobs should be rejected")
    except ConfigError as exc:
        assert exc.key == "SCOPE_JOBS"
    with tempfile.TemporaryDirectory() as directory:
        args = cli.build_parser().parse_args(["sweep", "--config", _write_config(directory), "--jobs", "2",
                                              "--seed", "9"])
        with mock.patch.dict(os.environ, {"SCOPE_OUT_DIR": "env_out", "SCOPE_JOBS": "4"}):
            resolved = cli._resolve_config(args)
    assert (resolved.out_dir, resolved.jobs, resolved.master_seed) == ("env_out", 2, 9)


def test_config_round_trip_and_strict_keys():
    config = ExperimentConfig.from_dict({**BASE_CONFIG, "stage_models": {"2": {"kind": "boosted_trees"}},
                                         "hyperparameters": {"ridge": {"l2": 2.0}}})
    assert ExperimentConfig.from_dict(json.loads(config.to_json())) == config
    spec = config.model_spec("ridge", {"l2": 3.0})
    assert spec.params == {"l2": 3.0} and spec.label() == "ridge[k2=boosted_trees]"
    for bad, key in (({"method": ["bank"]}, "method"), ({"axes": {"deltas": [0.9]}}, "axes.deltas")):
        try:
            ExperimentConfig.from_dict(bad)
            raise AssertionError(f"{bad} should be rejected")
        except ConfigError as exc:
            assert exc.key == key


def test_shipped_configs_validate():
    here = os.path.dirname(os.path.abspath(__file__))
    for name in ("example_config.json", "filecall_trend_config.json", "filecall_full_config.json"):
        diagnostics = validate_config(os.path.join(here, name))
        assert diagnostics.ok, (name, diagnostics.errors)
    trend = load_config(os.path.join(here, "filecall_trend_config.json"))
    assert len(trend.axes.delta) * len(trend.axes.n_decision_points) * trend.seeds == 45
    assert trend.n_test == 1000 and trend.axes.n_train == [2000] and trend.base_models == ["boosted_trees"]
    assert {"scope-s", "sep-s", "bank", "upper-bound"} <= set(trend.methods) and not trend.tuning.enabled
    full = load_config(os.path.join(here, "filecall_full_config.json"))
    assert full.n_test == 1000 and full.seeds == 10


def main():
    tests = [test_validate_reports_errors_and_warnings, test_validate_reports_wrongly_typed_values,
             test_simulate_writes_log, test_simulate_full_confounding_follows_bank_rule, test_train_then_evaluate,
             test_sweep_restricted_to_one_cell, test_exit_codes, test_selftest_passes, test_parse_cell,
             test_settings_precedence, test_config_round_trip_and_strict_keys, test_shipped_configs_validate]
    print("🚀 CLI tests")
    print("=" * 60)
    passed = 0
    for test in tests:
        try:
            test()
            print(f"  ✅ PASS: {test.__name__}")
            passed += 1
        except Exception as e:
            print(f"  ❌ FAIL: {test.__name__}: {e}")
    print(f"📊 {passed}/{len(tests)} passed")
    return passed == len(tests)


if __name__ == "__main__":
    sys.exit(0 if main() else 1)
