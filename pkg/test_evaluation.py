#!/usr/bin/env python3
"""
Evaluation harness tests: gain arithmetic, test-set sharing, tuning,
sweep cells and report files.
"""

import math
import os
import sys
import tempfile
from unittest import mock

import pandas as pd

import evaluation
from baselines import HistoricalPolicy
from errors import ConfigError, GainError, TuningError
from evaluation import (MARGIN_COLUMNS, MethodSpec, TrainingBundle, aggregate_rows, build_test_set, evaluate_policy,
                        gain, plot_data, run_cell, sample_candidates, sequential_margins, sweep, trend_counts, tune,
                        write_reports)
from experiment_config import Cell, ExperimentConfig
from scope import InterventionPolicy

CELL = Cell(delta=0.95, n_train=100, n_decision_points=2, seed=0)


def _config(**overrides) -> ExperimentConfig:
    data = {"simulator": {"name": "filecall"}, "axes": {"delta": [0.95], "n_train": [100], "n_decision_points": [2]},
            "methods": ["random", "bank"], "base_models": ["ridge"], "n_test": 50, "seeds": 1}
    data.update(overrides)
    return ExperimentConfig.from_dict(data)


class AlwaysWait(InterventionPolicy):
    method = "always-wait"

    def recommend_batch(self, prefixes, k):
        self.check_prefixes(prefixes, k)
        return ["wait"] * len(prefixes)


def test_gain_examples():
    assert gain(80.0, 100.0, "min") == 20.0
    assert gain(100.0, 100.0, "min") == 0.0
    assert gain(110.0, 100.0, "max") == 10.0
    assert gain(-40.0, -50.0, "max") == 20.0
    for args in ((1.0, 0.0, "min"), (1.0, 2.0, "up")):
        try:
            gain(*args)
            raise AssertionError(f"{args} should be rejected")
        except GainError:
            pass


def test_policy_totals_on_known_rollouts():
    config = _config(axes={"delta": [1.0], "n_train": [100], "n_decision_points": [2]})
    bundle = TrainingBundle.build(config, Cell(delta=1.0, n_train=100, n_decision_points=2, seed=0))
    sim, simulated = bundle.simulator, bundle.simulated
    bank_total = evaluate_policy(HistoricalPolicy(sim), simulated.cases, sim)
    assert math.isclose(bank_total, sum(simulated.outcomes.values()))
    wait_total = evaluate_policy(AlwaysWait(sim.decision_specs(), sim.direction), simulated.cases, sim)
    assert math.isclose(wait_total, sum(case.draws["base_tpt"] for case in simulated.cases))


def test_method_spec_parsing():
    assert MethodSpec.parse("scope-ra") == MethodSpec(name="scope-ra", family="scope", learner="RA")
    assert MethodSpec.parse("sep-t").uses_base_model
    assert not MethodSpec.parse("kmeans-q").uses_base_model
    for bad in ("scope-x", "bandit"):
        try:
            MethodSpec.parse(bad)
            raise AssertionError(f"{bad} should be rejected")
        except ConfigError as exc:
            assert exc.key == "methods"


def test_test_cases_shared_across_training_axes():
    config = _config()
    _, cases = build_test_set(config, CELL)
    _, same = build_test_set(config, Cell(delta=0.95, n_train=400, n_decision_points=2, seed=7))
    _, other = build_test_set(config, Cell(delta=0.9, n_train=100, n_decision_points=2, seed=0))
    assert len(cases) == 50 and cases == same
    assert cases != other


def test_validation_split_holds_out_last_cases():
    bundle = TrainingBundle.build(_config(), CELL)
    train_part, valid_cases = bundle.validation_split(0.2)
    ids = [case.case_id for case in bundle.simulated.cases]
    assert [case.case_id for case in valid_cases] == ids[-20:]
    assert train_part.case_ids() == ids[:80]


def test_sample_candidates():
    space = {"b": [1, 2], "a": [0.1, 0.2]}
    whole = sample_candidates(space, 10, seed=0)
    assert len(whole) == 4 and len({tuple(sorted(c.items())) for c in whole}) == 4
    assert all(list(c) == ["a", "b"] for c in whole)
    assert sample_candidates(space, 2, seed=3) == sample_candidates(space, 2, seed=3)
    for bad_space, n_trials in (({}, 1), ({"a": []}, 1), (space, 0)):
        try:
            sample_candidates(bad_space, n_trials, seed=0)
            raise AssertionError("invalid tuning request should be rejected")
        except TuningError:
            pass


def test_tune_single_trial_and_ties():
    bundle = TrainingBundle.build(_config(), CELL)
    method = MethodSpec.parse("scope-s")
    single = tune(bundle, method, "ridge", space={"l2": [0.5, 5.0]}, n_trials=1, seed=0)
    assert len(single.trials) == 1
    assert single.best_params == single.trials[0]["params"]
    tied = tune(bundle, method, "ridge", space={"l2": [1.0, 1.0]}, n_trials=2, seed=0)
    assert tied.trials[0]["score"] == tied.trials[1]["score"]
    assert tied.best_params == tied.trials[0]["params"]


def test_tune_picks_exact_tabular_on_toy():
    config = ExperimentConfig.from_dict({
        "simulator": {"name": "toy", "params": {"instance": "two_context"}},
        "axes": {"delta": [0.0], "n_train": [200], "n_decision_points": [2]},
        "methods": ["scope-s"], "base_models": ["tabular"], "n_test": 20, "seeds": 1})
    bundle = TrainingBundle.build(config, Cell(delta=0.0, n_train=200, n_decision_points=2, seed=0))
    # decimals=-1 rounds every feature to zero, so the policy always takes the first action
    result = tune(bundle, MethodSpec.parse("scope-s"), "tabular", space={"decimals": [-1, 9]}, n_trials=2, seed=0)
    assert result.best_params == {"decimals": 9}
    scores = {t["params"]["decimals"]: t["reward"] for t in result.trials}
    assert scores[9] > scores[-1]


def test_tune_skips_failed_trials():
    bundle = TrainingBundle.build(_config(), CELL)
    method = MethodSpec.parse("scope-s")
    original = evaluation.train_policy

    def flaky(bundle, method, model_kind="", params=None, dataset=None):
        if params == {"l2": 5.0}:
            raise RuntimeError("solver blew up")
        return original(bundle, method, model_kind, params, dataset=dataset)

    with mock.patch("evaluation.train_policy", side_effect=flaky):
        result = tune(bundle, method, "ridge", space={"l2": [0.5, 5.0]}, n_trials=2, seed=0)
    assert result.best_params == {"l2": 0.5}
    assert len(result.trials) == 1
    assert result.failed == [{"params": {"l2": 5.0}, "error": "RuntimeError", "message": "solver blew up"}]
    with mock.patch("evaluation.train_policy", side_effect=RuntimeError("down")):
        try:
            tune(bundle, method, "ridge", space={"l2": [0.5, 5.0]}, n_trials=2, seed=0)
            raise AssertionError("tuning with no successful trial should fail")
        except TuningError as exc:
            assert "All 2 tuning trials" in exc.message and "RuntimeError" in exc.message


def test_run_cell_contains_unexpected_exceptions():
    with mock.patch("evaluation.TrainingBundle.build", side_effect=ValueError("bad cell")):
        result = run_cell(_config(), CELL)
    assert [(f["method"], f["error"]) for f in result.failures] == [("", "ValueError")]
    assert len(result.rows) == 2 and all(math.isnan(row["total_kpi"]) for row in result.rows)

    original = evaluation.fit_method

    def flaky(bundle, method, model_kind=""):
        if method.name == "random":
            raise KeyError("random")
        return original(bundle, method, model_kind)

    with mock.patch("evaluation.fit_method", side_effect=flaky):
        result = run_cell(_config(), CELL)
    assert [(f["method"], f["error"]) for f in result.failures] == [("random", "KeyError")]
    rows = {row["method"]: row for row in result.rows}
    assert math.isnan(rows["random"]["gain_pct"]) and rows["bank"]["gain_pct"] == 0.0


def test_sequential_margins_and_trend_counts():
    records = [("scope-s", "S", 2, 3.0), ("sep-s", "S", 2, 1.0), ("scope-s", "S", 4, 5.0), ("sep-s", "S", 4, 1.5),
               ("scope-t", "T", 2, 2.0), ("sep-t", "T", 2, 2.5), ("scope-ra", "RA", 2, 1.0), ("bank", "", 2, 0.0)]
    aggregate = pd.DataFrame([{"method": m, "learner": learner, "base_model": "" if m == "bank" else "ridge",
                               "delta": 0.95, "n_train": 100, "n_decision_points": K, "mean_gain": g,
                               "std_err": 0.0, "n_seeds": 1} for m, learner, K, g in records])
    margins = sequential_margins(aggregate)
    assert list(margins.columns) == MARGIN_COLUMNS
    assert [(row.learner, row.n_decision_points, row.margin) for row in margins.itertuples()] == \
        [("S", 2, 2.0), ("S", 4, 3.5), ("T", 2, -0.5)]
    assert trend_counts(margins) == {"n_margin_cells": 3, "scope_ge_sep_cells": 2, "n_margin_groups": 1,
                                     "margin_grows_with_k": 1}


def test_sweep_reports_margins():
    config = _config(axes={"delta": [0.95], "n_train": [100], "n_decision_points": [2, 3]},
                     methods=["scope-s", "sep-s", "bank"])
    report = sweep(config)
    assert len(report.margins) == 2
    summary = report.summary()
    assert summary["n_margin_cells"] == 2 and summary["n_margin_groups"] == 1
    with tempfile.TemporaryDirectory() as directory:
        names = sorted(os.path.basename(p) for p in write_reports(report, directory))
        margins = pd.read_csv(os.path.join(directory, "margins.csv"))
    assert "margins.csv" in names
    assert list(margins["n_decision_points"]) == [2, 3]


def test_run_cell_with_upper_bound():
    config = _config(methods=["scope-s", "bank", "upper-bound"])
    result = run_cell(config, CELL)
    assert not result.failures and result.dominance_violations == 0
    rows = {row["method"]: row for row in result.rows}
    assert set(rows) == {"scope-s", "bank", "upper-bound"}
    assert rows["bank"]["gain_pct"] == 0.0
    assert rows["upper-bound"]["total_kpi"] <= rows["bank"]["total_kpi"]
    assert rows["scope-s"]["base_model"] == "ridge" and rows["bank"]["base_model"] == ""


def test_random_policy_loses_to_bank_under_full_confounding():
    config = _config(axes={"delta": [1.0], "n_train": [100], "n_decision_points": [2]})
    result = run_cell(config, Cell(delta=1.0, n_train=100, n_decision_points=2, seed=0))
    rows = {row["method"]: row for row in result.rows}
    assert rows["bank"]["gain_pct"] == 0.0
    assert rows["random"]["gain_pct"] < 0.0


def test_run_cell_records_failures():
    config = _config(methods=["bank", "upper-bound"], enumeration_cap=2)
    result = run_cell(config, CELL)
    assert [f["method"] for f in result.failures] == ["upper-bound"]
    assert result.failures[0]["error"] == "SimulationError"
    rows = {row["method"]: row for row in result.rows}
    assert math.isnan(rows["upper-bound"]["total_kpi"]) and math.isnan(rows["upper-bound"]["gain_pct"])
    assert rows["bank"]["total_kpi"] > 0


def test_sweep_row_counts_and_plot_data():
    config = _config(axes={"delta": [0.9, 0.95], "n_train": [100], "n_decision_points": [2]}, seeds=3)
    report = sweep(config)
    assert len(report.rows) == 12
    assert len(report.aggregate) == 4
    assert report.failures.empty
    bank = report.aggregate[report.aggregate["method"] == "bank"]
    assert (bank["mean_gain"] == 0.0).all() and (bank["n_seeds"] == 3).all()
    assert list(report.plot_data) == ["delta"]
    assert list(report.plot_data["delta"]["x"]) == [0.9, 0.9, 0.95, 0.95]


def test_aggregate_standard_error():
    rows = pd.DataFrame({"method": ["m"] * 4 + ["n"], "learner": [""] * 5, "base_model": [""] * 5,
                         "delta": [0.9] * 5, "n_train": [100] * 5, "n_decision_points": [2] * 5,
                         "seed": [0, 1, 2, 3, 0], "total_kpi": [1.0] * 5,
                         "gain_pct": [1.0, 2.0, 3.0, math.nan, 4.0]})
    aggregate = aggregate_rows(rows).set_index("method")
    assert aggregate.loc["m", "mean_gain"] == 2.0
    assert math.isclose(aggregate.loc["m", "std_err"], 1.0 / math.sqrt(3))
    assert aggregate.loc["m", "n_seeds"] == 3
    assert aggregate.loc["n", "std_err"] == 0.0
    series = plot_data(aggregate.reset_index(), "delta")
    assert set(series["panel"]) == {"n_train=100,n_decision_points=2"}


def test_reports_are_reproducible():
    config = _config(methods=["random", "bank", "upper-bound"], seeds=2)
    contents = []
    for _ in range(2):
        with tempfile.TemporaryDirectory() as directory:
            paths = write_reports(sweep(config), directory)
            names = sorted(os.path.basename(p) for p in paths)
            assert names == ["aggregate.csv", "failures.csv", "rows.csv", "summary.json"]
            contents.append({name: open(os.path.join(directory, name), encoding="utf-8").read() for name in names})
    assert contents[0] == contents[1]
    assert contents[0]["rows.csv"].splitlines()[0].startswith("method,learner,base_model,delta")


def main():
    tests = [test_gain_examples, test_policy_totals_on_known_rollouts, test_method_spec_parsing,
             test_test_cases_shared_across_training_axes, test_validation_split_holds_out_last_cases,
             test_sample_candidates, test_tune_single_trial_and_ties, test_tune_picks_exact_tabular_on_toy,
             test_tune_skips_failed_trials, test_run_cell_contains_unexpected_exceptions,
             test_sequential_margins_and_trend_counts, test_sweep_reports_margins, test_run_cell_with_upper_bound,
             test_random_policy_loses_to_bank_under_full_confounding,
             test_run_cell_records_failures, test_sweep_row_counts_and_plot_data, test_aggregate_standard_error,
             test_reports_are_reproducible]
    print("🚀 Evaluation tests")
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
