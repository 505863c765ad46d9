#!/usr/bin/env python3
"""
=============================================================================
POLICY EVALUATION AND EXPERIMENT SWEEPS
=============================================================================

Evaluates intervention policies by forward rollouts through a simulator and
reports the gain over the historical (bank) policy.

KEY FEATURES:
• ROLLOUTS: at every decision point the prefix realised under the earlier
  recommended actions is observed and handed to the policy
• GAIN: % improvement of the total KPI over the bank total, normalised by
  |bank total|
• TUNING: seeded random search over a config search space, scored on the
  last validation_fraction of the training cases; the winner is refit
• SWEEPS: (delta x n_train x K x seed) cells run as joblib jobs, each one
  evaluating every method on the test cases shared by its (delta, K) group
• REPORTS: rows.csv, aggregate.csv, failures.csv, plot_data_<axis>.csv,
  margins.csv (scope-X minus sep-X mean gain, when both ran) and
  summary.json with fixed float formatting

ARCHITECTURE:
• MethodSpec: parses method names (scope-s, sep-ra, kmeans-q, ...)
• TrainingBundle: simulator + training log + test cases for one cell
• fit_method(): tuning (optional) and training, shared by run_cell and the
  CLI train command
=============================================================================
"""

import itertools
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from baselines import HistoricalPolicy, RandomPolicy, train_kmeans_q, train_sep, upper_bound
from errors import ConfigError, GainError, ScopeLabError, TuningError
from event_log import Dataset, build_dataset
from experiment_config import Cell, ExperimentConfig, delta_key, derive_seed
from scope import InterventionPolicy, train
from simulators import ProcessSimulator, SimCase, SimulatedLog, create_simulator

logger = logging.getLogger(__name__)

ROW_COLUMNS = ["method", "learner", "base_model", "delta", "n_train", "n_decision_points", "seed", "total_kpi",
               "gain_pct"]
GROUP_COLUMNS = ["method", "learner", "base_model", "delta", "n_train", "n_decision_points"]
AGGREGATE_COLUMNS = GROUP_COLUMNS + ["mean_gain", "std_err", "n_seeds"]
FAILURE_COLUMNS = ["delta", "n_train", "n_decision_points", "seed", "method", "base_model", "error", "message"]
PLOT_COLUMNS = ["panel", "x", "method", "base_model", "mean_gain", "std_err"]
MARGIN_COLUMNS = ["learner", "base_model", "delta", "n_train", "n_decision_points", "scope_gain", "sep_gain",
                  "margin"]
FLOAT_FORMAT = "%.6f"
KMEANS_TRIAL_FACTOR = 2


# =============================================================================
# Rollouts and gain
# =============================================================================

def rollout_policy(policy: InterventionPolicy, cases: Sequence[SimCase],
                   simulator: ProcessSimulator) -> List[float]:
    """Per-case KPI when every decision is taken by `policy`"""
    actions: List[List[str]] = [[] for _ in cases]
    for k in range(1, simulator.n_decision_points + 1):
        prefixes = [simulator.observe(case, taken, k) for case, taken in zip(cases, actions)]
        for taken, action in zip(actions, policy.recommend_batch(prefixes, k)):
            taken.append(action)
    return [simulator.rollout(case, taken)[1] for case, taken in zip(cases, actions)]


def evaluate_policy(policy: InterventionPolicy, cases: Sequence[SimCase], simulator: ProcessSimulator) -> float:
    """Total KPI of the policy over the cases"""
    total = float(sum(rollout_policy(policy, cases, simulator)))
    logger.debug(f"{policy.method}: total KPI {total:.4f} over {len(cases)} cases")
    return total


def gain(policy_total: float, bank_total: float, direction: str) -> float:
    """Percent improvement over the bank total"""
    if bank_total == 0:
        raise GainError("Gain is undefined for a bank total of 0")
    if direction == "max":
        return 100.0 * (policy_total - bank_total) / abs(bank_total)
    if direction == "min":
        return 100.0 * (bank_total - policy_total) / abs(bank_total)
    raise GainError(f"direction must be 'max' or 'min', got {direction!r}")


# =============================================================================
# Methods and training bundles
# =============================================================================

@dataclass(frozen=True)
class MethodSpec:
    """A parsed method name"""
    name: str
    family: str
    learner: str = ""

    @classmethod
    def parse(cls, name: str) -> 'MethodSpec':
        if name in ("kmeans-q", "random", "bank", "upper-bound"):
            return cls(name=name, family=name)
        family, _, learner = name.partition("-")
        if family in ("scope", "sep") and learner in ("s", "t", "ra"):
            return cls(name=name, family=family, learner=learner.upper())
        raise ConfigError(f"Unknown method '{name}'", key="methods")

    @property
    def uses_base_model(self) -> bool:
        return self.family in ("scope", "sep")


def build_test_set(config: ExperimentConfig, cell: Cell) -> Tuple[ProcessSimulator, List[SimCase]]:
    """Simulator of a cell and the test cases shared by its (delta, K) group"""
    simulator = create_simulator(config.sim_config(cell.delta, cell.n_decision_points, cell.seed))
    test_seed = derive_seed(config.master_seed, "test", delta_key(cell.delta), cell.n_decision_points)
    return simulator, simulator.sample_cases(config.n_test, test_seed)


@dataclass
class TrainingBundle:
    """Everything a cell needs: simulator, training log, dataset and test cases"""
    config: ExperimentConfig
    cell: Cell
    simulator: ProcessSimulator
    simulated: SimulatedLog
    dataset: Dataset
    test_cases: List[SimCase]

    @classmethod
    def build(cls, config: ExperimentConfig, cell: Cell) -> 'TrainingBundle':
        simulator, test_cases = build_test_set(config, cell)
        train_seed = derive_seed(config.master_seed, "simulation", delta_key(cell.delta), cell.n_decision_points,
                                 cell.n_train, cell.seed)
        simulated = simulator.generate_log(cell.n_train, stream_seed=train_seed)
        dataset = build_dataset(simulated.log, simulator.decision_specs())
        return cls(config=config, cell=cell, simulator=simulator, simulated=simulated, dataset=dataset,
                   test_cases=test_cases)

    @property
    def direction(self) -> str:
        return self.simulator.direction

    def seed(self, stream: str) -> int:
        cell = self.cell
        return derive_seed(self.config.master_seed, stream, delta_key(cell.delta), cell.n_decision_points,
                           cell.n_train, cell.seed)

    def validation_split(self, fraction: float) -> Tuple[Dataset, List[SimCase]]:
        """Training part of the dataset and the held-out SimCases (last cases by generation order)"""
        cases = self.simulated.cases
        n_valid = min(max(1, int(round(len(cases) * fraction))), len(cases) - 1)
        if n_valid < 1:
            raise TuningError("Tuning needs at least 2 training cases")
        train_ids = [case.case_id for case in cases[:-n_valid]]
        return self.dataset.restrict(train_ids), list(cases[-n_valid:])


def train_policy(bundle: TrainingBundle, method: MethodSpec, model_kind: str = "",
                 params: Optional[Dict[str, Any]] = None, dataset: Optional[Dataset] = None) -> InterventionPolicy:
    """Train one method on the bundle's dataset (or a restriction of it)"""
    config = bundle.config
    dataset = dataset if dataset is not None else bundle.dataset
    if method.uses_base_model:
        trainer = train if method.family == "scope" else train_sep
        return trainer(dataset, learner_kind=method.learner, model_spec=config.model_spec(model_kind, params),
                       direction=bundle.direction, seed=bundle.seed("model"), encoding=config.encoding.mode,
                       ra_variant=config.ra_variant, max_length=config.encoding.max_length)
    if method.family == "kmeans-q":
        kmeans_params = {**config.hyperparameters.get("kmeans-q", {}), **(params or {})}
        return train_kmeans_q(dataset, direction=bundle.direction, seed=bundle.seed("qlearning"),
                               encoding=config.encoding.mode, max_length=config.encoding.max_length,
                               **kmeans_params)
    if method.family == "random":
        return RandomPolicy(bundle.simulator.decision_specs(), bundle.direction, seed=bundle.seed("policy"))
    if method.family == "bank":
        return HistoricalPolicy(bundle.simulator)
    raise ConfigError(f"Method '{method.name}' does not produce a policy", key="methods")


# =============================================================================
# Tuning
# =============================================================================

@dataclass
class TuningResult:
    best_params: Dict[str, Any]
    trials: List[Dict[str, Any]] = field(default_factory=list)
    failed: List[Dict[str, Any]] = field(default_factory=list)


def candidate_grid(space: Dict[str, List[Any]]) -> List[Dict[str, Any]]:
    """Cartesian grid over a search space, parameters in sorted order"""
    if not space or any(not values for values in space.values()):
        raise TuningError("Empty search space")
    names = sorted(space)
    return [dict(zip(names, values)) for values in itertools.product(*(space[n] for n in names))]


def sample_candidates(space: Dict[str, List[Any]], n_trials: int, seed: int) -> List[Dict[str, Any]]:
    """n_trials distinct grid points in a seeded order; the whole grid when it is smaller"""
    if n_trials < 1:
        raise TuningError(f"n_trials must be >= 1, got {n_trials}")
    grid = candidate_grid(space)
    order = np.random.default_rng(seed).permutation(len(grid))[:n_trials]
    return [grid[i] for i in order]


def _minmax(values: Sequence[float]) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    spread = values.max() - values.min()
    return np.zeros_like(values) if spread <= 0 else (values - values.min()) / spread


def tune(bundle: TrainingBundle, method: MethodSpec, model_kind: str = "",
         space: Optional[Dict[str, List[Any]]] = None, n_trials: Optional[int] = None,
         seed: Optional[int] = None) -> TuningResult:
    """
    Random search on a validation split of the training cases.

    Policies are scored by the validation total KPI (direction-aware).
    KMeans-Q gets twice the trials and is scored by equal parts min-max
    normalised silhouette and validation reward. The first trial wins ties.
    A trial that raises is logged and skipped; TuningError when all do.
    """
    config = bundle.config
    key = "kmeans-q" if method.family == "kmeans-q" else model_kind
    space = space if space is not None else config.search_spaces.get(key, {})
    n_trials = n_trials if n_trials is not None else config.tuning.n_trials
    if method.family == "kmeans-q":
        n_trials *= KMEANS_TRIAL_FACTOR
    seed = seed if seed is not None else bundle.seed("tuning")
    candidates = sample_candidates(space, n_trials, seed)

    train_part, valid_cases = bundle.validation_split(config.tuning.validation_fraction)
    sign = 1.0 if bundle.direction == "max" else -1.0
    trials: List[Dict[str, Any]] = []
    failed: List[Dict[str, Any]] = []
    for index, params in enumerate(candidates):
        try:
            policy = train_policy(bundle, method, model_kind, params, dataset=train_part)
            reward = sign * evaluate_policy(policy, valid_cases, bundle.simulator)
        except Exception as exc:
            logger.warning(f"Tuning {method.name}/{key} trial {index + 1}/{len(candidates)}: {params} failed: {exc}")
            failed.append({"params": params, "error": type(exc).__name__, "message": str(exc)})
            continue
        trials.append({"params": params, "reward": reward, "silhouette": getattr(policy, "silhouette", None)})
        logger.info(f"Tuning {method.name}/{key} trial {index + 1}/{len(candidates)}: {params} -> {reward:.4f}")
    if not trials:
        raise TuningError(f"All {len(candidates)} tuning trials of {method.name}/{key} failed; "
                          f"last error {failed[-1]['error']}: {failed[-1]['message']}")

    if method.family == "kmeans-q":
        scores = 0.5 * _minmax([t["silhouette"] for t in trials]) + 0.5 * _minmax([t["reward"] for t in trials])
    else:
        scores = np.array([t["reward"] for t in trials])
    best = 0
    for index, score in enumerate(scores):
        trials[index]["score"] = float(score)
        if score > scores[best]:
            best = index
    logger.info(f"Tuning {method.name}/{key}: best {trials[best]['params']}")
    return TuningResult(best_params=dict(trials[best]["params"]), trials=trials, failed=failed)


def fit_method(bundle: TrainingBundle, method: MethodSpec,
               model_kind: str = "") -> Tuple[InterventionPolicy, Dict[str, Any]]:
    """Optional tuning, then training on the full training set"""
    params: Dict[str, Any] = {}
    tunable = method.uses_base_model or method.family == "kmeans-q"
    key = "kmeans-q" if method.family == "kmeans-q" else model_kind
    if tunable and bundle.config.tuning.enabled and bundle.config.search_spaces.get(key):
        params = tune(bundle, method, model_kind).best_params
    return train_policy(bundle, method, model_kind, params), params


# =============================================================================
# Sweep cells
# =============================================================================

@dataclass
class CellResult:
    rows: List[Dict[str, Any]] = field(default_factory=list)
    failures: List[Dict[str, Any]] = field(default_factory=list)
    dominance_violations: int = 0


def _beats(total: float, bound: float, direction: str) -> bool:
    tolerance = 1e-9 * max(1.0, abs(bound))
    return total < bound - tolerance if direction == "min" else total > bound + tolerance


def _method_runs(config: ExperimentConfig, methods: Sequence[str]) -> List[Tuple[MethodSpec, str]]:
    runs = []
    for name in methods:
        method = MethodSpec.parse(name)
        kinds = config.base_models if method.uses_base_model else [""]
        runs.extend((method, kind) for kind in kinds)
    return runs


def run_cell(config: ExperimentConfig, cell: Cell, methods: Optional[Sequence[str]] = None) -> CellResult:
    """Train and evaluate every method of one sweep cell"""
    result = CellResult()
    methods = list(methods or config.methods)
    base = {"delta": cell.delta, "n_train": cell.n_train, "n_decision_points": cell.n_decision_points,
            "seed": cell.seed}

    def fail(method: str, kind: str, exc: BaseException) -> None:
        logger.error(f"Cell {base} method {method or '*'} failed: {exc}",
                     exc_info=not isinstance(exc, ScopeLabError))
        result.failures.append({**base, "method": method, "base_model": kind, "error": type(exc).__name__,
                                "message": str(exc)})

    def nan_rows(runs: Sequence[Tuple[MethodSpec, str]]) -> None:
        for method, kind in runs:
            result.rows.append({"method": method.name, "learner": method.learner, "base_model": kind, **base,
                                "total_kpi": math.nan, "gain_pct": math.nan})

    runs = _method_runs(config, methods)
    try:
        bundle = TrainingBundle.build(config, cell)
        bank_total = evaluate_policy(HistoricalPolicy(bundle.simulator), bundle.test_cases, bundle.simulator)
    except Exception as exc:
        fail("", "", exc)
        nan_rows(runs)
        return result

    bound: Optional[float] = None
    if "upper-bound" in methods:
        try:
            bound = upper_bound(bundle.simulator, bundle.test_cases, config.enumeration_cap)
        except Exception as exc:
            fail("upper-bound", "", exc)

    logger.info(f"Cell {base}: bank total {bank_total:.4f}")
    for method, kind in runs:
        total, gain_pct = math.nan, math.nan
        try:
            if method.family == "upper-bound":
                total = math.nan if bound is None else bound
            else:
                policy, _ = fit_method(bundle, method, kind)
                total = evaluate_policy(policy, bundle.test_cases, bundle.simulator)
            if not math.isnan(total):
                gain_pct = gain(total, bank_total, bundle.direction)
        except Exception as exc:
            fail(method.name, kind, exc)
        if bound is not None and method.family != "upper-bound" and not math.isnan(total) \
                and _beats(total, bound, bundle.direction):
            result.dominance_violations += 1
            logger.warning(f"Cell {base}: {method.name}/{kind} total {total} beats the upper bound {bound}")
        result.rows.append({"method": method.name, "learner": method.learner, "base_model": kind, **base,
                            "total_kpi": total, "gain_pct": gain_pct})
        logger.info(f"Cell {base}: {method.name} {kind} total {total:.4f} gain {gain_pct:.3f}%")
    return result


def sweep_cells(config: ExperimentConfig) -> List[Cell]:
    return [Cell(delta=d, n_train=n, n_decision_points=K, seed=s)
            for d, n, K, s in itertools.product(config.axes.delta, config.axes.n_train,
                                                config.axes.n_decision_points, range(config.seeds))]


@dataclass
class SweepReport:
    rows: pd.DataFrame
    aggregate: pd.DataFrame
    failures: pd.DataFrame
    dominance_violations: int
    plot_data: Dict[str, pd.DataFrame] = field(default_factory=dict)
    margins: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=MARGIN_COLUMNS))

    def summary(self) -> Dict[str, Any]:
        summary = {"n_rows": int(len(self.rows)), "n_aggregate_rows": int(len(self.aggregate)),
                   "n_failures": int(len(self.failures)), "dominance_violations": int(self.dominance_violations)}
        if not self.margins.empty:
            summary.update(trend_counts(self.margins))
        return summary


def aggregate_rows(rows: pd.DataFrame) -> pd.DataFrame:
    """Mean gain and standard error over seeds per (method, setting)"""
    if rows.empty:
        return pd.DataFrame(columns=AGGREGATE_COLUMNS)
    records = []
    for keys, group in rows.groupby(GROUP_COLUMNS, sort=True, dropna=False):
        gains = group["gain_pct"].dropna().to_numpy(dtype=float)
        n = len(gains)
        mean = float(gains.mean()) if n else math.nan
        std_err = float(gains.std(ddof=1) / math.sqrt(n)) if n > 1 else (0.0 if n == 1 else math.nan)
        records.append({**dict(zip(GROUP_COLUMNS, keys)), "mean_gain": mean, "std_err": std_err, "n_seeds": n})
    return pd.DataFrame.from_records(records, columns=AGGREGATE_COLUMNS)


def plot_data(aggregate: pd.DataFrame, axis: str) -> pd.DataFrame:
    """Long-format series over one axis; panels are the other axes' values"""
    others = [a for a in ("delta", "n_train", "n_decision_points") if a != axis]
    records = []
    for _, row in aggregate.sort_values(others + [axis, "method", "base_model"]).iterrows():
        panel = ",".join(f"{a}={row[a]}" for a in others)
        records.append({"panel": panel, "x": row[axis], "method": row["method"], "base_model": row["base_model"],
                        "mean_gain": row["mean_gain"], "std_err": row["std_err"]})
    return pd.DataFrame.from_records(records, columns=PLOT_COLUMNS)


def sequential_margins(aggregate: pd.DataFrame) -> pd.DataFrame:
    """Mean gain of each scope-X minus its sep-X counterpart, per setting"""
    setting = ["learner", "base_model", "delta", "n_train", "n_decision_points"]
    scope = aggregate[aggregate["method"].str.startswith("scope-")].set_index(setting)["mean_gain"]
    sep = aggregate[aggregate["method"].str.startswith("sep-")].set_index(setting)["mean_gain"]
    paired = pd.concat([scope.rename("scope_gain"), sep.rename("sep_gain")], axis=1, join="inner").dropna()
    if paired.empty:
        return pd.DataFrame(columns=MARGIN_COLUMNS)
    paired["margin"] = paired["scope_gain"] - paired["sep_gain"]
    return paired.reset_index().sort_values(setting).reset_index(drop=True)[MARGIN_COLUMNS]


def trend_counts(margins: pd.DataFrame) -> Dict[str, int]:
    """
    Settings where scope >= sep, and (learner, base_model, delta, n_train)
    groups whose margin at the largest K exceeds the margin at the smallest K.
    """
    groups = margins.groupby(["learner", "base_model", "delta", "n_train"], sort=True)
    growing, n_groups = 0, 0
    for _, group in groups:
        if group["n_decision_points"].nunique() < 2:
            continue
        ordered = group.sort_values("n_decision_points")
        n_groups += 1
        growing += int(ordered["margin"].iloc[-1] > ordered["margin"].iloc[0])
    return {"n_margin_cells": int(len(margins)), "scope_ge_sep_cells": int((margins["margin"] >= 0).sum()),
            "n_margin_groups": n_groups, "margin_grows_with_k": growing}


def sweep(config: ExperimentConfig, methods: Optional[Sequence[str]] = None,
          jobs: Optional[int] = None, cells: Optional[Sequence[Cell]] = None) -> SweepReport:
    """Run every cell of the grid, or only the given cells (in parallel when jobs > 1), and aggregate"""
    cells = list(cells) if cells else sweep_cells(config)
    n_jobs = min(jobs or config.jobs, len(cells))
    logger.info(f"Sweep: {len(cells)} cells, methods {list(methods or config.methods)}, {n_jobs} job(s)")
    results = Parallel(n_jobs=n_jobs)(delayed(run_cell)(config, cell, methods) for cell in cells)

    rows = pd.DataFrame.from_records([r for res in results for r in res.rows], columns=ROW_COLUMNS)
    failures = pd.DataFrame.from_records([f for res in results for f in res.failures], columns=FAILURE_COLUMNS)
    aggregate = aggregate_rows(rows)
    report = SweepReport(rows=rows, aggregate=aggregate, failures=failures,
                         dominance_violations=sum(res.dominance_violations for res in results),
                         plot_data={axis: plot_data(aggregate, axis) for axis in config.axes.varied()},
                         margins=sequential_margins(aggregate))
    logger.info(f"Sweep finished: {report.summary()}")
    return report


def write_reports(report: SweepReport, out_dir: str) -> List[str]:
    """Write the sweep CSVs and summary; returns the written paths"""
    os.makedirs(out_dir, exist_ok=True)
    frames = {"rows.csv": report.rows, "aggregate.csv": report.aggregate, "failures.csv": report.failures}
    frames.update({f"plot_data_{axis}.csv": frame for axis, frame in sorted(report.plot_data.items())})
    if not report.margins.empty:
        frames["margins.csv"] = report.margins
    paths = []
    for name, frame in frames.items():
        path = os.path.join(out_dir, name)
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="nan", lineterminator="\n")
        paths.append(path)
    summary_path = os.path.join(out_dir, "summary.json")
    with open(summary_path, "w", encoding="utf-8") as handle:
        json.dump(report.summary(), handle, indent=2, sort_keys=True)
        handle.write("\n")
    paths.append(summary_path)
    logger.info(f"Wrote {len(paths)} report files to {out_dir}")
    return paths
