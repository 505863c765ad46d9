#!/usr/bin/env python3
"""
=============================================================================
EXPERIMENT DRIVER
=============================================================================

Subcommands:
• simulate  - generate a training log for one cell and write it as CSV
• train     - fit one method on a cell and save the policy with joblib
• evaluate  - load a saved policy, roll it out on the cell's test cases
• sweep     - the full grid; writes rows/aggregate/failures/plot-data CSVs
• selftest  - oracle and gradient checks
• validate  - config diagnostics without running anything

Every command that reads a config takes --config, --out-dir, --seed and
--cell. Only sweep takes --jobs and --method; simulate, train and evaluate
work on a single cell and run serially.

Settings resolve in the order config file < environment (.env,
SCOPE_OUT_DIR, SCOPE_JOBS) < command-line flags.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
=============================================================================
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from typing import Optional, Sequence

from dotenv import load_dotenv

from errors import ConfigError, ScopeLabError
from evaluation import (MethodSpec, TrainingBundle, build_test_set, evaluate_policy, fit_method, gain, sweep,
                        write_reports)
from baselines import HistoricalPolicy
from event_log import export_csv
from experiment_config import (Cell, ExperimentConfig, apply_environment_overrides, load_config, parse_cell,
                               validate_config)
from scope import load_policy, save_policy
from self_checks import run_self_checks

logger = logging.getLogger("scope_lab")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scope-lab",
                                     description="Sequential intervention policies from event logs")
    parser.add_argument("--verbose", action="store_true", help="Log at DEBUG level")
    subparsers = parser.add_subparsers(dest="command", required=True)
    _register_simulate(subparsers)
    _register_train(subparsers)
    _register_evaluate(subparsers)
    _register_sweep(subparsers)
    _register_selftest(subparsers)
    _register_validate(subparsers)
    return parser


def _common(parser: argparse.ArgumentParser,
            cell_default: str = "first value of each axis, seed 0") -> None:
    parser.add_argument("--config", required=True, help="Experiment config JSON")
    parser.add_argument("--out-dir", help="Output directory (overrides config and SCOPE_OUT_DIR)")
    parser.add_argument("--seed", type=int, help="Master seed (overrides config)")
    parser.add_argument("--cell", help=f"delta=..,n_train=..,n_decision_points=..,seed=.. (default: {cell_default})")


def _register_simulate(subparsers) -> None:
    parser = subparsers.add_parser("simulate", help="Write a simulated training log as CSV")
    _common(parser)
    parser.set_defaults(handler=_handle_simulate)


def _register_train(subparsers) -> None:
    parser = subparsers.add_parser("train", help="Fit a method and save the policy")
    _common(parser)
    parser.add_argument("--method", required=True, help="scope-s, sep-t, kmeans-q, random, bank, ...")
    parser.add_argument("--base-model", help="Base model kind (default: first configured)")
    parser.set_defaults(handler=_handle_train)


def _register_evaluate(subparsers) -> None:
    parser = subparsers.add_parser("evaluate", help="Evaluate a saved policy against the bank policy")
    parser.add_argument("--policy", required=True, help="Policy artifact written by 'train'")
    parser.add_argument("--out-dir", help="Where evaluation.json goes (default: next to the policy)")
    parser.set_defaults(handler=_handle_evaluate)


def _register_sweep(subparsers) -> None:
    parser = subparsers.add_parser("sweep", help="Run the full experiment grid")
    _common(parser, cell_default="every cell of the grid")
    parser.add_argument("--jobs", type=int, help="Parallel cells (overrides config and SCOPE_JOBS); sweep only")
    parser.add_argument("--method", action="append", help="Restrict to a method (repeatable)")
    parser.set_defaults(handler=_handle_sweep)


def _register_selftest(subparsers) -> None:
    parser = subparsers.add_parser("selftest", help="Run oracle and gradient checks")
    parser.set_defaults(handler=_handle_selftest)


def _register_validate(subparsers) -> None:
    parser = subparsers.add_parser("validate", help="Check a config file without running it")
    parser.add_argument("--config", required=True, help="Experiment config JSON")
    parser.set_defaults(handler=_handle_validate)


# =============================================================================
# Handlers
# =============================================================================

def _resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    config = apply_environment_overrides(load_config(args.config))
    updates = {}
    if getattr(args, "out_dir", None):
        updates["out_dir"] = args.out_dir
    if getattr(args, "seed", None) is not None:
        updates["master_seed"] = args.seed
    if getattr(args, "jobs", None) is not None:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1", key="jobs")
        updates["jobs"] = args.jobs
    return replace(config, **updates) if updates else config


def _resolve_cell(args: argparse.Namespace, config: ExperimentConfig) -> Cell:
    if args.cell:
        return parse_cell(args.cell)
    axes = config.axes
    return Cell(delta=axes.delta[0], n_train=axes.n_train[0], n_decision_points=axes.n_decision_points[0], seed=0)


def _cell_tag(cell: Cell) -> str:
    return f"d{cell.delta:g}_n{cell.n_train}_K{cell.n_decision_points}_s{cell.seed}"


def _handle_simulate(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    cell = _resolve_cell(args, config)
    bundle = TrainingBundle.build(config, cell)
    os.makedirs(config.out_dir, exist_ok=True)
    path = os.path.join(config.out_dir, f"log_{config.simulator.name}_{_cell_tag(cell)}.csv")
    export_csv(bundle.simulated.log, path)
    print(f"✅ Wrote {bundle.simulated.log.n_cases} cases ({bundle.simulated.log.n_events} events) to {path}")
    return 0


def _handle_train(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    cell = _resolve_cell(args, config)
    method = MethodSpec.parse(args.method)
    if method.family == "upper-bound":
        raise ConfigError("The upper bound is not a trainable policy", key="method")
    kind = (args.base_model or config.base_models[0]) if method.uses_base_model else ""
    bundle = TrainingBundle.build(config, cell)
    policy, params = fit_method(bundle, method, kind)
    os.makedirs(config.out_dir, exist_ok=True)
    suffix = f"_{kind}" if kind else ""
    path = os.path.join(config.out_dir, f"policy_{method.name}{suffix}_{_cell_tag(cell)}.joblib")
    save_policy(policy, path, metadata={"config": config.to_dict(), "cell": cell.to_dict(), "method": method.name,
                                        "base_model": kind, "tuned_params": params})
    print(f"✅ Saved {method.name} policy to {path}")
    return 0


def _handle_evaluate(args: argparse.Namespace) -> int:
    policy, metadata = load_policy(args.policy)
    config = ExperimentConfig.from_dict(metadata["config"])
    cell = Cell(**metadata["cell"])
    simulator, cases = build_test_set(config, cell)
    total = evaluate_policy(policy, cases, simulator)
    bank_total = evaluate_policy(HistoricalPolicy(simulator), cases, simulator)
    result = {"method": metadata["method"], "base_model": metadata["base_model"], **cell.to_dict(),
              "n_test": len(cases), "total_kpi": total, "bank_total_kpi": bank_total,
              "gain_pct": gain(total, bank_total, simulator.direction)}
    out_dir = args.out_dir or os.path.dirname(os.path.abspath(args.policy))
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "evaluation.json")
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(result, handle, indent=2, sort_keys=True)
        handle.write("\n")
    print(f"📊 {result['method']}: total {total:.4f}, bank {bank_total:.4f}, gain {result['gain_pct']:.3f}%")
    return 0


def _handle_sweep(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    methods = args.method or None
    for name in methods or []:
        MethodSpec.parse(name)
    cells = [parse_cell(args.cell)] if args.cell else None
    report = sweep(config, methods=methods, cells=cells)
    write_reports(report, config.out_dir)
    summary = report.summary()
    print(f"📊 {summary['n_rows']} rows, {summary['n_aggregate_rows']} aggregate rows, "
          f"{summary['n_failures']} failures, {summary['dominance_violations']} upper-bound violations")
    if "n_margin_cells" in summary:
        print(f"📈 SCOPE >= SEP in {summary['scope_ge_sep_cells']}/{summary['n_margin_cells']} settings; "
              f"margin grows with K in {summary['margin_grows_with_k']}/{summary['n_margin_groups']} groups")
    return 0 if summary["n_failures"] == 0 else 2


def _handle_selftest(args: argparse.Namespace) -> int:
    return 0 if run_self_checks() else 2


def _handle_validate(args: argparse.Namespace) -> int:
    diagnostics = validate_config(args.config)
    for warning in diagnostics.warnings:
        print(f"⚠️  {warning}")
    for error in diagnostics.errors:
        print(f"❌ {error}")
    if diagnostics.ok:
        print(f"✅ {args.config} is valid")
        return 0
    return 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s - %(levelname)s - %(message)s",
                        handlers=[logging.StreamHandler()], force=True)
    try:
        return args.handler(args)
    except ConfigError as exc:
        logger.error(f"Configuration error: {exc.message} {exc.context}")
        return exc.exit_code
    except ScopeLabError as exc:
        logger.error(f"{type(exc).__name__}: {exc.message} {exc.context}")
        return exc.exit_code
    except Exception as exc:
        logger.exception(f"Unexpected failure: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
