#!/usr/bin/env python3
"""
=============================================================================
EXPERIMENT CONFIGURATION
=============================================================================

Strict JSON experiment configuration for sweeps and single runs.

KEY FEATURES:
• STRICT PARSING: unknown keys at any level raise ConfigError naming the
  dotted key path
• ROUND TRIP: ExperimentConfig.from_dict(config.to_dict()) == config
• DIAGNOSTICS: validate_config() lists errors and warnings without running
• SEEDS: every random stream derives from one master seed through
  derive_seed(master, stream, *keys)
• ENVIRONMENT: SCOPE_OUT_DIR and SCOPE_JOBS override out_dir and jobs
  (a .env file is honoured by the CLI through python-dotenv)

Top-level keys:
  simulator{name, params}, axes{delta, n_train, n_decision_points},
  methods, base_models, hyperparameters, search_spaces,
  tuning{enabled, n_trials, validation_fraction}, encoding{mode, max_length},
  stage_models, ra_variant, n_test, seeds, master_seed, out_dir, jobs,
  enumeration_cap
=============================================================================
"""

import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np

from base_models import DEFAULT_PARAMS, ModelSpec, is_number, resolve_params
from baselines import KMEANS_Q_DEFAULTS
from causal_learners import RA_VARIANTS
from errors import BaseModelError, ConfigError, ScopeLabError
from event_log import ENCODING_MODES
from simulators import SimConfig, create_simulator

logger = logging.getLogger(__name__)

METHODS = ("scope-s", "scope-t", "scope-ra", "sep-s", "sep-t", "sep-ra", "kmeans-q", "random", "bank",
           "upper-bound")
SIMULATOR_NAMES = ("filecall", "loanproc", "toy")
STREAMS = {"simulation": 1, "test": 2, "tuning": 3, "model": 4, "qlearning": 5, "policy": 6}
FILECALL_K_WARNING = 6
ENV_OUT_DIR = "SCOPE_OUT_DIR"
ENV_JOBS = "SCOPE_JOBS"


def derive_seed(master_seed: int, stream: str, *keys: int) -> int:
    """32-bit seed for a named stream and integer keys"""
    if stream not in STREAMS:
        raise ConfigError(f"Unknown random stream '{stream}'", key="stream")
    entropy = [int(master_seed), STREAMS[stream]] + [int(k) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def delta_key(delta: float) -> int:
    return int(round(delta * 1e6))


def _check_keys(data: Mapping[str, Any], allowed: Tuple[str, ...], path: str) -> None:
    if not isinstance(data, Mapping):
        raise ConfigError(f"'{path or 'config'}' must be an object", key=path or None)
    for key in data:
        if key not in allowed:
            dotted = f"{path}.{key}" if path else key
            raise ConfigError(f"Unknown configuration key '{dotted}'", key=dotted)


def _as_list(value: Any, key: str) -> List[Any]:
    if not isinstance(value, list) or not value:
        raise ConfigError(f"'{key}' must be a non-empty list", key=key)
    return list(value)


def _number(value: Any, key: str, integer: bool = False) -> Any:
    """Finite number (integral when asked); anything else raises ConfigError naming the key"""
    if not is_number(value) or not math.isfinite(float(value)) or (integer and int(value) != value):
        raise ConfigError(f"'{key}' must be {'an integer' if integer else 'a number'}, got {value!r}", key=key)
    return int(value) if integer else float(value)


def _string(value: Any, key: str) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"'{key}' must be a string, got {value!r}", key=key)
    return value


def _mapping(value: Any, key: str) -> Dict[str, Any]:
    if not isinstance(value, Mapping):
        raise ConfigError(f"'{key}' must be an object", key=key)
    return dict(value)


@dataclass
class SimulatorSection:
    name: str = "filecall"
    params: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'SimulatorSection':
        _check_keys(data, ("name", "params"), "simulator")
        return cls(name=_string(data.get("name", "filecall"), "simulator.name"),
                   params=_mapping(data.get("params", {}), "simulator.params"))


@dataclass
class Axes:
    delta: List[float] = field(default_factory=lambda: [0.95])
    n_train: List[int] = field(default_factory=lambda: [1000])
    n_decision_points: List[int] = field(default_factory=lambda: [2])

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'Axes':
        _check_keys(data, ("delta", "n_train", "n_decision_points"), "axes")
        axes = cls()
        for name in ("delta", "n_train", "n_decision_points"):
            if name in data:
                key = f"axes.{name}"
                values = [_number(v, key, integer=name != "delta") for v in _as_list(data[name], key)]
                setattr(axes, name, values)
        return axes

    def varied(self) -> List[str]:
        return [name for name in ("delta", "n_train", "n_decision_points") if len(getattr(self, name)) > 1]


@dataclass
class TuningSection:
    enabled: bool = False
    n_trials: int = 10
    validation_fraction: float = 0.2

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'TuningSection':
        _check_keys(data, ("enabled", "n_trials", "validation_fraction"), "tuning")
        enabled = data.get("enabled", False)
        if not isinstance(enabled, bool):
            raise ConfigError(f"'tuning.enabled' must be true or false, got {enabled!r}", key="tuning.enabled")
        return cls(enabled=enabled, n_trials=_number(data.get("n_trials", 10), "tuning.n_trials", integer=True),
                   validation_fraction=_number(data.get("validation_fraction", 0.2), "tuning.validation_fraction"))


@dataclass
class EncodingSection:
    mode: str = "flat"
    max_length: Optional[int] = None

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'EncodingSection':
        _check_keys(data, ("mode", "max_length"), "encoding")
        max_length = data.get("max_length")
        return cls(mode=_string(data.get("mode", "flat"), "encoding.mode"),
                   max_length=None if max_length is None else _number(max_length, "encoding.max_length", True))


@dataclass
class ExperimentConfig:
    """Parsed experiment configuration"""
    simulator: SimulatorSection = field(default_factory=SimulatorSection)
    axes: Axes = field(default_factory=Axes)
    methods: List[str] = field(default_factory=lambda: ["scope-s", "sep-s", "random", "bank", "upper-bound"])
    base_models: List[str] = field(default_factory=lambda: ["boosted_trees"])
    hyperparameters: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    search_spaces: Dict[str, Dict[str, List[Any]]] = field(default_factory=dict)
    tuning: TuningSection = field(default_factory=TuningSection)
    encoding: EncodingSection = field(default_factory=EncodingSection)
    stage_models: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    ra_variant: str = "as_printed"
    n_test: int = 1000
    seeds: int = 10
    master_seed: int = 0
    out_dir: str = "results"
    jobs: int = 1
    enumeration_cap: int = 4096

    TOP_LEVEL_KEYS = ("simulator", "axes", "methods", "base_models", "hyperparameters", "search_spaces", "tuning",
                      "encoding", "stage_models", "ra_variant", "n_test", "seeds", "master_seed", "out_dir",
                      "jobs", "enumeration_cap")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'ExperimentConfig':
        """Strict construction; unknown keys raise ConfigError"""
        _check_keys(data, cls.TOP_LEVEL_KEYS, "")
        config = cls()
        if "simulator" in data:
            config.simulator = SimulatorSection.from_dict(data["simulator"])
        if "axes" in data:
            config.axes = Axes.from_dict(data["axes"])
        if "methods" in data:
            config.methods = [str(m) for m in _as_list(data["methods"], "methods")]
        if "base_models" in data:
            config.base_models = [str(m) for m in _as_list(data["base_models"], "base_models")]
        for name in ("hyperparameters", "search_spaces", "stage_models"):
            if name in data:
                entries = _mapping(data[name], name)
                setattr(config, name, {str(k): _mapping(v, f"{name}.{k}") for k, v in entries.items()})
        for k, stage in config.stage_models.items():
            _check_keys(stage, ("kind", "params"), f"stage_models.{k}")
            if "params" in stage:
                stage["params"] = _mapping(stage["params"], f"stage_models.{k}.params")
        if "tuning" in data:
            config.tuning = TuningSection.from_dict(data["tuning"])
        if "encoding" in data:
            config.encoding = EncodingSection.from_dict(data["encoding"])
        for name in ("ra_variant", "out_dir"):
            if name in data:
                setattr(config, name, _string(data[name], name))
        for name in ("n_test", "seeds", "master_seed", "jobs", "enumeration_cap"):
            if name in data:
                setattr(config, name, _number(data[name], name, integer=True))
        return config

    def to_dict(self) -> Dict[str, Any]:
        return {
            "simulator": {"name": self.simulator.name, "params": dict(self.simulator.params)},
            "axes": {"delta": list(self.axes.delta), "n_train": list(self.axes.n_train),
                     "n_decision_points": list(self.axes.n_decision_points)},
            "methods": list(self.methods),
            "base_models": list(self.base_models),
            "hyperparameters": {k: dict(v) for k, v in self.hyperparameters.items()},
            "search_spaces": {k: dict(v) for k, v in self.search_spaces.items()},
            "tuning": {"enabled": self.tuning.enabled, "n_trials": self.tuning.n_trials,
                       "validation_fraction": self.tuning.validation_fraction},
            "encoding": {"mode": self.encoding.mode, "max_length": self.encoding.max_length},
            "stage_models": {k: dict(v) for k, v in self.stage_models.items()},
            "ra_variant": self.ra_variant,
            "n_test": self.n_test,
            "seeds": self.seeds,
            "master_seed": self.master_seed,
            "out_dir": self.out_dir,
            "jobs": self.jobs,
            "enumeration_cap": self.enumeration_cap,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    # ---- derived objects ----------------------------------------------------

    def sim_config(self, delta: float, n_decision_points: int, seed: int = 0) -> SimConfig:
        return SimConfig(simulator=self.simulator.name, n_decision_points=n_decision_points, delta=delta,
                         seed=seed, params=dict(self.simulator.params))

    def model_spec(self, kind: str, params: Optional[Dict[str, Any]] = None) -> ModelSpec:
        """Base model spec with configured hyperparameters and per-stage overrides"""
        stages = {int(k): ModelSpec(kind=v["kind"], params=dict(v.get("params", {})))
                  for k, v in self.stage_models.items()}
        merged = {**self.hyperparameters.get(kind, {}), **(params or {})}
        return ModelSpec(kind=kind, params=merged, stage_models=stages)


@dataclass
class ConfigDiagnostics:
    """Errors and warnings found in a configuration"""
    errors: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def to_dict(self) -> Dict[str, Any]:
        return {"ok": self.ok, "errors": list(self.errors), "warnings": list(self.warnings)}


def diagnose(config: ExperimentConfig) -> ConfigDiagnostics:
    """Semantic checks of a structurally valid configuration"""
    diagnostics = ConfigDiagnostics()
    error = diagnostics.errors.append
    warn = diagnostics.warnings.append

    if config.simulator.name not in SIMULATOR_NAMES:
        error(f"simulator.name: unknown simulator '{config.simulator.name}'")
    for delta in config.axes.delta:
        if not 0.0 <= delta <= 1.0:
            error(f"axes.delta: {delta} is outside [0, 1]")
    for n_train in config.axes.n_train:
        if n_train < 2:
            error(f"axes.n_train: {n_train} is below 2")
    for K in config.axes.n_decision_points:
        if K < 1:
            error(f"axes.n_decision_points: {K} is below 1")
        elif config.simulator.name == "filecall" and K > FILECALL_K_WARNING:
            warn(f"axes.n_decision_points: K={K} makes the exhaustive upper bound cost 2^{K} = {2 ** K} "
                 f"rollouts per test case")
        if config.simulator.name == "filecall" and 2 ** K > config.enumeration_cap and "upper-bound" in config.methods:
            error(f"axes.n_decision_points: 2^{K} action sequences exceed enumeration_cap={config.enumeration_cap}")
    for method in config.methods:
        if method not in METHODS:
            error(f"methods: unknown method '{method}'")
    for kind in config.base_models:
        if kind not in DEFAULT_PARAMS:
            error(f"base_models: unknown base model '{kind}'")
    for kind, params in config.hyperparameters.items():
        if kind == "kmeans-q":
            unknown = set(params) - set(KMEANS_Q_DEFAULTS)
            if unknown:
                error(f"hyperparameters.kmeans-q: unknown parameters {sorted(unknown)}")
            for name, value in params.items():
                if name in KMEANS_Q_DEFAULTS and not is_number(value):
                    error(f"hyperparameters.kmeans-q.{name}: must be a number, got {value!r}")
            continue
        try:
            resolve_params(kind, params)
        except BaseModelError as exc:
            error(f"hyperparameters.{kind}: {exc.message}")
    for kind, space in config.search_spaces.items():
        allowed = KMEANS_Q_DEFAULTS if kind == "kmeans-q" else DEFAULT_PARAMS.get(kind)
        if allowed is None:
            error(f"search_spaces.{kind}: unknown model")
            continue
        for name, values in space.items():
            if name not in allowed:
                error(f"search_spaces.{kind}.{name}: unknown hyperparameter")
            elif not isinstance(values, list) or not values:
                error(f"search_spaces.{kind}.{name}: must be a non-empty list")
            elif kind == "kmeans-q":
                if not all(is_number(value) for value in values):
                    error(f"search_spaces.kmeans-q.{name}: values must be numbers")
            else:
                for value in values:
                    try:
                        resolve_params(kind, {name: value})
                    except BaseModelError as exc:
                        error(f"search_spaces.{kind}.{name}: {exc.message}")
                        break
    for k, stage in config.stage_models.items():
        try:
            if int(k) < 1:
                raise ValueError
            ModelSpec(kind=stage["kind"], params=dict(stage.get("params", {})))
        except (KeyError, ValueError, TypeError):
            error(f"stage_models.{k}: needs an integer key >= 1 and a 'kind'")
        except BaseModelError as exc:
            error(f"stage_models.{k}: {exc.message}")
    if config.ra_variant not in RA_VARIANTS:
        error(f"ra_variant: must be one of {list(RA_VARIANTS)}")
    if config.encoding.mode not in ENCODING_MODES:
        error(f"encoding.mode: must be one of {list(ENCODING_MODES)}")
    if config.encoding.max_length is not None and config.encoding.max_length < 1:
        error("encoding.max_length: must be >= 1")
    if not 0.0 < config.tuning.validation_fraction < 1.0:
        error("tuning.validation_fraction: must lie in (0, 1)")
    if config.tuning.n_trials < 1:
        error("tuning.n_trials: must be >= 1")
    for name in ("n_test", "seeds", "jobs", "enumeration_cap"):
        if getattr(config, name) < 1:
            error(f"{name}: must be >= 1")
    if not config.methods or all(m in ("bank", "upper-bound") for m in config.methods):
        warn("methods: no learned or random method configured")

    if config.simulator.name in SIMULATOR_NAMES:
        for K in sorted(set(config.axes.n_decision_points)):
            if K < 1:
                continue
            try:
                create_simulator(config.sim_config(0.5, K))
            except ScopeLabError as exc:
                error(f"{exc.context.get('key', 'simulator')}: {exc.message}")
            except (TypeError, ValueError) as exc:
                error(f"simulator.params: invalid parameter value ({exc})")
    return diagnostics


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source} is not valid JSON: {exc}")
    return ExperimentConfig.from_dict(data)


def load_config(path: str) -> ExperimentConfig:
    """Parse and validate; the first error is raised as ConfigError."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise ConfigError(f"Cannot read config {path}: {exc}")
    config = parse_config_text(text, path)
    diagnostics = diagnose(config)
    for warning in diagnostics.warnings:
        logger.warning(warning)
    if diagnostics.errors:
        first = diagnostics.errors[0]
        raise ConfigError(first, key=first.split(":", 1)[0])
    logger.info(f"Loaded config {path}: {config.simulator.name}, methods {config.methods}")
    return config


def validate_config(path: str) -> ConfigDiagnostics:
    """Diagnostics for a config file; content problems never raise."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            config = parse_config_text(handle.read(), path)
    except OSError as exc:
        return ConfigDiagnostics(errors=[f"config: cannot read {path}: {exc}"])
    except ConfigError as exc:
        return ConfigDiagnostics(errors=[f"{exc.key or 'config'}: {exc.message}"])
    return diagnose(config)


def apply_environment_overrides(config: ExperimentConfig,
                                environ: Optional[Mapping[str, str]] = None) -> ExperimentConfig:
    """Copy of the config with SCOPE_OUT_DIR / SCOPE_JOBS applied"""
    environ = os.environ if environ is None else environ
    updates: Dict[str, Any] = {}
    if environ.get(ENV_OUT_DIR):
        updates["out_dir"] = environ[ENV_OUT_DIR]
    if environ.get(ENV_JOBS):
        try:
            updates["jobs"] = int(environ[ENV_JOBS])
        except ValueError:
            raise ConfigError(f"{ENV_JOBS} must be an integer, got {environ[ENV_JOBS]!r}", key=ENV_JOBS)
        if updates["jobs"] < 1:
            raise ConfigError(f"{ENV_JOBS} must be >= 1", key=ENV_JOBS)
    return replace(config, **updates) if updates else config


@dataclass(frozen=True)
class Cell:
    """One point of the sweep grid"""
    delta: float
    n_train: int
    n_decision_points: int
    seed: int

    def to_dict(self) -> Dict[str, Any]:
        return {"delta": self.delta, "n_train": self.n_train, "n_decision_points": self.n_decision_points,
                "seed": self.seed}


def parse_cell(text: str) -> Cell:
    """Parse `delta=0.95,n_train=1000,n_decision_points=2,seed=0`"""
    values: Dict[str, str] = {}
    for part in text.split(","):
        if "=" not in part:
            raise ConfigError(f"Cell entry '{part}' must look like axis=value", key="cell")
        name, value = (s.strip() for s in part.split("=", 1))
        if name not in ("delta", "n_train", "n_decision_points", "seed"):
            raise ConfigError(f"Unknown cell axis '{name}'", key=f"cell.{name}")
        values[name] = value
    missing = [n for n in ("delta", "n_train", "n_decision_points", "seed") if n not in values]
    if missing:
        raise ConfigError(f"Cell is missing {missing}", key=f"cell.{missing[0]}")
    try:
        return Cell(delta=float(values["delta"]), n_train=int(values["n_train"]),
                    n_decision_points=int(values["n_decision_points"]), seed=int(values["seed"]))
    except ValueError as exc:
        raise ConfigError(f"Invalid cell value: {exc}", key="cell")
