#!/usr/bin/env python3
"""
=============================================================================
PROCESS SIMULATORS WITH COMMON RANDOM NUMBERS
=============================================================================

Simulators generate observational event logs under a historical ("bank")
policy mixed with uniformly random actions, and evaluate any action sequence
counterfactually on the same case.

KEY FEATURES:
• COMMON RANDOM NUMBERS: every exogenous draw (static attributes, durations,
  throughput, refusal draw, policy coins, random actions) is materialized in
  a SimCase at creation, so rollouts are pure functions of (case, actions)
• CONFOUNDING KNOB: at each decision point the logged action follows the
  historical policy with probability delta, a uniform random action otherwise
• FILECALL: incomplete-file handling with call/wait decisions; calls shorten
  the remaining throughput time and shrink later activity durations
• LOANPROC: procedure choice then interest-rate choice with a logistic
  refusal model; profit is maximized

ARCHITECTURE:
• SimConfig: simulator name, K, delta, seed and simulator parameters
• ProcessSimulator: shared sampling, observation, logging and enumeration
• FileCallSimulator / LoanProcSimulator: process-specific dynamics
• create_simulator(): factory keyed by simulator name
=============================================================================
"""

import itertools
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigError, SimulationError
from event_log import (AttributeHint, DecisionPointSpec, Event, EventLog, Prefix, Trace,
                       load_csv, parse_schema_hints)

logger = logging.getLogger(__name__)

DEFAULT_ENUMERATION_CAP = 4096


# =============================================================================
# Configuration and cases
# =============================================================================

@dataclass
class SimConfig:
    """Simulator selection plus the confounding level and seed"""
    simulator: str = "filecall"
    n_decision_points: int = 2
    delta: float = 0.95
    seed: int = 0
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ConfigError(f"delta must lie in [0, 1], got {self.delta}", key="delta")
        if self.n_decision_points < 1:
            raise ConfigError(f"n_decision_points must be >= 1, got {self.n_decision_points}",
                              key="n_decision_points")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class SimCase:
    """One simulated case with all of its randomness fixed"""
    case_id: str
    static_attrs: Dict[str, Any]
    durations: Tuple[float, ...]
    draws: Dict[str, float]
    policy_coins: Tuple[float, ...]
    random_actions: Tuple[int, ...]


@dataclass
class SimulatedLog:
    """Output of generate_log"""
    log: EventLog
    outcomes: Dict[str, float]
    cases: List[SimCase]
    actions: Dict[str, Tuple[str, ...]]


def _params_from_dict(cls, data: Optional[Dict[str, Any]], prefix: str = "simulator.params"):
    """Strict dataclass construction: unknown keys are rejected."""
    data = dict(data or {})
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"Unknown simulator parameter '{key}'", key=f"{prefix}.{key}")
    for name, value in list(data.items()):
        if isinstance(value, list):
            data[name] = tuple(value)
    return cls(**data)


def average_duration(prefix: Prefix) -> float:
    """Mean 'duration' attribute over the events of a prefix"""
    values = [float(e.event_attrs["duration"]) for e in prefix.events if e.event_attrs.get("duration") is not None]
    return sum(values) / len(values) if values else 0.0


# =============================================================================
# Simulator base class
# =============================================================================

class ProcessSimulator(ABC):
    """Shared machinery for all simulators"""

    name = "base"
    direction = "min"

    def __init__(self, config: SimConfig):
        self.config = config
        self.n_decision_points = config.n_decision_points
        self.delta = config.delta

    # ---- process definition -------------------------------------------------

    @abstractmethod
    def decision_specs(self) -> Tuple[DecisionPointSpec, ...]:
        """Decision points of this process, k = 1..K"""

    @abstractmethod
    def attribute_hints(self) -> Tuple[AttributeHint, ...]:
        """Declared roles of the attributes the simulator emits"""

    @abstractmethod
    def sample_case(self, rng: np.random.Generator, case_id: str) -> SimCase:
        """Materialize every exogenous draw of a case"""

    @abstractmethod
    def _simulate(self, case: SimCase, action_indices: Sequence[int]) -> Tuple[List[Event], float]:
        """Events and KPI of the case under validated action indices"""

    @abstractmethod
    def historical_action(self, prefix: Prefix, k: int) -> str:
        """The historical policy's action at decision point k"""

    # ---- sampling -----------------------------------------------------------

    def action_spaces(self) -> List[Tuple[str, ...]]:
        return [spec.actions for spec in self.decision_specs()]

    def sample_cases(self, n_cases: int, stream_seed: int, start: int = 0) -> List[SimCase]:
        """Cases start..start+n-1, each on its own seeded stream"""
        cases = []
        for index in range(start, start + n_cases):
            rng = np.random.default_rng([int(stream_seed), index])
            cases.append(self.sample_case(rng, f"case_{index}"))
        return cases

    def _coins(self, rng: np.random.Generator) -> Tuple[Tuple[float, ...], Tuple[int, ...]]:
        coins = tuple(float(c) for c in rng.random(self.n_decision_points))
        randoms = tuple(int(rng.integers(0, len(actions))) for actions in self.action_spaces())
        return coins, randoms

    # ---- rollouts -----------------------------------------------------------

    def _action_indices(self, actions: Sequence[str], expected: int) -> List[int]:
        if len(actions) != expected:
            raise SimulationError(f"Expected {expected} actions, got {len(actions)}")
        indices = []
        for k, (action, spec) in enumerate(zip(actions, self.decision_specs()), start=1):
            if action not in spec.actions:
                raise SimulationError(f"Action {action!r} is not valid at decision point {k}: {list(spec.actions)}")
            indices.append(spec.actions.index(action))
        return indices

    def rollout(self, case: SimCase, actions: Sequence[str]) -> Tuple[Trace, float]:
        """Full trace and KPI of the case under the K given actions"""
        indices = self._action_indices(actions, self.n_decision_points)
        events, kpi = self._simulate(case, indices)
        return Trace(case_id=case.case_id, events=tuple(events)), float(kpi)

    def observe(self, case: SimCase, actions_so_far: Sequence[str], k: int) -> Prefix:
        """Prefix at decision point k after the k-1 earlier actions"""
        if len(actions_so_far) != k - 1:
            raise SimulationError(f"Decision point {k} needs {k - 1} earlier actions, got {len(actions_so_far)}")
        specs = self.decision_specs()
        padded = list(actions_so_far) + [spec.actions[0] for spec in specs[k - 1:]]
        trace, _ = self.rollout(case, padded)
        return trace.prefix(specs[k - 1].prefix_length)

    def bank_policy(self, case: SimCase, prefix: Prefix, k: int) -> str:
        return self.historical_action(prefix, k)

    def logged_actions(self, case: SimCase) -> Tuple[str, ...]:
        """Historical action with probability delta, the pre-drawn random action otherwise"""
        actions: List[str] = []
        for k, spec in enumerate(self.decision_specs(), start=1):
            if case.policy_coins[k - 1] < self.delta:
                action = self.bank_policy(case, self.observe(case, actions, k), k)
            else:
                action = spec.actions[case.random_actions[k - 1]]
            actions.append(action)
        return tuple(actions)

    def generate_log(self, n_cases: int, stream_seed: Optional[int] = None, start: int = 0) -> SimulatedLog:
        """Sample n_cases and log each under the confounded historical policy."""
        if n_cases < 1:
            raise SimulationError(f"n_cases must be >= 1, got {n_cases}")
        seed = self.config.seed if stream_seed is None else stream_seed
        cases = self.sample_cases(n_cases, seed, start)
        traces, outcomes, logged = [], {}, {}
        for case in cases:
            actions = self.logged_actions(case)
            trace, kpi = self.rollout(case, actions)
            traces.append(trace)
            outcomes[case.case_id] = kpi
            logged[case.case_id] = actions
        log = EventLog(traces=tuple(traces), attributes=self.attribute_hints(), case_outcomes=dict(outcomes))
        logger.info(f"Generated {self.name} log: {n_cases} cases, K={self.n_decision_points}, delta={self.delta}")
        return SimulatedLog(log=log, outcomes=outcomes, cases=cases, actions=logged)

    # ---- enumeration --------------------------------------------------------

    def enumerate_outcomes(self, case: SimCase,
                           cap: int = DEFAULT_ENUMERATION_CAP) -> List[Tuple[Tuple[str, ...], float]]:
        """KPI of every action sequence, in lexicographic action-index order"""
        spaces = self.action_spaces()
        size = math.prod(len(actions) for actions in spaces)
        if size > cap:
            raise SimulationError(f"Enumerating {size} action sequences exceeds the cap of {cap}")
        return [(tuple(actions), self.rollout(case, actions)[1]) for actions in itertools.product(*spaces)]

    def best_outcome(self, case: SimCase, cap: int = DEFAULT_ENUMERATION_CAP) -> Tuple[Tuple[str, ...], float]:
        """Best (actions, kpi) by exhaustive search; ties keep the first sequence"""
        table = self.enumerate_outcomes(case, cap)
        pick = min if self.direction == "min" else max
        return pick(table, key=lambda entry: entry[1])


# =============================================================================
# File handling with follow-up calls
# =============================================================================

@dataclass(frozen=True)
class FileCallParams:
    """Cost model and call-effect parameters of the filecall process"""
    cost_tpt: float = 1.0
    cost_call: float = 4000.0
    tpt_range: Tuple[float, float] = (9000.0, 11000.0)
    duration_threshold: float = 4025.0
    high_effect_types: Tuple[str, ...] = ("car", "loan takeover")
    effect_high: float = 1.0
    effect_low: float = 0.4
    duration_sensitivity: float = 1.5
    call_duration_factor: float = 0.5
    duration_shape: float = 4.0
    duration_scale: float = 1000.0
    n_initial_events: int = 2
    loan_types: Tuple[str, ...] = ("car", "loan takeover", "home", "other")
    loan_type_probs: Tuple[float, ...] = (0.3, 0.2, 0.3, 0.2)
    attribute_pool: Optional[str] = None

    def __post_init__(self):
        if self.cost_tpt <= 0 or self.cost_call <= 0:
            raise ConfigError("cost_tpt and cost_call must be positive", key="simulator.params.cost_tpt")
        if not self.tpt_range[0] < self.tpt_range[1]:
            raise ConfigError("tpt_range must satisfy lo < hi", key="simulator.params.tpt_range")
        if self.effect_high < 0 or self.effect_low < 0 or self.duration_sensitivity < 0:
            raise ConfigError("Call-effect multipliers must be >= 0", key="simulator.params.effect_high")
        if not 0 < self.call_duration_factor <= 1:
            raise ConfigError("call_duration_factor must lie in (0, 1]", key="simulator.params.call_duration_factor")
        if self.n_initial_events < 1:
            raise ConfigError("n_initial_events must be >= 1", key="simulator.params.n_initial_events")
        if len(self.loan_types) != len(self.loan_type_probs) or abs(sum(self.loan_type_probs) - 1.0) > 1e-9:
            raise ConfigError("loan_type_probs must match loan_types and sum to 1",
                              key="simulator.params.loan_type_probs")


class FileCallSimulator(ProcessSimulator):
    """
    Linear chain: application creation, completion, then K
    'W_Handle incomplete files' events each carrying action call or wait.

    KPI (minimized) = cost_tpt * max(base_tpt - sum of call effects, 0)
    + n_calls * cost_call, with a call at k reducing throughput by
    multiplier(loan type) * sensitivity * average prefix duration.
    """

    name = "filecall"
    direction = "min"
    ACTIONS = ("wait", "call")
    HANDLE_ACTIVITY = "W_Handle incomplete files"

    def __init__(self, config: SimConfig):
        super().__init__(config)
        self.params = _params_from_dict(FileCallParams, config.params)
        self._pool = self._load_pool(self.params.attribute_pool) if self.params.attribute_pool else None

    def _load_pool(self, path: str) -> Dict[str, Any]:
        hints = [h for h in self.attribute_hints() if h.name in ("duration",) or h.scope == "static"]
        log = load_csv(path, hints)
        statics = [trace.static_attrs for trace in log.traces]
        durations = [float(e.event_attrs["duration"]) for trace in log.traces for e in trace.events
                     if e.event_attrs.get("duration") is not None]
        if not statics or not durations:
            raise ConfigError(f"Attribute pool {path} has no cases or durations",
                              key="simulator.params.attribute_pool")
        logger.info(f"Loaded attribute pool: {len(statics)} cases, {len(durations)} durations")
        return {"statics": statics, "durations": np.asarray(durations)}

    def decision_specs(self) -> Tuple[DecisionPointSpec, ...]:
        n0 = self.params.n_initial_events
        return tuple(DecisionPointSpec(k=k, prefix_length=n0 + k - 1, actions=self.ACTIONS, action_attr="action")
                     for k in range(1, self.n_decision_points + 1))

    def attribute_hints(self) -> Tuple[AttributeHint, ...]:
        return parse_schema_hints(["event:duration:num", "event:action:cat", "static:loan_type:cat",
                                   "static:requested_amount:num", "static:application_type:cat",
                                   "static:credit_score:num"])

    def sample_case(self, rng: np.random.Generator, case_id: str) -> SimCase:
        p = self.params
        n_events = p.n_initial_events + self.n_decision_points
        if self._pool is None:
            statics = {
                "loan_type": str(rng.choice(p.loan_types, p=p.loan_type_probs)),
                "requested_amount": round(float(rng.lognormal(math.log(15000.0), 0.6)), 2),
                "application_type": str(rng.choice(["New credit", "Limit raise"], p=[0.8, 0.2])),
                "credit_score": float(np.clip(round(rng.normal(650.0, 80.0)), 300.0, 850.0)),
            }
            durations = rng.gamma(p.duration_shape, p.duration_scale, size=n_events)
        else:
            statics = dict(self._pool["statics"][int(rng.integers(0, len(self._pool["statics"])))])
            durations = rng.choice(self._pool["durations"], size=n_events)
        base_tpt = float(rng.uniform(*p.tpt_range))
        coins, randoms = self._coins(rng)
        return SimCase(case_id=case_id, static_attrs=statics, durations=tuple(float(d) for d in durations),
                       draws={"base_tpt": base_tpt}, policy_coins=coins, random_actions=randoms)

    def call_effect(self, loan_type: str, avg_duration: float) -> float:
        p = self.params
        multiplier = p.effect_high if loan_type in p.high_effect_types else p.effect_low
        return multiplier * p.duration_sensitivity * avg_duration

    def _simulate(self, case: SimCase, action_indices: Sequence[int]) -> Tuple[List[Event], float]:
        p = self.params
        events: List[Event] = []
        realized: List[float] = []
        clock = 0.0

        def emit(activity: str, duration: float, attrs: Dict[str, Any]):
            nonlocal clock
            clock += duration
            realized.append(duration)
            events.append(Event(case_id=case.case_id, activity=activity, timestamp=clock,
                                event_attrs={"duration": duration, **attrs}, static_attrs=case.static_attrs))

        for i in range(p.n_initial_events):
            emit("A_Create Application" if i == 0 else "W_Complete application", case.durations[i], {})

        n_calls, total_effect = 0, 0.0
        for k, index in enumerate(action_indices, start=1):
            if self.ACTIONS[index] == "call":
                total_effect += self.call_effect(case.static_attrs["loan_type"], sum(realized) / len(realized))
                n_calls += 1
            duration = case.durations[p.n_initial_events + k - 1] * p.call_duration_factor ** n_calls
            emit(self.HANDLE_ACTIVITY, duration, {"action": self.ACTIONS[index]})

        throughput = max(case.draws["base_tpt"] - total_effect, 0.0)
        return events, p.cost_tpt * throughput + n_calls * p.cost_call

    def historical_action(self, prefix: Prefix, k: int) -> str:
        """Call iff the loan type is a high-effect type and the average duration exceeds the threshold"""
        loan_type = prefix.static_attrs.get("loan_type")
        if loan_type in self.params.high_effect_types and average_duration(prefix) > self.params.duration_threshold:
            return "call"
        return "wait"


# =============================================================================
# Loan processing with procedure and interest-rate choices
# =============================================================================

@dataclass(frozen=True)
class LoanProcParams:
    """Costs, refusal model and amount distribution of the loanproc process"""
    cost_standard: float = 100.0
    cost_priority: float = 400.0
    interest_levels: Tuple[str, ...] = ("low", "medium", "high")
    interest_rates: Tuple[float, ...] = (0.05, 0.07, 0.09)
    refusal_intercept: float = -1.5
    refusal_rate_coef: float = 1.2
    refusal_priority_coef: float = -1.0
    refusal_quality_coef: float = -2.0
    allow_refusal: bool = True
    amount_median: float = 10000.0
    amount_sigma: float = 0.6
    priority_amount_threshold: float = 10000.0
    priority_speedup: float = 0.5
    duration_shape: float = 2.0
    duration_scale: float = 30.0

    def __post_init__(self):
        if not 0 <= self.cost_standard < self.cost_priority:
            raise ConfigError("Costs must satisfy 0 <= cost_standard < cost_priority",
                              key="simulator.params.cost_priority")
        if len(self.interest_levels) != 3 or len(self.interest_rates) != 3:
            raise ConfigError("Exactly three interest levels and rates are required",
                              key="simulator.params.interest_rates")
        if self.refusal_priority_coef > 0:
            raise ConfigError("refusal_priority_coef must be <= 0", key="simulator.params.refusal_priority_coef")
        if self.amount_median <= 0 or self.amount_sigma < 0:
            raise ConfigError("Invalid loan amount distribution", key="simulator.params.amount_median")


class LoanProcSimulator(ProcessSimulator):
    """
    Six-event loan process with two decisions: the procedure (standard or
    priority) after validation and the interest rate after document
    assessment. Profit (maximized) = amount * rate - procedure cost, with the
    interest income lost when the client refuses.
    """

    name = "loanproc"
    direction = "max"
    PROCEDURES = ("standard", "priority")

    def __init__(self, config: SimConfig):
        if config.n_decision_points != 2:
            raise ConfigError("loanproc has exactly 2 decision points", key="axes.n_decision_points")
        super().__init__(config)
        self.params = _params_from_dict(LoanProcParams, config.params)

    def decision_specs(self) -> Tuple[DecisionPointSpec, ...]:
        return (DecisionPointSpec(k=1, prefix_length=2, actions=self.PROCEDURES, action_attr="procedure"),
                DecisionPointSpec(k=2, prefix_length=4, actions=tuple(self.params.interest_levels),
                                  action_attr="interest_rate"))

    def attribute_hints(self) -> Tuple[AttributeHint, ...]:
        return parse_schema_hints(["event:duration:num", "event:procedure:cat", "event:risk_score:num",
                                   "event:interest_rate:cat", "event:response:cat",
                                   "static:amount:num", "static:client_quality:num"])

    def sample_case(self, rng: np.random.Generator, case_id: str) -> SimCase:
        p = self.params
        statics = {"amount": round(float(rng.lognormal(math.log(p.amount_median), p.amount_sigma)), 2),
                   "client_quality": round(float(rng.uniform(0.0, 1.0)), 4)}
        durations = rng.gamma(p.duration_shape, p.duration_scale, size=6)
        draws = {"risk_score": float(np.clip(1.0 - statics["client_quality"] + rng.normal(0.0, 0.1), 0.0, 1.0)),
                 "refusal_u": float(rng.random())}
        coins, randoms = self._coins(rng)
        return SimCase(case_id=case_id, static_attrs=statics, durations=tuple(float(d) for d in durations),
                       draws=draws, policy_coins=coins, random_actions=randoms)

    def refusal_probability(self, procedure: str, level_index: int, quality: float) -> float:
        p = self.params
        z = (p.refusal_intercept + p.refusal_rate_coef * level_index
             + p.refusal_priority_coef * (procedure == "priority") + p.refusal_quality_coef * quality)
        return 1.0 / (1.0 + math.exp(-z))

    def _simulate(self, case: SimCase, action_indices: Sequence[int]) -> Tuple[List[Event], float]:
        p = self.params
        procedure = self.PROCEDURES[action_indices[0]]
        level = action_indices[1]
        refused = p.allow_refusal and case.draws["refusal_u"] < self.refusal_probability(
            procedure, level, case.static_attrs["client_quality"])
        assess_factor = p.priority_speedup if procedure == "priority" else 1.0
        plan = [("start_application", case.durations[0], {}),
                ("validate_application", case.durations[1], {}),
                ("choose_procedure", case.durations[2], {"procedure": procedure}),
                ("assess_documents", case.durations[3] * assess_factor, {"risk_score": case.draws["risk_score"]}),
                ("set_interest_rate", case.durations[4], {"interest_rate": p.interest_levels[level]}),
                ("client_response", case.durations[5], {"response": "refuse" if refused else "accept"})]
        events, clock = [], 0.0
        for activity, duration, attrs in plan:
            clock += duration
            events.append(Event(case_id=case.case_id, activity=activity, timestamp=clock,
                                event_attrs={"duration": duration, **attrs}, static_attrs=case.static_attrs))
        cost = p.cost_priority if procedure == "priority" else p.cost_standard
        income = 0.0 if refused else case.static_attrs["amount"] * p.interest_rates[level]
        return events, income - cost

    def historical_action(self, prefix: Prefix, k: int) -> str:
        """Priority for large loans; priority cases get the medium rate, standard the high rate"""
        if k == 1:
            return "priority" if prefix.static_attrs["amount"] > self.params.priority_amount_threshold else "standard"
        procedure = prefix.events[2].event_attrs.get("procedure")
        return self.params.interest_levels[1] if procedure == "priority" else self.params.interest_levels[2]


# =============================================================================
# Factory
# =============================================================================

SIMULATORS = {
    "filecall": FileCallSimulator,
    "loanproc": LoanProcSimulator,
}


def create_simulator(config: SimConfig) -> ProcessSimulator:
    """Factory function to create a simulator from its config"""
    if config.simulator == "toy":
        from toy_processes import create_toy_simulator
        return create_toy_simulator(config)
    if config.simulator not in SIMULATORS:
        raise ConfigError(f"Unknown simulator '{config.simulator}'", key="simulator.name")
    return SIMULATORS[config.simulator](config)
