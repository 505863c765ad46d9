#!/usr/bin/env python3
"""
Discrete toy processes with deterministic outcomes.

A toy case has one categorical context ('segment') and K decisions; its
outcome is read from a table keyed by (context, a_1, ..., a_K). Toys share
the ProcessSimulator interface, so logs, training, evaluation and the upper
bound all run on them, and `dp_optimal_policy` gives the exact optimum.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigError, SimulationError
from event_log import AttributeHint, DecisionPointSpec, Event, EventLog, Prefix, parse_schema_hints
from simulators import ProcessSimulator, SimCase, SimConfig, _params_from_dict

logger = logging.getLogger(__name__)

State = Tuple[str, ...]


def state_key(state: Sequence[str]) -> str:
    return "|".join(state)


@dataclass(frozen=True)
class ToyParams:
    """Contexts, action spaces, outcome table and historical rule"""
    contexts: Tuple[str, ...] = ("all",)
    context_probs: Tuple[float, ...] = (1.0,)
    actions: Tuple[Tuple[str, ...], ...] = ()
    outcomes: Dict[str, float] = field(default_factory=dict)
    historical: Dict[str, str] = field(default_factory=dict)
    direction: str = "max"

    def __post_init__(self):
        if len(self.contexts) != len(self.context_probs) or abs(sum(self.context_probs) - 1.0) > 1e-9:
            raise ConfigError("context_probs must match contexts and sum to 1", key="simulator.params.context_probs")
        if self.direction not in ("max", "min"):
            raise ConfigError(f"direction must be 'max' or 'min', got {self.direction!r}",
                              key="simulator.params.direction")
        object.__setattr__(self, "actions", tuple(tuple(a) for a in self.actions))
        for context in self.contexts:
            for sequence in itertools.product(*self.actions):
                key = state_key((context,) + sequence)
                if key not in self.outcomes:
                    raise ConfigError(f"Outcome table misses '{key}'", key="simulator.params.outcomes")


def marketing_params() -> ToyParams:
    """Email then discount: an email only pays off when a discount follows."""
    return ToyParams(
        actions=(("no_email", "email"), ("no_discount", "discount")),
        outcomes={"all|no_email|no_discount": 10.0, "all|no_email|discount": 9.0,
                  "all|email|no_discount": 0.0, "all|email|discount": 12.0},
        historical={"all": "no_email", "all|no_email": "no_discount", "all|email": "no_discount"},
    )


def two_context_params() -> ToyParams:
    """Two contexts whose optimal sequences differ"""
    return ToyParams(
        contexts=("x0", "x1"),
        context_probs=(0.5, 0.5),
        actions=(("a", "b"), ("c", "d")),
        outcomes={"x0|a|c": 5.0, "x0|a|d": 1.0, "x0|b|c": 2.0, "x0|b|d": 7.0,
                  "x1|a|c": 3.0, "x1|a|d": 8.0, "x1|b|c": 6.0, "x1|b|d": 0.0},
        historical={"x0": "a", "x1": "b", "x0|a": "c", "x0|b": "c", "x1|a": "c", "x1|b": "c"},
    )


TOY_INSTANCES = {
    "marketing": marketing_params,
    "two_context": two_context_params,
}


class ToyProcessSimulator(ProcessSimulator):
    """Event 1 'start' carries the context; event k+1 'decide' carries action k."""

    name = "toy"

    def __init__(self, config: SimConfig, params: ToyParams):
        if config.n_decision_points != len(params.actions):
            raise ConfigError(f"Toy instance has {len(params.actions)} decision points, "
                              f"config asks for {config.n_decision_points}", key="axes.n_decision_points")
        super().__init__(config)
        self.params = params
        self.direction = params.direction

    def decision_specs(self) -> Tuple[DecisionPointSpec, ...]:
        return tuple(DecisionPointSpec(k=k, prefix_length=k, actions=actions, action_attr="action")
                     for k, actions in enumerate(self.params.actions, start=1))

    def attribute_hints(self) -> Tuple[AttributeHint, ...]:
        return parse_schema_hints(["event:action:cat", "static:segment:cat"])

    def sample_case(self, rng: np.random.Generator, case_id: str) -> SimCase:
        context = str(rng.choice(self.params.contexts, p=self.params.context_probs))
        coins, randoms = self._coins(rng)
        return self.make_case(case_id, context, coins, randoms)

    def make_case(self, case_id: str, context: str, coins: Optional[Sequence[float]] = None,
                  randoms: Optional[Sequence[int]] = None) -> SimCase:
        K = self.n_decision_points
        return SimCase(case_id=case_id, static_attrs={"segment": context}, durations=(1.0,) * (K + 1), draws={},
                       policy_coins=tuple(coins) if coins is not None else (0.0,) * K,
                       random_actions=tuple(randoms) if randoms is not None else (0,) * K)

    def outcome(self, state: Sequence[str]) -> float:
        return float(self.params.outcomes[state_key(state)])

    def _simulate(self, case: SimCase, action_indices: Sequence[int]) -> Tuple[List[Event], float]:
        context = case.static_attrs["segment"]
        events = [Event(case_id=case.case_id, activity="start", timestamp=0.0, static_attrs=case.static_attrs)]
        labels = []
        for k, index in enumerate(action_indices, start=1):
            labels.append(self.params.actions[k - 1][index])
            events.append(Event(case_id=case.case_id, activity="decide", timestamp=float(k),
                                event_attrs={"action": labels[-1]}, static_attrs=case.static_attrs))
        return events, self.outcome([context] + labels)

    def state_of(self, prefix: Prefix) -> State:
        """(context, earlier actions) read from a prefix"""
        return (prefix.static_attrs["segment"],) + tuple(e.event_attrs["action"] for e in prefix.events[1:])

    def historical_action(self, prefix: Prefix, k: int) -> str:
        return self.params.historical.get(state_key(self.state_of(prefix)), self.params.actions[k - 1][0])

    def full_support_log(self, repeats: int = 1) -> EventLog:
        """One case per (context, action sequence), repeated; outcomes attached."""
        traces, outcomes = [], {}
        index = 0
        for _ in range(repeats):
            for context in self.params.contexts:
                for sequence in itertools.product(*self.params.actions):
                    case = self.make_case(f"case_{index}", context)
                    trace, kpi = self.rollout(case, sequence)
                    traces.append(trace)
                    outcomes[case.case_id] = kpi
                    index += 1
        return EventLog(traces=tuple(traces), attributes=self.attribute_hints(), case_outcomes=outcomes)

    def prefix_for(self, state: State, case_id: str = "state") -> Prefix:
        """Prefix at decision point len(state) for (context, earlier actions)"""
        return self.observe(self.make_case(case_id, state[0]), list(state[1:]), len(state))

    def states_at(self, k: int) -> List[State]:
        return [(context,) + tuple(prefix) for context in self.params.contexts
                for prefix in itertools.product(*self.params.actions[:k - 1])]


def create_toy_simulator(config: SimConfig) -> ToyProcessSimulator:
    """Build a toy from `params.instance` or from an explicit table."""
    params = dict(config.params)
    instance = params.pop("instance", None)
    if instance is not None:
        if instance not in TOY_INSTANCES:
            raise ConfigError(f"Unknown toy instance '{instance}'", key="simulator.params.instance")
        if params:
            raise ConfigError(f"Toy instance '{instance}' takes no further parameters",
                              key=f"simulator.params.{next(iter(params))}")
        toy_params = TOY_INSTANCES[instance]()
    else:
        toy_params = _params_from_dict(ToyParams, params)
    return ToyProcessSimulator(config, toy_params)


def toy_simulator(instance: str = "marketing", delta: float = 0.0, seed: int = 0) -> ToyProcessSimulator:
    """Convenience constructor for a named instance"""
    params = TOY_INSTANCES[instance]()
    config = SimConfig(simulator="toy", n_decision_points=len(params.actions), delta=delta, seed=seed,
                       params={"instance": instance})
    return ToyProcessSimulator(config, params)


# =============================================================================
# Dynamic-programming oracle
# =============================================================================

def exact_q(toy: ToyProcessSimulator, state: State, action: str) -> float:
    """Q of taking `action` at `state` and acting optimally afterwards"""
    return dp_value(toy, tuple(state) + (action,))


def dp_value(toy: ToyProcessSimulator, state: State) -> float:
    """Optimal value of a state (context plus the actions taken so far)"""
    k = len(state)
    if k == toy.n_decision_points + 1:
        return toy.outcome(state)
    values = [dp_value(toy, tuple(state) + (action,)) for action in toy.params.actions[k - 1]]
    return max(values) if toy.direction == "max" else min(values)


def dp_optimal_policy(toy: ToyProcessSimulator) -> Dict[State, str]:
    """Optimal action at every reachable state; ties go to the lowest action index."""
    policy: Dict[State, str] = {}
    for k in range(1, toy.n_decision_points + 1):
        actions = toy.params.actions[k - 1]
        for state in toy.states_at(k):
            values = [exact_q(toy, state, action) for action in actions]
            best = 0
            for index, value in enumerate(values):
                better = value > values[best] if toy.direction == "max" else value < values[best]
                if better:
                    best = index
            policy[state] = actions[best]
    return policy


def dp_optimal_sequence(toy: ToyProcessSimulator, context: str) -> Tuple[str, ...]:
    policy = dp_optimal_policy(toy)
    state: State = (context,)
    for _ in range(toy.n_decision_points):
        if state not in policy:
            raise SimulationError(f"No optimal action for state {state_key(state)}")
        state = state + (policy[state],)
    return state[1:]
