#!/usr/bin/env python3
"""
=============================================================================
COMPARISON POLICIES
=============================================================================

KEY FEATURES:
• SEP: independent per-decision-point learners fit on the final outcome,
  sharing every code path with the sequential method except the targets
• KMEANS-Q: prefixes clustered with k-means++; MDP states are
  (cluster, last activity); an MDP built by replaying the log; tabular
  Q-learning over replayed transitions with epsilon-greedy exploration
• RANDOM: uniform action per decision point, a pure function of
  (seed, case, k)
• HISTORICAL: the simulator's bank rule as a policy object
• UPPER BOUND: per-case best KPI by exhaustive enumeration

The whole outcome is assigned to the terminal transition of a case;
intermediate rewards are 0. For minimized KPIs the reward is the negated
outcome so Q-learning always maximizes.
=============================================================================
"""

import logging
import zlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.cluster import KMeans
from sklearn.metrics import silhouette_score

from base_models import ModelSpec
from errors import TrainingError
from event_log import (Dataset, DecisionPointSpec, FeatureSchema, Prefix, as_design_matrix, encode_prefixes,
                       fit_schema)
from scope import InterventionPolicy, TrainedPolicy, fit_stages
from simulators import ProcessSimulator, SimCase

logger = logging.getLogger(__name__)

TERMINAL = ("__terminal__",)
State = Hashable
Transition = Tuple[State, str, State, float]

KMEANS_Q_DEFAULTS = {"n_clusters": 8, "alpha": 0.1, "gamma": 1.0, "epsilon": 0.1, "n_episodes": 30,
                     "max_iter": 100}


# =============================================================================
# SEP
# =============================================================================

def train_sep(dataset: Dataset, learner_kind: str = "S", model_spec: Optional[ModelSpec] = None,
              direction: str = "min", seed: int = 0, encoding: str = "flat",
              schema: Optional[FeatureSchema] = None, ra_variant: str = "as_printed",
              max_length: Optional[int] = None) -> TrainedPolicy:
    """Separate per-decision-point learners on the observed outcome"""
    model_spec = model_spec or ModelSpec()
    schema = schema or fit_schema(dataset, max_length)
    learners, _ = fit_stages(dataset, learner_kind, model_spec, direction, seed, schema, encoding,
                             ra_variant, propagate_values=False)
    return TrainedPolicy(learners, dataset.specs, direction, schema, encoding, learner_kind,
                         method=f"sep-{learner_kind.lower()}", model_label=model_spec.label())


# =============================================================================
# MDP from log replay
# =============================================================================

@dataclass
class MdpModel:
    """Replay statistics: per (state, action) successor counts and average reward"""
    successors: Dict[Tuple[State, str], Counter] = field(default_factory=dict)
    reward_sums: Dict[Tuple[State, str], float] = field(default_factory=dict)
    visits: Dict[Tuple[State, str], int] = field(default_factory=dict)
    state_actions: Dict[State, List[str]] = field(default_factory=dict)

    def add(self, state: State, action: str, next_state: State, reward: float) -> None:
        key = (state, action)
        if key not in self.visits:
            self.state_actions.setdefault(state, []).append(action)
        self.successors.setdefault(key, Counter())[next_state] += 1
        self.reward_sums[key] = self.reward_sums.get(key, 0.0) + reward
        self.visits[key] = self.visits.get(key, 0) + 1

    def reward(self, state: State, action: str) -> float:
        key = (state, action)
        return self.reward_sums[key] / self.visits[key]

    def probabilities(self, state: State, action: str) -> Dict[State, float]:
        counts = self.successors[(state, action)]
        total = sum(counts.values())
        return {successor: count / total for successor, count in counts.items()}

    def actions(self, state: State) -> List[str]:
        """Actions observed at a state, in first-seen order"""
        return self.state_actions.get(state, [])

    @property
    def states(self) -> List[State]:
        return list(self.state_actions)


def build_mdp(episodes: Sequence[Sequence[Transition]]) -> MdpModel:
    """Count successors and rewards of every replayed transition"""
    mdp = MdpModel()
    for episode in episodes:
        for state, action, next_state, reward in episode:
            mdp.add(state, action, next_state, float(reward))
    if not mdp.visits:
        raise TrainingError("Empty state space: no transitions to replay")
    return mdp


def _greedy_value(q_table: Dict[Tuple[State, str], float], mdp: MdpModel, state: State) -> float:
    if state == TERMINAL:
        return 0.0
    values = [q_table[(state, a)] for a in mdp.actions(state)]
    return max(values) if values else 0.0


def value_iteration(mdp: MdpModel, gamma: float, tol: float = 1e-12,
                    max_iter: int = 100000) -> Dict[Tuple[State, str], float]:
    """Q* of the replay MDP"""
    q_table = {key: 0.0 for key in mdp.visits}
    for _ in range(max_iter):
        change = 0.0
        for state, action in mdp.visits:
            target = mdp.reward(state, action) + gamma * sum(
                p * _greedy_value(q_table, mdp, successor)
                for successor, p in mdp.probabilities(state, action).items())
            change = max(change, abs(target - q_table[(state, action)]))
            q_table[(state, action)] = target
        if change < tol:
            break
    return q_table


def q_learning(mdp: MdpModel, episodes: Sequence[Sequence[Transition]], alpha: float = 0.1, gamma: float = 1.0,
               n_episodes: int = 30, epsilon: float = 0.1, seed: int = 0) -> Dict[Tuple[State, str], float]:
    """
    Tabular Q-learning over replayed transitions.

    Each pass visits the logged episodes in a shuffled order. With
    probability epsilon a transition is replaced by an exploratory one: an
    observed action at the same state and a successor sampled from the MDP.
    Rewards are the MDP's per (state, action) averages.
    """
    rng = np.random.default_rng(seed)
    q_table = {key: 0.0 for key in mdp.visits}
    for _ in range(n_episodes):
        for index in rng.permutation(len(episodes)):
            for state, action, next_state, _ in episodes[index]:
                if epsilon > 0 and rng.random() < epsilon:
                    options = mdp.actions(state)
                    action = options[int(rng.integers(0, len(options)))]
                    probs = mdp.probabilities(state, action)
                    successors = list(probs)
                    next_state = successors[int(rng.choice(len(successors), p=list(probs.values())))]
                key = (state, action)
                target = mdp.reward(state, action) + gamma * _greedy_value(q_table, mdp, next_state)
                q_table[key] += alpha * (target - q_table[key])
    return q_table


# =============================================================================
# KMeans-Q policy
# =============================================================================

class KMeansQPolicy(InterventionPolicy):
    """Greedy policy over a Q-table on (cluster, last activity) states"""

    method = "kmeans-q"

    def __init__(self, specs: Sequence[DecisionPointSpec], direction: str, schema: FeatureSchema, encoding: str,
                 kmeans: KMeans, q_table: Dict[Tuple[State, str], float], mdp: MdpModel,
                 fallback: Dict[int, str], silhouette: float, params: Dict[str, Any]):
        super().__init__(specs, direction)
        self.schema = schema
        self.encoding = encoding
        self.kmeans = kmeans
        self.q_table = q_table
        self.mdp = mdp
        self.fallback = fallback
        self.silhouette = silhouette
        self.params = params
        self._state_actions: Dict[State, Counter] = {}
        for (state, action), count in mdp.visits.items():
            self._state_actions.setdefault(state, Counter())[action] += count

    def states_of(self, prefixes: Sequence[Prefix]) -> List[State]:
        X = as_design_matrix(encode_prefixes(prefixes, self.schema, self.encoding))
        clusters = self.kmeans.predict(X) if len(prefixes) else []
        return [(int(c), p.events[-1].activity if p.events else "") for c, p in zip(clusters, prefixes)]

    def _choose(self, state: State, spec: DecisionPointSpec) -> str:
        seen = [a for a in spec.actions if (state, a) in self.q_table]
        if seen:
            best = seen[0]
            for action in seen[1:]:
                if self.q_table[(state, action)] > self.q_table[(state, best)]:
                    best = action
            return best
        counts = self._state_actions.get(state)
        if counts:
            ranked = [a for a in spec.actions if counts.get(a, 0) > 0]
            if ranked:
                return max(ranked, key=lambda a: (counts[a], -spec.actions.index(a)))
        return self.fallback[spec.k]

    def recommend_batch(self, prefixes: Sequence[Prefix], k: int) -> List[str]:
        spec = self.check_prefixes(prefixes, k)
        return [self._choose(state, spec) for state in self.states_of(prefixes)]

    def describe(self) -> Dict[str, Any]:
        return {**super().describe(), "silhouette": self.silhouette, **self.params}


def _most_frequent(actions: Sequence[str], space: Sequence[str]) -> str:
    counts = Counter(actions)
    return max(space, key=lambda a: (counts.get(a, 0), -list(space).index(a)))


def train_kmeans_q(dataset: Dataset, direction: str = "min", seed: int = 0, encoding: str = "flat",
                   schema: Optional[FeatureSchema] = None, max_length: Optional[int] = None,
                   **params: Any) -> KMeansQPolicy:
    """
    Cluster encoded prefixes, replay the log as an MDP and run Q-learning.

    Keyword params: n_clusters, alpha, gamma, epsilon, n_episodes, max_iter.
    """
    unknown = set(params) - set(KMEANS_Q_DEFAULTS)
    if unknown:
        raise TrainingError(f"Unknown KMeans-Q parameters: {sorted(unknown)}")
    p = {**KMEANS_Q_DEFAULTS, **params}
    if int(p["n_clusters"]) < 1:
        raise TrainingError(f"n_clusters must be >= 1, got {p['n_clusters']}")
    if len(dataset) == 0:
        raise TrainingError("Empty state space: dataset has no samples")
    schema = schema or fit_schema(dataset, max_length)
    samples = list(dataset.samples)
    X = as_design_matrix(encode_prefixes([s.prefix for s in samples], schema, encoding))
    n_clusters = min(int(p["n_clusters"]), np.unique(X, axis=0).shape[0])
    kmeans = KMeans(n_clusters=n_clusters, init="k-means++", n_init=1, max_iter=int(p["max_iter"]),
                    random_state=seed % (2**32 - 1)).fit(X)
    labels = kmeans.labels_
    silhouette = 0.0
    if 2 <= n_clusters < len(samples):
        silhouette = float(silhouette_score(X, labels, sample_size=min(2000, len(samples)),
                                            random_state=seed % (2**32 - 1)))

    by_case: Dict[str, List[Tuple[int, State, str, float]]] = {}
    for sample, label in zip(samples, labels):
        state = (int(label), sample.prefix.events[-1].activity)
        by_case.setdefault(sample.case_id, []).append((sample.k, state, sample.action, sample.outcome))
    sign = 1.0 if direction == "max" else -1.0
    episodes: List[List[Transition]] = []
    for steps in by_case.values():
        steps.sort(key=lambda step: step[0])
        episode = []
        for i, (_, state, action, outcome) in enumerate(steps):
            last = i == len(steps) - 1
            episode.append((state, action, TERMINAL if last else steps[i + 1][1], sign * outcome if last else 0.0))
        episodes.append(episode)

    mdp = build_mdp(episodes)
    q_table = q_learning(mdp, episodes, alpha=float(p["alpha"]), gamma=float(p["gamma"]),
                         n_episodes=int(p["n_episodes"]), epsilon=float(p["epsilon"]), seed=seed)
    fallback = {spec.k: _most_frequent([s.action for s in dataset.samples_at(spec.k)], spec.actions)
                for spec in dataset.specs}
    logger.info(f"KMeans-Q: {n_clusters} clusters, {len(mdp.states)} states, silhouette {silhouette:.3f}")
    return KMeansQPolicy(dataset.specs, direction, schema, encoding, kmeans, q_table, mdp, fallback,
                         silhouette, {k: p[k] for k in KMEANS_Q_DEFAULTS})


# =============================================================================
# Random, historical, upper bound
# =============================================================================

class RandomPolicy(InterventionPolicy):
    """Uniform action per (case, decision point), reproducible from the seed"""

    method = "random"

    def __init__(self, specs: Sequence[DecisionPointSpec], direction: str, seed: int = 0):
        super().__init__(specs, direction)
        self.seed = int(seed)

    def recommend_batch(self, prefixes: Sequence[Prefix], k: int) -> List[str]:
        spec = self.check_prefixes(prefixes, k)
        actions = []
        for prefix in prefixes:
            rng = np.random.default_rng([self.seed, k, zlib.crc32(prefix.case_id.encode("utf-8"))])
            actions.append(spec.actions[int(rng.integers(0, len(spec.actions)))])
        return actions


def random_policy(specs: Sequence[DecisionPointSpec], seed: int = 0, direction: str = "min") -> RandomPolicy:
    return RandomPolicy(specs, direction, seed)


class HistoricalPolicy(InterventionPolicy):
    """The simulator's bank rule, without the random-action mixing"""

    method = "bank"

    def __init__(self, simulator: ProcessSimulator):
        super().__init__(simulator.decision_specs(), simulator.direction)
        self.simulator = simulator

    def recommend_batch(self, prefixes: Sequence[Prefix], k: int) -> List[str]:
        self.check_prefixes(prefixes, k)
        return [self.simulator.historical_action(prefix, k) for prefix in prefixes]


def upper_bound_outcomes(simulator: ProcessSimulator, cases: Sequence[SimCase], cap: int = 4096) -> List[float]:
    return [simulator.best_outcome(case, cap)[1] for case in cases]


def upper_bound(simulator: ProcessSimulator, cases: Sequence[SimCase], cap: int = 4096) -> float:
    """Sum over cases of the best KPI reachable by any action sequence"""
    return float(sum(upper_bound_outcomes(simulator, cases, cap)))
