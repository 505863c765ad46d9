#!/usr/bin/env python3
"""
=============================================================================
SEQUENTIAL INTERVENTION POLICIES BY REGRET-BASED BACKWARD INDUCTION
=============================================================================

Trains one causal stage learner per decision point, from the last decision
point to the first, and recommends actions by querying those learners
forwards.

KEY FEATURES:
• BACKWARD INDUCTION: the learner at k is fit on targets V(k+1), starting
  from the observed outcome at K+1
• REGRET-FORM VALUES: V(k) = V(k+1) + Q(opt) - Q(obs), which moves the
  observed outcome towards the estimated optimum for both directions
• FORWARD INFERENCE: recommend() encodes the prefix and asks the learner
  of that decision point for its best action
• ARTIFACTS: any policy can be saved and loaded with joblib

ARCHITECTURE:
• InterventionPolicy: recommend / recommend_batch contract for all methods
• TrainedPolicy: learners + feature schema + encoding mode
• fit_stages(): shared by the sequential method and the SEP baseline
• check_value_identity(): regret form vs max form on an exact toy
=============================================================================
"""

import itertools
import logging
from abc import ABC, abstractmethod
from typing import Any, Dict, List, Optional, Sequence, Tuple

import joblib
import numpy as np

from base_models import ModelSpec
from causal_learners import StageLearner, fit_stage, select_actions, sub_seed
from errors import EventLogError, SchemaError, TrainingError
from event_log import (Dataset, DecisionPointSpec, FeatureSchema, Prefix, as_design_matrix, encode_prefixes,
                       fit_schema)

logger = logging.getLogger(__name__)

POLICY_FORMAT_VERSION = 1


class InterventionPolicy(ABC):
    """Maps the prefix at decision point k to an action of A_k"""

    method = "policy"

    def __init__(self, specs: Sequence[DecisionPointSpec], direction: str):
        self.specs = tuple(specs)
        self.direction = direction

    def spec(self, k: int) -> DecisionPointSpec:
        if not 1 <= k <= len(self.specs):
            raise EventLogError(f"Decision point {k} is outside 1..{len(self.specs)}", k=k)
        return self.specs[k - 1]

    def check_prefixes(self, prefixes: Sequence[Prefix], k: int) -> DecisionPointSpec:
        spec = self.spec(k)
        for prefix in prefixes:
            if prefix.length != spec.prefix_length:
                raise EventLogError(f"Prefix of length {prefix.length} given at decision point {k}, "
                                    f"expected {spec.prefix_length}", case_id=prefix.case_id, k=k)
        return spec

    @abstractmethod
    def recommend_batch(self, prefixes: Sequence[Prefix], k: int) -> List[str]:
        """One recommended action per prefix"""

    def recommend(self, prefix: Prefix, k: int) -> str:
        return self.recommend_batch([prefix], k)[0]

    def describe(self) -> Dict[str, Any]:
        return {"method": self.method, "direction": self.direction, "n_decision_points": len(self.specs)}


class TrainedPolicy(InterventionPolicy):
    """Stage learners M_1..M_K plus the encoding they were trained on"""

    def __init__(self, learners: Sequence[StageLearner], specs: Sequence[DecisionPointSpec], direction: str,
                 schema: FeatureSchema, encoding: str = "flat", learner_kind: str = "S",
                 method: str = "scope", model_label: str = ""):
        super().__init__(specs, direction)
        if len(learners) != len(self.specs):
            raise TrainingError(f"Expected {len(self.specs)} learners, got {len(learners)}")
        self.learners = list(learners)
        self.schema = schema
        self.encoding = encoding
        self.learner_kind = learner_kind
        self.method = method
        self.model_label = model_label

    def _encode(self, prefixes: Sequence[Prefix]) -> np.ndarray:
        return as_design_matrix(encode_prefixes(prefixes, self.schema, self.encoding))

    def q_values(self, prefixes: Sequence[Prefix], k: int) -> np.ndarray:
        self.check_prefixes(prefixes, k)
        return self.learners[k - 1].q_values(self._encode(prefixes))

    def recommend_batch(self, prefixes: Sequence[Prefix], k: int) -> List[str]:
        spec = self.check_prefixes(prefixes, k)
        if not prefixes:
            return []
        chosen, _ = self.learners[k - 1].best_action(self._encode(prefixes), self.direction)
        return [spec.actions[i] for i in chosen]

    def describe(self) -> Dict[str, Any]:
        return {**super().describe(), "learner": self.learner_kind, "base_model": self.model_label,
                "encoding": self.encoding}


def fit_stages(dataset: Dataset, learner_kind: str, model_spec: ModelSpec, direction: str, seed: int,
               schema: FeatureSchema, encoding: str = "flat", ra_variant: str = "as_printed",
               propagate_values: bool = True) -> Tuple[List[StageLearner], Dict[str, float]]:
    """
    Fit learners for k = K..1.

    With propagate_values the targets at k are the regret-corrected values
    V(k+1); without it every stage is fit on the observed outcome.

    Returns:
        (learners in order 1..K, final per-case values)
    """
    if direction not in ("max", "min"):
        raise TrainingError(f"direction must be 'max' or 'min', got {direction!r}")
    values: Dict[str, float] = dataset.outcomes()
    learners: Dict[int, StageLearner] = {}
    for spec in reversed(dataset.specs):
        samples = dataset.samples_at(spec.k)
        if not samples:
            raise TrainingError(f"No training samples reach decision point {spec.k}", k=spec.k)
        X = as_design_matrix(encode_prefixes([s.prefix for s in samples], schema, encoding))
        a_obs = np.array([s.action_index for s in samples], dtype=int)
        targets = np.array([values[s.case_id] if propagate_values else s.outcome for s in samples])
        learner = fit_stage(learner_kind, X, a_obs, targets, spec, model_spec, sub_seed(seed, spec.k), ra_variant)
        learners[spec.k] = learner

        if propagate_values:
            q = learner.q_values(X)
            _, q_opt = learner.best_action(X, direction)
            q_obs = q[np.arange(len(samples)), a_obs]
            # max: V += Q_opt - Q_obs; min: V -= Q_obs - Q_opt
            updated = targets + (q_opt - q_obs)
            if not np.all(np.isfinite(updated)):
                raise TrainingError(f"Non-finite propagated values at decision point {spec.k}", k=spec.k)
            for sample, value in zip(samples, updated):
                values[sample.case_id] = float(value)
            logger.info(f"Stage k={spec.k}: {len(samples)} samples, mean regret correction "
                        f"{float(np.mean(q_opt - q_obs)):.4f}")
        else:
            logger.info(f"Stage k={spec.k}: {len(samples)} samples fit on observed outcomes")
    return [learners[spec.k] for spec in dataset.specs], values


def train(dataset: Dataset, learner_kind: str = "S", model_spec: Optional[ModelSpec] = None,
          direction: str = "min", seed: int = 0, encoding: str = "flat",
          schema: Optional[FeatureSchema] = None, ra_variant: str = "as_printed",
          max_length: Optional[int] = None) -> TrainedPolicy:
    """Backward-induction training over every decision point of the dataset"""
    model_spec = model_spec or ModelSpec()
    schema = schema or fit_schema(dataset, max_length)
    learners, _ = fit_stages(dataset, learner_kind, model_spec, direction, seed, schema, encoding,
                             ra_variant, propagate_values=True)
    return TrainedPolicy(learners, dataset.specs, direction, schema, encoding, learner_kind,
                         method=f"scope-{learner_kind.lower()}", model_label=model_spec.label())


def check_value_identity(toy) -> bool:
    """
    Regret-form and max-form recursions pick the same action at every state
    when Q is exact.

    `toy` is a ToyProcessSimulator (or anything with the same `params`):
    the max form takes V(k) = best_a Q(k, s, a); the regret form walks every
    action sequence of the full-support table, correcting each observed
    outcome by Q(opt) - Q(obs) and averaging per (state, action).
    """
    params = toy.params
    n_stages = len(params.actions)
    pick = np.argmax if params.direction == "max" else np.argmin

    sequences = [((context,) + tuple(seq), float(params.outcomes["|".join((context,) + tuple(seq))]))
                 for context in params.contexts for seq in itertools.product(*params.actions)]

    # max form
    max_values: Dict[Tuple[str, ...], float] = {seq: y for seq, y in sequences}
    max_policy: Dict[Tuple[str, ...], int] = {}
    for k in range(n_stages, 0, -1):
        states = sorted({seq[:k] for seq, _ in sequences})
        for state in states:
            q = np.array([max_values[state + (a,)] for a in params.actions[k - 1]])
            max_policy[state] = int(pick(q))
            max_values[state] = float(q[max_policy[state]])

    # regret form
    regret_values = {seq: y for seq, y in sequences}
    regret_policy: Dict[Tuple[str, ...], int] = {}
    for k in range(n_stages, 0, -1):
        q_table: Dict[Tuple[str, ...], List[float]] = {}
        for seq in regret_values:
            q_table.setdefault(seq[:k + 1], []).append(regret_values[seq])
        q_mean = {key: float(np.mean(vals)) for key, vals in q_table.items()}
        for state in sorted({seq[:k] for seq in regret_values}):
            q = np.array([q_mean[state + (a,)] for a in params.actions[k - 1]])
            regret_policy[state] = int(select_actions(q[None, :], params.direction)[0])
        for seq in regret_values:
            state = seq[:k]
            q_opt = q_mean[state + (params.actions[k - 1][regret_policy[state]],)]
            regret_values[seq] = regret_values[seq] + q_opt - q_mean[seq[:k + 1]]

    identical = max_policy == regret_policy
    logger.debug(f"Value identity over {len(max_policy)} states: {identical}")
    return identical


# =============================================================================
# Artifacts
# =============================================================================

def save_policy(policy: InterventionPolicy, path: str, metadata: Optional[Dict[str, Any]] = None) -> None:
    """Persist a policy with joblib inside a versioned payload"""
    payload = {"format_version": POLICY_FORMAT_VERSION, "method": policy.method,
               "describe": policy.describe(), "metadata": dict(metadata or {}), "policy": policy}
    joblib.dump(payload, path)
    logger.info(f"Saved {policy.method} policy to {path}")


def load_policy(path: str) -> Tuple[InterventionPolicy, Dict[str, Any]]:
    """Load a policy saved by save_policy; returns (policy, metadata)"""
    payload = joblib.load(path)
    if not isinstance(payload, dict) or payload.get("format_version") != POLICY_FORMAT_VERSION:
        raise SchemaError(f"{path} is not a policy artifact of format version {POLICY_FORMAT_VERSION}")
    logger.info(f"Loaded {payload['method']} policy from {path}")
    return payload["policy"], payload["metadata"]
