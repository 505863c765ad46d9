#!/usr/bin/env python3
"""
=============================================================================
CAUSAL STAGE LEARNERS (S / T / RA)
=============================================================================

Per-decision-point estimators of Q(prefix, action) for every action in the
decision point's action space, built on any base regressor.

KEY FEATURES:
• S-LEARNER: one regressor over features + one-hot(action), queried once
  per action with the action block swapped
• T-LEARNER: one regressor per action, each fit on the samples that
  observed that action
• RA-LEARNER: an S-learner stage, pseudo-outcomes per action against a
  baseline action, then one effect regressor per non-baseline action

Action choice breaks ties to the lowest action index. The RA-learner
chooses on its effect estimates (baseline scoring 0) and reports the
stage-1 Q-value of the chosen action.
=============================================================================
"""

import logging
from abc import ABC, abstractmethod
from typing import Dict, Optional, Tuple

import numpy as np

from base_models import ModelSpec, Regressor, fit as fit_model
from errors import PositivityError, TrainingError
from event_log import DecisionPointSpec, as_design_matrix

logger = logging.getLogger(__name__)

LEARNER_KINDS = ("S", "T", "RA")
RA_VARIANTS = ("as_printed", "classic")
BASELINE_INDEX = 0


def sub_seed(seed: int, index: int) -> int:
    """Independent child seed for the index-th model of a learner"""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def select_actions(scores: np.ndarray, direction: str) -> np.ndarray:
    """Row-wise argmax (max) or argmin (min); numpy returns the first index on ties"""
    return np.argmax(scores, axis=1) if direction == "max" else np.argmin(scores, axis=1)


def pseudo_outcomes(q_hat: np.ndarray, a_obs: np.ndarray, y: np.ndarray,
                    baseline: int = BASELINE_INDEX, variant: str = "as_printed") -> np.ndarray:
    """
    Pseudo-outcome of every training sample for every action.

    as_printed, target action a with observed action f:
        f == a: y - Q(a)
        f != a: (Q(f) - y) + (Q(f) - Q(b))
    classic, target action a != b:
        f == a: y - Q(b);  f == b: Q(a) - y;  otherwise Q(a) - Q(b)

    The baseline column is 0 in both variants.
    """
    if variant not in RA_VARIANTS:
        raise TrainingError(f"Unknown RA variant '{variant}'")
    q_hat = np.asarray(q_hat, dtype=float)
    a_obs = np.asarray(a_obs, dtype=int)
    y = np.asarray(y, dtype=float)
    rows = np.arange(len(y))
    q_obs = q_hat[rows, a_obs]
    q_base = q_hat[:, baseline]
    phi = np.zeros_like(q_hat)
    for a in range(q_hat.shape[1]):
        if a == baseline:
            continue
        observed = a_obs == a
        if variant == "as_printed":
            phi[:, a] = np.where(observed, y - q_hat[:, a], (q_obs - y) + (q_obs - q_base))
        else:
            phi[:, a] = np.where(observed, y - q_base,
                                 np.where(a_obs == baseline, q_hat[:, a] - y, q_hat[:, a] - q_base))
    return phi


class StageLearner(ABC):
    """Q-estimator for one decision point"""

    kind = "base"

    def __init__(self, spec: DecisionPointSpec, model_spec: ModelSpec):
        self.spec = spec
        self.model_spec = model_spec.for_stage(spec.k)
        self.n_actions = len(spec.actions)
        self.fitted = False

    def fit(self, X: np.ndarray, a_obs: np.ndarray, targets: np.ndarray, seed: int = 0) -> 'StageLearner':
        X = as_design_matrix(np.asarray(X, dtype=float))
        a_obs = np.asarray(a_obs, dtype=int)
        targets = np.asarray(targets, dtype=float)
        self._fit(X, a_obs, targets, seed)
        self.fitted = True
        logger.debug(f"Fitted {self.kind}-learner at k={self.spec.k} on {len(targets)} samples "
                     f"({self.model_spec.kind})")
        return self

    def _base_fit(self, X: np.ndarray, y: np.ndarray, seed: int) -> Regressor:
        return fit_model(self.model_spec.kind, self.model_spec.params, X, y, seed)

    def _require_positivity(self, a_obs: np.ndarray) -> None:
        counts = np.bincount(a_obs, minlength=self.n_actions)
        for index, count in enumerate(counts):
            if count == 0:
                action = self.spec.actions[index]
                raise PositivityError(f"Action '{action}' never observed at decision point {self.spec.k}",
                                      action=action, k=self.spec.k)

    @abstractmethod
    def _fit(self, X: np.ndarray, a_obs: np.ndarray, targets: np.ndarray, seed: int) -> None:
        pass

    @abstractmethod
    def q_values(self, X: np.ndarray) -> np.ndarray:
        """(n, |A_k|) Q-estimates in action-space order"""

    def action_scores(self, X: np.ndarray, q: Optional[np.ndarray] = None) -> np.ndarray:
        """Scores the action choice is made on"""
        return self.q_values(X) if q is None else q

    def best_action(self, X: np.ndarray, direction: str) -> Tuple[np.ndarray, np.ndarray]:
        """Chosen action indices and the Q-estimate at each chosen action"""
        X = as_design_matrix(np.asarray(X, dtype=float))
        q = self.q_values(X)
        scores = self.action_scores(X, q)
        chosen = select_actions(scores, direction)
        return chosen, q[np.arange(len(chosen)), chosen]


class SLearner(StageLearner):
    kind = "S"

    def _augment(self, X: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return np.hstack([X, np.eye(self.n_actions)[actions]])

    def _fit(self, X, a_obs, targets, seed):
        self.model_ = self._base_fit(self._augment(X, a_obs), targets, seed)

    def q_values(self, X):
        X = as_design_matrix(np.asarray(X, dtype=float))
        n = X.shape[0]
        stacked = np.vstack([self._augment(X, np.full(n, a, dtype=int)) for a in range(self.n_actions)])
        return self.model_.predict(stacked).reshape(self.n_actions, n).T


class TLearner(StageLearner):
    kind = "T"

    def _fit(self, X, a_obs, targets, seed):
        self._require_positivity(a_obs)
        self.models_ = [self._base_fit(X[a_obs == a], targets[a_obs == a], sub_seed(seed, a))
                        for a in range(self.n_actions)]

    def q_values(self, X):
        X = as_design_matrix(np.asarray(X, dtype=float))
        return np.column_stack([model.predict(X) for model in self.models_])


class RALearner(StageLearner):
    kind = "RA"

    def __init__(self, spec: DecisionPointSpec, model_spec: ModelSpec, variant: str = "as_printed"):
        super().__init__(spec, model_spec)
        if variant not in RA_VARIANTS:
            raise TrainingError(f"Unknown RA variant '{variant}'", k=spec.k)
        self.variant = variant

    def _fit(self, X, a_obs, targets, seed):
        self._require_positivity(a_obs)
        self.stage1_ = SLearner(self.spec, self.model_spec)
        self.stage1_.fit(X, a_obs, targets, sub_seed(seed, 0))
        phi = pseudo_outcomes(self.stage1_.q_values(X), a_obs, targets, BASELINE_INDEX, self.variant)
        self.effect_models_: Dict[int, Regressor] = {
            a: self._base_fit(X, phi[:, a], sub_seed(seed, a + 1))
            for a in range(self.n_actions) if a != BASELINE_INDEX
        }

    def q_values(self, X):
        return self.stage1_.q_values(X)

    def action_scores(self, X, q=None):
        X = as_design_matrix(np.asarray(X, dtype=float))
        scores = np.zeros((X.shape[0], self.n_actions))
        for a, model in self.effect_models_.items():
            scores[:, a] = model.predict(X)
        return scores


def create_learner(kind: str, spec: DecisionPointSpec, model_spec: ModelSpec,
                   ra_variant: str = "as_printed") -> StageLearner:
    """Factory function to create a stage learner"""
    if kind == "S":
        return SLearner(spec, model_spec)
    if kind == "T":
        return TLearner(spec, model_spec)
    if kind == "RA":
        return RALearner(spec, model_spec, ra_variant)
    raise TrainingError(f"Unknown learner kind '{kind}' (expected one of {LEARNER_KINDS})", k=spec.k)


def fit_stage(kind: str, X: np.ndarray, a_obs: np.ndarray, targets: np.ndarray, spec: DecisionPointSpec,
              model_spec: ModelSpec, seed: int = 0, ra_variant: str = "as_printed") -> StageLearner:
    """Fit a stage learner of the given kind at one decision point"""
    return create_learner(kind, spec, model_spec, ra_variant).fit(X, a_obs, targets, seed)
