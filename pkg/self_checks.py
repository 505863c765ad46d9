#!/usr/bin/env python3
"""
Oracle and numerical checks behind `cli selftest`.

Each check prints a ✅ / ❌ line and returns a bool; run_self_checks()
returns True only when all of them pass.
"""

import logging
import time
from typing import Callable, List, Tuple

import numpy as np

from base_models import ModelSpec, fit, grad_check
from baselines import HistoricalPolicy, build_mdp, q_learning, train_sep, value_iteration
from event_log import build_dataset
from evaluation import evaluate_policy, gain
from scope import check_value_identity, train
from simulators import SimConfig, create_simulator
from toy_processes import dp_optimal_policy, toy_simulator

logger = logging.getLogger(__name__)


def _toy_policy(instance: str, trainer=train):
    toy = toy_simulator(instance)
    dataset = build_dataset(toy.full_support_log(), toy.decision_specs())
    policy = trainer(dataset, learner_kind="S", model_spec=ModelSpec(kind="tabular"), direction=toy.direction)
    return toy, policy


def check_dp_oracle() -> bool:
    """Tabular SCOPE-S recovers the exhaustive optimum on every toy state"""
    started = time.perf_counter()
    for instance in ("marketing", "two_context"):
        toy, policy = _toy_policy(instance)
        for state, best in dp_optimal_policy(toy).items():
            if policy.recommend(toy.prefix_for(state), len(state)) != best:
                return False
    return time.perf_counter() - started < 1.0


def check_value_identities() -> bool:
    return all(check_value_identity(toy_simulator(name)) for name in ("marketing", "two_context"))


def check_sequential_alignment() -> bool:
    """SEP-S misses the email that only pays off with a later discount; SCOPE-S does not"""
    toy, scope_policy = _toy_policy("marketing")
    _, sep_policy = _toy_policy("marketing", trainer=train_sep)
    prefix = toy.prefix_for(("all",))
    return scope_policy.recommend(prefix, 1) == "email" and sep_policy.recommend(prefix, 1) == "no_email"


def check_mlp_gradients() -> bool:
    rng = np.random.default_rng(0)
    X, y = rng.normal(size=(4, 2)), rng.normal(size=4)
    return grad_check({"hidden_sizes": (2,)}, X, y, seed=0) < 1e-4


def check_boosting_loss() -> bool:
    rng = np.random.default_rng(1)
    X = rng.normal(size=(200, 3))
    y = X[:, 0] ** 2 + np.sin(X[:, 1])
    losses = fit("boosted_trees", {"n_rounds": 30, "min_samples_leaf": 1}, X, y).train_loss_
    return all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def check_ridge_recovery() -> bool:
    X = np.arange(20, dtype=float).reshape(10, 2)
    X[:, 1] = X[:, 1] ** 1.5
    y = 2.0 * X[:, 0] - 0.5 * X[:, 1] + 3.0
    model = fit("ridge", {"l2": 0.0}, X, y)
    return np.allclose(model.coef_, [2.0, -0.5], atol=1e-9) and abs(model.intercept_ - 3.0) < 1e-9


def check_q_learning() -> bool:
    """Tabular Q-learning matches value iteration on a two-state chain"""
    episodes = [[("s0", "a0", "s1", 0.0), ("s1", "a0", ("__terminal__",), 5.0)],
                [("s0", "a0", "s1", 0.0), ("s1", "a1", ("__terminal__",), 2.0)],
                [("s0", "a1", ("__terminal__",), 1.0)]]
    mdp = build_mdp(episodes)
    exact = value_iteration(mdp, gamma=0.9)
    learned = q_learning(mdp, episodes, alpha=0.5, gamma=0.9, n_episodes=200, epsilon=0.0, seed=0)
    return all(abs(learned[key] - exact[key]) < 1e-3 for key in exact)


def check_bank_zero_gain() -> bool:
    simulator = create_simulator(SimConfig(simulator="filecall", n_decision_points=2, delta=1.0, seed=0))
    cases = simulator.sample_cases(50, 7)
    bank = HistoricalPolicy(simulator)
    total = evaluate_policy(bank, cases, simulator)
    return gain(total, total, simulator.direction) == 0.0


CHECKS: List[Tuple[str, Callable[[], bool]]] = [
    ("DP oracle equivalence", check_dp_oracle),
    ("Regret/max value identity", check_value_identities),
    ("Sequential alignment (SEP vs SCOPE)", check_sequential_alignment),
    ("MLP gradient check", check_mlp_gradients),
    ("Boosted-tree loss non-increasing", check_boosting_loss),
    ("Ridge coefficient recovery", check_ridge_recovery),
    ("Q-learning vs value iteration", check_q_learning),
    ("Bank policy zero gain", check_bank_zero_gain),
]


def run_self_checks() -> bool:
    print("🧪 Running self checks")
    passed = 0
    for name, check in CHECKS:
        try:
            ok = bool(check())
        except Exception as exc:
            logger.exception(f"{name} raised")
            print(f"  ❌ FAIL: {name}: {exc}")
            continue
        print(f"  {'✅ PASS' if ok else '❌ FAIL'}: {name}")
        passed += ok
    print(f"📊 {passed}/{len(CHECKS)} checks passed")
    return passed == len(CHECKS)


if __name__ == "__main__":
    raise SystemExit(0 if run_self_checks() else 1)
