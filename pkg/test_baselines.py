#!/usr/bin/env python3
"""
Comparison policy tests: replay MDP and Q-learning, KMeans-Q, random,
historical and upper-bound policies.
"""

import math
import sys

from baselines import (TERMINAL, HistoricalPolicy, build_mdp, q_learning, random_policy, train_kmeans_q,
                       upper_bound, upper_bound_outcomes, value_iteration)
from errors import TrainingError
from event_log import build_dataset
from evaluation import evaluate_policy, rollout_policy
from simulators import SimConfig, create_simulator
from toy_processes import dp_optimal_policy, toy_simulator

CHAIN = [[("s0", "a0", "s1", 0.0), ("s1", "a0", TERMINAL, 5.0)],
         [("s0", "a0", "s1", 0.0), ("s1", "a1", TERMINAL, 2.0)],
         [("s0", "a1", TERMINAL, 1.0)]]


def _marketing_dataset():
    toy = toy_simulator("marketing")
    return toy, build_dataset(toy.full_support_log(), toy.decision_specs())


def _filecall(delta: float = 0.95):
    return create_simulator(SimConfig(simulator="filecall", n_decision_points=2, delta=delta, seed=1))


def test_value_iteration_on_chain():
    q = value_iteration(build_mdp(CHAIN), gamma=0.9)
    assert abs(q[("s1", "a0")] - 5.0) < 1e-9 and abs(q[("s1", "a1")] - 2.0) < 1e-9
    assert abs(q[("s0", "a0")] - 4.5) < 1e-9 and abs(q[("s0", "a1")] - 1.0) < 1e-9


def test_q_learning_converges_to_value_iteration():
    mdp = build_mdp(CHAIN)
    exact = value_iteration(mdp, gamma=0.9)
    learned = q_learning(mdp, CHAIN, alpha=0.5, gamma=0.9, n_episodes=200, epsilon=0.0, seed=0)
    assert all(abs(learned[key] - exact[key]) < 1e-3 for key in exact)


def test_zero_discount_gives_average_rewards():
    episodes = CHAIN + [[("s0", "a1", TERMINAL, 3.0)]]
    mdp = build_mdp(episodes)
    q = value_iteration(mdp, gamma=0.0)
    assert q[("s0", "a1")] == 2.0 and q[("s0", "a0")] == 0.0
    assert mdp.probabilities("s0", "a0") == {"s1": 1.0}
    assert mdp.actions("s0") == ["a0", "a1"]


def test_empty_replay_rejected():
    try:
        build_mdp([[]])
        raise AssertionError("empty state space should be rejected")
    except TrainingError:
        pass


def test_kmeans_q_recovers_marketing_policy():
    toy, dataset = _marketing_dataset()
    policy = train_kmeans_q(dataset, direction="max", seed=0, alpha=0.5, epsilon=0.0, n_episodes=200)
    for state, best in dp_optimal_policy(toy).items():
        assert policy.recommend(toy.prefix_for(state), len(state)) == best, state


def test_kmeans_q_deterministic():
    sim = _filecall()
    simulated = sim.generate_log(120, stream_seed=4)
    dataset = build_dataset(simulated.log, sim.decision_specs())
    first = train_kmeans_q(dataset, direction="min", seed=5, n_clusters=4)
    second = train_kmeans_q(dataset, direction="min", seed=5, n_clusters=4)
    cases = sim.sample_cases(40, 8)
    assert rollout_policy(first, cases, sim) == rollout_policy(second, cases, sim)
    assert first.silhouette == second.silhouette
    assert -1.0 <= first.silhouette <= 1.0


def test_single_cluster_collapses_to_activity_states():
    toy, dataset = _marketing_dataset()
    policy = train_kmeans_q(dataset, direction="max", seed=0, n_clusters=1, epsilon=0.0)
    assert policy.silhouette == 0.0
    assert {state for state, _ in policy.q_table} == {(0, "start"), (0, "decide")}
    # averaged replay rewards: discount (9 + 12) / 2 beats no_discount (10 + 0) / 2
    for state in (("all", "email"), ("all", "no_email")):
        assert policy.recommend(toy.prefix_for(state), 2) == "discount"


def test_kmeans_q_rejects_unknown_params():
    _, dataset = _marketing_dataset()
    for params in ({"clusters": 3}, {"n_clusters": 0}):
        try:
            train_kmeans_q(dataset, **params)
            raise AssertionError(f"{params} should be rejected")
        except TrainingError:
            pass


def test_random_policy_uniform_and_reproducible():
    toy = toy_simulator("marketing")
    policy = random_policy(toy.decision_specs(), seed=3)
    n = 4000
    prefixes = [toy.prefix_for(("all",), case_id=f"c{i}") for i in range(n)]
    actions = policy.recommend_batch(prefixes, 1)
    assert set(actions) <= set(toy.params.actions[0])
    share = actions.count("email") / n
    assert abs(share - 0.5) <= 4 * math.sqrt(0.25 / n)
    assert random_policy(toy.decision_specs(), seed=3).recommend_batch(prefixes, 1) == actions
    assert random_policy(toy.decision_specs(), seed=4).recommend_batch(prefixes, 1) != actions
    # a single prefix gets the same action alone or in a batch
    assert policy.recommend(prefixes[17], 1) == actions[17]


def test_historical_policy_replays_full_confounding():
    sim = _filecall(delta=1.0)
    simulated = sim.generate_log(60, stream_seed=6)
    bank = HistoricalPolicy(sim)
    outcomes = rollout_policy(bank, simulated.cases, sim)
    assert outcomes == [simulated.outcomes[case.case_id] for case in simulated.cases]
    assert bank.method == "bank" and bank.direction == "min"


def test_upper_bound_dominates_every_policy():
    sim = _filecall()
    cases = sim.sample_cases(30, 9)
    best = upper_bound_outcomes(sim, cases)
    for policy in (HistoricalPolicy(sim), random_policy(sim.decision_specs(), seed=1)):
        per_case = rollout_policy(policy, cases, sim)
        assert all(b <= kpi + 1e-9 for b, kpi in zip(best, per_case))
        assert upper_bound(sim, cases) <= evaluate_policy(policy, cases, sim) + 1e-9


def test_upper_bound_clearly_beats_bank():
    gains = {}
    for K in (2, 4):
        sim = create_simulator(SimConfig(simulator="filecall", n_decision_points=K, delta=0.95, seed=1))
        cases = sim.sample_cases(400, 12)
        bank = evaluate_policy(HistoricalPolicy(sim), cases, sim)
        gains[K] = (bank - upper_bound(sim, cases)) / bank
    assert gains[2] > 0.025, gains
    assert gains[4] > gains[2], gains


def main():
    tests = [test_value_iteration_on_chain, test_q_learning_converges_to_value_iteration,
             test_zero_discount_gives_average_rewards, test_empty_replay_rejected,
             test_kmeans_q_recovers_marketing_policy, test_kmeans_q_deterministic,
             test_single_cluster_collapses_to_activity_states, test_kmeans_q_rejects_unknown_params,
             test_random_policy_uniform_and_reproducible, test_historical_policy_replays_full_confounding,
             test_upper_bound_dominates_every_policy, test_upper_bound_clearly_beats_bank]
    print("🚀 Comparison policy tests")
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
