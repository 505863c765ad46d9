#!/usr/bin/env python3
"""
Base regressor tests: exactness, capacity, determinism and gradient checks.
"""

import sys

import numpy as np

from base_models import (ModelSpec, RidgeRegressor, fit, grad_check, init_mlp_weights, mlp_gradients, predict,
                         resolve_params)
from errors import BaseModelError


def test_ridge_recovers_slope():
    X = np.arange(10, dtype=float).reshape(-1, 1)
    model = fit("ridge", {"l2": 0.0}, X, 2.0 * X[:, 0])
    assert abs(model.coef_[0] - 2.0) < 1e-9
    assert abs(model.intercept_) < 1e-9


def test_ridge_intercept_is_mean_on_centered_data():
    X = np.array([[-1.0], [0.0], [1.0]])
    y = np.array([1.0, 5.0, 3.0])
    model = fit("ridge", {"l2": 1.0}, X, y)
    assert abs(predict(model, np.zeros((1, 1)))[0] - 3.0) < 1e-12


def test_ridge_row_permutation_invariance():
    rng = np.random.default_rng(0)
    X, y = rng.normal(size=(30, 3)), rng.normal(size=30)
    order = rng.permutation(30)
    a = fit("ridge", {"l2": 0.5}, X, y).predict(X)
    b = fit("ridge", {"l2": 0.5}, X[order], y[order]).predict(X)
    assert np.max(np.abs(a - b)) < 1e-9


def test_boosted_trees_interpolate():
    X = np.arange(8, dtype=float).reshape(-1, 1)
    y = X[:, 0] ** 2
    model = fit("boosted_trees", {"n_rounds": 5, "max_depth": 8, "min_samples_leaf": 1, "learning_rate": 1.0}, X, y)
    assert np.mean((model.predict(X) - y) ** 2) < 1e-6
    assert np.allclose(model.predict(X[3:4]), [9.0])


def test_boosted_loss_non_increasing():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(150, 4))
    y = X[:, 0] * X[:, 1] + rng.normal(scale=0.1, size=150)
    losses = fit("boosted_trees", {"n_rounds": 40}, X, y).train_loss_
    assert all(later <= earlier + 1e-12 for earlier, later in zip(losses, losses[1:]))


def test_constant_target():
    X = np.random.default_rng(3).normal(size=(20, 2))
    y = np.full(20, 4.5)
    for kind in ("ridge", "boosted_trees", "bagged_trees", "tabular"):
        assert np.allclose(fit(kind, {}, X, y).predict(X), 4.5), kind


def test_seed_determinism():
    rng = np.random.default_rng(4)
    X, y = rng.normal(size=(60, 3)), rng.normal(size=60)
    for kind, params in (("bagged_trees", {"n_trees": 5, "max_features": 0.5}),
                         ("boosted_trees", {"n_rounds": 10, "subsample": 0.7}),
                         ("mlp", {"epochs": 5})):
        first = fit(kind, params, X, y, seed=7).predict(X)
        second = fit(kind, params, X, y, seed=7).predict(X)
        assert np.array_equal(first, second), kind


def test_batch_predict_equals_row_predict():
    rng = np.random.default_rng(5)
    X, y = rng.normal(size=(40, 2)), rng.normal(size=40)
    model = fit("bagged_trees", {"n_trees": 4}, X, y)
    rows = np.concatenate([model.predict(X[i:i + 1]) for i in range(len(X))])
    assert np.allclose(model.predict(X), rows)


def test_mlp_beats_linear_on_xor():
    X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    y = np.array([0.0, 1.0, 1.0, 0.0])
    linear = fit("ridge", {"l2": 0.0}, X, y)
    mlp = fit("mlp", {"hidden_sizes": [16], "learning_rate": 0.1, "epochs": 4000, "batch_size": 4}, X, y, seed=0)
    linear_mse = np.mean((linear.predict(X) - y) ** 2)
    assert abs(linear_mse - 0.25) < 1e-9
    assert np.mean((mlp.predict(X) - y) ** 2) < linear_mse


def test_gradient_check():
    rng = np.random.default_rng(6)
    X, y = rng.normal(size=(4, 2)), rng.normal(size=4)
    assert grad_check({"hidden_sizes": (2,)}, X, y, seed=1) < 1e-4


def test_zero_network_has_zero_weight_gradients():
    X, y = np.ones((3, 2)), np.zeros(3)
    weights = [(np.zeros_like(W), np.zeros_like(b)) for W, b in init_mlp_weights(2, (3,), seed=0)]
    _, grads = mlp_gradients(weights, X, y)
    assert all(np.all(gW == 0.0) for gW, _ in grads)


def test_linear_layer_matches_least_squares_gradient():
    rng = np.random.default_rng(8)
    X, y = rng.normal(size=(6, 3)), rng.normal(size=6)
    weights = init_mlp_weights(3, (), seed=2)
    W, b = weights[0]
    _, grads = mlp_gradients(weights, X, y)
    residual = X @ W[:, 0] + b[0] - y
    assert np.allclose(grads[0][0][:, 0], X.T @ residual / len(y), atol=1e-8)
    assert abs(grads[0][1][0] - residual.mean()) < 1e-8


def test_input_errors():
    try:
        fit("ridge", {}, np.array([[np.nan]]), np.array([1.0]))
        raise AssertionError("non-finite input should be rejected")
    except BaseModelError:
        pass
    try:
        fit("ridge", {}, np.zeros((0, 2)), np.zeros(0))
        raise AssertionError("empty input should be rejected")
    except BaseModelError:
        pass
    model = fit("ridge", {}, np.ones((3, 2)), np.ones(3))
    try:
        model.predict(np.ones((1, 3)))
        raise AssertionError("width mismatch should be rejected")
    except BaseModelError:
        pass
    try:
        RidgeRegressor(resolve_params("ridge", {})).predict(np.ones((1, 2)))
        raise AssertionError("unfitted model should refuse to predict")
    except BaseModelError:
        pass


def test_params_validation():
    assert resolve_params("mlp", {"hidden_sizes": [8, 4]})["hidden_sizes"] == (8, 4)
    for kind, params in (("ridge", {"l2": -1.0}), ("boosted_trees", {"depth": 3}), ("forest", {}),
                         ("bagged_trees", {"max_features": 1.5}), ("ridge", {"l2": "x"}), ("ridge", {"l2": True}),
                         ("mlp", {"hidden_sizes": "ab"}), ("mlp", {"hidden_sizes": [8, 0]}),
                         ("tabular", {"decimals": 1.5})):
        try:
            resolve_params(kind, params)
            raise AssertionError(f"{kind} {params} should be rejected")
        except BaseModelError:
            pass


def test_model_spec_stage_override():
    spec = ModelSpec(kind="mlp", stage_models={2: ModelSpec(kind="boosted_trees")})
    assert spec.for_stage(1).kind == "mlp" and spec.for_stage(2).kind == "boosted_trees"
    assert spec.label() == "mlp[k2=boosted_trees]"
    assert ModelSpec.from_dict(spec.to_dict()).label() == spec.label()


def main():
    tests = [test_ridge_recovers_slope, test_ridge_intercept_is_mean_on_centered_data,
             test_ridge_row_permutation_invariance, test_boosted_trees_interpolate, test_boosted_loss_non_increasing,
             test_constant_target, test_seed_determinism, test_batch_predict_equals_row_predict,
             test_mlp_beats_linear_on_xor, test_gradient_check, test_zero_network_has_zero_weight_gradients,
             test_linear_layer_matches_least_squares_gradient, test_input_errors, test_params_validation,
             test_model_spec_stage_override]
    print("🚀 Base model tests")
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
