#!/usr/bin/env python3
"""
=============================================================================
BASE REGRESSORS
=============================================================================

Pluggable squared-error regressors shared by every causal learner. All are
implemented on numpy so that fits are reproducible bit-for-bit from a seed.

KEY FEATURES:
• RIDGE: closed form on centered data, unpenalized intercept
• BOOSTED TREES: stage-wise residual fitting with shrinkage over
  variance-reduction CART trees
• BAGGED TREES: bootstrap-averaged CART trees
• MLP: tanh hidden layers, linear output, mini-batch gradient descent on
  half mean squared error, with a finite-difference gradient check
• TABULAR: saturated group-by-mean table over discrete feature rows

CART split search scans candidate thresholds per feature (midpoints between
distinct values, or quantiles when a feature has more than `max_bins`
distinct values). Ties go to the lowest feature index, then the lowest
threshold.
=============================================================================
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import BaseModelError

logger = logging.getLogger(__name__)

DEFAULT_PARAMS: Dict[str, Dict[str, Any]] = {
    "ridge": {"l2": 1.0},
    "boosted_trees": {"n_rounds": 100, "max_depth": 3, "learning_rate": 0.1, "min_samples_leaf": 5,
                      "subsample": 1.0, "max_bins": 256},
    "bagged_trees": {"n_trees": 50, "max_depth": 8, "min_samples_leaf": 5, "max_features": 1.0, "max_bins": 256},
    "mlp": {"hidden_sizes": (32,), "learning_rate": 0.01, "epochs": 200, "batch_size": 64, "l2": 0.0},
    "tabular": {"decimals": 9},
}

_POSITIVE_INTS = {"n_rounds", "max_depth", "min_samples_leaf", "n_trees", "epochs", "batch_size"}
_UNIT_FRACTIONS = {"subsample", "max_features"}


@dataclass
class ModelSpec:
    """Base model kind + hyperparameters, optionally overridden per decision point"""
    kind: str = "boosted_trees"
    params: Dict[str, Any] = field(default_factory=dict)
    stage_models: Dict[int, 'ModelSpec'] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in DEFAULT_PARAMS:
            raise BaseModelError(f"Unknown base model '{self.kind}'")
        resolve_params(self.kind, self.params)

    def for_stage(self, k: int) -> 'ModelSpec':
        return self.stage_models.get(k, self)

    def label(self) -> str:
        if not self.stage_models:
            return self.kind
        parts = [f"k{k}={spec.kind}" for k, spec in sorted(self.stage_models.items())]
        return f"{self.kind}[{','.join(parts)}]"

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"kind": self.kind, "params": _jsonable(self.params)}
        if self.stage_models:
            data["stage_models"] = {str(k): spec.to_dict() for k, spec in sorted(self.stage_models.items())}
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ModelSpec':
        stages = {int(k): cls.from_dict(v) for k, v in data.get("stage_models", {}).items()}
        return cls(kind=data["kind"], params=dict(data.get("params", {})), stage_models=stages)


def _jsonable(params: Dict[str, Any]) -> Dict[str, Any]:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in params.items()}


def resolve_params(kind: str, params: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    """Defaults merged with overrides; unknown or out-of-range values raise."""
    if kind not in DEFAULT_PARAMS:
        raise BaseModelError(f"Unknown base model '{kind}'")
    merged = dict(DEFAULT_PARAMS[kind])
    for name, value in (params or {}).items():
        if name not in merged:
            raise BaseModelError(f"Unknown hyperparameter '{name}' for {kind}")
        merged[name] = value
    for name, value in merged.items():
        if name == "hidden_sizes":
            continue
        if not is_number(value):
            raise BaseModelError(f"{kind}.{name} must be a number, got {value!r}")
        if name in _POSITIVE_INTS and (int(value) != value or value < 1):
            raise BaseModelError(f"{kind}.{name} must be a positive integer, got {value}")
        if name in _UNIT_FRACTIONS and not 0 < value <= 1:
            raise BaseModelError(f"{kind}.{name} must lie in (0, 1], got {value}")
        if name == "learning_rate" and not value > 0:
            raise BaseModelError(f"{kind}.learning_rate must be positive, got {value}")
        if name == "l2" and value < 0:
            raise BaseModelError(f"{kind}.l2 must be >= 0, got {value}")
        if name == "max_bins" and (int(value) != value or value < 2):
            raise BaseModelError(f"{kind}.max_bins must be an integer >= 2, got {value}")
        if name == "decimals" and int(value) != value:
            raise BaseModelError(f"{kind}.decimals must be an integer, got {value}")
    if kind == "mlp":
        sizes = merged["hidden_sizes"]
        if not isinstance(sizes, (list, tuple)) or any(not is_number(h) or int(h) != h or h < 1 for h in sizes):
            raise BaseModelError(f"mlp.hidden_sizes must be a list of positive integers, got {sizes!r}")
        merged["hidden_sizes"] = tuple(int(h) for h in sizes)
    return merged


def is_number(value: Any) -> bool:
    """Real scalar, booleans excluded"""
    return isinstance(value, (int, float, np.integer, np.floating)) and not isinstance(value, (bool, np.bool_))


def _check_xy(X: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2:
        raise BaseModelError(f"Feature matrix must be 2-D, got shape {X.shape}")
    if X.shape[0] == 0:
        raise BaseModelError("Cannot fit on empty data")
    if X.shape[0] != y.shape[0]:
        raise BaseModelError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise BaseModelError("Training data contains non-finite values")
    return X, y


class Regressor(ABC):
    """Fit/predict contract of every base model"""

    kind = "base"

    def __init__(self, params: Dict[str, Any]):
        self.params = params
        self.n_features: Optional[int] = None

    @abstractmethod
    def _fit(self, X: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> None:
        pass

    @abstractmethod
    def _predict(self, X: np.ndarray) -> np.ndarray:
        pass

    def fit(self, X: np.ndarray, y: np.ndarray, seed: int = 0) -> 'Regressor':
        X, y = _check_xy(X, y)
        self.n_features = X.shape[1]
        self._fit(X, y, np.random.default_rng(seed))
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        if self.n_features is None:
            raise BaseModelError(f"{self.kind} model is not fitted")
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise BaseModelError(f"Expected {self.n_features} features, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise BaseModelError("Prediction input contains non-finite values")
        return self._predict(X)


# =============================================================================
# Ridge
# =============================================================================

class RidgeRegressor(Regressor):
    kind = "ridge"

    def _fit(self, X, y, rng):
        x_mean, y_mean = X.mean(axis=0), y.mean()
        Xc, yc = X - x_mean, y - y_mean
        l2 = float(self.params["l2"])
        if l2 == 0:
            self.coef_ = np.linalg.lstsq(Xc, yc, rcond=None)[0]
        else:
            self.coef_ = np.linalg.solve(Xc.T @ Xc + l2 * np.eye(X.shape[1]), Xc.T @ yc)
        self.intercept_ = float(y_mean - x_mean @ self.coef_)

    def _predict(self, X):
        return X @ self.coef_ + self.intercept_


# =============================================================================
# CART trees
# =============================================================================

def candidate_thresholds(column: np.ndarray, max_bins: int) -> np.ndarray:
    """Midpoints between distinct values, or interior quantiles for wide columns"""
    unique = np.unique(column)
    if unique.size <= 1:
        return np.empty(0)
    if unique.size <= max_bins:
        return (unique[:-1] + unique[1:]) / 2.0
    quantiles = np.quantile(column, np.linspace(0.0, 1.0, max_bins + 1)[1:-1])
    return np.unique(quantiles)


class BinnedFeatures:
    """Per-feature thresholds and the bin of every training row"""

    def __init__(self, X: np.ndarray, max_bins: int):
        self.thresholds = [candidate_thresholds(X[:, j], max_bins) for j in range(X.shape[1])]
        # row goes left at threshold t iff bin <= t
        self.bins = np.zeros(X.shape, dtype=int)
        for j, thresholds in enumerate(self.thresholds):
            self.bins[:, j] = np.searchsorted(thresholds, X[:, j], side="left")


class RegressionTree:
    """Variance-reduction CART tree grown on binned features"""

    def __init__(self, max_depth: int, min_samples_leaf: int, max_features: float = 1.0):
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.max_features = max_features

    def fit(self, binned: BinnedFeatures, y: np.ndarray, rows: np.ndarray,
            rng: Optional[np.random.Generator] = None) -> 'RegressionTree':
        self._feature: List[int] = []
        self._threshold: List[float] = []
        self._left: List[int] = []
        self._right: List[int] = []
        self._value: List[float] = []
        self._grow(binned, y, rows, depth=0, rng=rng)
        self.feature = np.asarray(self._feature, dtype=int)
        self.threshold = np.asarray(self._threshold, dtype=float)
        self.left = np.asarray(self._left, dtype=int)
        self.right = np.asarray(self._right, dtype=int)
        self.value = np.asarray(self._value, dtype=float)
        return self

    def _new_node(self, value: float) -> int:
        self._feature.append(-1)
        self._threshold.append(0.0)
        self._left.append(-1)
        self._right.append(-1)
        self._value.append(value)
        return len(self._value) - 1

    def _grow(self, binned, y, rows, depth, rng) -> int:
        node = self._new_node(float(y[rows].mean()))
        if depth >= self.max_depth or rows.size < 2 * self.min_samples_leaf:
            return node
        split = self._best_split(binned, y, rows, rng)
        if split is None:
            return node
        feature, t_index = split
        go_left = binned.bins[rows, feature] <= t_index
        self._feature[node] = feature
        self._threshold[node] = float(binned.thresholds[feature][t_index])
        self._left[node] = self._grow(binned, y, rows[go_left], depth + 1, rng)
        self._right[node] = self._grow(binned, y, rows[~go_left], depth + 1, rng)
        return node

    def _best_split(self, binned, y, rows, rng) -> Optional[Tuple[int, int]]:
        n_features = binned.bins.shape[1]
        features = np.arange(n_features)
        if self.max_features < 1.0 and rng is not None:
            n_pick = max(1, int(round(self.max_features * n_features)))
            features = np.sort(rng.choice(n_features, size=n_pick, replace=False))
        targets = y[rows]
        total, count = targets.sum(), rows.size
        parent = total * total / count
        best_gain, best = 1e-12, None
        for j in features:
            n_thresholds = binned.thresholds[j].size
            if n_thresholds == 0:
                continue
            bins = binned.bins[rows, j]
            counts = np.bincount(bins, minlength=n_thresholds + 1)[:n_thresholds]
            sums = np.bincount(bins, weights=targets, minlength=n_thresholds + 1)[:n_thresholds]
            n_left = np.cumsum(counts)
            s_left = np.cumsum(sums)
            n_right = count - n_left
            valid = (n_left >= self.min_samples_leaf) & (n_right >= self.min_samples_leaf)
            if not valid.any():
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                gain = s_left ** 2 / n_left + (total - s_left) ** 2 / n_right - parent
            gain = np.where(valid, gain, -np.inf)
            t = int(np.argmax(gain))
            if gain[t] > best_gain:
                best_gain, best = float(gain[t]), (int(j), t)
        return best

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=int)
        while True:
            internal = self.feature[node] >= 0
            if not internal.any():
                return self.value[node]
            rows = np.nonzero(internal)[0]
            current = node[rows]
            go_left = X[rows, self.feature[current]] <= self.threshold[current]
            node[rows] = np.where(go_left, self.left[current], self.right[current])


class BoostedTreesRegressor(Regressor):
    kind = "boosted_trees"

    def _fit(self, X, y, rng):
        p = self.params
        binned = BinnedFeatures(X, int(p["max_bins"]))
        self.init_ = float(y.mean())
        self.trees_: List[RegressionTree] = []
        self.train_loss_: List[float] = []
        current = np.full(y.shape, self.init_)
        all_rows = np.arange(y.size)
        for _ in range(int(p["n_rounds"])):
            rows = all_rows
            if p["subsample"] < 1.0:
                size = max(1, int(round(p["subsample"] * y.size)))
                rows = np.sort(rng.choice(y.size, size=size, replace=False))
            tree = RegressionTree(int(p["max_depth"]), int(p["min_samples_leaf"])).fit(binned, y - current, rows)
            current = current + p["learning_rate"] * tree.predict(X)
            self.trees_.append(tree)
            self.train_loss_.append(float(np.mean((y - current) ** 2)))

    def _predict(self, X):
        out = np.full(X.shape[0], self.init_)
        for tree in self.trees_:
            out += self.params["learning_rate"] * tree.predict(X)
        return out


class BaggedTreesRegressor(Regressor):
    kind = "bagged_trees"

    def _fit(self, X, y, rng):
        p = self.params
        binned = BinnedFeatures(X, int(p["max_bins"]))
        self.trees_ = []
        for _ in range(int(p["n_trees"])):
            rows = np.sort(rng.integers(0, y.size, size=y.size))
            tree = RegressionTree(int(p["max_depth"]), int(p["min_samples_leaf"]), float(p["max_features"]))
            self.trees_.append(tree.fit(binned, y, rows, rng))

    def _predict(self, X):
        return np.mean([tree.predict(X) for tree in self.trees_], axis=0)


# =============================================================================
# MLP
# =============================================================================

Weights = List[Tuple[np.ndarray, np.ndarray]]


def init_mlp_weights(n_inputs: int, hidden_sizes: Sequence[int], seed: int = 0) -> Weights:
    """Xavier-uniform weights, zero biases; empty hidden_sizes gives a linear model"""
    rng = np.random.default_rng(seed)
    sizes = [n_inputs] + list(hidden_sizes) + [1]
    weights = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append((rng.uniform(-limit, limit, size=(fan_in, fan_out)), np.zeros(fan_out)))
    return weights


def mlp_forward(weights: Weights, X: np.ndarray) -> List[np.ndarray]:
    activations = [X]
    for i, (W, b) in enumerate(weights):
        z = activations[-1] @ W + b
        activations.append(z if i == len(weights) - 1 else np.tanh(z))
    return activations


def mlp_gradients(weights: Weights, X: np.ndarray, y: np.ndarray, l2: float = 0.0) -> Tuple[float, Weights]:
    """Loss 0.5 * mean squared error (+ 0.5 * l2 * |W|^2) and its gradients"""
    n = X.shape[0]
    activations = mlp_forward(weights, X)
    residual = activations[-1][:, 0] - y
    loss = 0.5 * float(np.mean(residual ** 2)) + 0.5 * l2 * sum(float(np.sum(W * W)) for W, _ in weights)
    delta = residual[:, None] / n
    grads: Weights = []
    for i in range(len(weights) - 1, -1, -1):
        W, _ = weights[i]
        grads.append((activations[i].T @ delta + l2 * W, delta.sum(axis=0)))
        if i > 0:
            delta = (delta @ W.T) * (1.0 - activations[i] ** 2)
    grads.reverse()
    return loss, grads


def grad_check(mlp_config: Dict[str, Any], X: np.ndarray, y: np.ndarray, seed: int = 0,
               step: float = 1e-5, weights: Optional[Weights] = None) -> float:
    """Max relative error between backprop and central finite differences"""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    hidden = tuple(mlp_config.get("hidden_sizes", DEFAULT_PARAMS["mlp"]["hidden_sizes"]))
    l2 = float(mlp_config.get("l2", 0.0))
    if weights is None:
        weights = init_mlp_weights(X.shape[1], hidden, seed)
    weights = [(W.copy(), b.copy()) for W, b in weights]
    _, analytic = mlp_gradients(weights, X, y, l2)
    worst = 0.0
    for layer, (W, b) in enumerate(weights):
        for array, grad in ((W, analytic[layer][0]), (b, analytic[layer][1])):
            for index in np.ndindex(array.shape):
                original = array[index]
                array[index] = original + step
                plus = mlp_gradients(weights, X, y, l2)[0]
                array[index] = original - step
                minus = mlp_gradients(weights, X, y, l2)[0]
                array[index] = original
                numeric = (plus - minus) / (2.0 * step)
                error = abs(grad[index] - numeric) / max(abs(grad[index]) + abs(numeric), 1e-4)
                worst = max(worst, error)
    return worst


class MLPRegressor(Regressor):
    """Standardizes inputs and targets internally; predictions are in target units"""

    kind = "mlp"

    def _fit(self, X, y, rng):
        p = self.params
        self.x_mean_, self.x_std_ = X.mean(axis=0), X.std(axis=0)
        self.x_std_[self.x_std_ == 0] = 1.0
        self.y_mean_, self.y_std_ = float(y.mean()), float(y.std()) or 1.0
        Xs, ys = (X - self.x_mean_) / self.x_std_, (y - self.y_mean_) / self.y_std_
        self.weights_ = init_mlp_weights(X.shape[1], p["hidden_sizes"], int(rng.integers(0, 2**31 - 1)))
        batch = min(int(p["batch_size"]), y.size)
        self.train_loss_: List[float] = []
        for _ in range(int(p["epochs"])):
            order = rng.permutation(y.size)
            for start in range(0, y.size, batch):
                rows = order[start:start + batch]
                _, grads = mlp_gradients(self.weights_, Xs[rows], ys[rows], p["l2"])
                self.weights_ = [(W - p["learning_rate"] * gW, b - p["learning_rate"] * gb)
                                 for (W, b), (gW, gb) in zip(self.weights_, grads)]
            self.train_loss_.append(mlp_gradients(self.weights_, Xs, ys, p["l2"])[0])
        if not np.isfinite(self.train_loss_[-1]):
            raise BaseModelError("MLP training diverged; lower the learning rate")

    def _predict(self, X):
        Xs = (X - self.x_mean_) / self.x_std_
        return mlp_forward(self.weights_, Xs)[-1][:, 0] * self.y_std_ + self.y_mean_


# =============================================================================
# Saturated tabular model
# =============================================================================

class TabularRegressor(Regressor):
    """Mean target per distinct (rounded) feature row; unseen rows get the global mean"""

    kind = "tabular"

    def _key(self, row: np.ndarray) -> Tuple[float, ...]:
        return tuple(np.round(row, int(self.params["decimals"])) + 0.0)

    def _fit(self, X, y, rng):
        sums: Dict[Tuple[float, ...], float] = {}
        counts: Dict[Tuple[float, ...], int] = {}
        for row, target in zip(X, y):
            key = self._key(row)
            sums[key] = sums.get(key, 0.0) + float(target)
            counts[key] = counts.get(key, 0) + 1
        self.table_ = {key: sums[key] / counts[key] for key in sums}
        self.global_mean_ = float(y.mean())

    def _predict(self, X):
        return np.array([self.table_.get(self._key(row), self.global_mean_) for row in X])


REGISTRY = {
    "ridge": RidgeRegressor,
    "boosted_trees": BoostedTreesRegressor,
    "bagged_trees": BaggedTreesRegressor,
    "mlp": MLPRegressor,
    "tabular": TabularRegressor,
}


def fit(kind: str, params: Optional[Dict[str, Any]], X: np.ndarray, y: np.ndarray, seed: int = 0) -> Regressor:
    """Fit a base model of the given kind"""
    resolved = resolve_params(kind, params)
    return REGISTRY[kind](resolved).fit(X, y, seed)


def predict(model: Regressor, X: np.ndarray) -> np.ndarray:
    return model.predict(X)
