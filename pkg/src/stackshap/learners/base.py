"""Learner configurations and the common fitted-model interface."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from ..errors import ConfigError, FeatureOrderError

FAMILIES = ("logit", "lasso_logit_cv", "random_forest", "gradient_boosting", "neural_net")
ACTIVATIONS = ("relu", "logistic", "tanh")

_DEFAULTS: dict[str, dict[str, Any]] = {
    "logit": {"penalty": "none", "l2_strength": 1.0},
    "lasso_logit_cv": {"C_grid": (10.0, 50.0, 100.0, 200.0), "inner_folds": 5, "seed": 0},
    "random_forest": {
        "n_trees": 100, "max_depth": 5, "features_per_split": "sqrt", "min_samples_leaf": 1, "seed": 0,
    },
    "gradient_boosting": {
        "n_trees": 100, "learning_rate": 0.1, "max_depth": 3, "min_samples_leaf": 1, "seed": 0,
    },
    "neural_net": {
        "hidden_layers": (200,), "activation": "relu", "seed": 0, "epochs": 200, "step_size": 1e-2,
        "batch_size": 64, "patience": 10, "validation_fraction": 0.1, "init": "glorot",
    },
}


def _freeze(v):
    if isinstance(v, (list, tuple)):
        return tuple(_freeze(x) for x in v)
    return v


@dataclass(frozen=True)
class LearnerConfig:
    """A tagged hyperparameter record.

    ``params`` is stored as a sorted tuple of items so configs hash and
    compare by value; unspecified parameters take family defaults.
    """

    family: str
    params: tuple = ()

    def __init__(self, family: str, params: Optional[Mapping] = None, _validate: bool = True, **kwargs):
        if family not in FAMILIES:
            raise ConfigError(f"unknown learner family {family!r}")
        merged = dict(_DEFAULTS[family])
        merged.update(dict(params or {}))
        merged.update(kwargs)
        unknown = set(merged) - set(_DEFAULTS[family])
        if unknown:
            raise ConfigError(f"{family}: unknown parameter(s) {sorted(unknown)}")
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "params", tuple(sorted((k, _freeze(v)) for k, v in merged.items())))
        if _validate:
            self._validate()

    def __getitem__(self, name: str):
        for k, v in self.params:
            if k == name:
                return v
        raise KeyError(name)

    def as_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.params}

    def replace(self, **kwargs) -> "LearnerConfig":
        d = self.as_dict()
        d.update(kwargs)
        return LearnerConfig(self.family, d)

    def _validate(self) -> None:
        p = dict(self.params)
        f = self.family

        def positive_int(name):
            if not isinstance(p[name], (int, np.integer)) or isinstance(p[name], bool) or p[name] < 1:
                raise ConfigError(f"{f}: {name} must be a positive integer, got {p[name]!r}")

        if f == "logit":
            if p["penalty"] not in ("none", "l2"):
                raise ConfigError("logit: penalty must be 'none' or 'l2'")
            if not p["l2_strength"] > 0:
                raise ConfigError("logit: l2_strength must be positive")
        elif f == "lasso_logit_cv":
            if not p["C_grid"] or any(not (c > 0 and math.isfinite(c)) for c in p["C_grid"]):
                raise ConfigError("lasso_logit_cv: C_grid must be a nonempty list of positive values")
            positive_int("inner_folds")
            if p["inner_folds"] < 2:
                raise ConfigError("lasso_logit_cv: inner_folds must be at least 2")
        elif f in ("random_forest", "gradient_boosting"):
            positive_int("n_trees")
            positive_int("max_depth")
            positive_int("min_samples_leaf")
            if f == "gradient_boosting" and not 0 < p["learning_rate"] <= 1:
                raise ConfigError("gradient_boosting: learning_rate must lie in (0, 1]")
            if f == "random_forest":
                rule = p["features_per_split"]
                if rule not in ("sqrt", "all") and not (isinstance(rule, int) and rule >= 1):
                    raise ConfigError("random_forest: features_per_split must be 'sqrt', 'all' or a positive int")
        elif f == "neural_net":
            if not p["hidden_layers"] or any(int(h) < 1 for h in p["hidden_layers"]):
                raise ConfigError("neural_net: hidden_layers must be a nonempty list of positive widths")
            if p["activation"] not in ACTIVATIONS:
                raise ConfigError(f"neural_net: activation must be one of {ACTIVATIONS}")
            positive_int("batch_size")
            positive_int("patience")
            if not isinstance(p["epochs"], int) or p["epochs"] < 0:
                raise ConfigError("neural_net: epochs must be a nonnegative integer")
            if not p["step_size"] > 0:
                raise ConfigError("neural_net: step_size must be positive")
            if not 0 <= p["validation_fraction"] < 1:
                raise ConfigError("neural_net: validation_fraction must lie in [0, 1)")
            if p["init"] not in ("glorot", "zeros"):
                raise ConfigError("neural_net: init must be 'glorot' or 'zeros'")

    def label(self) -> str:
        """Human-readable parameter string for grid reports."""
        p = dict(self.params)
        f = self.family
        if f == "logit":
            return f"penalty = {p['penalty']}"
        if f == "lasso_logit_cv":
            return "C grid = " + "/".join(f"{c:g}" for c in p["C_grid"])
        if f == "random_forest":
            return f"Trees = {p['n_trees']}, max depth = {p['max_depth']}"
        if f == "gradient_boosting":
            return f"Trees = {p['n_trees']}, learning rate = {p['learning_rate']:.2f}, max depth = {p['max_depth']}"
        layers = p["hidden_layers"]
        word = "layer" if len(layers) == 1 else "layers"
        return f"{len(layers)} hidden {word} ({', '.join(str(h) for h in layers)} nodes), activation = {p['activation']}"

    def key(self) -> str:
        return json.dumps({"family": self.family, "params": self.as_dict()}, sort_keys=True)

    def to_dict(self) -> dict:
        return {"family": self.family, "params": self.as_dict()}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "LearnerConfig":
        return cls(doc["family"], doc.get("params", {}))


def as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise FeatureOrderError(f"expected a 2-d feature matrix, got shape {X.shape}")
    return X


def row_weights(weights, n: int) -> np.ndarray:
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,) or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ConfigError("row weights must be finite, nonnegative and one per row")
    return w


def logistic(z):
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def standardization(X: np.ndarray, w: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray]:
    """Column means and scales; constant columns get scale 1."""
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return mean, scale


class TrainedLearner:
    """A fitted model exposing ``predict_proba``.

    Instances are treated as immutable after fitting and are safe to share
    between threads for prediction.
    """

    def __init__(self, config: LearnerConfig, feature_names: Sequence[str]):
        self.config = config
        self.feature_names = list(feature_names)

    @property
    def family(self) -> str:
        return self.config.family

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def _check(self, X, feature_names=None) -> np.ndarray:
        X = as_matrix(X)
        if feature_names is not None and list(feature_names) != self.feature_names:
            raise FeatureOrderError(
                f"feature order {list(feature_names)} does not match training order {self.feature_names}"
            )
        if X.shape[1] != self.n_features:
            raise FeatureOrderError(f"expected {self.n_features} columns, got {X.shape[1]}")
        return X

    def predict_proba(self, X, feature_names=None) -> np.ndarray:
        return self._proba(self._check(X, feature_names))

    def predict_class(self, X, feature_names=None, threshold: float = 0.5) -> np.ndarray:
        return (self.predict_proba(X, feature_names) >= threshold).astype(np.int64)

    def _proba(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _state(self) -> dict:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"config": self.config.to_dict(), "feature_names": self.feature_names, **self._state()}


def default_feature_names(n: int) -> list[str]:
    return [f"x{j}" for j in range(n)]
