"""The five base classifier families and their JSON serialization."""

from __future__ import annotations

import json

import numpy as np

from ..dataset import stratified_kfold
from ..errors import ConfigError
from .base import FAMILIES, LearnerConfig, TrainedLearner, logistic
from .linear import LinearLogitModel, fit_lasso_logit_cv, fit_logit
from .neural import NeuralNetModel, fit_neural_net
from .trees import GradientBoostingModel, RandomForestModel, Tree, fit_gradient_boosting, fit_random_forest

FORMAT_VERSION = 1

__all__ = [
    "FAMILIES", "LearnerConfig", "TrainedLearner", "LinearLogitModel", "RandomForestModel",
    "GradientBoostingModel", "NeuralNetModel", "fit_logit", "fit_lasso_logit_cv", "fit_random_forest",
    "fit_gradient_boosting", "fit_neural_net", "fit_learner", "predict_proba", "learner_to_dict",
    "learner_from_dict", "logistic",
]


def fit_learner(cfg: LearnerConfig, X, y, weights=None, feature_names=None) -> TrainedLearner:
    """Fit any family from its config; the lasso builds its inner folds from ``y`` and the config seed."""
    if cfg.family == "logit":
        return fit_logit(X, y, weights, cfg["penalty"], cfg["l2_strength"], feature_names, config=cfg)
    if cfg.family == "lasso_logit_cv":
        folds = stratified_kfold(np.asarray(y), cfg["inner_folds"], cfg["seed"])
        return fit_lasso_logit_cv(X, y, cfg["C_grid"], folds, weights, feature_names, config=cfg)
    if cfg.family == "random_forest":
        return fit_random_forest(X, y, weights, cfg, feature_names)
    if cfg.family == "gradient_boosting":
        return fit_gradient_boosting(X, y, weights, cfg, feature_names)
    if cfg.family == "neural_net":
        return fit_neural_net(X, y, weights, cfg, feature_names)
    raise ConfigError(f"unknown learner family {cfg.family!r}")


def predict_proba(model: TrainedLearner, X, feature_names=None) -> np.ndarray:
    return model.predict_proba(X, feature_names)


def learner_to_dict(model: TrainedLearner) -> dict:
    return {"format_version": FORMAT_VERSION, **model.to_dict()}


def learner_from_dict(doc: dict) -> TrainedLearner:
    if doc.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported model format version {doc.get('format_version')!r}")
    cfg = LearnerConfig.from_dict(doc["config"])
    names = doc["feature_names"]
    if cfg.family in ("logit", "lasso_logit_cv"):
        return LinearLogitModel(cfg, names, doc["intercept"], doc["coef"], doc.get("converged", True),
                                doc.get("separated", False), extra=doc.get("extra"))
    if cfg.family == "random_forest":
        return RandomForestModel(cfg, names, [Tree.from_nested(t, names) for t in doc["trees"]])
    if cfg.family == "gradient_boosting":
        return GradientBoostingModel(cfg, names, doc["f0"], doc["learning_rate"],
                                     [Tree.from_nested(t, names) for t in doc["trees"]])
    layers = [(np.array(l["W"], dtype=np.float64).reshape(len(l["W"]), -1), np.array(l["b"], dtype=np.float64))
              for l in doc["layers"]]
    return NeuralNetModel(cfg, names, layers, doc["mean"], doc["scale"])


def save_learner(model: TrainedLearner, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(learner_to_dict(model), fh)


def load_learner(path) -> TrainedLearner:
    with open(path, encoding="utf-8") as fh:
        return learner_from_dict(json.load(fh))
