"""Simplex-constrained least-squares stacking with two-pass zero-weight pruning."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dataset import Dataset, FoldAssignment, undersample_majority
from .errors import DegenerateStackError, FeatureOrderError
from .learners import LearnerConfig, TrainedLearner, fit_learner, learner_from_dict, learner_to_dict
from .metrics import DEFAULT_THRESHOLD, TABLE_COLUMNS, metric_report
from .model_selection import evaluate_config

PRUNE_EPS = 1e-8
SOLVER_TOL = 1e-12
MAX_ACTIVE_SET_ITER = 500


def stacking_objective(y, oof, w) -> float:
    r = np.asarray(y, dtype=float) - np.asarray(oof, dtype=float) @ np.asarray(w, dtype=float)
    return float(r @ r)


def _kkt_step(Q, g, free):
    """Equality-constrained Newton step on the free set: min 0.5 p'Qp + g'p s.t. sum(p) = 0."""
    f = np.flatnonzero(free)
    m = len(f)
    K = np.zeros((m + 1, m + 1))
    K[:m, :m] = Q[np.ix_(f, f)]
    K[:m, m] = 1.0
    K[m, :m] = 1.0
    rhs = np.r_[-g[f], 0.0]
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    p = np.zeros(len(g))
    p[f] = sol[:m]
    return p


def fit_stacking_weights(y, oof, callback=None) -> np.ndarray:
    """Minimize ``||y - oof @ w||^2`` subject to ``w >= 0`` and ``sum(w) = 1``.

    Primal active-set method started from the uniform weight vector.
    Working-set constraints are held at exactly zero, so inactive learners
    get exact zeros.  The minimum-norm step keeps duplicated columns
    sharing weight equally.  ``callback(w)`` sees every iterate.
    """
    A = np.asarray(oof, dtype=np.float64)
    if A.ndim == 1:
        A = A[:, None]
    y = np.asarray(y, dtype=np.float64)
    J = A.shape[1]
    if J == 1:
        return np.ones(1)
    Q = A.T @ A
    c = A.T @ y
    scale = max(float(np.max(np.abs(Q))), 1e-300)
    w = np.full(J, 1.0 / J)
    fixed = np.zeros(J, dtype=bool)
    for _ in range(MAX_ACTIVE_SET_ITER):
        g = Q @ w - c
        p = _kkt_step(Q, g, ~fixed)
        if np.max(np.abs(p)) <= 1e-14:
            # multipliers of the working set: lambda_j = g_j - mean(g over the free set)
            free = ~fixed
            nu = -float(np.mean(g[free]))
            lam = g + nu
            lam[free] = 0.0
            if not fixed.any() or lam[fixed].min() >= -SOLVER_TOL * scale:
                break
            j = np.flatnonzero(fixed)[np.argmin(lam[fixed])]
            fixed[j] = False
            continue
        alpha = 1.0
        block = -1
        for j in np.flatnonzero(~fixed & (p < 0)):
            a = -w[j] / p[j]
            if a < alpha:
                alpha, block = a, j
        w = w + alpha * p
        if block >= 0:
            w[block] = 0.0
            fixed[block] = True
        w[fixed] = 0.0
        w = np.maximum(w, 0.0)
        if callback is not None:
            callback(w.copy())
    w[fixed] = 0.0
    return w / w.sum()


@dataclass
class StackedModel:
    """Convex combination of fitted learners.

    ``history`` holds one record per weight-fitting pass: member labels,
    weights and out-of-fold metrics.
    """

    members: list
    weights: np.ndarray
    history: list = field(default_factory=list)
    feature_names: list = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if len(self.weights) != len(self.members):
            raise DegenerateStackError("one weight per member is required")
        if np.any(self.weights < 0) or abs(float(self.weights.sum()) - 1.0) > 1e-10:
            raise DegenerateStackError("stacking weights must be nonnegative and sum to one")
        if not self.feature_names and self.members:
            self.feature_names = list(self.members[0].feature_names)

    def member_matrix(self, X, feature_names=None) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if feature_names is not None and list(feature_names) != self.feature_names:
            raise FeatureOrderError("feature order does not match the stacked model")
        return np.column_stack([m.predict_proba(X) for m in self.members])

    def predict_proba(self, X, feature_names=None) -> np.ndarray:
        out = self.member_matrix(X, feature_names) @ self.weights
        return np.clip(out, 0.0, 1.0)

    def to_dict(self) -> dict:
        return {
            "feature_names": self.feature_names,
            "weights": [float(v) for v in self.weights],
            "members": [learner_to_dict(m) for m in self.members],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "StackedModel":
        return cls([learner_from_dict(m) for m in doc["members"]], doc["weights"], [], doc["feature_names"])


def stack_predict(m: StackedModel, X, feature_names=None) -> np.ndarray:
    return m.predict_proba(X, feature_names)


def fit_stacked(train: Dataset, folds: FoldAssignment, configs: Sequence[LearnerConfig],
                oof: Optional[dict] = None, threshold: float = DEFAULT_THRESHOLD, undersample: bool = False,
                prune_eps: float = PRUNE_EPS, fit=fit_learner) -> StackedModel:
    """Two weight-fitting passes over out-of-fold predictions, then full-sample member refits.

    Pass 1 weighs every config; members under ``prune_eps`` are dropped;
    pass 2 re-solves over the survivors.  ``oof`` may carry precomputed
    out-of-fold vectors keyed by ``LearnerConfig.key()``.
    """
    configs = list(configs)
    if not configs:
        raise DegenerateStackError("no learners to stack")
    oof = dict(oof or {})
    for cfg in configs:
        if cfg.key() not in oof:
            oof[cfg.key()] = evaluate_config(cfg, train, folds, threshold, undersample, fit)[1]
    y = train.y
    history = []
    survivors = configs
    for interaction in (1, 2):
        M = np.column_stack([oof[c.key()] for c in survivors])
        w = fit_stacking_weights(y, M)
        rec = {"interaction": interaction, "members": [], "stack": None}
        for cfg, wj, col in zip(survivors, w, M.T):
            rec["members"].append({"config": cfg, "weight": float(wj), "report": metric_report(y, col, threshold)})
        if interaction == 2:
            rec["stack"] = metric_report(y, M @ w, threshold)
        history.append(rec)
        if interaction == 1:
            survivors = [c for c, wj in zip(survivors, w) if wj >= prune_eps]
            if not survivors:
                raise DegenerateStackError("every learner was pruned")
    final_w = np.array([m["weight"] for m in history[-1]["members"]])
    final_w = final_w / final_w.sum()
    fit_data = undersample_majority(train, seed=folds.seed + 999) if undersample else train
    members = [fit(c, fit_data.X, fit_data.y, fit_data.weights, train.feature_names) for c in survivors]
    return StackedModel(members, final_w, history, list(train.feature_names))


def write_weight_history(model: StackedModel, path) -> None:
    """Weight history CSV: one block of rows per interaction."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["interaction", "learner", "parameters", *TABLE_COLUMNS, "weight"])
        for rec in model.history:
            rows = []
            if rec["stack"] is not None:
                rows.append(("stacked", "", rec["stack"], "n/a"))
            for m in rec["members"]:
                rows.append((m["config"].family, m["config"].label(), m["report"], repr(m["weight"])))
            for learner, params, rep, weight in rows:
                w.writerow([rec["interaction"], learner, params, *(repr(float(v)) for v in rep.as_table_row()),
                            weight])
