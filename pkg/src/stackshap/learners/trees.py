"""Random forest and gradient boosting built on the compiled CART kernels."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _tree_kernels as K
from .base import LearnerConfig, TrainedLearner, as_matrix, default_feature_names, logistic, row_weights


@dataclass(frozen=True, eq=False)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        def walk(node):
            if self.feature[node] == -1:
                return 0
            return 1 + max(walk(self.left[node]), walk(self.right[node]))
        return walk(0)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return K.predict_tree(X, self.feature, self.threshold, self.left, self.right, self.value)

    def to_nested(self, feature_names: Sequence[str], node: int = 0) -> dict:
        if self.feature[node] == -1:
            return {"value": float(self.value[node])}
        return {
            "feature": feature_names[self.feature[node]],
            "threshold": float(self.threshold[node]),
            "value": float(self.value[node]),
            "left": self.to_nested(feature_names, int(self.left[node])),
            "right": self.to_nested(feature_names, int(self.right[node])),
        }

    @classmethod
    def from_nested(cls, doc: dict, feature_names: Sequence[str]) -> "Tree":
        index = {n: i for i, n in enumerate(feature_names)}
        feats, thrs, lefts, rights, vals = [], [], [], [], []

        def add(d):
            i = len(feats)
            feats.append(-1)
            thrs.append(0.0)
            lefts.append(-1)
            rights.append(-1)
            vals.append(float(d["value"]))
            if "feature" in d:
                feats[i] = index[d["feature"]]
                thrs[i] = float(d["threshold"])
                lefts[i] = add(d["left"])
                rights[i] = add(d["right"])
            return i

        add(doc)
        return cls(
            np.array(feats, dtype=np.int64), np.array(thrs), np.array(lefts, dtype=np.int64),
            np.array(rights, dtype=np.int64), np.array(vals),
        )


def grow_tree(X, target, weights, rows, max_depth, min_samples_leaf=1, max_features=None, seed=0):
    """Fit one CART tree; returns the tree and the leaf index of each row in ``rows``."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    n_feat = X.shape[1]
    mf = n_feat if max_features is None else int(max_features)
    f, thr, lt, rt, val, n_nodes, leaf_of_row = K.build_tree(
        X, np.ascontiguousarray(target, dtype=np.float64), np.ascontiguousarray(weights, dtype=np.float64),
        np.ascontiguousarray(rows, dtype=np.int64), int(max_depth), int(min_samples_leaf), mf, int(seed),
    )
    return Tree(f, thr, lt, rt, val), leaf_of_row


class _Packed:
    """Concatenated node arrays for fast ensemble prediction."""

    def __init__(self, trees: Sequence[Tree]):
        sizes = [t.n_nodes for t in trees]
        self.roots = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64) if trees else np.zeros(0, np.int64)
        cat = lambda name, dt: (np.concatenate([getattr(t, name) for t in trees]).astype(dt)
                                if trees else np.zeros(0, dt))
        self.feature = cat("feature", np.int64)
        self.threshold = cat("threshold", np.float64)
        self.left = cat("left", np.int64)
        self.right = cat("right", np.int64)
        self.value = cat("value", np.float64)

    def sum(self, X: np.ndarray) -> np.ndarray:
        return K.predict_ensemble(np.ascontiguousarray(X), self.feature, self.threshold, self.left,
                                  self.right, self.value, self.roots)


def _features_per_split(rule, n_feat: int) -> int:
    if rule == "sqrt":
        return max(1, math.ceil(math.sqrt(n_feat)))
    if rule == "all":
        return n_feat
    return min(int(rule), n_feat)


class RandomForestModel(TrainedLearner):
    """Probability forest: ``predict_proba`` averages per-tree leaf class-1 fractions.

    ``predict_vote`` applies the hard majority vote over tree classes.
    """

    def __init__(self, config, feature_names, trees, oob_proba=None):
        super().__init__(config, feature_names)
        self.trees = list(trees)
        self.oob_proba = oob_proba
        self._packed = _Packed(self.trees)

    def _proba(self, X):
        return self._packed.sum(X) / len(self.trees)

    def predict_vote(self, X, feature_names=None) -> np.ndarray:
        X = self._check(X, feature_names)
        votes = np.zeros(X.shape[0])
        for t in self.trees:
            votes += t.predict(X) >= 0.5
        return (votes * 2 > len(self.trees)).astype(np.int64)

    def oob_error(self, y) -> float:
        """Misclassification rate of out-of-bag probabilities over rows that were ever out of bag."""
        ok = ~np.isnan(self.oob_proba)
        return float(np.mean((self.oob_proba[ok] >= 0.5) != (np.asarray(y)[ok] == 1)))

    def _state(self):
        return {"trees": [t.to_nested(self.feature_names) for t in self.trees]}


def fit_random_forest(X, y, weights=None, cfg: Optional[LearnerConfig] = None, feature_names=None):
    """Bootstrap-sampled Gini trees with a random feature subset per split."""
    cfg = cfg or LearnerConfig("random_forest")
    X = np.ascontiguousarray(as_matrix(X))
    y = np.asarray(y, dtype=np.float64)
    n, n_feat = X.shape
    w = row_weights(weights, n)
    names = feature_names or default_feature_names(n_feat)
    mf = _features_per_split(cfg["features_per_split"], n_feat)
    rng = np.random.default_rng(cfg["seed"])
    seeds = rng.integers(0, 2**31 - 1, size=cfg["n_trees"])
    oob_sum = np.zeros(n)
    oob_cnt = np.zeros(n)
    trees = []
    for s in seeds:
        brng = np.random.default_rng(int(s))
        counts = np.bincount(brng.integers(0, n, size=n), minlength=n).astype(np.float64)
        bw = counts * w
        rows = np.flatnonzero(bw > 0)
        tree, _ = grow_tree(X, y, bw, rows, cfg["max_depth"], cfg["min_samples_leaf"], mf, int(s))
        trees.append(tree)
        oob = np.flatnonzero(counts == 0)
        if len(oob):
            oob_sum[oob] += tree.predict(X[oob])
            oob_cnt[oob] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        oob_proba = np.where(oob_cnt > 0, oob_sum / np.maximum(oob_cnt, 1), np.nan)
    return RandomForestModel(cfg, names, trees, oob_proba)


class GradientBoostingModel(TrainedLearner):
    """Stagewise logistic boosting: ``F(x) = f0 + rate * sum_m tree_m(x)``, ``p = logistic(F)``.

    Leaf values hold the unscaled per-leaf Newton steps.
    """

    def __init__(self, config, feature_names, f0, learning_rate, trees, loss_trace=None):
        super().__init__(config, feature_names)
        self.f0 = float(f0)
        self.learning_rate = float(learning_rate)
        self.trees = list(trees)
        self.loss_trace = None if loss_trace is None else np.asarray(loss_trace)
        self._packed = _Packed(self.trees)

    def decision_function(self, X, feature_names=None) -> np.ndarray:
        X = self._check(X, feature_names)
        return self._margin(X)

    def _margin(self, X):
        if not self.trees:
            return np.full(X.shape[0], self.f0)
        return self.f0 + self.learning_rate * self._packed.sum(X)

    def _proba(self, X):
        return logistic(self._margin(X))

    def _state(self):
        return {
            "f0": self.f0,
            "learning_rate": self.learning_rate,
            "trees": [t.to_nested(self.feature_names) for t in self.trees],
        }


def deviance(y, F, w) -> float:
    """Weighted mean logistic deviance (negative log-likelihood) of margins ``F``."""
    # log(1 + e^F) - yF, stable
    loss = np.logaddexp(0.0, F) - y * F
    return float(np.sum(w * loss) / np.sum(w))


def fit_gradient_boosting(X, y, weights=None, cfg: Optional[LearnerConfig] = None, feature_names=None):
    """Boosting on the logistic deviance with Newton leaf values.

    Each stage fits a regression tree to the residuals ``y - p`` and sets
    each leaf to ``sum(w r) / sum(w p (1 - p))`` over its rows.
    """
    cfg = cfg or LearnerConfig("gradient_boosting")
    X = np.ascontiguousarray(as_matrix(X))
    y = np.asarray(y, dtype=np.float64)
    n, n_feat = X.shape
    w = row_weights(weights, n)
    names = feature_names or default_feature_names(n_feat)
    rate = float(cfg["learning_rate"])
    sw1 = float(np.sum(w * y))
    sw0 = float(np.sum(w * (1 - y)))
    f0 = math.log(sw1 / sw0) if sw1 > 0 and sw0 > 0 else (30.0 if sw0 == 0 else -30.0)
    F = np.full(n, f0)
    rows = np.flatnonzero(w > 0)
    trace = [deviance(y, F, w)]
    trees = []
    rng = np.random.default_rng(cfg["seed"])
    for m in range(cfg["n_trees"]):
        p = logistic(F)
        resid = y - p
        tree, leaf_of_row = grow_tree(X, resid, w, rows, cfg["max_depth"], cfg["min_samples_leaf"], n_feat,
                                      int(rng.integers(0, 2**31 - 1)))
        num = np.bincount(leaf_of_row, weights=w[rows] * resid[rows], minlength=tree.n_nodes)
        den = np.bincount(leaf_of_row, weights=w[rows] * p[rows] * (1 - p[rows]), minlength=tree.n_nodes)
        leaves = tree.feature == -1
        gamma = np.where(leaves & (den > 1e-150), num / np.where(den > 1e-150, den, 1.0), 0.0)
        tree = Tree(tree.feature, tree.threshold, tree.left, tree.right, gamma)
        trees.append(tree)
        F = F.copy()
        F[rows] += rate * gamma[leaf_of_row]
        trace.append(deviance(y, F, w))
    return GradientBoostingModel(cfg, names, f0, rate, trees, trace)
