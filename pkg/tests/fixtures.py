"""Shared data and model fixtures."""

import numpy as np

from stackshap.learners import LearnerConfig, fit_learner, logistic
from stackshap.stacking import StackedModel

NAMES = [f"x{j}" for j in range(6)]
UNUSED = 5  # constant during training, so no tree ever splits on it
PAIR = (3, 4)  # exchangeable by construction of the stack and background


def noise_fixture(seed=0, n=1000):
    """One informative column followed by four pure-noise columns."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 5))
    y = (rng.random(n) < logistic(1.5 * X[:, 0])).astype(int)
    return X, y


class Swapped:
    """A fitted learner read with two columns exchanged."""

    def __init__(self, inner, i, j):
        self.inner, self.i, self.j = inner, i, j
        self.feature_names = inner.feature_names

    def predict_proba(self, X, feature_names=None):
        X = np.array(X, dtype=np.float64, copy=True)
        X[:, [self.i, self.j]] = X[:, [self.j, self.i]]
        return self.inner.predict_proba(X)


def swap_pair(X):
    X = np.array(X, copy=True)
    X[:, list(PAIR)] = X[:, list(PAIR[::-1])]
    return X


def tree_stack(seed=0, n=600, n_trees=30):
    """Boosted-tree stack symmetric in columns 3 and 4 that never reads column 5.

    Returns ``(model, X_train)``; the stack averages a boosted model and the
    same model with columns 3 and 4 exchanged.
    """
    r = np.random.default_rng(seed)
    X = r.standard_normal((n, 6))
    X[:, UNUSED] = 0.0
    eta = X[:, 0] - X[:, 1] + 0.7 * X[:, 2] + 0.5 * X[:, 3] + 0.5 * X[:, 4]
    y = (r.random(n) < 1 / (1 + np.exp(-eta))).astype(int)
    cfg = LearnerConfig("gradient_boosting", n_trees=n_trees, learning_rate=0.1, max_depth=3, seed=seed)
    g = fit_learner(cfg, X, y, feature_names=NAMES)
    return StackedModel([g, Swapped(g, *PAIR)], [0.5, 0.5], feature_names=NAMES), X


def symmetric_background(seed=0, half=20):
    """Background closed under exchanging columns 3 and 4, with a varied unused column."""
    r = np.random.default_rng(seed + 1)
    B = r.standard_normal((half, 6))
    return np.vstack([B, swap_pair(B)])


def explained_rows(seed=0, n=50):
    """Rows with equal values in the exchangeable pair."""
    r = np.random.default_rng(seed + 2)
    X = r.standard_normal((n, 6))
    X[:, PAIR[1]] = X[:, PAIR[0]]
    return X
