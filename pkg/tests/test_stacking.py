import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_dataset
from oracles import simplex_grid_min
from stackshap.dataset import stratified_kfold
from stackshap.errors import DegenerateStackError, FeatureOrderError
from stackshap.learners import LearnerConfig, fit_learner
from stackshap.stacking import (StackedModel, fit_stacked, fit_stacking_weights, stack_predict, stacking_objective,
                                write_weight_history)


def random_fixture(seed, n=200, J=3):
    r = np.random.default_rng(seed)
    y = r.integers(0, 2, n).astype(float)
    M = np.clip(y[:, None] * r.uniform(0.2, 0.9, J) + r.normal(0, 0.3, (n, J)), 0, 1)
    return y, M


def on_simplex(w, tol=1e-10):
    return np.all(w >= 0) and abs(w.sum() - 1) <= tol


class ConstantLearner:
    feature_names = ["x0"]

    def __init__(self, p):
        self.p = p

    def predict_proba(self, X, feature_names=None):
        return np.full(len(X), self.p)


def test_single_learner_gets_all_weight():
    y, M = random_fixture(0, J=1)
    assert np.array_equal(fit_stacking_weights(y, M), [1.0])


def test_perfect_column_takes_everything():
    y, M = random_fixture(1, J=4)
    M[:, 2] = y
    w = fit_stacking_weights(y, M)
    assert w[2] == pytest.approx(1.0, abs=1e-9)
    assert on_simplex(w)


def test_duplicate_columns_split_evenly():
    y, M = random_fixture(2, J=2)
    M[:, 1] = M[:, 0]
    w = fit_stacking_weights(y, M)
    assert w == pytest.approx([0.5, 0.5], abs=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_matches_simplex_grid(seed):
    y, M = random_fixture(100 + seed)
    w = fit_stacking_weights(y, M)
    assert on_simplex(w)
    assert stacking_objective(y, M, w) <= simplex_grid_min(y, M) + 1e-9


def test_dominated_column_gets_zero():
    # column 1 is column 0 plus noise pointing away from y, so it can only hurt
    r = np.random.default_rng(3)
    y = r.integers(0, 2, 300).astype(float)
    good = np.clip(0.8 * y + 0.1, 0, 1)
    bad = np.clip(0.5 + 0.4 * (0.5 - y) + r.normal(0, 0.1, 300), 0, 1)
    w = fit_stacking_weights(y, np.column_stack([good, bad]))
    assert w[1] == 0.0


@given(st.integers(0, 10_000), st.integers(2, 6))
def test_feasible_at_every_iterate(seed, J):
    y, M = random_fixture(seed, n=60, J=J)
    seen = []
    w = fit_stacking_weights(y, M, callback=seen.append)
    for it in seen + [w]:
        assert np.all(it >= 0) and abs(it.sum() - 1) <= 1e-10


@given(st.integers(0, 10_000), st.integers(2, 6))
def test_not_worse_than_uniform_or_any_vertex(seed, J):
    y, M = random_fixture(seed, n=60, J=J)
    w = fit_stacking_weights(y, M)
    best = stacking_objective(y, M, w)
    assert best <= stacking_objective(y, M, np.full(J, 1 / J)) + 1e-9
    for j in range(J):
        assert best <= stacking_objective(y, M, np.eye(J)[j]) + 1e-9


@given(st.integers(0, 10_000))
def test_pruning_is_idempotent(seed):
    y, M = random_fixture(seed, n=80, J=5)
    w = fit_stacking_weights(y, M)
    keep = w >= 1e-8
    w2 = fit_stacking_weights(y, M[:, keep])
    assert np.all(w2 >= 1e-8) or keep.sum() == 1
    assert stacking_objective(y, M[:, keep], w2) == pytest.approx(stacking_objective(y, M, w), abs=1e-9)


def test_stack_predict_is_weighted_average():
    m = StackedModel([ConstantLearner(0.2), ConstantLearner(0.8)], [0.5, 0.5])
    assert np.allclose(stack_predict(m, np.zeros((3, 1))), 0.5)
    m = StackedModel([ConstantLearner(0.2), ConstantLearner(0.8)], [1.0, 0.0])
    assert np.allclose(stack_predict(m, np.zeros((3, 1))), 0.2)


def test_stacked_model_rejects_bad_weights():
    with pytest.raises(DegenerateStackError):
        StackedModel([ConstantLearner(0.2), ConstantLearner(0.8)], [0.6, 0.6])
    with pytest.raises(DegenerateStackError):
        StackedModel([ConstantLearner(0.2)], [1.0, 0.0])


@pytest.fixture(scope="module")
def stacked():
    r = np.random.default_rng(7)
    X = r.standard_normal((400, 4))
    y = (r.random(400) < 1 / (1 + np.exp(-(X[:, 0] - X[:, 1])))).astype(int)
    d = make_dataset(X, y)
    folds = stratified_kfold(d, 3, seed=0)
    cfgs = [LearnerConfig("logit", penalty="none"), LearnerConfig("logit", penalty="l2"),
            LearnerConfig("random_forest", n_trees=10, max_depth=3, seed=0)]
    return d, fit_stacked(d, folds, cfgs)


def test_two_interactions_and_pruning(stacked):
    d, m = stacked
    assert [h["interaction"] for h in m.history] == [1, 2]
    first = m.history[0]["members"]
    assert len(first) == 3
    kept = [x["config"].key() for x in first if x["weight"] >= 1e-8]
    assert [x["config"].key() for x in m.history[1]["members"]] == kept
    assert len(m.members) == len(kept)
    assert on_simplex(m.weights)


def test_stack_prediction_is_convex(stacked):
    d, m = stacked
    P = m.member_matrix(d.X)
    p = stack_predict(m, d.X)
    assert np.allclose(p, P @ m.weights)
    assert np.all(p >= P.min(axis=1) - 1e-12) and np.all(p <= P.max(axis=1) + 1e-12)


def test_stack_roundtrip(stacked):
    d, m = stacked
    again = StackedModel.from_dict(m.to_dict())
    assert np.array_equal(again.predict_proba(d.X), m.predict_proba(d.X))
    with pytest.raises(FeatureOrderError):
        m.predict_proba(d.X, feature_names=["x1", "x0", "x2", "x3"])


def test_weight_history_csv(stacked, tmp_path):
    d, m = stacked
    write_weight_history(m, tmp_path / "w.csv")
    with open(tmp_path / "w.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["interaction", "learner", "parameters", "ACC", "RC", "F1", "PR", "SP", "AUC", "weight"]
    second = [r for r in rows if r["interaction"] == "2"]
    assert second[0]["learner"] == "stacked" and second[0]["weight"] == "n/a"
    assert sum(float(r["weight"]) for r in second[1:]) == pytest.approx(1.0, abs=1e-10)
    assert len([r for r in rows if r["interaction"] == "1"]) == 3


def test_empty_stack_rejected(stacked):
    d, _ = stacked
    with pytest.raises(DegenerateStackError):
        fit_stacked(d, stratified_kfold(d, 2, seed=0), [])


def test_precomputed_oof_is_used(stacked):
    d, _ = stacked
    folds = stratified_kfold(d, 2, seed=0)
    cfg = LearnerConfig("logit", penalty="none")
    calls = []

    def counting_fit(*a, **k):
        calls.append(1)
        return fit_learner(*a, **k)

    fit_stacked(d, folds, [cfg], oof={cfg.key(): np.full(d.n_rows, 0.5)}, fit=counting_fit)
    assert len(calls) == 1  # only the final refit


def test_final_weights_format_fixture():
    # final weights of the level 0 vs 1 survey stack (LASSO, GB, RF); not reproducible here
    w = np.array([0.4257, 0.3529, 0.2214])
    assert np.all(w >= 0) and w.sum() == pytest.approx(1.0, abs=1e-4)
