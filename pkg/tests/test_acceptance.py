"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The lines are printed as the tests run (visible with ``-s``) and again in
the terminal summary.
"""

import csv
import json
import time
from contextlib import contextmanager
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from conftest import ACCEPTANCE_RESULTS
from fixtures import PAIR, UNUSED, explained_rows, noise_fixture, symmetric_background, tree_stack
from oracles import brute_auc, brute_confusion, central_differences, simplex_grid_min
from stackshap.cli import main
from stackshap.dataset import stratified_kfold, train_test_split
from stackshap.learners import LearnerConfig, fit_gradient_boosting, fit_lasso_logit_cv, fit_logit, logistic
from stackshap.learners.linear import _prepare, lasso_kkt_violation
from stackshap.learners.neural import flatten, init_params, layer_shapes, loss_and_grad, unflatten
from stackshap.metrics import auc, confusion, ratio_metrics, roc_points, trapezoid_area
from stackshap.pipeline import comparable_manifest, load_manifest
from stackshap.shap import ValueFunctionContext, explain_dataset, global_importance, shapley_exact, shapley_sampled
from stackshap.stacking import StackedModel, fit_stacked, fit_stacking_weights, stacking_objective
from stackshap.synth import default_spec, generate

GOLDEN = Path(__file__).parent / "golden"


@contextmanager
def criterion(number, title):
    info = {"detail": ""}
    try:
        yield info
    except BaseException as exc:
        detail = info["detail"] or f"{type(exc).__name__}: {exc}".splitlines()[0][:120]
        ACCEPTANCE_RESULTS.append((number, title, False, detail))
        print(f"\nFAIL  {number}. {title}  ({detail})")
        raise
    ACCEPTANCE_RESULTS.append((number, title, True, info["detail"]))
    print(f"\nPASS  {number}. {title}  ({info['detail']})")


# ---- fixtures -------------------------------------------------------------------------------------------

def metric_fixtures(n_fixtures=200, n=30, seed=2024):
    r = np.random.default_rng(seed)
    out = []
    for i in range(n_fixtures):
        while True:
            y = r.integers(0, 2, n)
            if 0 < y.sum() < n:
                break
        p = r.random(n)
        if i % 2:
            p = np.round(p, 1)  # every other fixture carries heavy ties
        out.append((y, p))
    return out


def stacking_fixtures(n_fixtures=50, n=200, J=3, seed=77):
    r = np.random.default_rng(seed)
    out = []
    for _ in range(n_fixtures):
        y = r.integers(0, 2, n).astype(float)
        M = np.clip(y[:, None] * r.uniform(0.1, 0.9, J) + r.normal(0.2, 0.3, (n, J)), 0, 1)
        out.append((y, M))
    return out


def coerce(v):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def csv_records(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: coerce(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def golden(name):
    return json.loads((GOLDEN / f"{name}.schema.json").read_text())


# ---- 1, 2: metrics ------------------------------------------------------------------------------------

def test_01_metric_oracle_equivalence():
    with criterion(1, "metric oracle equivalence") as info:
        fx = metric_fixtures()
        t0 = time.perf_counter()
        ours = []
        for y, p in fx:
            c = confusion(y, p)
            ours.append(((c.tp, c.tn, c.fp, c.fn), ratio_metrics(c)[:5], auc(y, p)))
        elapsed = time.perf_counter() - t0
        worst_auc = 0.0
        for (y, p), (counts, ratios, a) in zip(fx, ours):
            tp, tn, fp, fn = brute_confusion(y, p, 0.5)
            assert counts == (tp, tn, fp, fn)
            n = tp + tn + fp + fn
            acc = (tp + tn) / n
            rc = tp / (tp + fn) if tp + fn else 0.0
            pr = tp / (tp + fp) if tp + fp else 0.0
            f1 = 2 * pr * rc / (pr + rc) if pr + rc else 0.0
            sp = tn / (tn + fp) if tn + fp else 0.0
            assert ratios == (acc, rc, pr, f1, sp)
            worst_auc = max(worst_auc, abs(a - brute_auc(y, p)))
        assert worst_auc <= 1e-12
        assert elapsed < 1.0
        info["detail"] = f"200 fixtures, max AUC gap {worst_auc:.1e}, {elapsed:.3f}s"


def test_02_roc_consistency():
    with criterion(2, "ROC trapezoid area equals AUC") as info:
        worst = max(abs(trapezoid_area(roc_points(y, p)) - auc(y, p)) for y, p in metric_fixtures())
        assert worst <= 1e-12
        info["detail"] = f"max gap {worst:.1e}"


# ---- 3, 4: stacking -----------------------------------------------------------------------------------

def test_03_stacking_optimality():
    with criterion(3, "stacking optimality against the 0.01 simplex grid") as info:
        t0 = time.perf_counter()
        worst_gap = -np.inf
        worst_sum = 0.0
        for y, M in stacking_fixtures():
            w = fit_stacking_weights(y, M)
            assert np.all(w >= 0)
            worst_sum = max(worst_sum, abs(w.sum() - 1))
            worst_gap = max(worst_gap, stacking_objective(y, M, w) - simplex_grid_min(y, M))
        elapsed = time.perf_counter() - t0
        assert worst_gap <= 1e-9 and worst_sum <= 1e-10 and elapsed < 5.0
        info["detail"] = f"max objective - grid min {worst_gap:.2e}, max |sum-1| {worst_sum:.1e}, {elapsed:.2f}s"


def test_04_stacking_dominance():
    with criterion(4, "stack squared error <= best single member") as info:
        worst = -np.inf
        for y, M in stacking_fixtures():
            w = fit_stacking_weights(y, M)
            best_member = min(stacking_objective(y, M, e) for e in np.eye(M.shape[1]))
            worst = max(worst, stacking_objective(y, M, w) - best_member)
        assert worst <= 1e-10
        info["detail"] = f"max excess {worst:.2e}"


# ---- 5-7: attributions --------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def stack6():
    return tree_stack()[0]


def test_05_shapley_axioms(stack6):
    with criterion(5, "Shapley axioms on a boosted-tree stack") as info:
        e = explain_dataset(stack6, explained_rows(n=50), symmetric_background(), method="exact")
        eff = float(np.max(np.abs(e.local_accuracy_gap())))
        dummy = float(np.max(np.abs(e.phi[:, UNUSED])))
        sym = float(np.max(np.abs(e.phi[:, PAIR[0]] - e.phi[:, PAIR[1]])))
        assert eff <= 1e-6 and dummy == 0.0 and sym <= 1e-10
        info["detail"] = f"efficiency {eff:.1e}, dummy {dummy:.1e}, symmetry {sym:.1e} over 50 rows"


def test_06_linear_shap_equivalence():
    with criterion(6, "exact Shapley equals the linear closed form for a logit stack") as info:
        r = np.random.default_rng(6)
        X = r.standard_normal((500, 4))
        y = (r.random(500) < logistic(0.4 + X @ [1.0, -2.0, 0.5, 0.0])).astype(int)
        m = fit_logit(X, y)
        stack = StackedModel([m], [1.0])
        bg = X[:60]
        mean = bg.mean(axis=0)
        worst = 0.0
        for x in X[100:120]:
            phi = shapley_exact(ValueFunctionContext(stack, bg, x, output="log_odds"))
            worst = max(worst, float(np.max(np.abs(phi - m.coef * (x - mean)))))
        assert worst <= 1e-10
        info["detail"] = f"max gap {worst:.1e} over 20 rows (log-odds output)"


def test_07_sampled_convergence(stack6):
    with criterion(7, "sampled Shapley within reported standard errors") as info:
        bg = symmetric_background()
        rows = explained_rows(n=3)
        exact = [shapley_exact(ValueFunctionContext(stack6, bg, x)) for x in rows]
        within2 = total = 0
        worst = 0.0
        for rep in range(20):
            for x, ex in zip(rows, exact):
                phi, se = shapley_sampled(ValueFunctionContext(stack6, bg, x), 2000, seed=1000 * rep + 7)
                dev = np.abs(phi - ex)
                assert np.all(dev <= 4 * se + 1e-12)
                live = se > 0  # the unused feature has zero spread and zero error
                worst = max(worst, float(np.max(dev[live] / se[live])))
                within2 += int(np.sum(dev[live] <= 2 * se[live]))
                total += int(live.sum())
        share = within2 / total
        assert share >= 0.95
        info["detail"] = f"max |err|/SE {worst:.2f}, {share:.1%} within 2 SE ({total} estimates)"


# ---- 8-10: learners -----------------------------------------------------------------------------------

def test_08_gradient_check():
    with criterion(8, "neural-net gradients match central differences") as info:
        r = np.random.default_rng(8)
        X = r.standard_normal((5, 3))
        y = np.array([1.0, 0.0, 1.0, 1.0, 0.0])
        w = np.ones(5)
        shapes = layer_shapes(3, (4, 3))
        worst = 0.0
        for activation in ("tanh", "logistic", "relu"):
            for _ in range(10):
                # random biases too: zero biases put dead-relu rows exactly on the kink of the next layer
                params = [(W, r.normal(0, 0.5, b.shape)) for W, b in init_params(shapes, r)]
                g = flatten(loss_and_grad(params, X, y, w, activation)[1])
                fd = central_differences(
                    lambda th: loss_and_grad(unflatten(th, shapes), X, y, w, activation)[0], flatten(params))
                rel = np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-7)
                worst = max(worst, float(rel.max()))
        assert worst <= 1e-5
        info["detail"] = f"max relative error {worst:.1e}, 10 points x 3 activations"


def test_09_lasso_kkt_and_sparsity():
    with criterion(9, "lasso zeroes noise and satisfies KKT") as info:
        X, y = noise_fixture()
        m = fit_lasso_logit_cv(X, y, (0.002, 0.005, 0.01), stratified_kfold(y, 5, 0))
        assert m.coef[0] != 0 and np.all(m.coef[1:] == 0)
        _, w, _, _, _, Z = _prepare(X, None)
        viol = lasso_kkt_violation(Z, y, w, m.extra["standardized_intercept"],
                                   np.array(m.extra["standardized_coef"]), 1.0 / m.extra["C"])
        assert viol <= 1e-6
        info["detail"] = f"selected C {m.extra['C']:g}, KKT violation {viol:.1e}"


def test_10_boosting_descent():
    with criterion(10, "boosting training deviance non-increasing") as info:
        r = np.random.default_rng(10)
        X = r.standard_normal((600, 4))
        y = (r.random(600) < logistic(X[:, 0] - X[:, 1] * X[:, 2])).astype(int)
        m = fit_gradient_boosting(X, y, cfg=LearnerConfig("gradient_boosting", n_trees=50, learning_rate=0.1))
        steps = np.diff(m.loss_trace)
        assert len(m.loss_trace) == 51 and np.all(steps <= 0)
        info["detail"] = f"deviance {m.loss_trace[0]:.4f} -> {m.loss_trace[-1]:.4f}, largest step {steps.max():.1e}"


# ---- 11, 13: end-to-end runs ------------------------------------------------------------------------------

RUN_FLAGS = ["--grid", "desk", "--background-size", "10", "--explain-rows", "50"]


@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("determinism")
    data = root / "synth.csv"
    assert main(["synth", "--out", str(data), "--n-rows", "2000", "--n-features", "12", "--seed", "3"]) == 0
    first, second = root / "first", root / "second"
    t0 = time.perf_counter()
    assert main(["run", "--data", str(data), "--schema", str(root / "synth.schema.json"), "--out", str(first),
                 *RUN_FLAGS]) == 0
    t1 = time.perf_counter()
    assert main(["run", "--manifest", str(first / "manifest.json"), "--out", str(second)]) == 0
    t2 = time.perf_counter()
    return first, second, (t1 - t0, t2 - t1)


def test_11_pipeline_determinism(two_runs):
    with criterion(11, "two runs from one manifest are byte-identical") as info:
        first, second, (ta, tb) = two_runs
        files = sorted(p.name for p in first.iterdir() if p.suffix in (".csv", ".json"))
        assert files == sorted(p.name for p in second.iterdir() if p.suffix in (".csv", ".json"))
        for name in files:
            if name != "manifest.json":
                assert (first / name).read_bytes() == (second / name).read_bytes(), name
        assert comparable_manifest(load_manifest(first / "manifest.json")) == \
            comparable_manifest(load_manifest(second / "manifest.json"))
        assert ta < 60 and tb < 60
        info["detail"] = f"{len(files)} files, runs {ta:.1f}s and {tb:.1f}s"


@pytest.fixture(scope="module")
def country_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("countries")
    data = root / "synth.csv"
    assert main(["synth", "--out", str(data), "--n-rows", "600", "--n-features", "6", "--n-countries", "2",
                 "--seed", "5"]) == 0
    out = root / "out"
    assert main(["per-country", "--data", str(data), "--schema", str(root / "synth.schema.json"), "--out", str(out),
                 "--grid", "desk", "--k", "3", "--background-size", "10", "--explain-rows", "20"]) == 0
    return out


def test_13_format_fixtures(two_runs, country_run):
    with criterion(13, "emitted reports match the golden schemas") as info:
        run = two_runs[0]
        checks = [
            ("grid_report", csv_records(run / "grid_report.csv")),
            ("stacking_weights", csv_records(run / "stacking_weights.csv")),
            ("shap_global", csv_records(run / "shap_global.csv")),
            ("shap_local", json.loads((run / "shap_local.json").read_text())),
            ("top10_frequency", csv_records(country_run / "top10_frequency.csv")),
        ]
        for name, doc in checks:
            jsonschema.validate(doc, golden(name))
        grid = checks[0][1]
        assert all(sum(r["winner"] for r in grid if r["family"] == f) == 1 for f in {r["family"] for r in grid})
        weights = checks[1][1]
        assert {r["interaction"] for r in weights} == {1, 2}
        assert [r["learner"] for r in weights if r["interaction"] == 2][0] == "stacked"
        ranks = [r["rank"] for r in checks[2][1]]
        assert ranks == list(range(1, len(ranks) + 1))
        info["detail"] = "grid report, weight history, shap_global, shap_local, top10_frequency"


# ---- 12: known truth ----------------------------------------------------------------------------------

def test_12_known_truth_recovery():
    with criterion(12, "dominant synthetic effect ranks first") as info:
        hits = []
        for seed in range(20):
            d = generate(default_spec(n_rows=2000, n_features=12, seed=seed, dominant_effect=5.0))
            train, test = train_test_split(d, 0.2, seed)
            folds = stratified_kfold(train, 3, seed)
            cfgs = [LearnerConfig("logit", penalty="none"),
                    LearnerConfig("gradient_boosting", n_trees=40, learning_rate=0.1, seed=seed),
                    LearnerConfig("random_forest", n_trees=30, max_depth=6, seed=seed)]
            stack = fit_stacked(train, folds, cfgs)
            r = np.random.default_rng(seed)
            bg = train.X[np.sort(r.choice(train.n_rows, 20, replace=False))]
            X = test.X[np.sort(r.choice(test.n_rows, 30, replace=False))]
            e = explain_dataset(stack, X, bg, method="sampled", n_permutations=100, seed=seed,
                                feature_names=train.feature_names)
            hits.append(global_importance(e).ranking[0] == "f00")
        assert sum(hits) >= 19
        info["detail"] = f"f00 ranked first in {sum(hits)}/20 seeds"
