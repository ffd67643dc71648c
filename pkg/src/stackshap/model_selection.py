"""Hyperparameter grid, out-of-fold evaluation and per-family selection."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .dataset import Dataset, FoldAssignment, undersample_majority
from .errors import StackShapError
from .learners import FAMILIES, LearnerConfig, fit_learner
from .metrics import DEFAULT_THRESHOLD, TABLE_COLUMNS, MetricReport, metric_report

METRIC_FIELDS = ("acc", "rc", "f1", "pr", "sp", "auc")


def default_grid(seed: int = 0) -> list[LearnerConfig]:
    """The full 21-configuration grid, in report order."""
    grid = [LearnerConfig("logit", penalty=p) for p in ("none", "l2")]
    grid.append(LearnerConfig("lasso_logit_cv", C_grid=(10.0, 50.0, 100.0, 200.0), seed=seed))
    grid += [LearnerConfig("gradient_boosting", n_trees=t, learning_rate=r, seed=seed)
             for t in (100, 500, 1000) for r in (0.01, 0.10)]
    grid += [LearnerConfig("random_forest", n_trees=t, max_depth=d, seed=seed)
             for t in (100, 500, 1000) for d in (5, 10)]
    grid += [LearnerConfig("neural_net", hidden_layers=h, activation=a, seed=seed)
             for h in ((200,), (200, 100, 50)) for a in ("relu", "logistic", "tanh")]
    return grid


def desk_grid(seed: int = 0) -> list[LearnerConfig]:
    """A scaled-down grid with the same families and axes, for laptop-sized runs and tests."""
    grid = [LearnerConfig("logit", penalty=p) for p in ("none", "l2")]
    grid.append(LearnerConfig("lasso_logit_cv", C_grid=(10.0, 50.0, 100.0, 200.0), seed=seed))
    grid += [LearnerConfig("gradient_boosting", n_trees=t, learning_rate=r, seed=seed)
             for t in (20, 60) for r in (0.01, 0.10)]
    grid += [LearnerConfig("random_forest", n_trees=t, max_depth=d, seed=seed)
             for t in (20, 60) for d in (5, 10)]
    grid += [LearnerConfig("neural_net", hidden_layers=h, activation=a, seed=seed, epochs=40, step_size=0.05)
             for h in ((16,), (16, 8, 4)) for a in ("relu", "logistic", "tanh")]
    return grid


GRIDS = {"full": default_grid, "desk": desk_grid}


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("STACKSHAP_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class GridResult:
    rows: list = field(default_factory=list)  # (LearnerConfig, MetricReport)
    oof: dict = field(default_factory=dict)  # config key -> out-of-fold probabilities
    winners: dict = field(default_factory=dict)  # family -> LearnerConfig

    def winner_list(self) -> list[LearnerConfig]:
        return [self.winners[f] for f in FAMILIES if f in self.winners]


class ConfigFitError(StackShapError):
    def __init__(self, cfg: LearnerConfig, cause: Exception):
        super().__init__(f"{cfg.family} [{cfg.label()}]: {cause}")
        self.exit_code = getattr(cause, "exit_code", 1)
        self.config = cfg
        self.cause = cause


def evaluate_config(cfg: LearnerConfig, train: Dataset, folds: FoldAssignment, threshold: float = DEFAULT_THRESHOLD,
                    undersample: bool = False, fit: Callable = fit_learner) -> tuple[MetricReport, np.ndarray]:
    """Fit on each fold complement and predict the held-out fold.

    Returns the metric report on the pooled out-of-fold vector and the
    vector itself (one prediction per training row, never from a model
    that saw the row).
    """
    if folds.n_rows != train.n_rows:
        raise StackShapError("fold assignment was not built on this training set")
    oof = np.full(train.n_rows, np.nan)
    for k, (tr, te) in enumerate(folds.splits()):
        part = train.take(tr)
        if undersample:
            part = undersample_majority(part, seed=folds.seed + 1000 + k)
        try:
            model = fit(cfg, part.X, part.y, part.weights, train.feature_names)
            oof[te] = model.predict_proba(train.X[te])
        except StackShapError as exc:
            raise ConfigFitError(cfg, exc) from exc
    assert not np.isnan(oof).any()
    return metric_report(train.y, oof, threshold), oof


def select_best(rows: Sequence[tuple[LearnerConfig, MetricReport]]) -> dict:
    """Per family, the config winning the most of the six metrics.

    A config wins a metric when it attains the family maximum (ties win
    for every tied config).  Draws go to the higher AUC, then to the
    earlier grid position.
    """
    by_family: dict[str, list[int]] = {}
    for i, (cfg, _) in enumerate(rows):
        by_family.setdefault(cfg.family, []).append(i)
    winners = {}
    for fam, idx in by_family.items():
        vals = np.array([[getattr(rows[i][1], m) for m in METRIC_FIELDS] for i in idx])
        wins = (vals == vals.max(axis=0)).sum(axis=1)
        aucs = vals[:, METRIC_FIELDS.index("auc")]
        best = max(range(len(idx)), key=lambda k: (wins[k], aucs[k], -k))
        winners[fam] = rows[idx[best]][0]
    order = [f for f in FAMILIES if f in winners] + [f for f in winners if f not in FAMILIES]
    return {f: winners[f] for f in order}


def run_grid(configs: Sequence[LearnerConfig], train: Dataset, folds: FoldAssignment,
             threshold: float = DEFAULT_THRESHOLD, undersample: bool = False, n_jobs: Optional[int] = None,
             fit: Callable = fit_learner) -> GridResult:
    """Evaluate every configuration; the table is assembled in grid order regardless of completion order."""
    n_jobs = n_jobs or thread_count()
    job = lambda cfg: evaluate_config(cfg, train, folds, threshold, undersample, fit)
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(job, configs))
    else:
        results = [job(cfg) for cfg in configs]
    out = GridResult()
    for cfg, (rep, oof) in zip(configs, results):
        out.rows.append((cfg, rep))
        out.oof[cfg.key()] = oof
    out.winners = select_best(out.rows)
    return out


def write_grid_report(result: GridResult, path) -> None:
    """Grid report CSV: family, parameters, six metrics, winner flag."""
    winners = {cfg.key() for cfg in result.winners.values()}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["family", "parameters", *TABLE_COLUMNS, "winner"])
        for cfg, rep in result.rows:
            w.writerow([cfg.family, cfg.label(), *(repr(float(v)) for v in rep.as_table_row()),
                        int(cfg.key() in winners)])
