"""Binary classification metrics: confusion counts, ratio metrics, AUC and ROC points."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import UndefinedAUCError, ValidationError

DEFAULT_THRESHOLD = 0.5
# Column order of every metric table this package writes.
TABLE_COLUMNS = ("ACC", "RC", "F1", "PR", "SP", "AUC")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int
    threshold: float = DEFAULT_THRESHOLD

    @property
    def n(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class MetricReport:
    acc: float
    rc: float
    pr: float
    f1: float
    sp: float
    auc: float
    counts: ConfusionCounts
    undefined: tuple = field(default=())

    def as_table_row(self) -> list[float]:
        return [self.acc, self.rc, self.f1, self.pr, self.sp, self.auc]

    def as_dict(self) -> dict:
        return dict(zip(TABLE_COLUMNS, self.as_table_row()))


def _check(y, p):
    y = np.asarray(y)
    p = np.asarray(p, dtype=np.float64)
    if y.shape != p.shape or y.ndim != 1:
        raise ValidationError("labels and scores must be 1-d and of equal length")
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError("labels must be 0/1")
    return y.astype(np.int64), p


def confusion(y, p, threshold: float = DEFAULT_THRESHOLD) -> ConfusionCounts:
    """Predict 1 iff ``p >= threshold`` and tally against ``y``."""
    y, p = _check(y, p)
    if not 0 <= threshold <= 1:
        raise ValidationError("threshold must lie in [0, 1]")
    pred = p >= threshold
    pos = y == 1
    return ConfusionCounts(
        tp=int(np.sum(pred & pos)),
        tn=int(np.sum(~pred & ~pos)),
        fp=int(np.sum(pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
        threshold=float(threshold),
    )


def _ratio(num: float, den: float, name: str, undefined: list) -> float:
    if den == 0:
        undefined.append(name)
        return 0.0
    return num / den


def ratio_metrics(c: ConfusionCounts) -> tuple[float, float, float, float, float, tuple]:
    """Return ``(acc, rc, pr, f1, sp, undefined)``; 0/0 ratios yield 0 and are named in ``undefined``."""
    if c.n < 1:
        raise ValidationError("confusion counts are empty")
    undefined: list = []
    acc = (c.tp + c.tn) / c.n
    rc = _ratio(c.tp, c.tp + c.fn, "rc", undefined)
    pr = _ratio(c.tp, c.tp + c.fp, "pr", undefined)
    sp = _ratio(c.tn, c.tn + c.fp, "sp", undefined)
    f1 = _ratio(2 * pr * rc, pr + rc, "f1", undefined)
    return acc, rc, pr, f1, sp, tuple(undefined)


def auc(y, p) -> float:
    """Mann-Whitney concordance with ties counted one half."""
    y, p = _check(y, p)
    n1 = int(y.sum())
    n0 = len(y) - n1
    if n1 == 0 or n0 == 0:
        raise UndefinedAUCError("AUC needs both classes")
    ranks = rankdata(p)
    u = ranks[y == 1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def roc_points(y, p) -> list[tuple[float, float]]:
    """(fpr, tpr) pairs, one per distinct score taken as threshold in descending order."""
    y, p = _check(y, p)
    n1 = int(y.sum())
    n0 = len(y) - n1
    if n1 == 0 or n0 == 0:
        raise UndefinedAUCError("ROC needs both classes")
    order = np.argsort(-p, kind="mergesort")
    ps, ys = p[order], y[order]
    tps = np.cumsum(ys)
    fps = np.cumsum(1 - ys)
    last = np.r_[np.flatnonzero(np.diff(ps) != 0), len(ps) - 1]
    pts = [(0.0, 0.0)]
    pts += [(fps[i] / n0, tps[i] / n1) for i in last]
    return [(float(a), float(b)) for a, b in pts]


def trapezoid_area(points) -> float:
    pts = np.asarray(points, dtype=float)
    return float(np.sum(np.diff(pts[:, 0]) * (pts[1:, 1] + pts[:-1, 1]) / 2.0))


def metric_report(y, p, threshold: float = DEFAULT_THRESHOLD) -> MetricReport:
    c = confusion(y, p, threshold)
    acc, rc, pr, f1, sp, undefined = ratio_metrics(c)
    try:
        a = auc(y, p)
    except UndefinedAUCError:
        a = 0.0
        undefined = undefined + ("auc",)
    return MetricReport(acc, rc, pr, f1, sp, a, c, undefined)


def write_metric_rows(rows, path, extra_columns=()) -> None:
    """Write ``(label, MetricReport, *extras)`` tuples in ``TABLE_COLUMNS`` order."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", *TABLE_COLUMNS, "tp", "tn", "fp", "fn", "threshold", *extra_columns])
        for label, rep, *extras in rows:
            c = rep.counts
            w.writerow([label, *(repr(float(v)) for v in rep.as_table_row()), c.tp, c.tn, c.fp, c.fn,
                        repr(c.threshold), *extras])
