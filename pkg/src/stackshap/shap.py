"""Shapley-value attributions under the interventional value function.

``v(S)`` is the mean model output over background rows whose columns in
``S`` are overwritten by the explained row.  Exact attributions enumerate
all ``2**J`` coalitions; the sampled estimator averages marginal
contributions over antithetic permutation pairs; the linear closed form
``beta_j * (x_j - mean_j)`` covers linear models.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ExactLimitError, ValidationError
from .learners import LinearLogitModel

EXACT_LIMIT = 15
DEFAULT_PERMUTATIONS = 2000
OUTPUTS = ("probability", "log_odds")
_ROWS_PER_CALL = 262_144


def _logit(p):
    p = np.clip(np.asarray(p, dtype=np.float64), 1e-15, 1 - 1e-15)
    return np.log(p) - np.log1p(-p)


def _linear_part(model):
    """``(intercept, coef)`` when the model's log-odds are exactly linear, else None."""
    if isinstance(model, LinearLogitModel):
        return model.intercept, model.coef
    members = getattr(model, "members", None)
    if members is not None:
        live = [(m, w) for m, w in zip(members, model.weights) if w > 0]
        if len(live) == 1 and isinstance(live[0][0], LinearLogitModel) and live[0][1] == 1.0:
            return live[0][0].intercept, live[0][0].coef
    return None


def model_function(model, output: str = "probability") -> Callable[[np.ndarray], np.ndarray]:
    """Map a fitted model (or a plain callable) to the function being explained."""
    if output not in OUTPUTS:
        raise ValidationError(f"output must be one of {OUTPUTS}")
    if not hasattr(model, "predict_proba"):
        return lambda X: np.asarray(model(X), dtype=np.float64)
    if output == "probability":
        return lambda X: model.predict_proba(X)
    lin = _linear_part(model)
    if lin is not None:
        b0, coef = lin
        return lambda X: b0 + np.asarray(X, dtype=np.float64) @ coef
    return lambda X: _logit(model.predict_proba(X))


@dataclass
class ValueFunctionContext:
    model: object
    background: np.ndarray
    target_row: np.ndarray
    output: str = "probability"

    def __post_init__(self):
        self.background = np.atleast_2d(np.asarray(self.background, dtype=np.float64))
        self.target_row = np.asarray(self.target_row, dtype=np.float64).ravel()
        if self.background.shape[0] < 1:
            raise ValidationError("background needs at least one row")
        if self.background.shape[1] != len(self.target_row):
            raise ValidationError("background columns must match the explained row")
        self._f = model_function(self.model, self.output)

    @property
    def n_features(self) -> int:
        return len(self.target_row)

    def f(self, X) -> np.ndarray:
        return self._f(X)


def _mask_bits(masks: np.ndarray, J: int) -> np.ndarray:
    return ((masks[:, None] >> np.arange(J)[None, :]) & 1).astype(bool)


def subset_values(f, background, x, masks) -> np.ndarray:
    """``v(S)`` for each bitmask in ``masks`` (bit j set means feature j comes from ``x``)."""
    B, J = background.shape
    masks = np.asarray(masks, dtype=np.int64)
    out = np.empty(len(masks))
    step = max(1, _ROWS_PER_CALL // B)
    for s in range(0, len(masks), step):
        bits = _mask_bits(masks[s:s + step], J)
        hyb = np.where(bits[:, None, :], x[None, None, :], background[None, :, :]).reshape(-1, J)
        out[s:s + step] = np.asarray(f(hyb), dtype=np.float64).reshape(len(bits), B).mean(axis=1)
    return out


def value_function(ctx: ValueFunctionContext, S: Sequence[int]) -> float:
    mask = 0
    for j in S:
        if not 0 <= j < ctx.n_features:
            raise ValidationError(f"feature index {j} out of range")
        mask |= 1 << int(j)
    return float(subset_values(ctx.f, ctx.background, ctx.target_row, [mask])[0])


def _popcount(masks: np.ndarray, J: int) -> np.ndarray:
    return _mask_bits(masks, J).sum(axis=1)


def shapley_weights(J: int) -> np.ndarray:
    """``|S|! (J - |S| - 1)! / J!`` indexed by coalition size."""
    return np.array([math.factorial(s) * math.factorial(J - s - 1) / math.factorial(J) for s in range(J)])


def shapley_from_values(v: np.ndarray, J: int) -> np.ndarray:
    """Exact Shapley values from a table of all ``2**J`` coalition values (last axis)."""
    v = np.asarray(v, dtype=np.float64)
    masks = np.arange(2 ** J, dtype=np.int64)
    size = _popcount(masks, J)
    wts = shapley_weights(J)
    phi = np.empty(v.shape[:-1] + (J,))
    for i in range(J):
        without = masks[((masks >> i) & 1) == 0]
        phi[..., i] = (v[..., without | (1 << i)] - v[..., without]) @ wts[size[without]]
    return phi


def shapley_exact(ctx: ValueFunctionContext, exact_limit: int = EXACT_LIMIT) -> np.ndarray:
    J = ctx.n_features
    if J > exact_limit:
        raise ExactLimitError(
            f"{J} features exceed the exact limit of {exact_limit} ({2 ** J} coalitions); use the sampled method"
        )
    v = subset_values(ctx.f, ctx.background, ctx.target_row, np.arange(2 ** J))
    return shapley_from_values(v, J)


def _orderings(J: int, n_permutations: int, rng) -> tuple[np.ndarray, bool]:
    if n_permutations == math.factorial(J):
        return np.array(list(itertools.permutations(range(J))), dtype=np.int64).reshape(-1, J), True
    n_pairs = n_permutations // 2
    fwd = np.array([rng.permutation(J) for _ in range(n_pairs)], dtype=np.int64).reshape(n_pairs, J)
    return np.concatenate([fwd, fwd[:, ::-1]]), False


def shapley_sampled(ctx: ValueFunctionContext, n_permutations: int = DEFAULT_PERMUTATIONS,
                    seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Antithetic permutation sampling; returns estimates and Monte-Carlo standard errors.

    ``n_permutations`` orderings are evaluated as ``n_permutations // 2``
    (ordering, reversed ordering) pairs, and the standard error comes from
    the pair means.  When ``n_permutations == J!`` every ordering is used
    exactly once and the result is exact (standard errors zero); any other
    count is sampled with replacement.  Coalition values are computed once
    per distinct coalition.
    """
    if n_permutations < 2:
        raise ValidationError("n_permutations must be at least 2")
    J = ctx.n_features
    rng = np.random.default_rng(seed)
    orders, exhaustive = _orderings(J, n_permutations, rng)
    n_ord = len(orders)
    prefix = np.zeros((n_ord, J + 1), dtype=np.int64)
    for k in range(J):
        prefix[:, k + 1] = prefix[:, k] | (np.int64(1) << orders[:, k])
    uniq, inv = np.unique(prefix, return_inverse=True)
    v = subset_values(ctx.f, ctx.background, ctx.target_row, uniq)[inv.reshape(prefix.shape)]
    marg = np.diff(v, axis=1)  # marg[o, k] belongs to feature orders[o, k]
    contrib = np.empty((n_ord, J))
    np.put_along_axis(contrib, orders, marg, axis=1)
    if exhaustive:
        return contrib.mean(axis=0), np.zeros(J)
    n_pairs = n_ord // 2
    pairs = 0.5 * (contrib[:n_pairs] + contrib[n_pairs:])
    phi = pairs.mean(axis=0)
    se = pairs.std(axis=0, ddof=1) / math.sqrt(n_pairs) if n_pairs > 1 else np.full(J, np.inf)
    return phi, se


def linear_shap(beta, background_mean, x) -> np.ndarray:
    """``phi_j = beta_j * (x_j - background_mean_j)``; the base value is ``b0 + beta @ background_mean``."""
    beta = np.asarray(beta, dtype=np.float64)
    return beta * (np.asarray(x, dtype=np.float64) - np.asarray(background_mean, dtype=np.float64))


@dataclass
class ShapExplanation:
    base_value: float
    phi: np.ndarray
    method: str
    feature_names: list
    predictions: np.ndarray
    output: str = "probability"
    se: Optional[np.ndarray] = None
    n_permutations: Optional[int] = None
    seed: Optional[int] = None
    surrogate: bool = False
    row_ids: Optional[np.ndarray] = None

    @property
    def n_rows(self) -> int:
        return self.phi.shape[0]

    def local_accuracy_gap(self) -> np.ndarray:
        return self.base_value + self.phi.sum(axis=1) - self.predictions

    def subset(self, names: Sequence[str]) -> "ShapExplanation":
        cols = [self.feature_names.index(n) for n in names]
        return ShapExplanation(self.base_value, self.phi[:, cols], self.method, list(names), self.predictions,
                               self.output, None if self.se is None else self.se[:, cols], self.n_permutations,
                               self.seed, self.surrogate, self.row_ids)


def explain_dataset(model, X, background, method: str = "auto", output: str = "probability",
                    n_permutations: int = DEFAULT_PERMUTATIONS, seed: int = 0, exact_limit: int = EXACT_LIMIT,
                    feature_names=None, row_ids=None) -> ShapExplanation:
    """One attribution row per input row with a shared base value.

    ``method`` is ``exact``, ``sampled``, ``linear`` or ``auto`` (exact up
    to ``exact_limit`` features, sampled above).  The linear method uses
    the model's own coefficients when its explained output is linear;
    otherwise it fits a least-squares linear surrogate on the background
    and marks the explanation ``surrogate`` (local accuracy then holds
    only approximately).
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    bg = np.atleast_2d(np.asarray(background, dtype=np.float64))
    J = X.shape[1]
    if bg.shape[1] != J:
        raise ValidationError("background columns must match X")
    names = list(feature_names or getattr(model, "feature_names", None) or [f"x{j}" for j in range(J)])
    f = model_function(model, output)
    if method == "auto":
        method = "exact" if J <= exact_limit else "sampled"
    if method == "exact" and J > exact_limit:
        raise ExactLimitError(f"{J} features exceed the exact limit of {exact_limit}; use method='sampled'")
    preds = np.asarray(f(X), dtype=np.float64)
    base = float(np.mean(f(bg)))
    se = None
    surrogate = False
    if method == "exact":
        masks = np.arange(2 ** J)
        phi = np.empty((len(X), J))
        for i, x in enumerate(X):
            phi[i] = shapley_from_values(subset_values(f, bg, x, masks), J)
    elif method == "sampled":
        phi = np.empty((len(X), J))
        se = np.empty((len(X), J))
        for i, x in enumerate(X):
            ctx = ValueFunctionContext(f, bg, x)
            phi[i], se[i] = shapley_sampled(ctx, n_permutations, seed + i)
    elif method == "linear":
        lin = _linear_part(model) if output == "log_odds" else None
        if lin is None and not hasattr(model, "predict_proba"):
            lin = None
        if lin is not None:
            b0, beta = lin
        else:
            surrogate = True
            A = np.column_stack([np.ones(len(bg)), bg])
            coef = np.linalg.lstsq(A, f(bg), rcond=None)[0]
            beta = coef[1:]
        mean = bg.mean(axis=0)
        phi = np.array([linear_shap(beta, mean, x) for x in X]).reshape(len(X), J)
    else:
        raise ValidationError(f"unknown method {method!r}")
    label = method if method != "sampled" else "sampled"
    return ShapExplanation(base, phi, label, names, preds, output, se,
                           n_permutations if method == "sampled" else None,
                           seed if method == "sampled" else None, surrogate,
                           None if row_ids is None else np.asarray(row_ids))


@dataclass
class GlobalImportance:
    feature_names: list
    importance: np.ndarray
    groups: Optional[list] = None

    @property
    def ranking(self) -> list[str]:
        order = np.argsort(-self.importance, kind="stable")
        return [self.feature_names[i] for i in order]

    def top(self, k: int) -> list[str]:
        return self.ranking[:k]

    def rank_of(self, name: str) -> int:
        return self.ranking.index(name) + 1


def global_importance(e: ShapExplanation, groups=None) -> GlobalImportance:
    """Mean absolute attribution per feature; ranking ties keep feature order."""
    if e.n_rows < 1:
        raise ValidationError("explanation has no rows")
    return GlobalImportance(list(e.feature_names), np.mean(np.abs(e.phi), axis=0),
                            None if groups is None else list(groups))


@dataclass
class LocalProfile:
    row_index: int
    phi_mean: float
    phi_sum: float
    prediction: float
    entries: list = field(default_factory=list)  # (feature, raw value, phi)

    def to_dict(self) -> dict:
        return {
            "row_index": int(self.row_index),
            "phi_mean": float(self.phi_mean),
            "phi_sum": float(self.phi_sum),
            "prediction": float(self.prediction),
            "entries": [{"feature": f, "raw_value": float(v), "phi": float(p)} for f, v, p in self.entries],
        }


def local_extremes(e: ShapExplanation, X) -> tuple[LocalProfile, LocalProfile]:
    """Profiles of the rows with the smallest and largest mean attribution.

    Rows are reported by ``e.row_ids`` when present, else by position.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if e.n_rows < 2:
        raise ValidationError("local extremes need at least two rows")
    if X.shape != e.phi.shape:
        raise ValidationError("X must align with the explanation")
    J = e.phi.shape[1]
    total = e.phi.sum(axis=1)
    mean = total / J
    ids = np.arange(e.n_rows) if e.row_ids is None else e.row_ids

    def profile(i):
        order = np.argsort(-np.abs(e.phi[i]), kind="stable")
        entries = [(e.feature_names[j], float(X[i, j]), float(e.phi[i, j])) for j in order]
        return LocalProfile(int(ids[i]), float(mean[i]), float(total[i]), float(e.predictions[i]), entries)

    return profile(int(np.argmin(mean))), profile(int(np.argmax(mean)))


@dataclass
class InteractionMatrix:
    row_features: list
    col_features: list
    r: np.ndarray
    zero_variance: np.ndarray  # True where a column had no variance and r was set to 0


def interaction_correlations(e_students: ShapExplanation, e_schools: ShapExplanation,
                             top: int = 20) -> InteractionMatrix:
    """Pearson correlations between the attribution columns of two covariate groups (top ``top`` each)."""
    if e_students.n_rows != e_schools.n_rows:
        raise ValidationError("explanations must cover the same rows")
    if e_students.row_ids is not None and e_schools.row_ids is not None:
        if not np.array_equal(e_students.row_ids, e_schools.row_ids):
            raise ValidationError("explanations must cover the same rows in the same order")
    ra = global_importance(e_students).top(top)
    rb = global_importance(e_schools).top(top)
    A = e_students.phi[:, [e_students.feature_names.index(n) for n in ra]]
    B = e_schools.phi[:, [e_schools.feature_names.index(n) for n in rb]]
    Ac = A - A.mean(axis=0)
    Bc = B - B.mean(axis=0)
    na = np.sqrt((Ac ** 2).sum(axis=0))
    nb = np.sqrt((Bc ** 2).sum(axis=0))
    zero = (na[:, None] == 0) | (nb[None, :] == 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (Ac.T @ Bc) / (na[:, None] * nb[None, :])
    r = np.where(zero, 0.0, np.clip(r, -1.0, 1.0))
    return InteractionMatrix(ra, rb, r, zero)


def top10_frequency(per_country: Sequence[GlobalImportance], top: int = 10) -> list[tuple[str, int]]:
    """How many countries list each feature in their top ``top``; sorted by count, then first appearance."""
    if not per_country:
        raise ValidationError("need at least one country")
    counts: dict[str, int] = {}
    for gi in per_country:
        for name in gi.top(top):
            counts[name] = counts.get(name, 0) + 1
    first = {n: i for i, n in enumerate(counts)}
    return sorted(counts.items(), key=lambda kv: (-kv[1], first[kv[0]]))


def _r(v) -> str:
    return repr(float(v))


def write_shap_global(gi: GlobalImportance, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "group", "importance", "rank"])
        groups = dict(zip(gi.feature_names, gi.groups or [""] * len(gi.feature_names)))
        imp = dict(zip(gi.feature_names, gi.importance))
        for rank, name in enumerate(gi.ranking, start=1):
            w.writerow([name, groups[name], _r(imp[name]), rank])


def read_shap_global(path) -> GlobalImportance:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return GlobalImportance([r["feature"] for r in rows], np.array([float(r["importance"]) for r in rows]),
                            [r["group"] for r in rows])


def write_shap_local(profiles: tuple[LocalProfile, LocalProfile], e: ShapExplanation, path) -> None:
    lo, hi = profiles
    doc = {"method": e.method, "output": e.output, "base_value": float(e.base_value), "n_features": len(e.feature_names),
           "min": lo.to_dict(), "max": hi.to_dict()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def write_beeswarm(e: ShapExplanation, X, path) -> None:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    ids = np.arange(e.n_rows) if e.row_ids is None else e.row_ids
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_index", "feature", "raw_value", "phi"])
        for i in range(e.n_rows):
            for j, name in enumerate(e.feature_names):
                w.writerow([int(ids[i]), name, _r(X[i, j]), _r(e.phi[i, j])])


def write_heatmap(e: ShapExplanation, path) -> None:
    ids = np.arange(e.n_rows) if e.row_ids is None else e.row_ids
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_index", *e.feature_names])
        for i in range(e.n_rows):
            w.writerow([int(ids[i]), *(_r(v) for v in e.phi[i])])


def write_interactions(m: InteractionMatrix, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", *m.col_features])
        for i, name in enumerate(m.row_features):
            w.writerow([name, *(_r(v) for v in m.r[i])])


def write_top10_frequency(rows: Sequence[tuple[str, int]], path, groups: Optional[dict] = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "group", "count"])
        for name, count in rows:
            w.writerow([name, (groups or {}).get(name, ""), count])
