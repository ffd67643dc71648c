"""Logistic regression (unpenalized or ridge) and L1 logistic regression with CV-chosen C.

Both fit on internally standardized columns and report coefficients on
the raw feature scale.  Penalties never touch the intercept.  Columns with
zero variance carry no information beyond the intercept and get a fixed
zero coefficient.
"""

from __future__ import annotations

import math
import warnings
from typing import Optional, Sequence

import numpy as np

from ..errors import ConvergenceWarning
from .base import LearnerConfig, TrainedLearner, as_matrix, default_feature_names, logistic, row_weights

GRAD_TOL = 1e-8
KKT_TOL = 1e-9
MAX_NEWTON_ITER = 100
MAX_CD_SWEEPS = 10_000


class LinearLogitModel(TrainedLearner):
    """``P(y=1|x) = logistic(intercept + x @ coef)`` on the raw feature scale."""

    def __init__(self, config, feature_names, intercept, coef, converged=True, separated=False,
                 n_iter=0, extra=None):
        super().__init__(config, feature_names)
        self.intercept = float(intercept)
        self.coef = np.asarray(coef, dtype=np.float64)
        self.converged = converged
        self.separated = separated
        self.n_iter = n_iter
        self.extra = dict(extra or {})

    def decision_function(self, X, feature_names=None) -> np.ndarray:
        X = self._check(X, feature_names)
        return self.intercept + X @ self.coef

    def _proba(self, X):
        return logistic(self.intercept + X @ self.coef)

    def _state(self):
        state = {"intercept": self.intercept, "coef": [float(c) for c in self.coef],
                 "converged": self.converged, "separated": self.separated}
        if self.extra:
            state["extra"] = self.extra
        return state


def _nll(Z, y, w, b0, b):
    eta = b0 + Z @ b
    return float(np.sum(w * (np.logaddexp(0.0, eta) - y * eta)))


def _prepare(X, weights):
    X = as_matrix(X)
    n = X.shape[0]
    w = row_weights(weights, n)
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    active = scale > 0
    scale = np.where(active, scale, 1.0)
    Z = (X - mean) / scale
    Z[:, ~active] = 0.0
    return X, w, mean, scale, active, Z


def _to_raw(b0, b, mean, scale):
    coef = b / scale
    return b0 - float(np.sum(coef * mean)), coef


def newton_logit(Z, y, w, l2=0.0, active=None, max_iter=MAX_NEWTON_ITER, tol=GRAD_TOL):
    """Maximize the (ridge-penalized) weighted log-likelihood by damped Newton steps.

    Objective: ``sum_i w_i nll_i + (l2 / 2) ||b||^2``.  Returns
    ``(b0, b, converged, n_iter)``.
    """
    n, p = Z.shape
    active = np.ones(p, dtype=bool) if active is None else active
    Za = np.column_stack([np.ones(n), Z[:, active]])
    pen = np.full(Za.shape[1], l2)
    pen[0] = 0.0
    sw = float(np.sum(w))
    ybar = float(np.sum(w * y) / sw)
    theta = np.zeros(Za.shape[1])
    theta[0] = math.log(ybar / (1 - ybar)) if 0 < ybar < 1 else 0.0

    def objective(th):
        eta = Za @ th
        return float(np.sum(w * (np.logaddexp(0.0, eta) - y * eta))) + 0.5 * float(np.sum(pen * th * th))

    f = objective(theta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = logistic(Za @ theta)
        grad = Za.T @ (w * (mu - y)) + pen * theta
        if np.linalg.norm(grad) <= tol:
            converged = True
            it -= 1
            break
        h = w * mu * (1 - mu)
        H = (Za * h[:, None]).T @ Za + np.diag(pen)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        while True:
            cand = theta - t * step
            fc = objective(cand)
            if fc <= f + 1e-4 * t * float(grad @ (-step)) or t < 1e-10:
                break
            t *= 0.5
        if fc > f:
            # no descent possible at machine precision
            mu = logistic(Za @ theta)
            grad = Za.T @ (w * (mu - y)) + pen * theta
            converged = np.linalg.norm(grad) <= max(tol, 1e-6)
            break
        theta, f = cand, fc
    b = np.zeros(p)
    b[active] = theta[1:]
    return float(theta[0]), b, converged, it


def fit_logit(X, y, weights=None, penalty: str = "none", strength: float = 1.0, feature_names=None,
              config: Optional[LearnerConfig] = None) -> LinearLogitModel:
    """Weighted logistic regression.

    ``penalty="l2"`` adds ``(strength / 2) * ||beta||^2`` on standardized
    coefficients.  With ``penalty="none"`` and separable data the
    iterations are capped and the result is flagged ``separated``.
    """
    X, w, mean, scale, active, Z = _prepare(X, weights)
    y = np.asarray(y, dtype=np.float64)
    cfg = config or LearnerConfig("logit", penalty=penalty, l2_strength=strength)
    l2 = strength if penalty == "l2" else 0.0
    b0, b, converged, n_iter = newton_logit(Z, y, w, l2=l2, active=active)
    separated = False
    if not converged or (penalty == "none" and np.max(np.abs(np.r_[b0, b]), initial=0) > 30):
        if penalty == "none":
            separated = True
            warnings.warn("logit coefficients diverge (perfect or quasi-complete separation); "
                          "iterations capped", ConvergenceWarning, stacklevel=2)
        else:
            warnings.warn("logit did not reach the gradient tolerance", ConvergenceWarning, stacklevel=2)
    b0_raw, coef = _to_raw(b0, b, mean, scale)
    names = feature_names or default_feature_names(X.shape[1])
    return LinearLogitModel(cfg, names, b0_raw, coef, converged, separated, n_iter)


def _soft(z, g):
    return math.copysign(max(abs(z) - g, 0.0), z)


def lasso_kkt_violation(Z, y, w, b0, b, lam, active=None) -> float:
    """Largest violation of the optimality conditions of ``sum w nll + lam ||b||_1``.

    For ``b_j = 0`` the bound ``|g_j| <= lam``; otherwise ``g_j + lam sign(b_j) = 0``;
    the unpenalized intercept needs ``g_0 = 0``.
    """
    active = np.ones(Z.shape[1], dtype=bool) if active is None else active
    mu = logistic(b0 + Z @ b)
    r = w * (mu - y)
    g0 = float(np.sum(r))
    g = Z.T @ r
    viol = abs(g0)
    for j in np.flatnonzero(active):
        if b[j] == 0:
            viol = max(viol, abs(g[j]) - lam)
        else:
            viol = max(viol, abs(g[j] + lam * math.copysign(1.0, b[j])))
    return float(viol)


def lasso_logit_path_point(Z, y, w, lam, active=None, b0=None, b=None, tol=KKT_TOL):
    """Minimize ``sum_i w_i nll_i + lam * sum_j |b_j|`` by proximal Newton with coordinate descent.

    The outer loop forms the weighted least-squares approximation at the
    current point; the inner loop cycles coordinates with soft
    thresholding; a backtracking line search keeps the objective
    decreasing.  Stops when the KKT violation falls below ``tol``.
    """
    n, p = Z.shape
    active = np.ones(p, dtype=bool) if active is None else active
    idx = np.flatnonzero(active)
    sw = float(np.sum(w))
    ybar = float(np.sum(w * y) / sw)
    if b0 is None:
        b0 = math.log(ybar / (1 - ybar)) if 0 < ybar < 1 else 0.0
    b = np.zeros(p) if b is None else b.copy()

    def objective(c0, c):
        return _nll(Z, y, w, c0, c) + lam * float(np.sum(np.abs(c)))

    f = objective(b0, b)
    converged = False
    for outer in range(MAX_NEWTON_ITER * 5):
        if lasso_kkt_violation(Z, y, w, b0, b, lam, active) <= tol:
            converged = True
            break
        eta = b0 + Z @ b
        mu = logistic(eta)
        h = np.maximum(w * mu * (1 - mu), 1e-12 * w)
        z = eta - (mu - y) / np.maximum(mu * (1 - mu), 1e-12)  # working response
        c0, c = b0, b.copy()
        resid = z - (c0 + Z @ c)
        hsum = float(np.sum(h))
        colq = (Z[:, idx] ** 2 * h[:, None]).sum(axis=0)
        for sweep in range(MAX_CD_SWEEPS):
            delta = 0.0
            d0 = float(np.sum(h * resid)) / hsum
            c0 += d0
            resid -= d0
            delta = max(delta, abs(d0))
            for k, j in enumerate(idx):
                if colq[k] <= 0:
                    continue
                zj = Z[:, j]
                old = c[j]
                rho = float(np.sum(h * zj * resid)) + colq[k] * old
                new = _soft(rho, lam) / colq[k]
                if new != old:
                    resid -= zj * (new - old)
                    c[j] = new
                    delta = max(delta, abs(new - old) * math.sqrt(colq[k]))
            if delta < 1e-13:
                break
        # line search along the proximal Newton direction
        t = 1.0
        while True:
            nb0 = b0 + t * (c0 - b0)
            nb = b + t * (c - b)
            fn = objective(nb0, nb)
            if fn <= f or t < 1e-8:
                break
            t *= 0.5
        if fn > f:
            break
        moved = abs(nb0 - b0) + float(np.sum(np.abs(nb - b)))
        b0, b, f = nb0, nb, fn
        if moved == 0.0:
            break
    if not converged:
        converged = lasso_kkt_violation(Z, y, w, b0, b, lam, active) <= max(tol, 1e-7)
    return float(b0), b, converged


def _fold_auc(y, s):
    from ..metrics import auc
    from ..errors import UndefinedAUCError
    try:
        return auc(y, s)
    except UndefinedAUCError:
        return math.nan


def fit_lasso_logit_cv(X, y, C_grid: Sequence[float], folds, weights=None, feature_names=None,
                       config: Optional[LearnerConfig] = None) -> LinearLogitModel:
    """L1 logistic regression with ``lambda = 1 / C`` chosen by mean out-of-fold AUC.

    Standardization statistics are recomputed inside each training fold.
    Ties in mean AUC keep the first C of the grid.  The refit on all rows
    records per-C scores, the chosen C and its KKT residual in ``extra``.
    """
    X = as_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    w = row_weights(weights, X.shape[0])
    cfg = config or LearnerConfig("lasso_logit_cv", C_grid=tuple(C_grid), inner_folds=folds.k)
    scores = []
    for C in C_grid:
        lam = 1.0 / C
        fold_auc = []
        for train, test in folds.splits():
            Xt, wt, mean, scale, active, Z = _prepare(X[train], w[train])
            b0, b, _ = lasso_logit_path_point(Z, y[train], wt, lam, active)
            r0, coef = _to_raw(b0, b, mean, scale)
            fold_auc.append(_fold_auc(y[test], r0 + X[test] @ coef))
        scores.append(float(np.nanmean(fold_auc)) if not np.all(np.isnan(fold_auc)) else math.nan)
    finite = [s if np.isfinite(s) else -np.inf for s in scores]
    best = int(np.argmax(finite))
    C = float(C_grid[best])
    Xa, wa, mean, scale, active, Z = _prepare(X, w)
    b0, b, converged = lasso_logit_path_point(Z, y, wa, 1.0 / C, active)
    if not converged:
        warnings.warn("lasso coordinate descent hit its iteration cap", ConvergenceWarning, stacklevel=2)
    kkt = lasso_kkt_violation(Z, y, wa, b0, b, 1.0 / C, active)
    r0, coef = _to_raw(b0, b, mean, scale)
    coef[b == 0] = 0.0
    names = feature_names or default_feature_names(X.shape[1])
    extra = {"C": C, "cv_auc": {f"{c:g}": s for c, s in zip(C_grid, scores)}, "kkt_violation": kkt,
             "standardized_coef": [float(v) for v in b], "standardized_intercept": b0}
    return LinearLogitModel(cfg, names, r0, coef, converged, False, 0, extra)
