"""Fully connected feed-forward classifier trained by mini-batch gradient descent."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from ..errors import DivergenceError
from .base import LearnerConfig, TrainedLearner, as_matrix, default_feature_names, logistic, row_weights


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return logistic(z)


def _act_grad(name, z, a):
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "tanh":
        return 1.0 - a * a
    return a * (1.0 - a)


def forward(params, X, activation):
    """Return the output logits and the per-layer (pre-activation, activation) cache."""
    a = X
    cache = []
    for W, b in params[:-1]:
        z = a @ W + b
        a_next = _act(activation, z)
        cache.append((a, z, a_next))
        a = a_next
    W, b = params[-1]
    cache.append((a, None, None))
    return (a @ W + b).ravel(), cache


def loss_and_grad(params, X, y, w, activation):
    """Weighted mean cross-entropy ``sum w_i l_i / sum w_i`` and its gradient per parameter."""
    logits, cache = forward(params, X, activation)
    sw = float(np.sum(w))
    loss = float(np.sum(w * (np.logaddexp(0.0, logits) - y * logits)) / sw)
    delta = ((logistic(logits) - y) * w / sw)[:, None]
    grads = [None] * len(params)
    for layer in range(len(params) - 1, -1, -1):
        a_in = cache[layer][0]
        W, _ = params[layer]
        grads[layer] = (a_in.T @ delta, delta.sum(axis=0))
        if layer > 0:
            _, z, a = cache[layer - 1]
            delta = (delta @ W.T) * _act_grad(activation, z, a)
    return loss, grads


def flatten(params) -> np.ndarray:
    return np.concatenate([np.r_[W.ravel(), b.ravel()] for W, b in params])


def unflatten(theta, shapes):
    out = []
    pos = 0
    for n_in, n_out in shapes:
        W = theta[pos:pos + n_in * n_out].reshape(n_in, n_out)
        pos += n_in * n_out
        b = theta[pos:pos + n_out].copy()
        pos += n_out
        out.append((W.copy(), b))
    return out


def layer_shapes(n_in, hidden):
    sizes = [n_in, *[int(h) for h in hidden], 1]
    return list(zip(sizes[:-1], sizes[1:]))


def init_params(shapes, rng, scheme="glorot"):
    params = []
    for n_in, n_out in shapes:
        if scheme == "zeros":
            W = np.zeros((n_in, n_out))
        else:
            lim = math.sqrt(6.0 / (n_in + n_out))
            W = rng.uniform(-lim, lim, size=(n_in, n_out))
        params.append((W, np.zeros(n_out)))
    return params


class NeuralNetModel(TrainedLearner):
    def __init__(self, config, feature_names, params, mean, scale, history=None):
        super().__init__(config, feature_names)
        self.params = [(np.asarray(W, dtype=np.float64), np.asarray(b, dtype=np.float64)) for W, b in params]
        self.mean = np.asarray(mean, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)
        self.history = history or {}

    def _proba(self, X):
        logits, _ = forward(self.params, (X - self.mean) / self.scale, self.config["activation"])
        return logistic(logits)

    def _state(self):
        return {
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in self.params],
        }


def fit_neural_net(X, y, weights=None, cfg: Optional[LearnerConfig] = None, feature_names=None) -> NeuralNetModel:
    """Train on z-scored features with a sigmoid output and cross-entropy loss.

    A seeded ``validation_fraction`` slice is held out; training stops at
    the epoch cap or after ``patience`` epochs without validation
    improvement, and the best-validation parameters are kept.
    """
    cfg = cfg or LearnerConfig("neural_net")
    X = as_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    n, n_feat = X.shape
    w = row_weights(weights, n)
    act = cfg["activation"]
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    Z = (X - mean) / scale
    rng = np.random.default_rng(cfg["seed"])
    shapes = layer_shapes(n_feat, cfg["hidden_layers"])
    params = init_params(shapes, rng, cfg["init"])

    n_val = int(math.floor(n * cfg["validation_fraction"]))
    perm = rng.permutation(n)
    if n_val >= 1 and n - n_val >= 1:
        val, train = perm[:n_val], np.sort(perm[n_val:])
    else:
        val, train = np.zeros(0, dtype=np.int64), np.arange(n)
    step = float(cfg["step_size"])
    batch = int(cfg["batch_size"])
    best = (math.inf, [(W.copy(), b.copy()) for W, b in params], 0)
    stale = 0
    train_loss, val_loss = [], []
    for epoch in range(cfg["epochs"]):
        order = train[rng.permutation(len(train))]
        for start in range(0, len(order), batch):
            rows = order[start:start + batch]
            if np.sum(w[rows]) <= 0:
                continue
            loss, grads = loss_and_grad(params, Z[rows], y[rows], w[rows], act)
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite training loss in epoch {epoch}", epoch=epoch)
            params = [(W - step * gW, b - step * gb) for (W, b), (gW, gb) in zip(params, grads)]
        tl, _ = loss_and_grad(params, Z[train], y[train], w[train], act)
        if not math.isfinite(tl):
            raise DivergenceError(f"non-finite training loss in epoch {epoch}", epoch=epoch)
        train_loss.append(tl)
        if len(val):
            vl, _ = loss_and_grad(params, Z[val], y[val], w[val], act)
            val_loss.append(vl)
            if vl < best[0] - 1e-12:
                best = (vl, [(W.copy(), b.copy()) for W, b in params], epoch + 1)
                stale = 0
            else:
                stale += 1
                if stale >= cfg["patience"]:
                    break
    if len(val) and val_loss:
        params = best[1]
    names = feature_names or default_feature_names(n_feat)
    history = {"train_loss": train_loss, "val_loss": val_loss, "epochs_run": len(train_loss),
               "best_epoch": best[2] if len(val) else len(train_loss)}
    return NeuralNetModel(cfg, names, params, mean, scale, history)
