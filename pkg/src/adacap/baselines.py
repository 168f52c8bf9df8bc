"""Reference methods the MLR networks are compared against."""

from __future__ import annotations

import numpy as np

from .errors import DiagnosticError
from .net import backward, forward, init_params
from .trainer import (
    CLASSIFICATION,
    REGRESSION,
    Adam,
    TrainConfig,
    TrainedModel,
    _batches,
    _prepare,
    _seeds,
    _sigmoid,
    score,
    validation_split,
)


def train_mse_mlp(x, y, config: TrainConfig) -> TrainedModel:
    """Same network and protocol as :func:`adacap.trainer.train`, but with a
    trainable linear output layer fitted by MSE (BCE with logits for
    classification) instead of the closed-form Ridge layer."""
    x, y = _prepare(x, y, config)
    seeds = _seeds(config.seed)
    train_idx, val_idx = validation_split(len(y), config, np.random.default_rng(seeds["split"]))
    x_tr, y_tr, x_val, y_val = x[train_idx], y[train_idx], x[val_idx], y[val_idx]
    batch_size = min(config.batch_size or config.width, len(y_tr))

    params = init_params(x.shape[1], config.width, config.depth, config.activation, seeds["init"])
    rng = np.random.default_rng(seeds["scan"])
    bound = np.sqrt(6.0 / (config.width + 1))
    w_out = rng.uniform(-bound, bound, size=config.width)
    b_out = np.zeros(1)
    theta = params.arrays() + [w_out, b_out]
    adam = Adam(lr=config.lr)
    batches = _batches(len(y_tr), batch_size, np.random.default_rng(seeds["batches"]))

    best = None
    history = []
    for it in range(1, config.iterations + 1):
        val_out = forward(params, x_val).a_last @ w_out + b_out[0]
        val_score = score(config.task, y_val, val_out)
        history.append((it, val_score))
        if best is None or val_score > best[1]:
            best = (it, val_score, params.copy(), w_out.copy(), float(b_out[0]))

        idx = next(batches)
        tape = forward(params, x_tr[idx])
        out = tape.a_last @ w_out + b_out[0]
        n = len(idx)
        if config.task == REGRESSION:
            g = 2.0 * (out - y_tr[idx]) / n
        else:
            g = (_sigmoid(out) - y_tr[idx]) / n
        if not np.all(np.isfinite(g)):
            raise DiagnosticError(f"non-finite loss at iteration {it}", iteration=it)
        grads = [gr for pair in backward(tape, params, np.outer(g, w_out)) for gr in pair]
        grads += [tape.a_last.T @ g, np.array([g.sum()])]
        adam.step(theta, grads)

    best_iter, _, best_params, best_w, best_b = best
    return TrainedModel(
        params=best_params,
        frozen_w=best_w,
        frozen_b=best_b,
        task=config.task,
        best_iter=best_iter,
        val_history=history,
    )


class RidgeBaseline:
    """Linear Ridge on the raw features, lambda picked by exact leave-one-out.

    Features and (regression) targets are assumed standardised, so no
    intercept is fitted. For classification the ±1-coded target is regressed.
    """

    def __init__(self, task=REGRESSION, grid=None):
        self.task = task
        self.grid = np.logspace(-3, 5, 41) if grid is None else np.asarray(grid)
        self.coef_ = None
        self.lam_ = None

    def fit(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        t = np.asarray(y, dtype=np.float64)
        if self.task == CLASSIFICATION:
            t = 2.0 * t - 1.0
        u, s, vt = np.linalg.svd(x, full_matrices=False)
        uty = u.T @ t
        best = None
        for lam in self.grid:
            shrink = s**2 / (s**2 + lam)
            fitted = u @ (shrink * uty)
            leverage = np.sum(u**2 * shrink, axis=1)
            loo = np.mean(((t - fitted) / (1.0 - leverage)) ** 2)
            if best is None or loo < best[0]:
                best = (loo, lam)
        self.lam_ = float(best[1])
        self.coef_ = vt.T @ (s / (s**2 + self.lam_) * uty)
        return self

    def predict(self, x):
        out = np.asarray(x, dtype=np.float64) @ self.coef_
        return out if self.task == REGRESSION else _sigmoid(out)


class InterceptBaseline:
    """Constant prediction: the training mean (class-1 rate for classification)."""

    def __init__(self, task=REGRESSION):
        self.task = task
        self.value_ = None

    def fit(self, x, y):
        self.value_ = float(np.mean(y))
        return self

    def predict(self, x):
        return np.full(np.asarray(x).shape[0], self.value_)
