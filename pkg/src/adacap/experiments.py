"""Experiment runners shared by the CLI and the acceptance suite: the ablation
ladder on synthetic regression tasks and the method benchmark on CSV datasets."""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import metrics
from .baselines import InterceptBaseline, RidgeBaseline, train_mse_mlp
from .ensemble import EnsembleSpec, fit_ensemble, predict_ensemble
from .errors import DomainError
from .pipeline import REGRESSION, fit_pipeline, split, transform
from .trainer import TrainConfig, predict, train

log = logging.getLogger(__name__)

SYNTHETIC_TASKS = ("friedman", "additive", "interaction")

# rung name -> overrides of the base TrainConfig (None: plain MSE network)
ABLATION_RUNGS = {
    "plain": None,
    "ridge": dict(n_permutations=0, structured=False, sigma_tilde=0.0),
    "ridge+dither": dict(n_permutations=0, structured=True, sigma_tilde=0.0),
    "ridge+perm": dict(n_permutations=16, structured=False, sigma_tilde=0.0),
    "mlr": dict(n_permutations=16, structured=True, sigma_tilde=0.03),
}
ABLATION_ORDER = ("plain", "ridge", "ridge+perm", "mlr")

ABLATION_BASE = TrainConfig(depth=2, width=256)


def synthetic_task(name: str, n: int = 200, d: int = 10, snr: float = 3.0, seed: int = 0):
    """A fixed regression dataset; ``snr`` is the signal-to-noise variance ratio."""
    rng = np.random.default_rng(seed)
    if name == "friedman":
        x = rng.uniform(0, 1, size=(n, d))
        f = 10 * np.sin(np.pi * x[:, 0] * x[:, 1]) + 20 * (x[:, 2] - 0.5) ** 2 + 10 * x[:, 3] + 5 * x[:, 4]
    elif name == "additive":
        x = rng.uniform(-1, 1, size=(n, d))
        f = np.sin(2 * x[:, 0]) + x[:, 1] * x[:, 2] + np.abs(x[:, 3]) + 0.5 * x[:, 4] ** 2 - x[:, 5]
    elif name == "interaction":
        x = rng.standard_normal((n, d))
        f = x[:, :5] @ np.array([1.0, -1.0, 0.5, 0.5, 2.0]) + 0.5 * np.tanh(x[:, 5] * x[:, 6])
    else:
        raise DomainError(f"unknown synthetic task {name!r}")
    y = f + rng.standard_normal(n) * np.std(f) / np.sqrt(snr)
    return x, y


def _standardize(x_tr, x_te, y_tr, y_te):
    mu, sd = x_tr.mean(axis=0), x_tr.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    ym, ys = y_tr.mean(), y_tr.std()
    return (x_tr - mu) / sd, (x_te - mu) / sd, (y_tr - ym) / ys, (y_te - ym) / ys


def ablation_split(task: str, split_seed: int, base: TrainConfig = ABLATION_BASE, rungs=None, task_seed=None):
    """Test R² of every rung on one 80:20 split of one synthetic task."""
    rungs = list(ABLATION_RUNGS) if rungs is None else list(rungs)
    index = SYNTHETIC_TASKS.index(task)
    x, y = synthetic_task(task, seed=1000 + index if task_seed is None else task_seed)
    tr, te = split(len(y), 0.8, seed=split_seed)
    x_tr, x_te, y_tr, y_te = _standardize(x[tr], x[te], y[tr], y[te])
    out = {}
    for rung in rungs:
        overrides = ABLATION_RUNGS[rung]
        cfg = dataclasses.replace(base, seed=split_seed)
        if overrides is None:
            model = train_mse_mlp(x_tr, y_tr, cfg)
        else:
            model = train(x_tr, y_tr, dataclasses.replace(cfg, **overrides))
        out[rung] = metrics.r2(y_te, predict(model, x_te))
    return out


def parallel_map(fn, items, threads: int = 1):
    """Ordered map; a thread pool when ``threads > 1``."""
    items = list(items)
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def run_ablation(tasks=SYNTHETIC_TASKS, splits=100, base: TrainConfig = ABLATION_BASE, rungs=None, threads=1):
    """Rows of ``(task, split, rung, r2)``."""
    jobs = [(t, s) for t in tasks for s in range(splits)]

    def one(job):
        task, s = job
        res = ablation_split(task, s, base, rungs)
        log.info("ablation %s split %d: %s", task, s, {k: round(v, 4) for k, v in res.items()})
        return [(task, s, rung, r2) for rung, r2 in res.items()]

    return [row for rows in parallel_map(one, jobs, threads) for row in rows]


def ablation_means(rows) -> dict:
    """Mean R² per rung over tasks and splits (each task weighted equally)."""
    per = {}
    for task, _s, rung, value in rows:
        per.setdefault(rung, {}).setdefault(task, []).append(value)
    return {rung: float(np.mean([np.mean(v) for v in tasks.values()])) for rung, tasks in per.items()}


def ablation_gate(means: dict, order=ABLATION_ORDER, min_gap: float = 0.02) -> bool:
    values = [means[r] for r in order]
    increasing = all(a < b for a, b in zip(values, values[1:]))
    return increasing and values[-1] - values[0] >= min_gap


BENCHMARK_METHODS = ("MLR", "Bag-MLR", "Ens-MLR", "MSE-MLP", "Ridge", "Intercept")


def _score(task, y, out):
    if task == REGRESSION:
        return "r2", metrics.r2(y, out)
    return "auc", metrics.auc(y, out)


def benchmark_split(table, target, task, split_seed, base: TrainConfig, methods=BENCHMARK_METHODS, bag_size=10):
    """Scores of each method on one split of one table: list of ``(method, metric, value)``."""
    tr, te = split(len(table), 0.8, seed=split_seed)
    spec = fit_pipeline(table, target, task, rows=tr)
    x_tr, y_tr = transform(spec, table.iloc[tr])
    x_te, y_te = transform(spec, table.iloc[te])
    cfg = dataclasses.replace(base, task=task, seed=split_seed)
    results = []
    for method in methods:
        if method == "MLR":
            out = predict(train(x_tr, y_tr, cfg), x_te)
        elif method == "Bag-MLR":
            bag = EnsembleSpec.bag(cfg.depth, bag_size, seed=split_seed * 1000)
            out = predict_ensemble(fit_ensemble(x_tr, y_tr, bag, cfg), x_te)
        elif method == "Ens-MLR":
            spec_e = EnsembleSpec.ens(
                EnsembleSpec.bag(1, bag_size, seed=split_seed * 1000),
                EnsembleSpec.bag(2, bag_size, seed=split_seed * 1000 + bag_size),
            )
            out = predict_ensemble(fit_ensemble(x_tr, y_tr, spec_e, cfg), x_te)
        elif method == "MSE-MLP":
            out = predict(train_mse_mlp(x_tr, y_tr, cfg), x_te)
        elif method == "Ridge":
            out = RidgeBaseline(task).fit(x_tr, y_tr).predict(x_te)
        elif method == "Intercept":
            out = InterceptBaseline(task).fit(x_tr, y_tr).predict(x_te)
        else:
            raise DomainError(f"unknown method {method!r}")
        results.append((method, *_score(task, y_te, out)))
    return results
