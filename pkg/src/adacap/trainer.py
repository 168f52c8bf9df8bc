"""AdaCap training: lambda-init scan, Adam over (theta, log lambda), early
stopping on a held-out validation split, and freezing of the output layer."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .errors import ConfigError, DiagnosticError, DomainError, InputError, ShapeError
from .mlr_loss import (
    DEFAULT_T,
    DitherConfig,
    PermutationSet,
    bce_mlr_loss,
    draw_noise,
    draw_permutations,
    mlr_regression_loss,
)
from .net import MlpParams, backward, forward, init_params
from .tikhonov import freeze_output, ridge_projector, ridge_vjp

log = logging.getLogger(__name__)

REGRESSION = "regression"
CLASSIFICATION = "classification"

# depth -> (learning rate, max iterations)
ARCHITECTURES = {
    1: (1e-2, 200),
    2: (1e-3, 200),
    3: (10**-3.5, 400),
    4: (1e-4, 400),
}


@dataclass
class TrainConfig:
    depth: int = 1
    width: int = 1024
    learning_rate: float | None = None
    max_iter: int | None = None
    batch_size: int | None = None
    n_permutations: int = DEFAULT_T
    sigma_tilde: float | None = None
    structured: bool = True
    val_fraction: float = 0.2
    val_cap: int = 2048
    wall_budget_secs: float | None = None
    activation: str = "relu"
    task: str = REGRESSION
    seed: int = 0

    def __post_init__(self):
        if self.task not in (REGRESSION, CLASSIFICATION):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.depth < 1 or self.width < 1:
            raise ConfigError("depth and width must be positive")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in (0, 1)")
        if self.n_permutations < 0:
            raise ConfigError("n_permutations must be non-negative")

    @property
    def lr(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return ARCHITECTURES[min(self.depth, 4)][0]

    @property
    def iterations(self) -> int:
        if self.max_iter is not None:
            return self.max_iter
        return ARCHITECTURES[min(self.depth, 4)][1]

    @property
    def dither(self) -> DitherConfig:
        sigma = self.sigma_tilde
        if sigma is None:
            sigma = 0.03 if self.task == REGRESSION else 0.0
        return DitherConfig(sigma_tilde=sigma, structured=self.structured)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> TrainConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**data)


@dataclass
class TrainedModel:
    params: MlpParams
    frozen_w: np.ndarray
    task: str
    best_iter: int
    val_history: list[tuple[int, float]] = field(default_factory=list)
    frozen_b: float = 0.0
    pipeline: dict | None = None
    train_curve: list[tuple[int, float, float]] = field(default_factory=list)

    @property
    def best_score(self) -> float:
        return dict(self.val_history)[self.best_iter]

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "frozen_w": self.frozen_w.tolist(),
            "frozen_b": self.frozen_b,
            "task": self.task,
            "best_iter": self.best_iter,
            "val_history": [list(p) for p in self.val_history],
            "pipeline": self.pipeline,
        }

    @classmethod
    def from_dict(cls, data: dict) -> TrainedModel:
        return cls(
            params=MlpParams.from_dict(data["params"]),
            frozen_w=np.asarray(data["frozen_w"], dtype=np.float64),
            frozen_b=float(data.get("frozen_b", 0.0)),
            task=data["task"],
            best_iter=int(data["best_iter"]),
            val_history=[(int(i), float(s)) for i, s in data.get("val_history", [])],
            pipeline=data.get("pipeline"),
        )


class Adam:
    """Bias-corrected Adam acting in place on a list of arrays."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if any(not np.all(np.isfinite(g)) for g in grads):
            raise DiagnosticError("non-finite gradient", iteration=self.t + 1)
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def lambda_grid() -> np.ndarray:
    """The 12-point grid ``0.1 * 10**(5k/11)``, k = 0..11."""
    return 10.0 ** (-1.0 + 5.0 * np.arange(12) / 11.0)


def _loss(task, state, y, perms, dither, rng=None, noise=None):
    if task == REGRESSION:
        return mlr_regression_loss(state, y, perms, dither, rng=rng, noise=noise)
    return bce_mlr_loss(state, y, perms, rng=rng, noise=noise, structured=dither.structured)


def mlr_on_grid(params, batch_x, batch_y, perms, dither, noise_seed=0, task=REGRESSION, grid=None):
    """Loss at every grid value of lambda, one forward pass and frozen noise."""
    grid = lambda_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    a_last = forward(params, batch_x).a_last
    y = np.asarray(batch_y, dtype=np.float64)
    noise = draw_noise(np.random.default_rng(noise_seed), len(y), perms.T, dither)
    values = np.array([_loss(task, ridge_projector(a_last, lam), y, perms, dither, noise=noise)[0] for lam in grid])
    return grid, values


def lambda_init_scan(params, batch_x, batch_y, perms, dither, noise_seed=0, task=REGRESSION) -> float:
    """Geometric mean of the grid pair with the steepest increase of the loss.

    Ties resolve to the first (smallest) maximising index.
    """
    grid, values = mlr_on_grid(params, batch_x, batch_y, perms, dither, noise_seed, task)
    k = int(np.argmax(np.diff(values)))
    return float(np.sqrt(grid[k] * grid[k + 1]))


def validation_split(n: int, config: TrainConfig, rng: np.random.Generator):
    n_val = min(int(round(config.val_fraction * n)), config.val_cap)
    if n_val < 1:
        raise ConfigError(f"validation split of {n} rows is empty")
    if n - n_val < 2:
        raise ConfigError(f"{n} rows leave no room for training after validation")
    order = rng.permutation(n)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def _seeds(seed: int) -> dict[str, int]:
    names = ("split", "init", "perms", "noise", "batches", "scan")
    states = np.random.SeedSequence(seed).generate_state(len(names))
    return {name: int(s) for name, s in zip(names, states)}


def _targets_for_fit(task, y):
    # classification output weights are fitted on the ±1 coding
    return y if task == REGRESSION else 2.0 * y - 1.0


def score(task, y, output) -> float:
    if task == REGRESSION:
        return metrics.r2(y, output)
    try:
        return metrics.auc(y, output)
    except DomainError:
        return metrics.accuracy(y, (output >= 0).astype(np.float64))


def _batches(n_train, batch_size, rng):
    """Endless stream of equally sized index batches, reshuffled each epoch."""
    per_epoch = n_train // batch_size
    while True:
        order = rng.permutation(n_train)
        for i in range(per_epoch):
            yield order[i * batch_size : (i + 1) * batch_size]


def _prepare(x, y, config):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ShapeError(f"x {x.shape} and y {y.shape} disagree")
    if x.shape[0] < 4:
        raise ConfigError("need at least 4 training rows")
    if config.task == CLASSIFICATION and not np.all((y == 0) | (y == 1)):
        raise DomainError("classification targets must be 0 or 1")
    return x, y


@dataclass
class _Run:
    x_tr: np.ndarray
    y_tr: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    params: MlpParams
    perms: PermutationSet
    dither: DitherConfig
    batches: object
    noise_rng: np.random.Generator
    first: np.ndarray
    scan_seed: int


def _setup(x, y, config: TrainConfig) -> _Run:
    x, y = _prepare(x, y, config)
    seeds = _seeds(config.seed)
    train_idx, val_idx = validation_split(len(y), config, np.random.default_rng(seeds["split"]))
    x_tr, y_tr = x[train_idx], y[train_idx]
    n_train = len(y_tr)
    batch_size = min(config.batch_size or config.width, n_train)
    if batch_size < 2:
        raise ConfigError("batch size must be at least 2")
    batches = _batches(n_train, batch_size, np.random.default_rng(seeds["batches"]))
    return _Run(
        x_tr=x_tr,
        y_tr=y_tr,
        x_val=x[val_idx],
        y_val=y[val_idx],
        params=init_params(x.shape[1], config.width, config.depth, config.activation, seeds["init"]),
        perms=draw_permutations(batch_size, config.n_permutations, seeds["perms"]),
        dither=config.dither,
        batches=batches,
        noise_rng=np.random.default_rng(seeds["noise"]),
        first=next(batches),
        scan_seed=seeds["scan"],
    )


def scan_curve(x, y, config: TrainConfig):
    """The lambda-init grid and loss values :func:`train` would see, plus the chosen value."""
    run = _setup(x, y, config)
    args = (run.params, run.x_tr[run.first], run.y_tr[run.first], run.perms, run.dither, run.scan_seed, config.task)
    grid, values = mlr_on_grid(*args)
    return grid, values, lambda_init_scan(*args)


def train(x, y, config: TrainConfig, pipeline: dict | None = None) -> TrainedModel:
    """Fit an MLR network on preprocessed ``x`` and ``y``.

    A validation split is held out; each iteration scores the current
    parameters on it with output weights provisionally frozen from the
    current batch. The returned model carries the parameters and output
    weights of the best-scoring iteration.
    """
    run = _setup(x, y, config)
    x_tr, y_tr, x_val, y_val = run.x_tr, run.y_tr, run.x_val, run.y_val
    params, perms, dither, batches, noise_rng, first = (
        run.params, run.perms, run.dither, run.batches, run.noise_rng, run.first
    )
    params.log_lambda = float(
        np.log(lambda_init_scan(params, x_tr[first], y_tr[first], perms, dither, run.scan_seed, config.task))
    )
    log.debug("lambda_init=%.6g", np.exp(params.log_lambda))

    log_lam = np.array([params.log_lambda])
    theta = params.arrays() + [log_lam]
    adam = Adam(lr=config.lr)
    best = None
    history, curve = [], []
    start = time.perf_counter()
    idx = first
    for it in range(1, config.iterations + 1):
        xb, yb = x_tr[idx], y_tr[idx]
        tape = forward(params, xb)
        try:
            state = ridge_projector(tape.a_last, float(np.exp(log_lam[0])))
        except (DomainError, InputError) as exc:
            # parameters drifted to where the ridge layer is undefined
            raise DiagnosticError(f"iteration {it}: {exc}", iteration=it) from exc

        w = freeze_output(state, _targets_for_fit(config.task, yb))
        val_score = score(config.task, y_val, forward(params, x_val).a_last @ w)
        history.append((it, val_score))
        if best is None or val_score > best[1]:
            params.log_lambda = float(log_lam[0])
            best = (it, val_score, params.copy(), w)

        loss, parts = _loss(config.task, state, yb, perms, dither, rng=noise_rng)
        if not np.isfinite(loss):
            raise DiagnosticError(f"non-finite loss at iteration {it}", iteration=it)
        curve.append((it, float(loss), val_score))
        d_a, d_lam = ridge_vjp(state, parts.grad_h, parts.rhs)
        grads = [g for pair in backward(tape, params, d_a) for g in pair]
        grads.append(np.array([d_lam * state.lam]))
        try:
            adam.step(theta, grads)
        except DiagnosticError as exc:
            raise DiagnosticError(str(exc), iteration=it) from None
        params.log_lambda = float(log_lam[0])

        if config.wall_budget_secs is not None and time.perf_counter() - start >= config.wall_budget_secs:
            log.info("wall budget reached after %d iterations", it)
            break
        idx = next(batches)

    best_iter, _, best_params, best_w = best
    return TrainedModel(
        params=best_params,
        frozen_w=best_w,
        task=config.task,
        best_iter=best_iter,
        val_history=history,
        pipeline=pipeline,
        train_curve=curve,
    )


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def decision_function(model: TrainedModel, x_new) -> np.ndarray:
    x_new = np.asarray(x_new, dtype=np.float64)
    if x_new.ndim != 2 or x_new.shape[1] != model.params.n_features:
        raise ShapeError(f"expected {model.params.n_features} features, got shape {x_new.shape}")
    return forward(model.params, x_new).a_last @ model.frozen_w + model.frozen_b


def predict(model: TrainedModel, x_new) -> np.ndarray:
    """Regression output, or class-1 probability for classification."""
    out = decision_function(model, x_new)
    if model.task == REGRESSION:
        return out
    return _sigmoid(out)


def predict_label(model: TrainedModel, x_new) -> np.ndarray:
    """Hard 0/1 labels; probability exactly 0.5 maps to 1."""
    return (predict(model, x_new) >= 0.5).astype(np.int64)
