"""Muddling-labels losses for regression (RMSE based) and binary classification.

Both losses see the network only through the Tikhonov state, and every term
is of the form ``H @ V`` for a block ``V`` that does not depend on the
parameters. Each loss therefore returns, alongside its value, the block
``V`` (``parts.rhs``) and the upstream gradient ``dL/d(HV)``
(``parts.grad_h``) so that :func:`adacap.tikhonov.ridge_vjp` finishes the
backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError
from .tikhonov import TikhonovState

DEFAULT_T = 16


@dataclass(frozen=True)
class PermutationSet:
    perms: np.ndarray  # T x n, each row a permutation of range(n)
    seed: int

    @property
    def T(self) -> int:
        return self.perms.shape[0]

    @property
    def n(self) -> int:
        return self.perms.shape[1]

    def permuted(self, y) -> np.ndarray:
        """All permuted copies of ``y`` stacked as columns (n x T)."""
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (self.n,):
            raise ShapeError(f"expected a vector of length {self.n}, got shape {y.shape}")
        return y[self.perms].T


@dataclass(frozen=True)
class DitherConfig:
    sigma_tilde: float = 0.03
    structured: bool = True

    def __post_init__(self):
        if self.sigma_tilde < 0:
            raise DomainError("sigma_tilde must be non-negative")


@dataclass(frozen=True)
class MlrNoise:
    """One draw of every noise source used by a loss evaluation."""

    eps: np.ndarray
    eps_perm: np.ndarray
    xi: np.ndarray
    xi_perm: np.ndarray

    @classmethod
    def zeros(cls, n: int, T: int) -> MlrNoise:
        return cls(np.zeros(n), np.zeros((n, T)), np.zeros(n), np.zeros((n, T)))


@dataclass
class MlrParts:
    fit: float
    baseline: float
    perm_terms: np.ndarray
    signed_penalties: np.ndarray  # baseline - perm_terms, before the absolute value
    rhs: np.ndarray
    grad_h: np.ndarray


def draw_permutations(n: int, T: int, seed: int) -> PermutationSet:
    if n < 2:
        raise DomainError(f"need at least 2 labels to permute, got n={n}")
    if T < 0:
        raise DomainError("T must be non-negative")
    rng = np.random.default_rng(seed)
    perms = np.empty((T, n), dtype=np.int64)
    for t in range(T):
        perms[t] = rng.permutation(n)
    return PermutationSet(perms=perms, seed=seed)


def apply_perm(perm, y) -> np.ndarray:
    perm = np.asarray(perm)
    y = np.asarray(y)
    if perm.shape != y.shape:
        raise ShapeError(f"permutation of length {perm.shape} cannot act on {y.shape}")
    return y[perm]


def draw_noise(rng: np.random.Generator, n: int, T: int, dither: DitherConfig) -> MlrNoise:
    # fixed draw order keeps runs reproducible when flags change
    eps = dither.sigma_tilde * rng.standard_normal(n)
    eps_perm = dither.sigma_tilde * rng.standard_normal((n, T))
    if dither.structured:
        xi = rng.standard_normal(n)
        xi_perm = rng.standard_normal((n, T))
    else:
        xi, xi_perm = np.zeros(n), np.zeros((n, T))
    return MlrNoise(eps, eps_perm, xi, xi_perm)


def structured_dither(state: TikhonovState, xi) -> np.ndarray:
    """``(I - H) xi``: noise concentrated on directions H fits weakly."""
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape[0] != state.n:
        raise ShapeError(f"noise has {xi.shape[0]} rows, expected {state.n}")
    return xi - state.apply_h(xi)


def rmse(y, yhat) -> float:
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise ShapeError(f"length mismatch {y.shape} vs {yhat.shape}")
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def baseline_rmse(y) -> float:
    y = np.asarray(y, dtype=np.float64)
    return rmse(y, np.full_like(y, y.mean()))


def _resolve_noise(noise, rng, n, T, dither):
    if noise is not None:
        return noise
    if rng is None:
        return MlrNoise.zeros(n, T)
    return draw_noise(rng, n, T, dither)


def _check(state, y, perms):
    if not state.lam > 0:
        raise DomainError(f"ridge parameter must be positive, got {state.lam}")
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (state.n,):
        raise ShapeError(f"target has shape {y.shape}, expected ({state.n},)")
    if perms.T and perms.n != state.n:
        raise ShapeError(f"permutations act on {perms.n} rows, batch has {state.n}")
    return y


def mlr_regression_loss(
    state: TikhonovState,
    y,
    perms: PermutationSet,
    dither: DitherConfig = DitherConfig(),
    rng: np.random.Generator | None = None,
    noise: MlrNoise | None = None,
) -> tuple[float, MlrParts]:
    """MLR regression loss.

    ``fit + mean_t |baseline - perm_t|`` where the fit term is the RMSE of
    ``(I - H)(y + eps + xi)``, each permuted term the RMSE of
    ``(I - H)(perm_t(y) + eps_t + xi_t)``, and the baseline is the RMSE of
    the constant predictor on the un-dithered ``y``.

    Noise comes from ``noise`` if given, else is drawn from ``rng``; with
    neither, every noise source is zero.
    """
    y = _check(state, y, perms)
    n, T = state.n, perms.T
    noise = _resolve_noise(noise, rng, n, T, dither)

    cols = [y + noise.eps + noise.xi]
    if T:
        cols.append(perms.permuted(y) + noise.eps_perm + noise.xi_perm)
    v = np.column_stack(cols)
    resid = v - state.apply_h(v)
    norms = np.sqrt(np.sum(resid**2, axis=0) / n)

    baseline = baseline_rmse(y)
    fit = float(norms[0])
    perm_terms = norms[1:]
    signed = baseline - perm_terms
    loss = fit + (float(np.mean(np.abs(signed))) if T else 0.0)

    # d loss / d resid, with the RMSE gradient taken as 0 at an exact fit
    safe = np.where(norms > 0, norms, 1.0)
    weights = np.where(norms > 0, 1.0 / (n * safe), 0.0)
    coef = np.empty(1 + T)
    coef[0] = weights[0]
    if T:
        coef[1:] = -np.sign(signed) / T * weights[1:]
    grad_h = -resid * coef
    parts = MlrParts(fit, baseline, perm_terms, signed, v, grad_h)
    return loss, parts


def _bce_logits(y, logits) -> np.ndarray:
    # column-wise mean of softplus(z) - y z
    return np.mean(np.logaddexp(0.0, logits) - y * logits, axis=0)


def bce_baseline(y) -> float:
    """BCE of the constant probability ``mean(y)``."""
    p = float(np.mean(y))
    if p in (0.0, 1.0):
        return 0.0
    return float(-(p * np.log(p) + (1 - p) * np.log(1 - p)))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def bce_mlr_loss(
    state: TikhonovState,
    y,
    perms: PermutationSet,
    rng: np.random.Generator | None = None,
    noise: MlrNoise | None = None,
    structured: bool = True,
) -> tuple[float, MlrParts]:
    """BCE-MLR loss for binary targets in {0, 1}.

    The network's logit vector for a ±1-coded target ``s`` is
    ``s + (I - H) xi + H s = s + xi + H (s - xi)``. Permuted terms use the
    permuted ±1 target as logit seed and its {0, 1} image as BCE target.
    """
    y = _check(state, y, perms)
    if not np.all((y == 0) | (y == 1)):
        raise DomainError("binary targets must be 0 or 1")
    n, T = state.n, perms.T
    noise = _resolve_noise(noise, rng, n, T, DitherConfig(0.0, structured))

    y_cols = [y[:, None]]
    if T:
        y_cols.append(perms.permuted(y))
    targets = np.hstack(y_cols)
    signs = 2.0 * targets - 1.0
    xi = np.column_stack([noise.xi, noise.xi_perm]) if T else noise.xi[:, None]
    v = signs - xi
    logits = signs + xi + state.apply_h(v)
    terms = _bce_logits(targets, logits)

    baseline = bce_baseline(y)
    fit = float(terms[0])
    perm_terms = terms[1:]
    signed = baseline - perm_terms
    loss = fit + (float(np.mean(np.abs(signed))) if T else 0.0)

    coef = np.empty(1 + T)
    coef[0] = 1.0 / n
    if T:
        coef[1:] = -np.sign(signed) / (T * n)
    grad_h = (_sigmoid(logits) - targets) * coef
    parts = MlrParts(fit, baseline, perm_terms, signed, v, grad_h)
    return loss, parts
