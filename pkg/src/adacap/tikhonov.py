"""Closed-form Ridge (Tikhonov) output layer and its exact reverse-mode rule.

For a last hidden layer ``A`` (n x J) and ``lam > 0``::

    P = (A^T A + lam I_J)^{-1} A^T          (J x n)
    H = A P                                 (n x n)

``H`` is never materialised during training. We factor whichever Gram matrix
is smaller: ``A^T A + lam I_J`` when J <= n (feature side), otherwise
``A A^T + lam I_n`` (Gram side) using ``P = A^T (A A^T + lam I_n)^{-1}``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import DomainError, InputError, ShapeError

FEATURE_SIDE = "feature"
GRAM_SIDE = "gram"


@dataclass(frozen=True)
class TikhonovState:
    a_last: np.ndarray
    lam: float
    side: str
    chol: tuple

    @property
    def n(self) -> int:
        return self.a_last.shape[0]

    @property
    def width(self) -> int:
        return self.a_last.shape[1]

    def _rows(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if y.shape[0] != self.n:
            raise ShapeError(f"expected {self.n} rows, got {y.shape[0]}")
        return y

    def apply_p(self, y) -> np.ndarray:
        """``P @ y`` for a vector or an n x k block."""
        y = self._rows(y)
        a = self.a_last
        if self.side == FEATURE_SIDE:
            return cho_solve(self.chol, a.T @ y)
        return a.T @ cho_solve(self.chol, y)

    def apply_h(self, y) -> np.ndarray:
        return self.a_last @ self.apply_p(y)

    def matrix(self) -> np.ndarray:
        """Dense H; meant for diagnostics and tests only."""
        return self.apply_h(np.eye(self.n))


def ridge_projector(a_last, lam: float) -> TikhonovState:
    a = np.array(a_last, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"last hidden layer must be 2-d, got shape {a.shape}")
    if not np.isfinite(lam) or lam <= 0:
        raise DomainError(f"ridge parameter must be positive, got {lam}")
    if not np.all(np.isfinite(a)):
        raise InputError("last hidden layer contains non-finite values")
    n, width = a.shape
    if width <= n:
        side, gram = FEATURE_SIDE, a.T @ a
    else:
        side, gram = GRAM_SIDE, a @ a.T
    gram[np.diag_indices_from(gram)] += lam
    try:
        chol = cho_factor(gram, lower=True, check_finite=False)
    except LinAlgError:
        jitter = 1e-10 * np.trace(gram) / gram.shape[0]
        gram[np.diag_indices_from(gram)] += jitter
        chol = cho_factor(gram, lower=True, check_finite=False)
    a.setflags(write=False)
    return TikhonovState(a_last=a, lam=float(lam), side=side, chol=chol)


def apply_h(state: TikhonovState, y) -> np.ndarray:
    return state.apply_h(y)


def ridge_vjp(state: TikhonovState, upstream, y) -> tuple[np.ndarray, float]:
    """Gradients of ``<upstream, H y>`` w.r.t. the last hidden layer and lam.

    With ``C = P y`` and ``D = P upstream`` (both J x k) the differential of
    ``M^{-1}`` gives::

        dA   = (upstream - H upstream) C^T + (y - H y) D^T
        dlam = -sum(C * D)
    """
    g = np.asarray(upstream, dtype=np.float64)
    v = np.asarray(y, dtype=np.float64)
    if g.shape != v.shape:
        raise ShapeError(f"upstream {g.shape} and y {v.shape} must have the same shape")
    if g.ndim == 1:
        g, v = g[:, None], v[:, None]
    c = state.apply_p(v)
    d = state.apply_p(g)
    a = state.a_last
    d_a = (g - a @ d) @ c.T + (v - a @ c) @ d.T
    d_lam = -float(np.sum(c * d))
    return d_a, d_lam


def freeze_output(state: TikhonovState, y_train) -> np.ndarray:
    """Output weights ``P y_train``; prediction is then ``A_last(x) @ weights``."""
    return state.apply_p(np.asarray(y_train, dtype=np.float64))
