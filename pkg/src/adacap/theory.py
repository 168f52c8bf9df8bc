"""Linear Ridge environment where the MLR criterion and the risk have closed forms.

Two designs are provided. ``gen_correlated`` draws equicorrelated Gaussian
features and is used for the selector comparison (MLR vs 10-fold CV vs the
test oracle). ``gen_ortho`` builds ``X`` with ``X^T X / n`` an exact rank-r
orthogonal projector, for which the Ridge risk and the MLR criterion reduce to
scalar functions of ``t = lambda / n``.

The MLR criterion here is the squared-error form without dithering or absolute
value: ``||(I - H)Y||^2 - ||(I - H)Y_perm||^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, RegimeError

CORRELATED = "correlated"
ORTHO = "ortho_projection"


@dataclass
class LinearInstance:
    x: np.ndarray
    y: np.ndarray
    beta_star: np.ndarray
    sigma: float
    kind: str
    y_perm: np.ndarray | None = None
    rank: int | None = None
    # orthonormal basis of Im(x) when known exactly (ortho design)
    basis: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def signal_norm2(self) -> float:
        """||X beta*||^2."""
        xb = self.x @ self.beta_star
        return float(xb @ xb)


@dataclass
class TheoryReport:
    grid: np.ndarray
    mlr: np.ndarray
    mlr_shifted: np.ndarray
    cv: np.ndarray | None = None
    risk: np.ndarray | None = None
    test_rmse: np.ndarray | None = None
    argmins: dict = field(default_factory=dict)
    eps_n: float | None = None
    diagnostics: dict = field(default_factory=dict)

    def curve_rows(self):
        """Rows of (lambda, R, MLR_shifted, CV, test_rmse); missing curves are NaN."""
        nan = np.full_like(self.grid, np.nan)
        cols = [self.risk, self.mlr_shifted, self.cv, self.test_rmse]
        cols = [nan if c is None else c for c in cols]
        return np.column_stack([self.grid] + cols)


def default_grid(n: int, size: int = 200) -> np.ndarray:
    """Log-spaced lambda values in [1e-4 n, 1e4 n]."""
    return np.logspace(-4, 4, size) * n


def _standardize(train, test, axis=0):
    mu = train.mean(axis=axis)
    sd = train.std(axis=axis)
    return (train - mu) / sd, (test - mu) / sd


def gen_correlated(n_train=100, n_test=1000, d=80, sigma=100.0, seed=0):
    """Equicorrelated Gaussian design with ``beta* = 1``.

    ``Sigma = I + c 11^T`` with ``c = 0.8**rho`` and ``rho ~ U[1, 2]`` drawn once
    per seed. Features and targets are standardised with training statistics.
    Returns ``(train, test)``; only ``train`` carries a permuted target.
    """
    rng = np.random.default_rng(seed)
    c = 0.8 ** rng.uniform(1.0, 2.0)
    n = n_train + n_test
    # rows of Z + sqrt(c) g 1^T have covariance I + c 11^T
    x = rng.standard_normal((n, d)) + np.sqrt(c) * rng.standard_normal((n, 1))
    beta = np.ones(d)
    y = x @ beta + sigma * rng.standard_normal(n)
    x_tr, x_te = _standardize(x[:n_train], x[n_train:])
    y_tr, y_te = _standardize(y[:n_train], y[n_train:])
    y_perm = y_tr[rng.permutation(n_train)]
    train = LinearInstance(x_tr, y_tr, beta, sigma, CORRELATED, y_perm=y_perm)
    test = LinearInstance(x_te, y_te, beta, sigma, CORRELATED)
    return train, test


def gen_ortho(n: int, d: int, r: int, sigma: float, signal_norm2: float, seed=0) -> LinearInstance:
    """Design with ``X^T X / n`` a rank-r orthogonal projector and ``||X beta*||^2`` fixed."""
    if not 1 <= r <= min(n, d):
        raise DomainError(f"rank must lie in [1, min(n, d)], got {r}")
    rng = np.random.default_rng(seed)
    u, _ = np.linalg.qr(rng.standard_normal((n, r)))
    v, _ = np.linalg.qr(rng.standard_normal((d, r)))
    x = np.sqrt(n) * u @ v.T
    w = rng.standard_normal(r)
    w *= np.sqrt(signal_norm2 / n) / np.linalg.norm(w)
    beta = v @ w
    y = x @ beta + sigma * rng.standard_normal(n)
    y_perm = y[rng.permutation(n)]
    return LinearInstance(x, y, beta, sigma, ORTHO, y_perm=y_perm, rank=r, basis=u)


def _hat_factors(x):
    u, s, vt = np.linalg.svd(x, full_matrices=False)
    keep = s > (s[0] if s.size else 0.0) * max(x.shape) * np.finfo(float).eps
    return u[:, keep], s[keep], vt[keep]


def ridge_risk_exact(instance: LinearInstance, lam) -> np.ndarray | float:
    """``E_xi ||X beta* - X beta_lambda||^2`` for the orthogonal-projection design."""
    if instance.kind != ORTHO:
        raise ConfigError("the closed-form risk needs an orthogonal-projection design")
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam < 0):
        raise DomainError("lambda must be non-negative")
    t = lam / instance.n
    out = (t**2 * instance.signal_norm2 + instance.sigma**2 * instance.rank) / (1.0 + t) ** 2
    return float(out) if out.ndim == 0 else out


def mlr_criterion_linear(instance: LinearInstance, lam) -> np.ndarray | float:
    """``||(I - H)Y||^2 - ||(I - H)Y_perm||^2`` for one or many lambda."""
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam <= 0):
        raise DomainError("lambda must be positive")
    u, s, _ = _hat_factors(instance.x)
    cy, cp = u.T @ instance.y, u.T @ instance.y_perm
    perp = (instance.y @ instance.y - cy @ cy) - (instance.y_perm @ instance.y_perm - cp @ cp)
    shrink = lam.reshape(-1, 1) / (s**2 + lam.reshape(-1, 1))  # 1 - s^2/(s^2+lam)
    out = (shrink**2) @ (cy**2 - cp**2) + perp
    return float(out[0]) if lam.ndim == 0 else out


def mlr_spectral(instance: LinearInstance, lam) -> np.ndarray | float:
    """Same criterion from its spectral representation in ``lambda_j = s_j^2 / n``."""
    lam = np.asarray(lam, dtype=np.float64)
    u, s, _ = _hat_factors(instance.x)
    lj = s**2 / instance.n
    t = lam.reshape(-1, 1) / instance.n
    cy2, cp2 = (u.T @ instance.y) ** 2, (u.T @ instance.y_perm) ** 2
    out = -cy2.sum() + ((t / (lj + t)) ** 2) @ cy2 + ((2 * lj * t + lj**2) / (lj + t) ** 2) @ cp2
    return float(out[0]) if lam.ndim == 0 else out


def projection_norms(instance: LinearInstance) -> tuple[float, float]:
    """``(||P_x Y||^2, ||P_x Y_perm||^2)``."""
    u, _, _ = _hat_factors(instance.x)
    return float(np.sum((u.T @ instance.y) ** 2)), float(np.sum((u.T @ instance.y_perm) ** 2))


def mlr_shifted(instance: LinearInstance, lam):
    """MLR criterion plus ``||P_x Y||^2``; the quantity compared with the risk."""
    return mlr_criterion_linear(instance, lam) + projection_norms(instance)[0]


def mlr_shifted_closed_form(instance: LinearInstance, lam):
    """``(t^2 ||P_x Y||^2 + (2t + 1) ||P_x Y_perm||^2) / (1 + t)^2`` for the ortho design."""
    py, pp = projection_norms(instance)
    t = np.asarray(lam, dtype=np.float64) / instance.n
    return (t**2 * py + (2 * t + 1) * pp) / (1 + t) ** 2


def _fold_indices(n, folds, seed):
    if folds < 2:
        raise ConfigError("need at least 2 folds")
    if n < folds:
        raise ConfigError(f"{folds} folds of {n} rows leave an empty fold")
    return np.array_split(np.random.default_rng(seed).permutation(n), folds)


def cv_criterion(instance: LinearInstance, lam, folds: int = 10, seed: int = 0):
    """Mean held-out-fold RMSE of Ridge (no intercept) across k folds."""
    lam = np.asarray(lam, dtype=np.float64)
    lams = lam.reshape(-1)
    x, y = instance.x, instance.y
    n = len(y)
    total = np.zeros(lams.size)
    parts = _fold_indices(n, folds, seed)
    for held in parts:
        mask = np.ones(n, dtype=bool)
        mask[held] = False
        u, s, vt = np.linalg.svd(x[mask], full_matrices=False)
        coef = (s / (s**2 + lams[:, None])) * (u.T @ y[mask])  # grid x k
        pred = (x[held] @ vt.T) @ coef.T  # held x grid
        total += np.sqrt(np.mean((y[held][:, None] - pred) ** 2, axis=0))
    out = total / len(parts)
    return float(out[0]) if lam.ndim == 0 else out


def holdout_rmse(train: LinearInstance, test: LinearInstance, lam):
    """RMSE on ``test`` of Ridge fitted on ``train`` for each lambda."""
    lam = np.asarray(lam, dtype=np.float64)
    u, s, vt = np.linalg.svd(train.x, full_matrices=False)
    coef = (s / (s**2 + lam.reshape(-1, 1))) * (u.T @ train.y)
    pred = (test.x @ vt.T) @ coef.T
    out = np.sqrt(np.mean((test.y[:, None] - pred) ** 2, axis=0))
    return float(out[0]) if lam.ndim == 0 else out


def epsilon_n(n: int, r: int, sigma: float, signal_norm2: float) -> float:
    """``sqrt(r sigma^2 / ||X beta*||^2) + sqrt(||X beta*||^2 / (n sigma^2))``."""
    return float(np.sqrt(r * sigma**2 / signal_norm2) + np.sqrt(signal_norm2 / (n * sigma**2)))


def regime_diagnostics(instance: LinearInstance) -> dict:
    s2 = instance.sigma**2
    sig = instance.signal_norm2
    return {
        "r_sigma2": instance.rank * s2,
        "signal_norm2": sig,
        "n_sigma2": instance.n * s2,
        "low_separation": sig / (instance.rank * s2),
        "high_separation": instance.n * s2 / sig,
    }


def risk_gap_check(instance: LinearInstance, grid=None, min_separation: float = 8.0) -> float:
    """Largest ``|MLR_shifted / R - 1|`` over grid points with ``lambda / n > eps_n``.

    Raises :class:`RegimeError` unless ``r sigma^2``, ``||X beta*||^2`` and
    ``n sigma^2`` are each separated by at least ``min_separation``.
    """
    if instance.kind != ORTHO:
        raise ConfigError("risk gap check needs an orthogonal-projection design")
    diag = regime_diagnostics(instance)
    # slack for rounding when a separation is set to exactly the threshold
    if min(diag["low_separation"], diag["high_separation"]) < min_separation * (1 - 1e-9):
        raise RegimeError("instance is outside the intermediate SNR regime", diag)
    grid = default_grid(instance.n) if grid is None else np.asarray(grid, dtype=np.float64)
    eps = epsilon_n(instance.n, instance.rank, instance.sigma, diag["signal_norm2"])
    lam = grid[grid / instance.n > eps]
    if lam.size == 0:
        raise ConfigError("no grid point lies above eps_n")
    gap = np.abs(mlr_shifted(instance, lam) / ridge_risk_exact(instance, lam) - 1.0)
    return float(gap.max())


def lambda_star_forms(instance: LinearInstance) -> dict:
    """Risk minimiser ``t* = sigma^2 r / ||X beta*||^2`` and its square root, both
    as ``t = lambda / n``. Only the first is a stationary point of the risk."""
    ratio = instance.sigma**2 * instance.rank / instance.signal_norm2
    return {"t_star": ratio, "t_sqrt_form": float(np.sqrt(ratio))}


def theory_report(train: LinearInstance, test: LinearInstance | None = None, grid=None, folds=10, seed=0):
    """All curves on one shared grid, their argmins, and regime diagnostics."""
    grid = default_grid(train.n) if grid is None else np.asarray(grid, dtype=np.float64)
    mlr = mlr_criterion_linear(train, grid)
    shift = mlr + projection_norms(train)[0]
    report = TheoryReport(grid=grid, mlr=mlr, mlr_shifted=shift)
    report.cv = cv_criterion(train, grid, folds=folds, seed=seed)
    report.argmins = {"mlr": float(grid[np.argmin(mlr)]), "cv": float(grid[np.argmin(report.cv)])}
    if train.kind == ORTHO:
        report.risk = ridge_risk_exact(train, grid)
        report.argmins["risk"] = float(grid[np.argmin(report.risk)])
        report.diagnostics = regime_diagnostics(train)
        report.eps_n = epsilon_n(train.n, train.rank, train.sigma, train.signal_norm2)
    if test is not None:
        report.test_rmse = holdout_rmse(train, test, grid)
        report.argmins["oracle"] = float(grid[np.argmin(report.test_rmse)])
    return report


@dataclass
class SelectorSummary:
    per_seed: np.ndarray  # seeds x 3: test RMSE at the MLR, CV and oracle argmins
    seeds: list[int]

    @property
    def means(self) -> dict:
        m = self.per_seed.mean(axis=0)
        return {"mlr": float(m[0]), "cv": float(m[1]), "oracle": float(m[2])}


def selector_comparison(seeds=100, n_train=100, n_test=1000, d=80, sigma=100.0, folds=10) -> SelectorSummary:
    """Test RMSE at the lambda picked by MLR, by k-fold CV and by the test oracle."""
    seed_list = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    rows = []
    for seed in seed_list:
        train, test = gen_correlated(n_train, n_test, d, sigma, seed)
        rep = theory_report(train, test, folds=folds, seed=seed)
        curve = rep.test_rmse
        rows.append((curve[np.argmin(rep.mlr)], curve[np.argmin(rep.cv)], curve.min()))
    return SelectorSummary(np.array(rows), seed_list)
