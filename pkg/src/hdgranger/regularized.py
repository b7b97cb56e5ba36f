"""Row-wise l1-regularized estimation of VAR slope matrices.

Each of the d equations is fit by cyclic coordinate descent on the shared
lagged design, minimizing

    (1/m) ||y - X b||^2 + lambda * sum_k pi_k * pen(b_k),        m = n - p,

where ``pen`` is |b| for the LASSO / adaptive LASSO and
alpha*|b| + (1-alpha)*b^2/2 for the elastic net. Columns are scaled to unit
sample variance inside the solver (the penalty applies on that scale, as in
standard LASSO practice) and coefficients are returned on the original scale.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .errors import ConvergenceError
from .var_core import TimeSeriesPanel

try:  # pragma: no cover - exercised implicitly
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap(args[0]) if args and callable(args[0]) else wrap

    _HAVE_NUMBA = False

__all__ = [
    "Penalty",
    "InfoCriterion",
    "AUTO_LAMBDA",
    "PenaltyConfig",
    "RegularizedFit",
    "fit_row",
    "adaptive_loadings",
    "estimate_var",
    "threshold_fit",
    "lagged_design",
    "first_step_lambda",
]

AUTO_LAMBDA = "auto"

IC_GRID_SIZE = 50
IC_GRID_FLOOR = 1e-3


class Penalty(Enum):
    LASSO = "lasso"
    ADAPTIVE_LASSO = "adalasso"
    ELASTIC_NET = "elnet"


class InfoCriterion(Enum):
    BIC = "bic"
    AIC = "aic"


@dataclass
class PenaltyConfig:
    """Solver configuration for one regularized VAR fit.

    ``lam`` may be a nonnegative float or ``"auto"``: the automatic rule is
    sqrt(log d / n) for the (first-step) LASSO, and information-criterion
    selection over a 50-point log grid for the adaptive pass.
    """

    method: Penalty = Penalty.ADAPTIVE_LASSO
    lam: float | str = AUTO_LAMBDA
    alpha: float = 0.5
    tau: float = 1.0
    ic: InfoCriterion = InfoCriterion.BIC
    max_iter: int = 10_000
    tol: float = 1e-7

    def __post_init__(self) -> None:
        if self.lam != AUTO_LAMBDA:
            self.lam = float(self.lam)
            if self.lam < 0:
                raise ValueError("lambda must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")


@dataclass
class RegularizedFit:
    """Result of a row-wise regularized VAR fit.

    ``residuals[t - p]`` holds u_hat_t = w_t - sum_i A_hat_i w_{t-i} for
    t = p..n-1 (0-based), so the residual identity is exact by construction.
    """

    slope_matrices: list[np.ndarray]
    residuals: np.ndarray
    lambda_used: np.ndarray
    loadings: np.ndarray | None
    nonzero_count: int

    @property
    def d(self) -> int:
        return self.slope_matrices[0].shape[0]

    @property
    def p(self) -> int:
        return len(self.slope_matrices)

    def coefficient_rows(self) -> np.ndarray:
        """d x dp matrix whose row j stacks [A_1 ... A_p] row j."""
        return np.hstack(self.slope_matrices)


def _cd_kernel_py(X, y, cn, w_l1, w_l2, b, max_iter, tol):
    """Cyclic coordinate descent on unit-variance columns; returns sweep count."""
    m, k = X.shape
    r = y - X @ b
    for sweep in range(max_iter):
        delta = 0.0
        for j in range(k):
            bj = b[j]
            if cn[j] == 0.0:
                continue
            dot = 0.0
            for i in range(m):
                dot += X[i, j] * r[i]
            z = 2.0 * dot / m + 2.0 * cn[j] * bj
            az = abs(z) - w_l1[j]
            if az <= 0.0:
                bn = 0.0
            else:
                bn = math.copysign(az, z) / (2.0 * cn[j] + w_l2[j])
            if bn != bj:
                diff = bj - bn
                for i in range(m):
                    r[i] += X[i, j] * diff
                b[j] = bn
                step = abs(bn - bj)
                if step > delta:
                    delta = step
        if delta < tol:
            return sweep + 1, True
    return max_iter, False


if _HAVE_NUMBA:
    _cd_kernel = njit(cache=True)(_cd_kernel_py)
else:
    _cd_kernel = _cd_kernel_py


def _objective(X, y, b, lam, loadings, alpha) -> float:
    m = X.shape[0]
    resid = y - X @ b
    pen = np.sum(loadings * (alpha * np.abs(b) + 0.5 * (1.0 - alpha) * b * b))
    return float(resid @ resid / m + lam * pen)


def fit_row(
    y: np.ndarray,
    X: np.ndarray,
    cfg: PenaltyConfig,
    loadings: np.ndarray | None = None,
    sweep_objectives: list | None = None,
) -> tuple[np.ndarray, float]:
    """Solve one penalized regression row; returns (coefficients, lambda used).

    Parameters
    ----------
    y, X : np.ndarray
        Response (length m) and design (m x k). Columns are standardized to
        unit sample variance internally; zero-variance columns get a zero
        coefficient and a warning.
    cfg : PenaltyConfig
        ``cfg.lam == "auto"`` triggers information-criterion selection over a
        log-spaced grid from lambda_max down to 0.001 * lambda_max.
    loadings : np.ndarray, optional
        Per-coefficient penalty weights pi_k (default: all ones).
    sweep_objectives : list, optional
        Debug hook: when given, the solver steps one sweep at a time and
        appends the penalized objective after each sweep (non-increasing by
        construction of cyclic coordinate descent).

    Raises
    ------
    ConvergenceError
        If coordinate descent does not converge within ``cfg.max_iter`` sweeps.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    m, k = X.shape
    if m < 2:
        raise ValueError("need at least 2 observations")
    if loadings is None:
        loadings = np.ones(k)
    loadings = np.asarray(loadings, dtype=float)

    mean = X.mean(axis=0)
    scale = np.sqrt(np.maximum(X.var(axis=0), 0.0))
    dead = scale <= 1e-300 * np.maximum(1.0, np.abs(mean))
    if np.any(dead):
        warnings.warn(
            f"{int(dead.sum())} zero-variance column(s); coefficients forced to 0",
            stacklevel=2,
        )
    safe_scale = np.where(dead, 1.0, scale)
    Xs = np.asfortranarray(X / safe_scale)
    cn = (Xs * Xs).mean(axis=0)
    cn[dead] = 0.0

    alpha = cfg.alpha if cfg.method is Penalty.ELASTIC_NET else 1.0

    def solve_at(lam: float, b0: np.ndarray) -> np.ndarray:
        w_l1 = lam * loadings * alpha
        w_l2 = lam * loadings * (1.0 - alpha)
        if sweep_objectives is None:
            sweeps, ok = _cd_kernel(Xs, y, cn, w_l1, w_l2, b0, cfg.max_iter, cfg.tol)
            if not ok:
                raise ConvergenceError(sweeps)
            return b0
        for _ in range(cfg.max_iter):
            _, ok = _cd_kernel(Xs, y, cn, w_l1, w_l2, b0, 1, cfg.tol)
            sweep_objectives.append(_objective(Xs, y, b0, lam, loadings, alpha))
            if ok:
                return b0
        raise ConvergenceError(cfg.max_iter)

    if cfg.lam == AUTO_LAMBDA:
        corr = np.where(dead | (loadings <= 0), 0.0, 2.0 * np.abs(Xs.T @ y) / m
                        / np.where(loadings > 0, loadings, 1.0))
        lam_max = float(np.max(corr)) if np.any(corr > 0) else 1.0
        if lam_max <= 0:
            lam_max = 1.0
        grid = np.geomspace(lam_max, IC_GRID_FLOOR * lam_max, IC_GRID_SIZE)
        b = np.zeros(k)
        best = (np.inf, None, None)
        for lam in grid:
            b = solve_at(float(lam), b)
            resid = y - Xs @ b
            rss = float(resid @ resid)
            k_active = int(np.count_nonzero(b))
            if cfg.ic is InfoCriterion.BIC:
                ic = m * math.log(max(rss, 1e-300) / m) + k_active * math.log(m)
            else:
                ic = m * math.log(max(rss, 1e-300) / m) + 2.0 * k_active
            if ic < best[0]:
                best = (ic, b.copy(), float(lam))
        coef_std, lam_used = best[1], best[2]
    else:
        coef_std = solve_at(float(cfg.lam), np.zeros(k))
        lam_used = float(cfg.lam)

    coef = np.where(dead, 0.0, coef_std / safe_scale)
    return coef, lam_used


def adaptive_loadings(first_step: np.ndarray, n: int, h: int = 0, tau: float = 1.0) -> np.ndarray:
    """Data-dependent penalty loadings pi_k = |b_k + (n - h)^(-1/2)|^(-tau)."""
    if tau <= 0:
        raise ValueError("tau must be > 0")
    if n - h <= 0:
        raise ValueError("need n - h > 0")
    offset = (n - h) ** -0.5
    return np.abs(np.asarray(first_step, dtype=float) + offset) ** -tau


def first_step_lambda(d: int, n: int) -> float:
    """Default first-step LASSO penalty sqrt(log d / n) (using log 2 when d = 1)."""
    return math.sqrt(math.log(max(d, 2)) / n)


def lagged_design(data: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Build (Y, X): rows t = p..n-1 of w_t against [w_{t-1}, ..., w_{t-p}]."""
    n, d = data.shape
    if n <= p + 1:
        raise ValueError(f"need n > p + 1, got n={n}, p={p}")
    Y = data[p:]
    X = np.hstack([data[p - i : n - i] for i in range(1, p + 1)])
    return Y, X


def estimate_var(panel: TimeSeriesPanel, p: int, cfg: PenaltyConfig | None = None) -> RegularizedFit:
    """Fit all d VAR equations against the shared dp-column lagged design.

    With ``method=ADAPTIVE_LASSO`` and ``lam="auto"`` the first step is a
    LASSO at lambda = sqrt(log d / n); its coefficients set the adaptive
    loadings and the second pass selects lambda by information criterion.

    Raises
    ------
    ConvergenceError
        Propagated from any equation, tagged with the equation index.
    """
    cfg = cfg or PenaltyConfig()
    data = panel.data
    n, d = data.shape
    Y, X = lagged_design(data, p)
    m = Y.shape[0]
    dp = d * p

    slopes_rows = np.zeros((d, dp))
    lambda_used = np.zeros(d)
    all_loadings = np.zeros((d, dp)) if cfg.method is Penalty.ADAPTIVE_LASSO else None

    lam_first = first_step_lambda(d, n) if cfg.lam == AUTO_LAMBDA else cfg.lam

    for j in range(d):
        try:
            if cfg.method is Penalty.ADAPTIVE_LASSO:
                first_cfg = replace(cfg, method=Penalty.LASSO, lam=lam_first)
                b_first, _ = fit_row(Y[:, j], X, first_cfg)
                pi = adaptive_loadings(b_first, n, 0, cfg.tau)
                coef, lam = fit_row(Y[:, j], X, cfg, loadings=pi)
                all_loadings[j] = pi
            elif cfg.lam == AUTO_LAMBDA:
                coef, lam = fit_row(Y[:, j], X, replace(cfg, lam=lam_first))
            else:
                coef, lam = fit_row(Y[:, j], X, cfg)
        except ConvergenceError as exc:
            raise ConvergenceError(exc.iterations, f"equation {j}: {exc}") from exc
        slopes_rows[j] = coef
        lambda_used[j] = lam

    slope_matrices = [slopes_rows[:, i * d : (i + 1) * d].copy() for i in range(p)]
    residuals = Y - X @ slopes_rows.T
    return RegularizedFit(
        slope_matrices=slope_matrices,
        residuals=residuals,
        lambda_used=lambda_used,
        loadings=all_loadings,
        nonzero_count=int(np.count_nonzero(slopes_rows)),
    )


def _thr(z: np.ndarray, lam: float, nu: float) -> np.ndarray:
    """z * (1 - |lam / z|^nu)_+ elementwise; nu = inf is hard thresholding."""
    out = np.zeros_like(z)
    nz = z != 0.0
    if math.isinf(nu):
        keep = np.abs(z) > lam
        out[keep] = z[keep]
        return out
    ratio = np.zeros_like(z)
    ratio[nz] = np.abs(lam / z[nz]) ** nu
    out[nz] = z[nz] * np.maximum(1.0 - ratio[nz], 0.0)
    return out


def threshold_fit(
    fit: RegularizedFit,
    panel: TimeSeriesPanel,
    lambda_thr: float,
    nu: float = 1.0,
) -> RegularizedFit:
    """Apply coefficient thresholding z -> z(1 - |lambda_thr/z|^nu)_+ and refresh residuals.

    ``nu = 1`` is soft thresholding, ``nu = math.inf`` hard thresholding;
    ``lambda_thr = 0`` returns the fit unchanged bit-exactly.
    """
    if lambda_thr < 0:
        raise ValueError("lambda_thr must be >= 0")
    if nu < 1:
        raise ValueError("nu must be >= 1")
    if lambda_thr == 0.0:
        return fit
    slopes = [_thr(a, lambda_thr, nu) for a in fit.slope_matrices]
    p = fit.p
    Y, X = lagged_design(panel.data, p)
    rows = np.hstack(slopes)
    residuals = Y - X @ rows.T
    return RegularizedFit(
        slope_matrices=slopes,
        residuals=residuals,
        lambda_used=fit.lambda_used.copy(),
        loadings=None if fit.loadings is None else fit.loadings.copy(),
        nonzero_count=int(np.count_nonzero(rows)),
    )
