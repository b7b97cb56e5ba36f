"""Variance estimation and Wald tests for the de-biased estimators.

Three variance routes:

* Newey-West HAC on the regression score (rotated series times projection
  residual), bandwidth h by default since the projection residual is
  MA(h-1) under correct specification;
* a heteroskedasticity-only estimator for the two-stage route built on the
  serially uncorrelated transform s_t = (e_{t,h}, ..., e_{t+p-1,h}) (x) u_t;
* a closed-form homoskedastic expression for the LS route assembled from
  impulse responses and state autocovariances.

Chi-square tail probabilities are computed in-repo (Lanczos log-gamma plus
regularized incomplete gamma) so the command line tool has no stats
dependency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .covariance import CovarianceSet
from .debias import CausalEstimate, SelectionPair, lp_residual_series
from .errors import (
    HdgrangerError,
    NonPositiveDefiniteError,
    SampleTooShortError,
)
from .regularized import RegularizedFit
from .var_core import TimeSeriesPanel

__all__ = [
    "VarianceKind",
    "VarianceEstimate",
    "ScoreSeries",
    "WaldResult",
    "build_scores",
    "newey_west_lrv",
    "avar_hac",
    "avar_closed_form_ls",
    "avar_hc_2s",
    "wald",
    "chi2_sf",
    "chi2_cdf",
    "log_gamma",
]


class VarianceKind(Enum):
    HAC_LS = "hac-ls"
    HAC_2S = "hac-2s"
    HC_2S = "hc-2s"
    CLOSED_FORM_LS = "closed-ls"


@dataclass
class ScoreSeries:
    """Regression score rows (rotated series times projection residual)."""

    scores: np.ndarray
    e_hat: np.ndarray

    def __post_init__(self) -> None:
        if self.scores.shape[0] != self.e_hat.shape[0]:
            raise ValueError("scores and residuals are misaligned")
        if not (np.all(np.isfinite(self.scores)) and np.all(np.isfinite(self.e_hat))):
            raise ValueError("scores contain non-finite entries")


@dataclass
class VarianceEstimate:
    """Asymptotic variance of sqrt(n) * beta_hat with provenance."""

    avar: np.ndarray
    kind: VarianceKind
    bandwidth: int | None = None
    flags: dict = field(default_factory=dict)


@dataclass
class WaldResult:
    statistic: float
    df: int
    pvalue: float
    flags: dict = field(default_factory=dict)


def build_scores(est: CausalEstimate) -> ScoreSeries:
    """Score series of an estimate; requires projection residuals."""
    if est.e_hat is None:
        raise HdgrangerError(
            "estimate carries no projection residuals (degenerate fit); variance unavailable"
        )
    return ScoreSeries(est.rotated_series * est.e_hat[:, None], est.e_hat)


def newey_west_lrv(scores: np.ndarray, bandwidth: int) -> np.ndarray:
    """Bartlett-kernel long-run variance of a (possibly vector) score series.

    Gamma_0 + sum_{k=1..B} (1 - k/(B+1)) (Gamma_k + Gamma_k') with
    Gamma_k = (1/m) sum_t s_t s_{t+k}'; positive semidefinite for every B.
    """
    s = np.atleast_2d(np.asarray(scores, dtype=float))
    if s.shape[0] == 1 and s.shape[1] > 1 and scores.ndim == 1:
        s = s.T
    m = s.shape[0]
    if bandwidth < 0:
        raise ValueError("bandwidth must be >= 0")
    if bandwidth >= m:
        raise ValueError(f"bandwidth {bandwidth} must be < number of scores {m}")
    out = s.T @ s / m
    for k in range(1, bandwidth + 1):
        g = s[:-k].T @ s[k:] / m
        out = out + (1.0 - k / (bandwidth + 1.0)) * (g + g.T)
    return out


def _psd_guard(avar: np.ndarray, flags: dict) -> np.ndarray:
    """Symmetrize; clip tiny negative eigenvalues, reject real violations."""
    avar = (avar + avar.T) / 2.0
    eigval, eigvec = np.linalg.eigh(avar)
    lo = eigval[0]
    if lo >= 0.0:
        return avar
    scale = max(float(np.trace(avar)), float(-lo))
    if -lo <= 1e-8 * scale:
        flags["psd_repaired"] = float(lo)
        eigval = np.clip(eigval, 0.0, None)
        return (eigvec * eigval) @ eigvec.T
    raise NonPositiveDefiniteError(
        f"variance estimate has eigenvalue {lo:.3e}, beyond repair threshold"
    )


def avar_hac(est: CausalEstimate, bandwidth: int | None = None) -> VarianceEstimate:
    """HAC sandwich for a causal estimate.

    The bread is the inverse of the normalized rotated Gram (the same
    quantity the estimator inverted); the middle is the Newey-West long-run
    variance of the scores at ``bandwidth`` (default: the horizon h).
    """
    b = est.target.horizon if bandwidth is None else int(bandwidth)
    series = build_scores(est)
    omega = newey_west_lrv(series.scores, b)
    bread = np.linalg.inv(est.rotated_gram / est.n_eff)
    flags: dict = {}
    avar = _psd_guard(bread @ omega @ bread.T, flags)
    kind = VarianceKind.HAC_2S if est.method.value == "de-2s" else VarianceKind.HAC_LS
    return VarianceEstimate(avar=avar, kind=kind, bandwidth=b, flags=flags)


def avar_closed_form_ls(covset: CovarianceSet, cause_index: int, effect_index: int, h: int) -> VarianceEstimate:
    """Closed-form LS variance under conditionally homoskedastic m.d.s. errors.

    sum_{j,l=0}^{h-1} (e_y' Psi_j Sigma_u Psi_l' e_y) *
    R1 Sigma_W^-1 Sigma_W(l-j) Sigma_W^-1 R1'.
    """
    if h < 1:
        raise ValueError("h must be >= 1")
    d, p = covset.d, covset.p
    sel = SelectionPair(d, p, cause_index)
    r1 = list(sel.r1_indices)
    rows = covset.sigma_w_inv[r1, :]

    c = [covset.psi_at(j).T[:, effect_index] for j in range(h)]
    sig = covset.sigma_u_hat
    weights = np.array([[ci @ sig @ cl for cl in c] for ci in c])

    lags = {}
    a = covset.companion.matrix
    cur = covset.sigma_w
    for r in range(h):
        lags[r] = cur
        if r + 1 < h:
            cur = a @ cur

    avar = np.zeros((p, p))
    for j in range(h):
        for l in range(h):
            r = l - j
            s_r = lags[r] if r >= 0 else lags[-r].T
            avar += weights[j, l] * (rows @ s_r @ rows.T)
    flags: dict = {}
    avar = _psd_guard(avar, flags)
    return VarianceEstimate(avar=avar, kind=VarianceKind.CLOSED_FORM_LS, bandwidth=None, flags=flags)


def avar_hc_2s(
    panel: TimeSeriesPanel,
    fit: RegularizedFit,
    covset: CovarianceSet,
    target,
) -> VarianceEstimate:
    """Heteroskedasticity-only variance for the two-stage estimator.

    Uses the transform s_t = (e_hat_{t,h}, ..., e_hat_{t+p-1,h}) (x) u_hat_t,
    serially uncorrelated under m.d.s. innovations with the matching fourth
    moment condition, so the long-run variance collapses to the sample
    variance of s_t:

        AVar = R1 Sigma_UW^-1 Var_hat(s_t) Sigma_UW^-T R1'.

    Raises
    ------
    SampleTooShortError
        If fewer than p*d rows of s_t can be formed.
    """
    p, h = covset.p, target.horizon
    d = covset.d
    n = panel.data.shape[0]
    n_s = n - h - 2 * p + 1
    if n_s <= p * d:
        raise SampleTooShortError(
            f"only {n_s} overlapping rows for the s_t transform (need > {p * d})"
        )

    e_full, t0 = lp_residual_series(panel, covset, target.effect_index, h)
    # s_t needs u_hat_t (t >= p) and e_hat_{t+p-1} (t+p-1 <= n-1-h)
    u = fit.residuals[:n_s]  # rows t = p .. n-h-p
    sel = SelectionPair(d, p, target.cause_index)
    left = covset.sigma_uw_inv[list(sel.r1_indices), :]

    zeta = np.zeros((n_s, p))
    for i in range(p):
        e_i = e_full[p - t0 + i : p - t0 + i + n_s]
        zeta += e_i[:, None] * (u @ left[:, i * d : (i + 1) * d].T)
    flags: dict = {}
    avar = _psd_guard(zeta.T @ zeta / n_s, flags)
    return VarianceEstimate(avar=avar, kind=VarianceKind.HC_2S, bandwidth=None, flags=flags)


def wald(est: CausalEstimate, var: VarianceEstimate) -> WaldResult:
    """Wald statistic n_eff * beta' AVar^-1 beta against chi-square(p).

    A singular variance matrix falls back to the pseudo-inverse with the
    degrees of freedom reduced to its rank (flagged).
    """
    beta = est.beta_debiased
    p = beta.shape[0]
    flags = dict(var.flags)
    try:
        cond = np.linalg.cond(var.avar)
    except np.linalg.LinAlgError:
        cond = np.inf
    if not np.isfinite(cond) or cond > 1e14:
        inv = np.linalg.pinv(var.avar)
        df = int(np.linalg.matrix_rank(var.avar))
        flags["singular_avar"] = True
        if df == 0:
            return WaldResult(statistic=math.inf, df=0, pvalue=0.0, flags=flags)
    else:
        inv = np.linalg.inv(var.avar)
        df = p
    stat = float(est.n_eff * beta @ inv @ beta)
    stat = max(stat, 0.0)
    return WaldResult(statistic=stat, df=df, pvalue=chi2_sf(stat, df), flags=flags)


# ---------------------------------------------------------------------------
# chi-square tail probabilities (regularized incomplete gamma, in-repo)

_LANCZOS_G = 7.0
_LANCZOS = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)

_GAMMA_EPS = 1e-16
_GAMMA_ITMAX = 500


def log_gamma(x: float) -> float:
    """log Gamma(x) for x > 0 by the Lanczos approximation (|err| < 1e-13)."""
    if x <= 0.0:
        raise ValueError("log_gamma requires x > 0")
    if x < 0.5:
        # reflection: Gamma(x) Gamma(1-x) = pi / sin(pi x)
        return math.log(math.pi / math.sin(math.pi * x)) - log_gamma(1.0 - x)
    x -= 1.0
    acc = _LANCZOS[0]
    for i in range(1, len(_LANCZOS)):
        acc += _LANCZOS[i] / (x + i)
    t = x + _LANCZOS_G + 0.5
    return 0.5 * math.log(2.0 * math.pi) + (x + 0.5) * math.log(t) - t + math.log(acc)


def _gamma_p_series(a: float, x: float) -> float:
    """Regularized lower incomplete gamma by its power series (x < a + 1)."""
    if x == 0.0:
        return 0.0
    ap = a
    term = 1.0 / a
    total = term
    for _ in range(_GAMMA_ITMAX):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _GAMMA_EPS:
            break
    return total * math.exp(-x + a * math.log(x) - log_gamma(a))


def _gamma_q_cf(a: float, x: float) -> float:
    """Regularized upper incomplete gamma by continued fraction (x >= a + 1)."""
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    f = d
    for i in range(1, _GAMMA_ITMAX + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        f *= delta
        if abs(delta - 1.0) < _GAMMA_EPS:
            break
    return f * math.exp(-x + a * math.log(x) - log_gamma(a))


def _gamma_p(a: float, x: float) -> float:
    if x < 0.0 or a <= 0.0:
        raise ValueError("invalid incomplete gamma arguments")
    if x < a + 1.0:
        return _gamma_p_series(a, x)
    return 1.0 - _gamma_q_cf(a, x)


def chi2_sf(x: float, df: float) -> float:
    """Survival function P(X > x) of the chi-square distribution."""
    if df < 1:
        raise ValueError("df must be >= 1")
    if not np.isfinite(x):
        if math.isnan(x):
            raise ValueError("x must be a number")
        return 0.0 if x > 0 else 1.0
    if x < 0:
        raise ValueError("x must be >= 0")
    a, half = df / 2.0, x / 2.0
    if half < a + 1.0:
        return 1.0 - _gamma_p_series(a, half)
    return _gamma_q_cf(a, half)


def chi2_cdf(x: float, df: float) -> float:
    """Distribution function P(X <= x) of the chi-square distribution."""
    if df < 1:
        raise ValueError("df must be >= 1")
    if x < 0:
        raise ValueError("x must be >= 0")
    return _gamma_p(df / 2.0, x / 2.0)
