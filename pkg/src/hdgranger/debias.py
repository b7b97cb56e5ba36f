"""De-biased estimation of multi-horizon causal coefficients.

For a cause series x and effect series y at horizon h, the target is the
coefficient block beta_{1,h} of (x_t, ..., x_{t-p+1}) in the projection of
y_{t+h} on W_t. Two estimators are provided:

* de-biased Least Squares: rotate W_t by the model-implied
  (R1 Sigma_W^-1 R1')^-1 R1 Sigma_W^-1, regress, then subtract the
  omitted-variable term driven by beta_{2,h} read from companion powers.
* de-biased two-stage: identical structure with stacked VAR residuals
  U_t as instruments and Sigma_UW in place of Sigma_W.

A post-double-selection baseline on the projection equation itself is also
provided for Monte Carlo comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .covariance import CovarianceSet, build_covariance_set, sigma_u_hat
from .errors import DegenerateDesignError, SampleTooShortError
from .regularized import PenaltyConfig, Penalty, RegularizedFit, fit_row
from .var_core import TimeSeriesPanel, VarModel

__all__ = [
    "Method",
    "TargetSpec",
    "SelectionPair",
    "Rotation",
    "CausalEstimate",
    "stacked_state",
    "lp_residual_series",
    "rotated_regressor_ls",
    "rotated_instrument_2s",
    "extract_beta2h",
    "estimate_de_ls",
    "estimate_de_2s",
    "estimate_pds",
    "fit_to_model",
]


class Method(Enum):
    DE_LS = "de-ls"
    DE_2S = "de-2s"
    PDS = "pds"


@dataclass(frozen=True)
class TargetSpec:
    """One causal test target: cause column -> effect column at horizon h."""

    cause_index: int
    effect_index: int
    horizon: int
    p: int

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.cause_index < 0 or self.effect_index < 0:
            raise ValueError("series indices must be nonnegative")


@dataclass(frozen=True)
class SelectionPair:
    """Row selectors splitting the stacked state into cause lags and controls.

    ``r1`` picks (x_t, ..., x_{t-p+1}) out of W_t; ``r2`` the remaining
    coordinates in ascending order. Rows of [R1; R2] form a permutation of
    the identity, so R1 R1' = I_p and R1 R2' = 0 hold bit-exactly.
    """

    d: int
    p: int
    cause_index: int
    r1_indices: tuple = field(init=False)
    r2_indices: tuple = field(init=False)

    def __post_init__(self) -> None:
        if not 0 <= self.cause_index < self.d:
            raise ValueError(f"cause index {self.cause_index} outside [0, {self.d})")
        r1 = tuple(i * self.d + self.cause_index for i in range(self.p))
        r1_set = set(r1)
        r2 = tuple(k for k in range(self.d * self.p) if k not in r1_set)
        object.__setattr__(self, "r1_indices", r1)
        object.__setattr__(self, "r2_indices", r2)

    @property
    def r1(self) -> np.ndarray:
        m = np.zeros((self.p, self.d * self.p))
        m[np.arange(self.p), list(self.r1_indices)] = 1.0
        return m

    @property
    def r2(self) -> np.ndarray:
        k = len(self.r2_indices)
        m = np.zeros((k, self.d * self.p))
        m[np.arange(k), list(self.r2_indices)] = 1.0
        return m


@dataclass
class Rotation:
    """The partialling-out operator of one estimator.

    ``gamma`` maps a stacked dp-vector to its rotated p-vector:
    (R1 S^-1 R1')^-1 R1 S^-1 with S = Sigma_W (LS) or Sigma_UW (2S).
    ``left`` is R1 S^-1 (the HC bread), ``block`` is R1 S^-1 R1'. When there
    are no controls (d = 1) the rotation is the exact identity and ``left``
    / ``block`` are absent.
    """

    gamma: np.ndarray
    left: np.ndarray | None = None
    block: np.ndarray | None = None

    @classmethod
    def from_inverse(cls, s_inv: np.ndarray, r1_indices) -> "Rotation":
        left = s_inv[list(r1_indices), :]
        block = left[:, list(r1_indices)]
        try:
            gamma = np.linalg.solve(block, left)
        except np.linalg.LinAlgError:
            raise DegenerateDesignError("rotation block R1 S^-1 R1' is singular") from None
        return cls(gamma=gamma, left=left, block=block)

    @classmethod
    def identity(cls, p: int) -> "Rotation":
        return cls(gamma=np.eye(p))


@dataclass
class CausalEstimate:
    """Estimated beta_{1,h} with everything inference needs downstream.

    ``beta_debiased = beta_raw - bias_term`` holds exactly by construction.
    ``rotated_gram`` is the unnormalized sum of rotated regressors (or
    instruments) against the cause lags. ``rotated_series`` and ``e_hat``
    are aligned row-for-row over the ``n_eff`` time points actually summed.
    """

    method: Method
    target: TargetSpec
    beta_raw: np.ndarray
    beta_debiased: np.ndarray
    bias_term: np.ndarray
    n_eff: int
    rotated_gram: np.ndarray
    rotation: Rotation | None
    rotated_series: np.ndarray
    e_hat: np.ndarray | None

    @property
    def beta(self) -> np.ndarray:
        return self.beta_debiased


def fit_to_model(fit: RegularizedFit) -> VarModel:
    """Wrap fit slope matrices and residual covariance as a VarModel."""
    return VarModel(fit.slope_matrices, sigma_u_hat(fit))


def _ensure_covset(
    covset: CovarianceSet | None, fit: RegularizedFit, h: int, no_controls: bool
) -> CovarianceSet | None:
    """Build the covariance bundle from the fit unless already supplied.

    Without controls (d = 1) the rotation is the identity and the bundle is
    only needed for projection residuals, so a degenerate residual
    covariance (e.g. noise-free data) degrades to ``None`` instead of
    raising; variance estimation then fails loudly downstream.
    """
    if covset is not None:
        return covset
    from .errors import NonPositiveDefiniteError, SingularCovarianceError

    try:
        return build_covariance_set(
            fit_to_model(fit), h_max=h, residual_count=fit.residuals.shape[0]
        )
    except (NonPositiveDefiniteError, SingularCovarianceError):
        if no_controls:
            return None
        raise


def stacked_state(data: np.ndarray, p: int) -> np.ndarray:
    """Rows W_t = (w_t, w_{t-1}, ..., w_{t-p+1}) for t = p-1 .. n-1."""
    n = data.shape[0]
    return np.hstack([data[p - 1 - i : n - i] for i in range(p)])


def lp_residual_series(
    panel: TimeSeriesPanel, covset: CovarianceSet, effect: int, h: int
) -> tuple[np.ndarray, int]:
    """Plug-in projection residuals e_hat_{t,h} = y_{t+h} - beta_hat_h' W_t.

    ``beta_hat_h`` is the effect row of J A_hat^h. Returns the residual
    vector over the maximal range t = p-1 .. n-1-h together with the first
    t index (always p-1).
    """
    p = covset.p
    data = panel.data
    n = data.shape[0]
    if n - 1 - h < p - 1:
        raise SampleTooShortError(f"horizon {h} leaves no usable rows at n={n}, p={p}")
    w = stacked_state(data, p)[: n - p - h + 1]
    beta_h = covset.beta_full(effect, h)
    y_lead = data[p - 1 + h :, effect]
    return y_lead - w @ beta_h, p - 1


def extract_beta2h(covset: CovarianceSet, target: TargetSpec, sel: SelectionPair) -> np.ndarray:
    """Control-block coefficients: effect row of J A_hat^h at the R2 coordinates."""
    beta_full = covset.beta_full(target.effect_index, target.horizon)
    return beta_full[list(sel.r2_indices)]


def rotated_regressor_ls(
    covset: CovarianceSet,
    sel: SelectionPair,
    panel: TimeSeriesPanel,
    sigma_w_override: np.ndarray | None = None,
) -> tuple[np.ndarray, Rotation]:
    """Model-implied partialled regressors W_perp over t = p-1 .. n-1.

    ``sigma_w_override`` replaces Sigma_W_hat (test hook: passing the exact
    sample second-moment matrix makes W_perp the in-sample FWL residual).
    """
    p = sel.p
    w = stacked_state(panel.data, p)
    if len(sel.r2_indices) == 0:
        rot = Rotation.identity(p)
    elif sigma_w_override is not None:
        from .covariance import guarded_inverse

        rot = Rotation.from_inverse(guarded_inverse(sigma_w_override, "Sigma_W override"), sel.r1_indices)
    else:
        rot = Rotation.from_inverse(covset.sigma_w_inv, sel.r1_indices)
    return w @ rot.gamma.T, rot


def rotated_instrument_2s(
    covset: CovarianceSet,
    sel: SelectionPair,
    residuals: np.ndarray,
) -> tuple[np.ndarray, Rotation]:
    """Model-implied partialled instruments U_perp.

    ``residuals`` is the (n-p) x d residual matrix whose row k is
    u_hat_{p+k}; the stacked U_t = (u_hat_t, ..., u_hat_{t-p+1}) exists for
    t = 2p-1 .. n-1, giving n - 2p + 1 rows.
    """
    p = sel.p
    if residuals.shape[0] < p:
        raise SampleTooShortError("not enough residual rows to stack instruments")
    u = stacked_state(residuals, p)
    if len(sel.r2_indices) == 0:
        rot = Rotation.identity(p)
    else:
        rot = Rotation.from_inverse(covset.sigma_uw_inv, sel.r1_indices)
    return u @ rot.gamma.T, rot


def _assemble(
    method: Method,
    target: TargetSpec,
    rotated: np.ndarray,
    w1: np.ndarray,
    w2: np.ndarray | None,
    beta2: np.ndarray | None,
    y_lead: np.ndarray,
    e_hat: np.ndarray | None,
    rotation: Rotation | None,
) -> CausalEstimate:
    gram = rotated.T @ w1
    try:
        beta_raw = np.linalg.solve(gram, rotated.T @ y_lead)
    except np.linalg.LinAlgError:
        raise DegenerateDesignError("rotated Gram matrix is singular") from None
    if w2 is None or beta2 is None or beta2.size == 0:
        bias = np.zeros_like(beta_raw)
    else:
        bias = np.linalg.solve(gram, rotated.T @ (w2 @ beta2))
    return CausalEstimate(
        method=method,
        target=target,
        beta_raw=beta_raw,
        beta_debiased=beta_raw - bias,
        bias_term=bias,
        n_eff=rotated.shape[0],
        rotated_gram=gram,
        rotation=rotation,
        rotated_series=rotated,
        e_hat=e_hat,
    )


def estimate_de_ls(
    panel: TimeSeriesPanel,
    fit: RegularizedFit,
    target: TargetSpec,
    covset: CovarianceSet | None = None,
    sigma_w_sample: bool = False,
    force_zero_beta2: bool = False,
) -> CausalEstimate:
    """De-biased Least Squares estimate of beta_{1,h}.

    Sums run over t = p-1 .. n-1-h (0-based), n_eff = n - p - h + 1 rows.

    Parameters
    ----------
    covset : CovarianceSet, optional
        Reused across horizons/pairs when provided; built from the fit
        otherwise.
    sigma_w_sample : bool
        Test hook: use the exact sample second moment of W_t over the
        estimation window instead of the model-implied Sigma_W. In that case
        the rotated regressor is the in-sample FWL residual and the bias
        term vanishes up to rounding.
    force_zero_beta2 : bool
        Test hook: skip the bias correction (beta_debiased == beta_raw).
    """
    p, h = target.p, target.horizon
    data = panel.data
    n, d = data.shape
    sel = SelectionPair(d, p, target.cause_index)
    no_controls = len(sel.r2_indices) == 0
    covset = _ensure_covset(covset, fit, h, no_controls)

    m = n - p - h + 1
    if m < p + 1:
        raise SampleTooShortError(f"n={n} too short for p={p}, h={h}")

    w_used = stacked_state(data, p)[:m]
    if no_controls:
        rotated, rot = w_used, Rotation.identity(p)
    else:
        override = None
        if sigma_w_sample:
            override = w_used.T @ w_used / m
        rotated_full, rot = rotated_regressor_ls(covset, sel, panel, sigma_w_override=override)
        rotated = rotated_full[:m]

    w1 = w_used[:, list(sel.r1_indices)]
    y_lead = data[p - 1 + h :, target.effect_index]
    if covset is not None:
        e_hat, _ = lp_residual_series(panel, covset, target.effect_index, h)
        e_hat = e_hat[:m]
    else:
        e_hat = None

    if no_controls or force_zero_beta2:
        w2, beta2 = None, None
    else:
        w2 = w_used[:, list(sel.r2_indices)]
        beta2 = extract_beta2h(covset, target, sel)
    return _assemble(Method.DE_LS, target, rotated, w1, w2, beta2, y_lead, e_hat, rot)


def estimate_de_2s(
    panel: TimeSeriesPanel,
    fit: RegularizedFit,
    target: TargetSpec,
    covset: CovarianceSet | None = None,
    force_zero_beta2: bool = False,
) -> CausalEstimate:
    """De-biased two-stage estimate of beta_{1,h}.

    Identical to the LS estimator with stacked residuals as instruments and
    Sigma_UW in place of Sigma_W. Stacking p residuals, each needing p lags,
    restricts the sums to t = 2p-1 .. n-1-h, so n_eff = n - h - 2p + 1.
    """
    p, h = target.p, target.horizon
    data = panel.data
    n, d = data.shape
    sel = SelectionPair(d, p, target.cause_index)
    no_controls = len(sel.r2_indices) == 0
    covset = _ensure_covset(covset, fit, h, no_controls)

    m = n - h - 2 * p + 1
    if m < p + 1:
        raise SampleTooShortError(f"n={n} too short for p={p}, h={h}")

    rotated_full, rot = (
        (stacked_state(fit.residuals, p), Rotation.identity(p))
        if no_controls
        else rotated_instrument_2s(covset, sel, fit.residuals)
    )
    rotated = rotated_full[:m]

    # W_t aligned with U_t: both run t = 2p-1 .. n-1-h
    w_all = stacked_state(data, p)
    w_used = w_all[p : p + m]
    w1 = w_used[:, list(sel.r1_indices)]
    y_lead = data[2 * p - 1 + h : 2 * p - 1 + h + m, target.effect_index]

    if covset is not None:
        e_full, t0 = lp_residual_series(panel, covset, target.effect_index, h)
        e_hat = e_full[2 * p - 1 - t0 : 2 * p - 1 - t0 + m]
    else:
        e_hat = None

    if no_controls or force_zero_beta2:
        w2, beta2 = None, None
    else:
        w2 = w_used[:, list(sel.r2_indices)]
        beta2 = extract_beta2h(covset, target, sel)
    return _assemble(Method.DE_2S, target, rotated, w1, w2, beta2, y_lead, e_hat, rot)


def estimate_pds(
    panel: TimeSeriesPanel,
    target: TargetSpec,
    selection_lambda: float | None = None,
) -> CausalEstimate:
    """Post-double-selection baseline on the projection equation itself.

    LASSO-select controls from the y_{t+h} equation and from each cause-lag
    equation (cause lags on controls), then run OLS of y_{t+h} on the cause
    lags plus the union of selected controls. The returned estimate exposes
    the FWL-residualized cause lags so HAC inference applies unchanged.
    """
    p, h = target.p, target.horizon
    data = panel.data
    n, d = data.shape
    sel = SelectionPair(d, p, target.cause_index)
    m = n - p - h + 1
    if m < p + 1:
        raise SampleTooShortError(f"n={n} too short for p={p}, h={h}")

    w = stacked_state(data, p)[:m]
    y = data[p - 1 + h :, target.effect_index]
    w1 = w[:, list(sel.r1_indices)]
    w2 = w[:, list(sel.r2_indices)]

    lam = selection_lambda if selection_lambda is not None else math.sqrt(math.log(d * p) / m)
    cfg = PenaltyConfig(method=Penalty.LASSO, lam=lam)

    selected: set[int] = set()
    coef_y, _ = fit_row(y, w, cfg)
    selected |= {k for k in sel.r2_indices if coef_y[k] != 0.0}
    if w2.shape[1]:
        for a in range(p):
            coef_x, _ = fit_row(w1[:, a], w2, cfg)
            selected |= {sel.r2_indices[k] for k in range(w2.shape[1]) if coef_x[k] != 0.0}

    keep = sorted(selected)
    z = w[:, keep]
    design = np.hstack([w1, z])
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < design.shape[1]:
        raise DegenerateDesignError(
            f"post-selection design is rank deficient ({rank} < {design.shape[1]})"
        )
    beta1 = coef[:p]
    e_hat = y - design @ coef

    if z.shape[1]:
        proj, _, _, _ = np.linalg.lstsq(z, w1, rcond=None)
        w1_tilde = w1 - z @ proj
    else:
        w1_tilde = w1

    return CausalEstimate(
        method=Method.PDS,
        target=target,
        beta_raw=beta1,
        beta_debiased=beta1,
        bias_term=np.zeros(p),
        n_eff=m,
        rotated_gram=w1_tilde.T @ w1,
        rotation=None,
        rotated_series=w1_tilde,
        e_hat=e_hat,
    )
