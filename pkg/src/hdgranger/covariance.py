"""Model-implied covariance construction for the stacked VAR state.

Everything here is computed from an estimated (or true) ``VarModel`` rather
than from sample moments:

* ``sigma_w``    -- Sigma_W = sum_j A^j J' Sigma_u J (A')^j, the stationary
  covariance of W_t, via squared-doubling accumulation of the discrete
  Lyapunov identity Sigma_W = A Sigma_W A' + J' Sigma_u J.
* ``sigma_w_lag`` -- Sigma_W(r) = A^r Sigma_W for r >= 0, transpose for r < 0.
* ``sigma_uw``   -- Sigma_UW = E[U_t W_t'], the lower block-triangular block
  Toeplitz matrix with block (i, j) = Sigma_u Psi'_{i-j}, built structurally
  so the upper blocks are exact zeros.
* ``psi_h``      -- the reduced-form impulse response Psi_h = J A^h J'.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import SingularCovarianceError, UnstableModelError
from .regularized import RegularizedFit
from .var_core import CompanionMatrix, VarModel, build_companion

__all__ = [
    "CovarianceSet",
    "sigma_u_hat",
    "sigma_w",
    "sigma_w_lag",
    "sigma_uw",
    "psi_h",
    "build_covariance_set",
    "guarded_inverse",
]

DOUBLING_TOL = 1e-12
RCOND_FLOOR = 1e-12


def sigma_u_hat(fit: RegularizedFit) -> np.ndarray:
    """Innovation covariance (1/(n-p)) sum_t u_hat_t u_hat_t' from fit residuals.

    Sets a singularity warning (not an error) when the residual count does
    not exceed the dimension, in which case the estimate cannot be full rank.
    """
    resid = fit.residuals
    m, d = resid.shape
    if m <= d:
        warnings.warn(
            f"residual count {m} <= dimension {d}: sample innovation covariance is singular",
            stacklevel=2,
        )
    s = resid.T @ resid / m
    return (s + s.T) / 2.0


def sigma_w(model_hat: VarModel, companion: CompanionMatrix | None = None) -> np.ndarray:
    """Stationary covariance of W_t by squared-doubling accumulation.

    Iterates S <- S + M S M', M <- M M starting from S = J' Sigma_u J,
    M = A, until the increment's max-abs entry is below 1e-12; the geometric
    tail makes this exact to truncation in O(log(1/eps)) multiplies.

    Raises
    ------
    UnstableModelError
        If the companion matrix has spectral radius >= 1 (the series diverges).
    """
    comp = companion or build_companion(model_hat)
    if not comp.is_stable:
        raise UnstableModelError(comp.rho)
    d, p = model_hat.d, model_hat.p
    dp = d * p
    s = np.zeros((dp, dp))
    s[:d, :d] = model_hat.sigma_u
    m = comp.matrix.copy()
    # cap well above log2(eps tolerance) for rho near 1
    for _ in range(200):
        incr = m @ s @ m.T
        s = s + incr
        if np.max(np.abs(incr)) < DOUBLING_TOL:
            break
        m = m @ m
    return (s + s.T) / 2.0


def sigma_w_lag(model_hat: VarModel, r: int, sigma_w_0: np.ndarray | None = None) -> np.ndarray:
    """Lag-r autocovariance of W_t: A^r Sigma_W for r >= 0, Sigma_W(|r|)' for r < 0."""
    s0 = sigma_w(model_hat) if sigma_w_0 is None else sigma_w_0
    if r == 0:
        return s0
    if r < 0:
        return sigma_w_lag(model_hat, -r, s0).T
    a = build_companion(model_hat).matrix
    out = s0
    for _ in range(r):
        out = a @ out
    return out


def psi_h(model_hat: VarModel, h: int) -> np.ndarray:
    """Reduced-form impulse response Psi_h = J A^h J' (top-left block of A^h)."""
    if h < 0:
        raise ValueError("h must be >= 0")
    d = model_hat.d
    if h == 0:
        return np.eye(d)
    a = build_companion(model_hat).matrix
    power = np.linalg.matrix_power(a, h)
    return power[:d, :d].copy()


def _psi_sequence(model_hat: VarModel, count: int) -> list[np.ndarray]:
    """Psi_0 .. Psi_{count-1} by running powers of the companion matrix."""
    d = model_hat.d
    out = [np.eye(d)]
    if count == 1:
        return out
    a = build_companion(model_hat).matrix
    power = np.eye(a.shape[0])
    for _ in range(count - 1):
        power = a @ power
        out.append(power[:d, :d].copy())
    return out


def sigma_uw(model_hat: VarModel, psi: list[np.ndarray] | None = None) -> np.ndarray:
    """E[U_t W_t'] = (I_p (x) Sigma_u) Psi(p), placed block by block.

    Block (i, j) is Sigma_u Psi'_{i-j} for i >= j and an exact zero above the
    diagonal; blocks are constant along each diagonal by construction.
    """
    d, p = model_hat.d, model_hat.p
    psis = psi if psi is not None else _psi_sequence(model_hat, p)
    blocks = [model_hat.sigma_u @ psis[k].T for k in range(p)]
    out = np.zeros((d * p, d * p))
    for i in range(p):
        for j in range(i + 1):
            out[i * d : (i + 1) * d, j * d : (j + 1) * d] = blocks[i - j]
    return out


def guarded_inverse(mat: np.ndarray, what: str = "covariance") -> np.ndarray:
    """LU-based inverse with a reciprocal-condition guard.

    Raises
    ------
    SingularCovarianceError
        If the matrix is singular or its 1-norm reciprocal condition number
        falls below 1e-12.
    """
    try:
        inv = np.linalg.inv(mat)
    except np.linalg.LinAlgError:
        raise SingularCovarianceError(f"{what} matrix is singular") from None
    rcond = 1.0 / (np.linalg.norm(mat, 1) * np.linalg.norm(inv, 1))
    if not np.isfinite(rcond) or rcond < RCOND_FLOOR:
        raise SingularCovarianceError(
            f"{what} matrix is numerically singular (rcond ~ {rcond:.2e})"
        )
    return inv


@dataclass
class CovarianceSet:
    """Immutable bundle of model-implied covariances for one fitted VAR.

    ``psi`` holds Psi_0 .. Psi_{h_max + p - 1}; ``sigma_w_inv`` and
    ``sigma_uw_inv`` are precomputed guarded inverses shared by every
    downstream rotation.
    """

    model: VarModel
    companion: CompanionMatrix
    sigma_u_hat: np.ndarray
    sigma_w: np.ndarray
    sigma_uw: np.ndarray
    psi: list[np.ndarray]
    sigma_w_inv: np.ndarray = field(repr=False)
    sigma_uw_inv: np.ndarray = field(repr=False)
    condition_flags: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.model.d

    @property
    def p(self) -> int:
        return self.model.p

    def psi_at(self, h: int) -> np.ndarray:
        if h < len(self.psi):
            return self.psi[h]
        return psi_h(self.model, h)

    def beta_full(self, effect: int, h: int) -> np.ndarray:
        """Length-dp projection coefficient vector: the effect row of J A^h."""
        a = self.companion.matrix
        power = np.linalg.matrix_power(a, h)
        return power[effect, : a.shape[1]].copy()


def build_covariance_set(
    model_hat: VarModel,
    h_max: int = 1,
    sigma_u: np.ndarray | None = None,
    residual_count: int | None = None,
) -> CovarianceSet:
    """Assemble the covariance bundle used by the de-biased estimators.

    Parameters
    ----------
    model_hat : VarModel
        Estimated (or true) VAR; its ``sigma_u`` feeds every formula unless
        ``sigma_u`` is passed explicitly.
    h_max : int
        Largest projection horizon the set will serve; Psi is precomputed up
        to h_max + p - 1.
    residual_count : int, optional
        Number of residuals behind ``sigma_u``; flags a singular sample
        covariance when it does not exceed d.

    Raises
    ------
    UnstableModelError
        If rho(A_hat) >= 1; callers may re-fit with a stronger penalty.
    SingularCovarianceError
        If Sigma_W or Sigma_UW cannot be stably inverted.
    """
    comp = build_companion(model_hat)
    if not comp.is_stable:
        raise UnstableModelError(comp.rho)
    su = model_hat.sigma_u if sigma_u is None else sigma_u
    model = VarModel(model_hat.slope_matrices, su)
    flags: dict = {"rho": comp.rho}
    if residual_count is not None and residual_count <= model.d:
        flags["sigma_u_singular"] = True
    psis = _psi_sequence(model, h_max + model.p)
    sw = sigma_w(model, comp)
    suw = sigma_uw(model, psis)
    return CovarianceSet(
        model=model,
        companion=comp,
        sigma_u_hat=su,
        sigma_w=sw,
        sigma_uw=suw,
        psi=psis,
        sigma_w_inv=guarded_inverse(sw, "Sigma_W"),
        sigma_uw_inv=guarded_inverse(suw, "Sigma_UW"),
        condition_flags=flags,
    )
