import numpy as np
import pytest

from hdgranger.covariance import (
    build_covariance_set,
    guarded_inverse,
    psi_h,
    sigma_u_hat,
    sigma_uw,
    sigma_w,
    sigma_w_lag,
)
from hdgranger.errors import SingularCovarianceError, UnstableModelError
from hdgranger.regularized import lagged_design
from hdgranger.var_core import DgpKind, DgpSpec, VarModel, build_companion, make_dgp, simulate

from conftest import random_stable_model


def _kron_vec_oracle(model: VarModel) -> np.ndarray:
    """Dense (I - A (x) A)^-1 vec(J' Sigma_u J) solve; only viable for small dp."""
    comp = build_companion(model).matrix
    dp = comp.shape[0]
    q = np.zeros((dp, dp))
    q[: model.d, : model.d] = model.sigma_u
    vec = np.linalg.solve(np.eye(dp * dp) - np.kron(comp, comp), q.reshape(-1, order="F"))
    return vec.reshape(dp, dp, order="F")


class TestSigmaUHat:
    def _fit_with_residuals(self, resid):
        from hdgranger.regularized import RegularizedFit

        d = resid.shape[1]
        return RegularizedFit(
            slope_matrices=[np.zeros((d, d))],
            residuals=resid,
            lambda_used=np.zeros(d),
            loadings=None,
            nonzero_count=0,
        )

    def test_zero_residuals(self):
        fit = self._fit_with_residuals(np.zeros((10, 2)))
        assert np.array_equal(sigma_u_hat(fit), np.zeros((2, 2)))

    def test_scalar_arithmetic(self):
        fit = self._fit_with_residuals(np.array([[1.0], [-1.0]]))
        assert sigma_u_hat(fit)[0, 0] == pytest.approx(1.0)

    def test_warns_when_short(self):
        fit = self._fit_with_residuals(np.zeros((2, 3)))
        with pytest.warns(UserWarning, match="singular"):
            sigma_u_hat(fit)

    def test_oracle_residuals_recover_sigma_u(self):
        model = make_dgp(DgpSpec(DgpKind.TRIDIAGONAL, 5))
        panel = simulate(model, 5000, seed=13)
        y, x = lagged_design(panel.data, 2)
        resid = y - x @ np.hstack(model.slope_matrices).T  # true innovations
        fit = self._fit_with_residuals(resid)
        assert np.max(np.abs(sigma_u_hat(fit) - model.sigma_u)) < 0.06


class TestSigmaW:
    def test_scalar_geometric_series(self):
        model = VarModel([np.array([[0.5]])], np.array([[1.0]]))
        assert sigma_w(model)[0, 0] == pytest.approx(4.0 / 3.0, abs=1e-12)

    def test_zero_slopes_give_block_diagonal(self):
        sig = np.array([[1.0, 0.3], [0.3, 1.0]])
        model = VarModel([np.zeros((2, 2)), np.zeros((2, 2))], sig)
        assert np.array_equal(sigma_w(model), np.kron(np.eye(2), sig))

    def test_matches_kron_vec_oracle(self):
        a = np.array([[0.5, 0.1], [0.0, 0.4]])
        model = VarModel([a], np.eye(2))
        assert np.max(np.abs(sigma_w(model) - _kron_vec_oracle(model))) < 1e-12

    def test_lyapunov_residual(self, rng):
        for _ in range(10):
            model = random_stable_model(rng, int(rng.integers(1, 6)), int(rng.integers(1, 3)))
            comp = build_companion(model)
            s = sigma_w(model)
            q = np.zeros_like(s)
            q[: model.d, : model.d] = model.sigma_u
            resid = s - comp.matrix @ s @ comp.matrix.T - q
            assert np.max(np.abs(resid)) < 1e-8

    def test_rejects_unstable(self):
        model = VarModel([np.eye(2) * 1.05], np.eye(2))
        with pytest.raises(UnstableModelError):
            sigma_w(model)


class TestSigmaWLag:
    def test_lag_zero(self):
        model = VarModel([np.array([[0.5]])], np.array([[1.0]]))
        s0 = sigma_w(model)
        assert np.array_equal(sigma_w_lag(model, 0), s0)

    def test_scalar_power_scaling(self):
        model = VarModel([np.array([[0.5]])], np.array([[1.0]]))
        assert sigma_w_lag(model, 2)[0, 0] == pytest.approx(0.25 * 4.0 / 3.0)

    def test_negative_lag_transpose(self, rng):
        model = random_stable_model(rng, 3, 2)
        assert np.array_equal(sigma_w_lag(model, -1), sigma_w_lag(model, 1).T)


class TestSigmaUW:
    def test_p1_equals_sigma_u(self, rng):
        model = random_stable_model(rng, 3, 1)
        assert np.array_equal(sigma_uw(model), model.sigma_u)

    def test_upper_blocks_exact_zero_and_toeplitz(self, rng):
        model = random_stable_model(rng, 2, 3)
        d = 2
        suw = sigma_uw(model)
        for i in range(3):
            for j in range(3):
                block = suw[i * d : (i + 1) * d, j * d : (j + 1) * d]
                if j > i:
                    assert np.array_equal(block, np.zeros((d, d)))
        # blocks constant along diagonals, bit-exact
        assert np.array_equal(suw[2:4, 0:2], suw[4:6, 2:4])

    def test_scalar_p2_blocks(self):
        model = VarModel([np.array([[0.5]]), np.array([[0.0]])], np.array([[1.0]]))
        assert np.allclose(sigma_uw(model), np.array([[1.0, 0.0], [0.5, 1.0]]), atol=1e-15)

    def test_full_rank_when_sigma_u_pd(self, rng):
        model = random_stable_model(rng, 4, 2)
        sv = np.linalg.svd(sigma_uw(model), compute_uv=False)
        assert sv[-1] > 1e-10 * sv[0]


class TestPsi:
    def test_h0_identity(self, rng):
        model = random_stable_model(rng, 3, 2)
        assert np.array_equal(psi_h(model, 0), np.eye(3))

    def test_scalar_powers(self):
        model = VarModel([np.array([[0.5]])], np.array([[1.0]]))
        assert psi_h(model, 3)[0, 0] == pytest.approx(0.125)

    def test_ma_recursion(self, rng):
        model = random_stable_model(rng, 2, 2)
        a1, a2 = model.slope_matrices
        psis = [psi_h(model, h) for h in range(13)]
        for h in range(1, 13):
            recur = a1 @ psis[h - 1] + (a2 @ psis[h - 2] if h >= 2 else 0.0)
            assert np.max(np.abs(psis[h] - recur)) < 1e-10


class TestCovarianceSet:
    def test_bundle_consistency(self, rng):
        model = random_stable_model(rng, 3, 2)
        cs = build_covariance_set(model, h_max=4)
        assert np.array_equal(cs.psi[0], np.eye(3))
        assert np.max(np.abs(cs.sigma_w_inv @ cs.sigma_w - np.eye(6))) < 1e-10
        assert cs.condition_flags["rho"] < 1.0

    def test_guarded_inverse_rejects_singular(self):
        with pytest.raises(SingularCovarianceError):
            guarded_inverse(np.zeros((2, 2)))
        with pytest.raises(SingularCovarianceError):
            guarded_inverse(np.diag([1.0, 1e-15]))

    @pytest.mark.slow
    def test_model_implied_matches_sample_covariance(self):
        from hdgranger.debias import stacked_state

        model = make_dgp(DgpSpec(DgpKind.TRIDIAGONAL, 5))
        panel = simulate(model, 10000, seed=21)
        w = stacked_state(panel.data, 2)
        sample = w.T @ w / w.shape[0]
        assert np.max(np.abs(sigma_w(model) - sample)) < 0.1
