import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bsmatch.errors import NumericalDomainError, ParameterDomainError
from bsmatch.numkernel import (KernelSpec, ar1_corr, ar1_inverse, ar1_logdet, cs_corr, cs_inverse,
                               cs_logdet, eigen_truncate, gamma_exp_kernel, kernel_basis,
                               matnorm_logpdf, time_grid)

from conftest import random_spd, vec_mvn_logpdf


class TestKernel:
    def test_diagonal_is_psi0(self):
        K = gamma_exp_kernel(time_grid(7), KernelSpec(0.3, 1.5, psi0=2.5))
        np.testing.assert_array_equal(np.diag(K), 2.5)

    def test_direct_substitution(self):
        # unit distance, s0 = gamma0 = psi0 = 1
        K = gamma_exp_kernel(np.array([0.0, 1.0]), KernelSpec(1.0, 1.0, 1.0))
        assert K[0, 1] == pytest.approx(np.exp(-1.0), abs=1e-12)
        K2 = gamma_exp_kernel(np.array([0.0, 1.0]), KernelSpec(1.0, 1.0, 1.0, form="squared"))
        assert K2[0, 1] == pytest.approx(0.367879, abs=1e-6)

    def test_gamma_zero_is_constant_off_diagonal(self):
        K = gamma_exp_kernel(time_grid(4), KernelSpec(0.5, 0.0))
        np.testing.assert_allclose(K[~np.eye(4, dtype=bool)], np.exp(-1.0))

    def test_psd_default_spec(self):
        K = gamma_exp_kernel(time_grid(35), KernelSpec(0.2, 1.2))
        np.testing.assert_array_equal(K, K.T)
        assert np.linalg.eigvalsh(K).min() >= -1e-8

    def test_squared_form_not_psd_above_one(self):
        K = gamma_exp_kernel(time_grid(35), KernelSpec(0.2, 1.2, form="squared"))
        with pytest.raises(NumericalDomainError):
            eigen_truncate(K)

    @settings(max_examples=60, deadline=None)
    @given(s0=st.floats(0.1, 1.0), g=st.floats(0.5, 1.9), T0=st.integers(2, 40))
    def test_psd_over_hyperparameter_box(self, s0, g, T0):
        K = gamma_exp_kernel(time_grid(T0), KernelSpec(s0, g))
        assert np.max(np.abs(K - K.T)) == 0
        assert np.linalg.eigvalsh(K).min() >= -1e-8

    @pytest.mark.parametrize("kw", [dict(s0=0.0, gamma0=1.0), dict(s0=1.0, gamma0=2.0),
                                    dict(s0=1.0, gamma0=-0.1), dict(s0=1.0, gamma0=1.0, psi0=0.0),
                                    dict(s0=1.0, gamma0=1.0, form="other")])
    def test_invalid_spec(self, kw):
        with pytest.raises(ParameterDomainError):
            KernelSpec(**kw)

    def test_grid(self):
        g = time_grid(5)
        np.testing.assert_allclose(g, [0, 0.25, 0.5, 0.75, 1.0])
        with pytest.raises(ParameterDomainError):
            time_grid(1)


class TestEigenTruncate:
    def test_given_spectrum(self):
        Q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((4, 4)))
        K = Q @ np.diag([0.9, 0.05, 0.03, 0.02]) @ Q.T
        b = eigen_truncate(K, 0.95)
        assert b.L == 2
        np.testing.assert_allclose(b.lam, [0.9, 0.05], atol=1e-12)
        assert b.energy_fraction >= 0.95

    def test_identity(self):
        assert eigen_truncate(np.eye(4), 0.95).L == 4

    def test_threshold_one_keeps_everything_positive(self):
        b = eigen_truncate(np.diag([3.0, 2.0, 1.0]), 1.0)
        assert b.L == 3

    def test_reconstruction_t0_25(self):
        K = gamma_exp_kernel(time_grid(25), KernelSpec(0.2, 1.2))
        b = eigen_truncate(K, 0.95)
        R = b.Psi.T @ np.diag(b.lam) @ b.Psi
        assert np.linalg.norm(K - R) / np.linalg.norm(K) <= 0.05

    def test_orthonormal_and_minimal(self):
        K = gamma_exp_kernel(time_grid(30), KernelSpec(0.3, 1.2))
        b = eigen_truncate(K, 0.95)
        np.testing.assert_allclose(b.Psi @ b.Psi.T, np.eye(b.L), atol=1e-8)
        assert np.all(np.diff(b.lam) <= 0) and np.all(b.lam > 0)
        w = np.sort(np.linalg.eigvalsh(K))[::-1]
        frac = np.cumsum(w) / w.sum()
        assert frac[b.L - 1] >= 0.95 and (b.L == 1 or frac[b.L - 2] < 0.95)
        # rows are eigenvectors
        np.testing.assert_allclose(b.Psi @ K, b.lam[:, None] * b.Psi, atol=1e-9)

    def test_small_negative_clamped_large_rejected(self):
        K = np.diag([1.0, 0.5, -1e-10])
        assert eigen_truncate(K).L == 2
        with pytest.raises(NumericalDomainError):
            eigen_truncate(np.diag([1.0, -1e-3]))

    def test_bad_threshold(self):
        with pytest.raises(ParameterDomainError):
            eigen_truncate(np.eye(2), 0.0)

    def test_kernel_basis_deterministic(self):
        a = kernel_basis(35, KernelSpec(0.2, 1.2))
        b = kernel_basis(35, KernelSpec(0.2, 1.2))
        np.testing.assert_array_equal(a.Psi, b.Psi)


class TestStructuredCorrelations:
    def test_ar1_values(self):
        np.testing.assert_allclose(ar1_corr(0.5, 3), [[1, 0.5, 0.25], [0.5, 1, 0.5], [0.25, 0.5, 1]])
        np.testing.assert_array_equal(ar1_corr(0.0, 4), np.eye(4))

    def test_ar1_determinant(self):
        assert np.linalg.det(ar1_corr(0.7, 5)) == pytest.approx((1 - 0.49) ** 4, abs=1e-10)
        assert ar1_logdet(0.7, 5) == pytest.approx(np.log(np.linalg.det(ar1_corr(0.7, 5))), abs=1e-10)

    @settings(max_examples=40, deadline=None)
    @given(rho=st.floats(0.0, 0.99), T=st.integers(1, 12))
    def test_ar1_inverse_closed_form(self, rho, T):
        np.testing.assert_allclose(ar1_inverse(rho, T) @ ar1_corr(rho, T), np.eye(T), atol=1e-8)
        np.linalg.cholesky(ar1_corr(rho, T))

    def test_cs_values(self):
        np.testing.assert_array_equal(cs_corr(0.3, 1), [[1.0]])
        R = cs_corr(0.5, 3)
        assert np.all(R[~np.eye(3, dtype=bool)] == 0.5)
        assert np.linalg.eigvalsh(cs_corr(0.9, 4)).min() == pytest.approx(0.1, abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(eta=st.floats(0.0, 0.99), E=st.integers(1, 8))
    def test_cs_closed_forms(self, eta, E):
        R = cs_corr(eta, E)
        np.testing.assert_allclose(cs_inverse(eta, E) @ R, np.eye(E), atol=1e-8)
        assert cs_logdet(eta, E) == pytest.approx(np.linalg.slogdet(R)[1], abs=1e-9)
        np.linalg.cholesky(R)

    @pytest.mark.parametrize("bad", [-0.1, 1.0, np.nan])
    def test_domain(self, bad):
        with pytest.raises(ParameterDomainError):
            ar1_corr(bad, 3)
        with pytest.raises(ParameterDomainError):
            cs_corr(bad, 3)


class TestMatnorm:
    def test_zero_residual_constant(self, rng):
        U, V = random_spd(rng, 2), random_spd(rng, 3)
        M = rng.standard_normal((2, 3))
        expected = -0.5 * (6 * np.log(2 * np.pi) + 3 * np.linalg.slogdet(U)[1] + 2 * np.linalg.slogdet(V)[1])
        assert matnorm_logpdf(M, M, U, V) == pytest.approx(expected, abs=1e-10)

    def test_scalar_normal(self):
        s2 = 2.5
        expected = -0.5 * (np.log(2 * np.pi * s2) + 1.3 ** 2 / s2)
        assert matnorm_logpdf([[1.3]], [[0.0]], [[s2]], [[1.0]]) == pytest.approx(expected, abs=1e-12)

    def test_random_2x3_against_vec_oracle(self, rng):
        X, M = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
        U, V = random_spd(rng, 2), random_spd(rng, 3)
        assert abs(matnorm_logpdf(X, M, U, V) - vec_mvn_logpdf(X, M, U, V)) <= 1e-10

    @settings(max_examples=50, deadline=None)
    @given(E=st.integers(1, 3), T=st.integers(1, 5), seed=st.integers(0, 2 ** 31))
    def test_vec_identity_and_transpose(self, E, T, seed):
        r = np.random.default_rng(seed)
        X, M = r.standard_normal((E, T)), r.standard_normal((E, T))
        U, V = random_spd(r, E), random_spd(r, T)
        a = matnorm_logpdf(X, M, U, V)
        assert abs(a - vec_mvn_logpdf(X, M, U, V)) <= 1e-9
        assert abs(a - matnorm_logpdf(X.T, M.T, V, U)) <= 1e-9

    def test_errors(self, rng):
        with pytest.raises(ParameterDomainError):
            matnorm_logpdf(np.zeros((2, 3)), np.zeros((2, 2)), np.eye(2), np.eye(3))
        with pytest.raises(NumericalDomainError):
            matnorm_logpdf(np.zeros((2, 2)), np.zeros((2, 2)), -np.eye(2), np.eye(2))
