"""Hermitian primitive contracts: inverse, log-determinant, sampling."""

import numpy as np
import pytest

from dampsim import numerics


def random_hermitian_pd(rng, dim, jitter=0.1):
    a = (rng.standard_normal((dim, dim))
         + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    return a @ a.conj().T + jitter * np.eye(dim)


class TestHermitianInverse:
    def test_identity(self):
        np.testing.assert_allclose(numerics.hermitian_inverse(np.eye(3)),
                                   np.eye(3), atol=1e-14)

    def test_diagonal(self):
        out = numerics.hermitian_inverse(np.diag([2.0, 4.0]).astype(complex))
        np.testing.assert_allclose(out, np.diag([0.5, 0.25]), atol=1e-14)

    def test_multiply_back_oracle(self):
        # residual ||A @ inv(A) - I|| is the contract, not a specific inverse
        rng = np.random.default_rng(1)
        a = random_hermitian_pd(rng, 4)
        inv = numerics.hermitian_inverse(a)
        residual = np.max(np.abs(a @ inv - np.eye(4)))
        assert residual < 1e-10

    def test_involution(self):
        rng = np.random.default_rng(2)
        a = random_hermitian_pd(rng, 5)
        back = numerics.hermitian_inverse(numerics.hermitian_inverse(a))
        assert np.max(np.abs(back - a)) / np.max(np.abs(a)) < 1e-8

    def test_not_positive_definite(self):
        with pytest.raises(numerics.NotPositiveDefiniteError):
            numerics.hermitian_inverse(np.diag([1.0, -1.0]).astype(complex))

    def test_result_hermitian(self):
        rng = np.random.default_rng(3)
        inv = numerics.hermitian_inverse(random_hermitian_pd(rng, 4))
        assert numerics.is_hermitian(inv, tol=1e-12)


class TestLogdet:
    def test_identity(self):
        assert numerics.logdet(np.eye(5)) == pytest.approx(0.0, abs=1e-14)

    def test_diagonal(self):
        a = np.diag([np.e, np.e]).astype(complex)
        assert numerics.logdet(a) == pytest.approx(2.0, abs=1e-12)

    def test_eigenvalue_oracle(self):
        rng = np.random.default_rng(4)
        a = random_hermitian_pd(rng, 3)
        expected = float(np.sum(np.log(np.linalg.eigvalsh(a))))
        assert numerics.logdet(a) == pytest.approx(expected, abs=1e-9)

    def test_inverse_identity(self):
        rng = np.random.default_rng(5)
        a = random_hermitian_pd(rng, 4)
        total = numerics.logdet(a) + numerics.logdet(numerics.hermitian_inverse(a))
        assert abs(total) < 1e-8

    def test_rejects_indefinite(self):
        with pytest.raises(numerics.NotPositiveDefiniteError):
            numerics.logdet(np.diag([1.0, 0.0]).astype(complex))


class TestSampleGaussian:
    def test_zero_covariance(self):
        rng = np.random.default_rng(6)
        out = numerics.sample_gaussian(np.zeros((3, 3)), rng)
        np.testing.assert_array_equal(out, np.zeros(3))

    def test_identity_covariance_empirical(self):
        rng = np.random.default_rng(7)
        draws = 100_000
        z = numerics.complex_normal(rng, (draws, 2)) @ \
            numerics.covariance_factor(np.eye(2, dtype=complex)).T
        emp = z.T @ z.conj() / draws
        rel = np.linalg.norm(emp - np.eye(2)) / np.linalg.norm(np.eye(2))
        assert rel < 0.03

    def test_diagonal_variances(self):
        rng = np.random.default_rng(8)
        r = np.diag([4.0, 1.0]).astype(complex)
        samples = np.array([numerics.sample_gaussian(r, rng)
                            for _ in range(20_000)])
        variances = np.mean(np.abs(samples) ** 2, axis=0)
        np.testing.assert_allclose(variances, [4.0, 1.0], rtol=0.05)

    def test_circular_symmetry(self):
        # real and imaginary parts independent, each with variance R_ii / 2
        rng = np.random.default_rng(9)
        r = np.diag([2.0]).astype(complex)
        samples = np.array([numerics.sample_gaussian(r, rng)[0]
                            for _ in range(20_000)])
        assert np.var(samples.real) == pytest.approx(1.0, rel=0.08)
        assert np.var(samples.imag) == pytest.approx(1.0, rel=0.08)
        corr = np.mean(samples.real * samples.imag)
        assert abs(corr) < 0.05

    def test_rank_deficient(self):
        rng = np.random.default_rng(10)
        r = np.array([[1.0, 1.0], [1.0, 1.0]], dtype=complex)  # rank one
        out = numerics.sample_gaussian(r, rng)
        assert out[0] == pytest.approx(out[1], abs=1e-12)


class TestSymmetrize:
    def test_enforces_hermitian(self):
        rng = np.random.default_rng(11)
        a = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        sym = numerics.symmetrize(a)
        assert numerics.is_hermitian(sym, tol=1e-15)

    def test_fixed_point_on_hermitian(self):
        rng = np.random.default_rng(12)
        a = random_hermitian_pd(rng, 3)
        np.testing.assert_allclose(numerics.symmetrize(a), a, atol=1e-15)
