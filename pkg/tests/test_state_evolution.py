"""State-evolution recursion and structure metric contracts."""

import math

import numpy as np
import pytest

from dampsim import state_evolution as se


def scalar_config(r=2.0, eps=1.0, noise=0.3, pilot_len=4, samples=400_000):
    priors = ((np.array([[r]], dtype=complex), eps),)
    return se.SeConfig(priors=priors, noise_var=noise, pilot_length=pilot_len,
                       block_sizes=(1,), mc_samples=samples, iterations=1,
                       rng_seed=0)


class TestSeInitial:
    def test_direct_sum(self):
        priors = tuple((np.eye(2, dtype=complex), 0.5) for _ in range(8))
        cfg = se.SeConfig(priors=priors, noise_var=1.0, pilot_length=8,
                          block_sizes=(2,), mc_samples=10, iterations=0)
        np.testing.assert_allclose(se.se_initial(cfg), 2.0 * np.eye(2),
                                   atol=1e-14)

    def test_no_devices(self):
        cfg = se.SeConfig(priors=(), noise_var=0.7, pilot_length=4,
                          block_sizes=(3,), mc_samples=10, iterations=0)
        np.testing.assert_allclose(se.se_initial(cfg), 0.7 * np.eye(3),
                                   atol=1e-15)

    def test_block_structure_preserved(self):
        rng = np.random.default_rng(0)
        priors = se.make_block_priors(2, 2, 5, rng, eps=0.3, corr=0.5)
        cfg = se.SeConfig(priors=priors, noise_var=0.2, pilot_length=5,
                          block_sizes=(2, 2), mc_samples=10, iterations=0)
        assert se.block_offmass(se.se_initial(cfg), (2, 2)) == 0.0


class TestSeStep:
    def test_inactive_devices_give_noise_floor(self):
        priors = ((np.eye(2, dtype=complex), 0.0),) * 4
        cfg = se.SeConfig(priors=priors, noise_var=0.5, pilot_length=4,
                          block_sizes=(2,), mc_samples=1000, iterations=1)
        out = se.se_step_mc(np.eye(2, dtype=complex), cfg,
                            np.random.default_rng(1))
        np.testing.assert_allclose(out, 0.5 * np.eye(2), atol=1e-10)

    def test_zero_covariance_gives_noise_floor(self):
        priors = ((np.zeros((2, 2), dtype=complex), 0.4),) * 3
        cfg = se.SeConfig(priors=priors, noise_var=0.5, pilot_length=4,
                          block_sizes=(2,), mc_samples=1000, iterations=1)
        out = se.se_step_mc(np.eye(2, dtype=complex), cfg,
                            np.random.default_rng(2))
        # g = 0 and x = 0: only the eigenvalue floor perturbs the zero error
        np.testing.assert_allclose(out, 0.5 * np.eye(2), atol=1e-9)

    def test_scalar_closed_form(self):
        # always-active scalar Gaussian: error variance r tau / (r + tau)
        r, tau, noise, pilot_len = 2.0, 0.5, 0.3, 4
        cfg = scalar_config(r=r, noise=noise, pilot_len=pilot_len)
        rng = np.random.default_rng(3)
        out = se.se_step_mc(np.array([[tau]], dtype=complex), cfg, rng)
        expected = noise + (1 / pilot_len) * (r * tau / (r + tau))
        # Monte-Carlo error of the variance estimate: ~ sqrt(2/S) relative
        sigma_mc = (r * tau / (r + tau)) / pilot_len * math.sqrt(2 / 400_000)
        assert abs(out[0, 0].real - expected) < 3 * sigma_mc

    def test_deterministic_given_seed(self):
        rng_a = np.random.default_rng(4)
        rng_b = np.random.default_rng(4)
        cfg = scalar_config(samples=10_000)
        out_a = se.se_step_mc(np.array([[0.4]], dtype=complex), cfg, rng_a)
        out_b = se.se_step_mc(np.array([[0.4]], dtype=complex), cfg, rng_b)
        np.testing.assert_array_equal(out_a, out_b)

    def test_monotone_information(self):
        rng = np.random.default_rng(5)
        priors = se.make_block_priors(2, 2, 12, rng, eps=0.4, corr=0.3)
        cfg = se.SeConfig(priors=priors, noise_var=0.1, pilot_length=10,
                          block_sizes=(2, 2), mc_samples=40_000, iterations=1,
                          rng_seed=5)
        sigma0 = se.se_initial(cfg)
        sigma1 = se.se_step_mc(sigma0, cfg, np.random.default_rng(6))
        assert np.trace(sigma1).real <= np.trace(sigma0).real

    def test_output_positive_definite(self):
        rng = np.random.default_rng(7)
        priors = se.make_block_priors(1, 3, 6, rng, eps=0.2, corr=0.6)
        cfg = se.SeConfig(priors=priors, noise_var=1e-8, pilot_length=6,
                          block_sizes=(3,), mc_samples=2_000, iterations=1)
        out = se.se_step_mc(se.se_initial(cfg), cfg, np.random.default_rng(8))
        assert np.linalg.eigvalsh(out).min() > 0


class TestBlockOffmass:
    def test_exact_block_diagonal(self):
        sigma = np.kron(np.eye(2), np.ones((2, 2)))
        assert se.block_offmass(sigma, (2, 2)) == 0.0

    def test_all_ones_hand_value(self):
        # 2x2 all-ones with unit blocks: off mass sqrt(2) over total 2
        sigma = np.ones((2, 2))
        assert se.block_offmass(sigma, (1, 1)) == pytest.approx(
            math.sqrt(2) / 2)

    def test_scale_invariance(self):
        rng = np.random.default_rng(9)
        sigma = rng.standard_normal((4, 4))
        a = se.block_offmass(sigma, (2, 2))
        b = se.block_offmass(3.7 * sigma, (2, 2))
        assert a == pytest.approx(b, rel=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            se.block_offmass(np.eye(3), (2, 2))


class TestIdentityDeviation:
    def test_scaled_identity(self):
        assert se.identity_deviation(4.2 * np.eye(3)) == 0.0

    def test_hand_value(self):
        # diag(1, 3): tau = 2, deviation sqrt(2) / sqrt(10)
        value = se.identity_deviation(np.diag([1.0, 3.0]))
        assert value == pytest.approx(math.sqrt(2) / math.sqrt(10))

    def test_unitary_conjugation_of_identity(self):
        rng = np.random.default_rng(10)
        q, _ = np.linalg.qr(rng.standard_normal((3, 3))
                            + 1j * rng.standard_normal((3, 3)))
        sigma = q @ (2.5 * np.eye(3)) @ q.conj().T
        assert se.identity_deviation(sigma) < 1e-12


class TestConfigValidation:
    def test_rejects_non_block_prior(self):
        bad = np.ones((4, 4), dtype=complex)
        with pytest.raises(ValueError):
            se.SeConfig(priors=((bad, 0.5),), noise_var=1.0, pilot_length=4,
                        block_sizes=(2, 2), mc_samples=10, iterations=1)

    def test_rejects_bad_eps(self):
        with pytest.raises(ValueError):
            se.SeConfig(priors=((np.eye(2, dtype=complex), 1.5),),
                        noise_var=1.0, pilot_length=4, block_sizes=(2,),
                        mc_samples=10, iterations=1)


class TestCsvOutput:
    def test_history_csv_schema(self, tmp_path):
        rng = np.random.default_rng(11)
        priors = se.make_block_priors(2, 2, 6, rng, eps=0.3, corr=0.4)
        cfg = se.SeConfig(priors=priors, noise_var=0.1, pilot_length=6,
                          block_sizes=(2, 2), mc_samples=2_000, iterations=2,
                          rng_seed=11)
        history = se.run_state_evolution(cfg)
        path = tmp_path / "se.csv"
        se.write_history_csv(path, history, cfg.block_sizes, cfg.mc_samples)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == ("iteration,block_offmass,identity_deviation_0,"
                            "identity_deviation_1,mc_samples")
        assert len(lines) == 1 + len(history)
