"""Whole-network AMP runs: initialization, convergence, structure."""

from dataclasses import replace

import numpy as np
import pytest

from dampsim import amp_core, detection
from dampsim import scenario as sm
from dampsim.numerics import symmetrize


def small_scenario(**overrides):
    defaults = dict(num_aps=4, antennas_per_ap=2, num_devices=40,
                    pilot_length=16, rng_seed=1)
    defaults.update(overrides)
    return sm.build_scenario(sm.NetworkConfig(**defaults))


class TestLocalState:
    def test_initialization_matches_contract(self):
        rng = np.random.default_rng(0)
        y = (rng.standard_normal((8, 3)) + 1j * rng.standard_normal((8, 3)))
        state = amp_core.init_local_state(0, y, np.arange(5))
        np.testing.assert_array_equal(state.residual, y)
        np.testing.assert_array_equal(state.estimates, np.zeros((5, 3)))
        np.testing.assert_allclose(state.state, symmetrize(y.T @ y.conj() / 8),
                                   atol=1e-15)
        assert state.iteration == 0

    def test_empty_served_set(self):
        rng = np.random.default_rng(1)
        y = (rng.standard_normal((6, 2)) + 1j * rng.standard_normal((6, 2)))
        state = amp_core.init_local_state(2, y, np.array([], dtype=np.intp))
        pilots = (rng.standard_normal((6, 10))
                  + 1j * rng.standard_normal((6, 10)))
        new_state, report = amp_core.local_iteration(
            state, y, pilots, np.zeros((0, 2, 2), dtype=complex),
            np.full(10, 0.1), 10)
        np.testing.assert_allclose(new_state.residual, y, atol=1e-14)
        np.testing.assert_allclose(new_state.state,
                                   symmetrize(y.T @ y.conj() / 6), atol=1e-14)
        assert report.loglr.size == 0

    def test_state_hermitian_psd_every_iteration(self):
        scen = small_scenario(
            fading_model={"correlated": {"corr": 0.5, "angle": 0.2}})
        real = sm.sample_realization(scen, np.random.default_rng(2))
        k = 0
        served = scen.ap_served[k]
        r_stack = scen.rho[k, served][:, None, None] * scen.corr[None]
        state = amp_core.init_local_state(k, real.received[k], served)
        for _ in range(6):
            state, _ = amp_core.local_iteration(
                state, real.received[k], scen.pilots, r_stack, scen.eps,
                scen.num_devices)
            assert np.max(np.abs(state.state - state.state.conj().T)) < 1e-12
            assert np.linalg.eigvalsh(state.state).min() > -1e-15


class TestLeastSquaresLimit:
    def test_noiseless_orthogonal_pilots(self):
        # single active device, orthonormal pilots, no noise: the estimate
        # converges to the least-squares channel estimate phi^H Y
        num_devices = 6
        eps = tuple([1.0] + [0.0] * (num_devices - 1))
        cfg = sm.NetworkConfig(num_aps=1, antennas_per_ap=2,
                               num_devices=num_devices, pilot_length=8,
                               activity_prob=eps, noise_psd=-320.0,
                               rng_seed=3)
        scen = sm.build_scenario(cfg)
        ortho, _ = np.linalg.qr(
            np.random.default_rng(4).standard_normal((8, num_devices))
            + 1j * np.random.default_rng(5).standard_normal((8, num_devices)))
        scen = replace(scen, pilots=ortho)
        real = sm.sample_realization(scen, np.random.default_rng(6))
        report, estimates = amp_core.run_damp(real, scen, 25)
        ls = ortho[:, 0].conj() @ real.received[0]
        rel = np.linalg.norm(estimates[0, 0] - ls) / np.linalg.norm(ls)
        assert rel < 1e-3


class TestRunDamp:
    def test_single_ap_equals_camp(self):
        scen = small_scenario(num_aps=1)
        real = sm.sample_realization(scen, np.random.default_rng(7))
        report, est_d = amp_core.run_damp(real, scen, 10)
        fused_d = detection.fuse_llrs(report, scen.dcc_sets)
        fused_c, est_c = amp_core.run_camp(real, scen, 10)
        np.testing.assert_array_equal(fused_d, fused_c)
        np.testing.assert_array_equal(est_d, est_c)

    def test_ap_permutation_equivariance(self):
        scen = small_scenario()
        real = sm.sample_realization(scen, np.random.default_rng(8))
        report, _ = amp_core.run_damp(real, scen, 8)

        perm = np.array([2, 0, 3, 1])  # new index of each original AP
        scen_p = replace(
            scen,
            ap_positions=scen.ap_positions.copy(),
            lsfc=scen.lsfc[np.argsort(perm)][:],
            rho=scen.rho[np.argsort(perm)],
            dcc_sets=tuple(np.sort(perm[s]) for s in scen.dcc_sets),
            ap_served=tuple(scen.ap_served[k] for k in np.argsort(perm)),
        )
        real_p = sm.Realization(
            activities=real.activities,
            channels=real.channels[np.argsort(perm)],
            noise=real.noise[np.argsort(perm)],
            received=real.received[np.argsort(perm)],
        )
        report_p, _ = amp_core.run_damp(real_p, scen_p, 8)
        np.testing.assert_array_equal(report_p.values,
                                      report.values[np.argsort(perm)])

    def test_bit_identical_rerun(self):
        scen = small_scenario()
        real = sm.sample_realization(scen, np.random.default_rng(9))
        rep_a, est_a = amp_core.run_damp(real, scen, 10)
        rep_b, est_b = amp_core.run_damp(real, scen, 10)
        np.testing.assert_array_equal(rep_a.values, rep_b.values)
        np.testing.assert_array_equal(est_a, est_b)

    def test_unitary_equivariance_iid(self):
        scen = small_scenario()
        real = sm.sample_realization(scen, np.random.default_rng(10))
        q, _ = np.linalg.qr(np.random.default_rng(11).standard_normal((2, 2))
                            + 1j * np.random.default_rng(12).standard_normal((2, 2)))
        real_q = sm.Realization(activities=real.activities,
                                channels=real.channels,
                                noise=real.noise,
                                received=real.received @ q)
        rep, _ = amp_core.run_damp(real, scen, 10)
        rep_q, _ = amp_core.run_damp(real_q, scen, 10)
        mask = rep.served
        np.testing.assert_allclose(rep_q.values[mask], rep.values[mask],
                                   rtol=1e-6, atol=1e-9)

    def test_paper_configuration_finite(self):
        scen = sm.build_scenario(sm.NetworkConfig(rng_seed=13))
        real = sm.sample_realization(scen, np.random.default_rng(14))
        report, _ = amp_core.run_damp(real, scen, 20)
        assert report.finite()
        assert report.iteration == 20

    def test_early_stop(self):
        scen = small_scenario()
        real = sm.sample_realization(scen, np.random.default_rng(15))
        report, _ = amp_core.run_damp(real, scen, 50, early_stop_tol=1e-4)
        assert report.iteration < 50

    def test_general_path_on_iid_scenario_detects(self):
        # correlated-machinery run on an iid drop: same detector family,
        # slower path; sanity-check it separates the classes
        scen = small_scenario()
        real = sm.sample_realization(scen, np.random.default_rng(16))
        report, _ = amp_core.run_damp(real, scen, 10, denoiser="general")
        fused = detection.fuse_llrs(report, scen.dcc_sets)
        active = real.activities.astype(bool)
        if active.any() and (~active).any():
            assert fused[active].mean() < fused[~active].mean()


class TestRunCamp:
    def test_uninformative_fusion_is_prior(self):
        # fused log-LR of zero maps to theta = eps
        assert amp_core.theta_from_loglr(0.0, 0.37) == pytest.approx(0.37)

    def test_iteration_zero_matches_damp(self):
        # the first linear step is shared: identical effective observations
        # and local log-LRs before any fusion
        from dampsim import backend

        scen = small_scenario()
        real = sm.sample_realization(scen, np.random.default_rng(17))
        k = 1
        served = scen.ap_served[k]
        phis = np.ascontiguousarray(scen.pilots[:, served])
        phis_h = np.ascontiguousarray(phis.conj().T)
        rho = np.ascontiguousarray(scen.rho[k, served])
        y = np.ascontiguousarray(real.received[k])
        xhat0 = np.zeros((served.size, scen.num_antennas), dtype=complex)
        xi_a, loglr_a, tau_a = backend.phase_a_iid(y.copy(), xhat0, phis_h, rho)
        xi_b, loglr_b, tau_b = backend.phase_a_iid(y.copy(), xhat0, phis_h, rho)
        np.testing.assert_array_equal(xi_a, xi_b)
        np.testing.assert_array_equal(loglr_a, loglr_b)
        assert tau_a == tau_b

    def test_correlated_scenario_runs(self):
        scen = small_scenario(
            fading_model={"correlated": {"corr": 0.5, "angle": 0.2}})
        real = sm.sample_realization(scen, np.random.default_rng(18))
        fused, estimates = amp_core.run_camp(real, scen, 6)
        assert np.all(np.isfinite(fused))
        active = real.activities.astype(bool)
        if active.any() and (~active).any():
            assert fused[active].mean() < fused[~active].mean()

    def test_dcc_restricts_serving(self):
        scen = sm.with_dcc_size(small_scenario(), 2)
        real = sm.sample_realization(scen, np.random.default_rng(19))
        report, estimates = amp_core.run_damp(real, scen, 8)
        served = report.served
        assert served.sum() == scen.num_devices * 2
        # non-served entries stay empty
        assert np.all(estimates[~served] == 0)

    def test_requires_positive_iterations(self):
        scen = small_scenario()
        real = sm.sample_realization(scen, np.random.default_rng(20))
        with pytest.raises(ValueError):
            amp_core.run_damp(real, scen, 0)
        with pytest.raises(ValueError):
            amp_core.run_camp(real, scen, 0)
