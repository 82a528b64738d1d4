"""Compiled-vs-fallback kernel equivalence on randomized instances."""

import numpy as np
import pytest

from dampsim import _kernels_np, backend
from dampsim.numerics import complex_normal

compiled = pytest.importorskip("dampsim._kernels") if backend.HAVE_COMPILED \
    else pytest.skip("compiled kernels unavailable", allow_module_level=True)


def make_instance(rng, pilot_len=16, num_antennas=3, num_served=25,
                  num_devices=40):
    y = complex_normal(rng, (pilot_len, num_antennas)) * 2.0
    phis = complex_normal(rng, (pilot_len, num_served))
    phis /= np.linalg.norm(phis, axis=0, keepdims=True)
    phis = np.ascontiguousarray(phis)
    phis_h = np.ascontiguousarray(phis.conj().T)
    rho = rng.uniform(0.05, 4.0, size=num_served)
    eps = rng.uniform(0.05, 0.5, size=num_served)
    return y, phis, phis_h, rho, eps, num_devices


class TestPhaseEquivalence:
    def test_phase_a(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            y, phis, phis_h, rho, eps, n = make_instance(rng)
            xhat = complex_normal(rng, (rho.size, y.shape[1]))
            xi_c, ll_c, tau_c = compiled.phase_a_iid(y, xhat, phis_h, rho)
            xi_n, ll_n, tau_n = _kernels_np.phase_a_iid(y, xhat, phis_h, rho)
            np.testing.assert_allclose(xi_c, xi_n, rtol=1e-12, atol=1e-14)
            np.testing.assert_allclose(ll_c, ll_n, rtol=1e-10, atol=1e-12)
            assert tau_c == pytest.approx(tau_n, rel=1e-13)

    def test_phase_b(self):
        rng = np.random.default_rng(1)
        y, phis, phis_h, rho, eps, n = make_instance(rng)
        z = complex_normal(rng, y.shape)
        xi = complex_normal(rng, (rho.size, y.shape[1]))
        loglr = rng.normal(size=rho.size) * 5.0
        z_c, x_c = compiled.phase_b_iid(y, z, phis, xi, loglr, rho, eps,
                                        1.7, n)
        z_n, x_n = _kernels_np.phase_b_iid(y, z, phis, xi, loglr, rho, eps,
                                           1.7, n)
        np.testing.assert_allclose(z_c, z_n, rtol=1e-10, atol=1e-13)
        np.testing.assert_allclose(x_c, x_n, rtol=1e-10, atol=1e-13)

    def test_damp_run(self):
        rng = np.random.default_rng(2)
        y, phis, phis_h, rho, eps, n = make_instance(rng)
        out_c = compiled.damp_run_iid(y, phis, phis_h, rho, eps, n, 12, 0.0)
        out_n = _kernels_np.damp_run_iid(y, phis, phis_h, rho, eps, n, 12, 0.0)
        np.testing.assert_allclose(out_c[0], out_n[0], rtol=1e-8, atol=1e-11)
        np.testing.assert_allclose(out_c[1], out_n[1], rtol=1e-8, atol=1e-10)
        assert out_c[2] == pytest.approx(out_n[2], rel=1e-10)
        assert out_c[3] == out_n[3] == 12

    def test_empty_served_set(self):
        rng = np.random.default_rng(3)
        y = complex_normal(rng, (8, 2))
        phis = np.zeros((8, 0), dtype=complex)
        phis_h = np.zeros((0, 8), dtype=complex)
        rho = np.zeros(0)
        eps = np.zeros(0)
        for mod in (compiled, _kernels_np):
            xhat, loglr, tau, iters = mod.damp_run_iid(
                y, phis, phis_h, rho, eps, 10, 5, 0.0)
            assert xhat.shape == (0, 2)
            assert loglr.shape == (0,)
            assert tau == pytest.approx(float(np.mean(np.abs(y) ** 2)),
                                        rel=1e-12)

    def test_theta_helper(self):
        loglr = np.linspace(-800, 800, 31)
        th_c = compiled.theta_from_loglr(loglr, 0.25)
        th_n = _kernels_np.theta_from_loglr(loglr, 0.25)
        np.testing.assert_allclose(th_c, th_n, rtol=1e-13)

    def test_state_collapse_raises(self):
        y = np.zeros((6, 2), dtype=complex)
        phis = np.zeros((6, 3), dtype=complex)
        phis_h = np.zeros((3, 6), dtype=complex)
        rho = np.ones(3)
        eps = np.full(3, 0.1)
        for mod in (compiled, _kernels_np):
            with pytest.raises(FloatingPointError):
                mod.damp_run_iid(y, phis, phis_h, rho, eps, 5, 3, 0.0)

    def test_early_stop_agreement(self):
        rng = np.random.default_rng(4)
        y, phis, phis_h, rho, eps, n = make_instance(rng)
        out_c = compiled.damp_run_iid(y, phis, phis_h, rho, eps, n, 60, 1e-5)
        out_n = _kernels_np.damp_run_iid(y, phis, phis_h, rho, eps, n, 60, 1e-5)
        assert out_c[3] == out_n[3] < 60


class TestSeAccumulate:
    def test_matches_numpy(self):
        rng = np.random.default_rng(5)
        dim = 4
        batch = 4096
        zv = rng.standard_normal((batch, 2 * dim), dtype=np.float32)
        idx = np.flatnonzero(rng.random(batch) < 0.2)
        zs = rng.standard_normal((idx.size, 2 * dim), dtype=np.float32)
        a = complex_normal(rng, (dim, dim))
        noise_f = np.ascontiguousarray(a + 2 * np.eye(dim))
        signal_f = np.ascontiguousarray(a.T + np.eye(dim))
        psi_t = np.ascontiguousarray(0.5 * a + 0.2 * np.eye(dim))
        omega_t = np.ascontiguousarray(0.1 * a.conj() + 0.3 * np.eye(dim))
        acc_c = np.zeros((dim, dim), dtype=complex)
        acc_n = np.zeros((dim, dim), dtype=complex)
        compiled.se_accumulate(zv, zs, idx, noise_f, signal_f, psi_t, omega_t,
                               1.2, 0.2, acc_c)
        _kernels_np.se_accumulate(zv, zs, idx, noise_f, signal_f, psi_t,
                                  omega_t, 1.2, 0.2, acc_n)
        np.testing.assert_allclose(acc_c, acc_n, rtol=1e-10, atol=1e-12)

    def test_dimension_guard(self):
        dim = 20  # beyond the compiled stack-buffer limit
        zv = np.zeros((4, 2 * dim), dtype=np.float32)
        with pytest.raises(ValueError):
            compiled.se_accumulate(zv, np.zeros((0, 2 * dim), np.float32),
                                   np.zeros(0, np.int64),
                                   np.eye(dim, dtype=complex),
                                   np.eye(dim, dtype=complex),
                                   np.eye(dim, dtype=complex),
                                   np.eye(dim, dtype=complex),
                                   0.0, 0.5,
                                   np.zeros((dim, dim), dtype=complex))
