"""Benchmark: compiled extension kernels vs NumPy fallback.

Times the hot kernels at the reference experiment scale (K=20 APs, M=3
antennas, N=400 devices, L=40 pilots, T=20 iterations) plus the Monte-Carlo
state-evolution accumulation, and reports the speedup.

Run: python benchmarks/bench_kernels.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from dampsim import _kernels_np
from dampsim import backend

try:
    from dampsim import _kernels as _compiled
except ImportError:
    _compiled = None


def complex_normal(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) \
        / np.sqrt(2)


def make_ap_problem(rng, pilot_len=40, num_antennas=3, num_served=400,
                    num_devices=400):
    y = complex_normal(rng, (pilot_len, num_antennas)) * 1e-7
    phis = complex_normal(rng, (pilot_len, num_served))
    phis /= np.linalg.norm(phis, axis=0, keepdims=True)
    phis = np.ascontiguousarray(phis)
    phis_h = np.ascontiguousarray(phis.conj().T)
    rho = rng.uniform(0.2, 5.0, size=num_served) * 1e-14
    eps = np.full(num_served, 0.1)
    return y, phis, phis_h, rho, eps, num_devices


def time_call(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        tic = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - tic)
    return best


def bench_damp_run(module, problem, iterations, repeats):
    y, phis, phis_h, rho, eps, n = problem
    return time_call(
        lambda: module.damp_run_iid(y, phis, phis_h, rho, eps, n,
                                    iterations, 0.0), repeats)


def bench_camp_iteration(module, problem, iterations, repeats):
    y, phis, phis_h, rho, eps, n = problem

    def run():
        z = y.copy()
        xhat = np.zeros((rho.size, y.shape[1]), dtype=complex)
        for _ in range(iterations):
            xi, loglr, tau = module.phase_a_iid(z, xhat, phis_h, rho)
            z, xhat = module.phase_b_iid(y, z, phis, xi, loglr, rho, eps,
                                         tau, n)

    return time_call(run, repeats)


def bench_se_accumulate(module, rng, repeats, batch=32768, dim=6):
    zv = rng.standard_normal((batch, 2 * dim), dtype=np.float32)
    idx = np.flatnonzero(rng.random(batch) < 0.15)
    zs = rng.standard_normal((idx.size, 2 * dim), dtype=np.float32)
    base = complex_normal(rng, (dim, dim))
    noise_f = np.ascontiguousarray(base + 2 * np.eye(dim))
    signal_f = np.ascontiguousarray(base.T + np.eye(dim))
    psi_t = np.ascontiguousarray(0.4 * base + 0.3 * np.eye(dim))
    omega_t = np.ascontiguousarray(0.2 * base.conj() + 0.3 * np.eye(dim))
    acc = np.zeros((dim, dim), dtype=complex)
    return time_call(
        lambda: module.se_accumulate(zv, zs, idx, noise_f, signal_f, psi_t,
                                     omega_t, 1.0, 0.15, acc), repeats)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--iterations", type=int, default=20)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    problem = make_ap_problem(rng)
    rows = []

    benches = [
        ("per-AP dAMP run (L=40, S=400, T=20)",
         lambda m: bench_damp_run(m, problem, args.iterations, args.repeats)),
        ("per-AP cAMP phases (L=40, S=400, T=20)",
         lambda m: bench_camp_iteration(m, problem, args.iterations,
                                        args.repeats)),
        ("state-evolution batch (32768 x dim 6)",
         lambda m: bench_se_accumulate(m, np.random.default_rng(1),
                                       args.repeats)),
    ]
    for name, runner in benches:
        fallback = runner(_kernels_np)
        if _compiled is not None:
            compiled = runner(_compiled)
            rows.append((name, compiled, fallback, fallback / compiled))
        else:
            rows.append((name, None, fallback, None))

    print(f"active backend: {backend.backend_name()}")
    header = f"{'kernel':45s} {'compiled':>10s} {'numpy':>10s} {'speedup':>8s}"
    print(header)
    print("-" * len(header))
    for name, compiled, fallback, speedup in rows:
        compiled_s = f"{compiled*1e3:8.2f}ms" if compiled else "   n/a   "
        speedup_s = f"{speedup:7.1f}x" if speedup else "    n/a"
        print(f"{name:45s} {compiled_s:>10s} {fallback*1e3:8.2f}ms "
              f"{speedup_s:>8s}")


if __name__ == "__main__":
    main()
