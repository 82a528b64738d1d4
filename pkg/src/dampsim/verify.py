"""Machine-checkable property suites behind the `verify` CLI subcommand.

Each suite runs a set of module invariants and returns
{"name", "passed", "checks": [{"name", "passed", "observed", "bound"}]}.
These are fast, seeded spot checks; the full acceptance-grade budgets live
in the pytest suite.
"""

import math
import os
import tempfile
from dataclasses import replace

import numpy as np

from . import allocation, amp_core, detection, harness, numerics
from . import scenario as scenario_mod
from . import state_evolution as se

# Functional names first; the aliases mirror the commonly used labels for
# the two structural claims.
SUITE_ALIASES = {
    "theorem1": "block_structure",
    "corollary1": "identity_blocks",
}


def _check(name, observed, bound, passed=None):
    if passed is None:
        passed = bool(observed <= bound)
    return {"name": name, "passed": bool(passed), "observed": float(observed),
            "bound": float(bound)}


def _random_hermitian_pd(rng, dim, scale=1.0):
    a = (rng.standard_normal((dim, dim))
         + 1j * rng.standard_normal((dim, dim))) / math.sqrt(2)
    return scale * (a @ np.conj(a.T)) + scale * 0.1 * np.eye(dim)


def suite_numerics(full=False):
    rng = np.random.default_rng(101)
    checks = []
    a = _random_hermitian_pd(rng, 4)
    inv = numerics.hermitian_inverse(a)
    checks.append(_check("inverse_residual",
                         np.max(np.abs(a @ inv - np.eye(4))), 1e-10))
    checks.append(_check("inverse_involution",
                         np.max(np.abs(numerics.hermitian_inverse(inv) - a))
                         / np.max(np.abs(a)), 1e-8))
    checks.append(_check("logdet_vs_eigen",
                         abs(numerics.logdet(a)
                             - float(np.sum(np.log(np.linalg.eigvalsh(a))))),
                         1e-9))
    checks.append(_check("logdet_inverse_identity",
                         abs(numerics.logdet(a) + numerics.logdet(inv)), 1e-8))
    draws = 100_000
    r = np.diag([4.0, 1.0]).astype(complex)
    z = numerics.complex_normal(rng, (draws, 2)) @ numerics.covariance_factor(r).T
    emp = z.T @ z.conj() / draws
    checks.append(_check("sample_covariance_relative",
                         np.linalg.norm(emp - r) / np.linalg.norm(r), 0.03))
    return {"name": "numerics", "passed": all(c["passed"] for c in checks),
            "checks": checks}


def suite_scenario(full=False):
    cfg = scenario_mod.NetworkConfig(num_aps=4, num_devices=60, pilot_length=16,
                                     rng_seed=5)
    scen = scenario_mod.build_scenario(cfg)
    rng = np.random.default_rng(6)
    checks = []
    real = scenario_mod.sample_realization(scen, rng)
    rebuilt = scenario_mod.assemble_received(scen.pilots, real.activities,
                                             real.channels, real.noise)
    checks.append(_check("reconstruction_identity",
                         np.max(np.abs(real.received - rebuilt)), 1e-12))
    checks.append(_check("pilot_unit_energy",
                         np.max(np.abs(np.linalg.norm(scen.pilots, axis=0) - 1)),
                         1e-12))
    checks.append(_check("rho_trace_identity",
                         np.max(np.abs(scen.rho - np.array(
                             [[np.trace(scen.effective_covariance(k, n)).real
                               / scen.num_antennas
                               for n in range(scen.num_devices)]
                              for k in range(scen.num_aps)]))
                             / np.maximum(scen.rho, 1e-300)), 1e-10))
    tri_ok = True
    pts = np.random.default_rng(7).uniform(0, 2, size=(50, 3, 2))
    for p, q, r in pts:
        dpq = scenario_mod.wrap_distance(p, q, 2.0)
        dqr = scenario_mod.wrap_distance(q, r, 2.0)
        dpr = scenario_mod.wrap_distance(p, r, 2.0)
        if dpr > dpq + dqr + 1e-12:
            tri_ok = False
    checks.append(_check("wrap_triangle_inequality", 0.0 if tri_ok else 1.0,
                         0.5, passed=tri_ok))
    return {"name": "scenario", "passed": all(c["passed"] for c in checks),
            "checks": checks}


def suite_allocation(full=False):
    rng = np.random.default_rng(11)
    beta = np.exp(rng.normal(size=(6, 40)))
    checks = []
    sets, eligible = allocation.associate_power_aps(beta, 1.0)
    sets2, eligible2 = allocation.associate_power_aps(10.0 * beta, 10.0)
    same = all(np.array_equal(a, b) for a, b in zip(sets, sets2))
    checks.append(_check("association_scale_invariance", 0.0 if same else 1.0,
                         0.5, passed=same))
    cl = allocation.dcc_assign(beta, 3)
    dual_ok = all(
        n in cl.ap_sets[k] for n, aps in enumerate(cl.device_sets) for k in aps)
    checks.append(_check("cluster_duality", 0.0 if dual_ok else 1.0, 0.5,
                         passed=dual_ok))
    total = sum(len(devs) for devs in cl.ap_sets)
    checks.append(_check("cluster_size_total",
                         abs(total - beta.shape[1] * 3), 0.5))
    s = allocation.power_coefficients("full", beta, sets)
    p = allocation.allocate_power(s, eligible, 0.2)
    checks.append(_check("full_power", np.max(np.abs(p - 0.2)), 1e-15))
    return {"name": "allocation", "passed": all(c["passed"] for c in checks),
            "checks": checks}


def suite_denoiser(full=False):
    rng = np.random.default_rng(21)
    checks = []
    worst = 0.0
    for _ in range(20):
        dim = int(rng.integers(1, 4))
        rho = float(rng.uniform(0.1, 5.0))
        tau = float(rng.uniform(0.1, 5.0))
        eps = float(rng.uniform(0.05, 0.95))
        xi = numerics.complex_normal(rng, dim) * 2.0
        fast = amp_core.iid_fast_path(xi, rho, tau, eps)
        general = amp_core.mmse_denoise(xi, rho * np.eye(dim),
                                        tau * np.eye(dim), eps)
        worst = max(worst, abs(fast.log_lr - general.log_lr),
                    float(np.max(np.abs(fast.xhat - general.xhat))),
                    abs(fast.theta - general.theta))
    checks.append(_check("iid_path_matches_general", worst, 1e-10))
    thetas = amp_core.theta_from_loglr(np.linspace(-30, 30, 101), 0.3)
    checks.append(_check("theta_strictly_decreasing",
                         float(np.max(np.diff(thetas))), 0.0,
                         passed=bool(np.all(np.diff(thetas) < 0))))
    checks.append(_check("theta_at_zero_is_prior",
                         abs(amp_core.theta_from_loglr(0.0, 0.3) - 0.3), 1e-12))
    return {"name": "denoiser", "passed": all(c["passed"] for c in checks),
            "checks": checks}


def _finite_difference_jacobian(xi, r, sigma, eps, step=1e-6):
    dim = xi.shape[0]
    jac = np.zeros((dim, dim), dtype=complex)
    for j in range(dim):
        for direction, weight in ((1.0, 0.5), (1j, -0.5j)):
            delta = np.zeros(dim, dtype=complex)
            delta[j] = direction * step
            plus = amp_core.mmse_denoise(xi + delta, r, sigma, eps).xhat
            minus = amp_core.mmse_denoise(xi - delta, r, sigma, eps).xhat
            jac[:, j] += weight * (plus - minus) / (2 * step)
    return jac


def suite_onsager(full=False):
    rng = np.random.default_rng(31)
    worst = 0.0
    for _ in range(20):
        dim = int(rng.integers(1, 4))
        sigma = _random_hermitian_pd(rng, dim)
        r = _random_hermitian_pd(rng, dim, scale=float(rng.uniform(0.2, 2.0)))
        eps = float(rng.uniform(0.05, 0.95))
        xi = numerics.complex_normal(rng, dim) * 1.5
        out = amp_core.mmse_denoise(xi, r, sigma, eps)
        analytic = amp_core.denoiser_jacobian(out, xi)
        fd = _finite_difference_jacobian(xi, r, sigma, eps)
        worst = max(worst, float(np.linalg.norm(fd - analytic)
                                 / max(np.linalg.norm(analytic), 1e-12)))
    checks = [_check("jacobian_matches_finite_difference", worst, 1e-5)]
    return {"name": "onsager", "passed": all(c["passed"] for c in checks),
            "checks": checks}


def _structure_run(corr, budgets, metric, seed=7):
    rng = np.random.default_rng(seed)
    priors = se.make_block_priors(num_blocks=3, block_size=2, num_devices=50,
                                  rng=rng, eps=0.15, corr=corr, angle=0.4)
    values = []
    for budget in budgets:
        cfg = se.SeConfig(priors=priors, noise_var=0.1, pilot_length=25,
                          block_sizes=(2, 2, 2), mc_samples=int(budget),
                          iterations=5, rng_seed=seed)
        history = se.run_state_evolution(cfg)
        values.append(metric(history[-1]))
    return np.asarray(values)


def _offmass_metric(sigma):
    return se.block_offmass(sigma, (2, 2, 2))


def _iddev_metric(sigma):
    return max(se.identity_deviation(sigma[sl, sl])
               for sl in se.block_slices((2, 2, 2)))


def suite_block_structure(full=False):
    budgets = (1e4, 1e6, 1e8) if full else (1e4, 1e5, 1e6)
    values = _structure_run(0.5, budgets, _offmass_metric)
    slope = np.polyfit(np.log10(budgets), np.log10(values), 1)[0]
    checks = [
        _check("offmass_small_at_1e4", values[0], 0.05),
        _check("offmass_decay_slope_near_minus_half", abs(slope + 0.5), 0.2),
    ]
    return {"name": "block_structure",
            "passed": all(c["passed"] for c in checks), "checks": checks}


def suite_identity_blocks(full=False):
    budgets = (1e4, 1e6, 1e8) if full else (1e4, 1e5, 1e6)
    values = _structure_run(0.0, budgets, _iddev_metric)
    slope = np.polyfit(np.log10(budgets), np.log10(values), 1)[0]
    checks = [
        _check("identity_deviation_small_at_1e4", values[0], 0.05),
        _check("deviation_decay_slope_near_minus_half", abs(slope + 0.5), 0.2),
    ]
    return {"name": "identity_blocks",
            "passed": all(c["passed"] for c in checks), "checks": checks}


def _tiny_experiment_config(out_dir, workers=1):
    net = scenario_mod.NetworkConfig(num_aps=4, antennas_per_ap=2,
                                     num_devices=40, pilot_length=12,
                                     rng_seed=3)
    return harness.ExperimentConfig(
        network=net, schemes=("camp", "damp"), power_schemes=("full",),
        dcc=("all_aps",), pilot_lengths=(12,), trials=3, amp_iterations=8,
        output_dir=out_dir, workers=workers, seed=42)


def suite_llr_additivity(full=False):
    cfg = _tiny_experiment_config(out_dir="unused")
    keep = {("damp", "full", "all_aps", 12)}
    batch = harness.run_trials(cfg, keep_local=keep)
    scen = batch.scenarios[("full", "all_aps", 12)]
    served = scen.served_mask()
    worst = 0.0
    for result in batch.results:
        values = result["local"][("damp", "full", "all_aps", 12)]
        fused = result["fused"][("damp", "full", "all_aps", 12)]
        resum = np.where(served, values, 0.0).sum(axis=0)
        worst = max(worst, float(np.max(np.abs(fused - resum))))
    checks = [_check("fused_equals_sum_of_locals", worst, 1e-12)]
    return {"name": "llr_additivity",
            "passed": all(c["passed"] for c in checks), "checks": checks}


def suite_detection(full=False):
    rng = np.random.default_rng(44)
    scores = rng.normal(size=2000)
    acts = rng.random(2000) < 0.3
    grid = detection.default_log_gamma_grid(-6, 6, 101)
    curve = detection.roc(scores, acts, grid)
    checks = [
        _check("pfa_monotone", float(np.max(-np.diff(curve.pfa))), 0.0,
               passed=bool(np.all(np.diff(curve.pfa) >= 0))),
        _check("pmd_monotone", float(np.max(np.diff(curve.pmd))), 0.0,
               passed=bool(np.all(np.diff(curve.pmd) <= 0))),
        _check("chance_level_sum",
               float(np.max(np.abs(curve.pfa + curve.pmd - 1.0))), 0.1),
    ]
    return {"name": "detection", "passed": all(c["passed"] for c in checks),
            "checks": checks}


def suite_determinism(full=False):
    with tempfile.TemporaryDirectory() as tmp:
        out_a = os.path.join(tmp, "a")
        out_b = os.path.join(tmp, "b")
        harness.run_experiment(_tiny_experiment_config(out_a, workers=1))
        harness.run_experiment(_tiny_experiment_config(out_b, workers=2))
        with open(os.path.join(out_a, "llr.csv"), "rb") as fh:
            blob_a = fh.read()
        with open(os.path.join(out_b, "llr.csv"), "rb") as fh:
            blob_b = fh.read()
    same = blob_a == blob_b
    checks = [_check("llr_csv_bytes_identical_across_worker_counts",
                     0.0 if same else 1.0, 0.5, passed=same)]
    return {"name": "determinism", "passed": all(c["passed"] for c in checks),
            "checks": checks}


SUITES = {
    "numerics": suite_numerics,
    "scenario": suite_scenario,
    "allocation": suite_allocation,
    "denoiser": suite_denoiser,
    "onsager": suite_onsager,
    "block_structure": suite_block_structure,
    "identity_blocks": suite_identity_blocks,
    "llr_additivity": suite_llr_additivity,
    "detection": suite_detection,
    "determinism": suite_determinism,
}


def run_property_suite(selector, full=False):
    """Run one suite (or 'all'); returns a machine-readable report dict."""
    if not selector:
        raise ValueError(f"empty suite selector; choose from "
                         f"{sorted(SUITES)} or 'all'")
    selector = SUITE_ALIASES.get(selector, selector)
    if selector == "all":
        names = list(SUITES)
    elif selector in SUITES:
        names = [selector]
    else:
        raise ValueError(f"unknown suite {selector!r}; choose from "
                         f"{sorted(SUITES)} or 'all'")
    suites = [SUITES[name](full=full) for name in names]
    return {"suites": suites,
            "all_passed": all(s["passed"] for s in suites)}
