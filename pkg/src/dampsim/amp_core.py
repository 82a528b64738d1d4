"""Per-AP AMP recursion with block MMSE denoising and local log-LR reports.

Two execution paths share the same algorithm:

* i.i.d. Rayleigh fading: the state is tracked as the scalar trace
  tau = tr(Sigma)/M and every matrix operation collapses to scalar form;
  this hot path runs through the selected kernel backend.
* correlated fading: the full empirical M x M state is tracked and the
  denoiser uses batched Hermitian inverses and log-determinants.

The distributed variant (``run_damp``) iterates every AP chain to the end
with no cross-AP communication; the centralized variant (``run_camp``)
fuses the local log-LRs across each device's serving APs once per
iteration and feeds the common activity posterior back to every AP.
"""

from dataclasses import dataclass

import numpy as np

from . import backend
from .detection import LlrReport
from .numerics import (NotPositiveDefiniteError, hermitian_inverse, logdet,
                       symmetrize)

LOGLR_CLAMP = backend.LOGLR_CLAMP


class StateCollapseError(RuntimeError):
    """The empirical AMP state lost positive-definiteness; trial aborted."""


def theta_from_loglr(loglr, eps):
    """Activity posterior theta = 1 / (1 + (1-eps)/eps * exp(loglr))."""
    clipped = np.clip(loglr, -LOGLR_CLAMP, LOGLR_CLAMP)
    return 1.0 / (1.0 + (1.0 - eps) / eps * np.exp(clipped))


@dataclass(frozen=True)
class DenoiserOutput:
    xhat: np.ndarray    # (M,) posterior-mean estimate
    theta: float        # activity posterior in [0, 1]
    log_lr: float       # local log likelihood-ratio (inactive over active)
    psi: np.ndarray     # (M, M) linear MMSE filter R (R + Sigma)^-1
    omega: np.ndarray   # (M, M) quadratic-form kernel Sigma^-1 - (R+Sigma)^-1


def mmse_denoise(xi, r, sigma, eps):
    """Posterior mean of a Bernoulli-Gaussian coordinate from its noisy view.

    xi: (M,) observation; r: (M, M) PSD signal covariance; sigma: (M, M) PD
    noise covariance; eps: prior activity probability in (0, 1).  The
    determinant ratio is formed in the log domain.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError("activity probability must lie strictly in (0, 1)")
    xi = np.asarray(xi, dtype=complex)
    r = np.asarray(r, dtype=complex)
    sigma = np.asarray(sigma, dtype=complex)
    total = r + sigma
    sigma_inv = hermitian_inverse(sigma)
    total_inv = hermitian_inverse(total)
    psi = r @ total_inv
    omega = sigma_inv - total_inv
    quad = float(np.real(np.conj(xi) @ omega @ xi))
    log_lr = logdet(total) - logdet(sigma) - quad
    theta = float(theta_from_loglr(log_lr, eps))
    xhat = theta * (psi @ xi)
    return DenoiserOutput(xhat=xhat, theta=theta, log_lr=log_lr, psi=psi,
                          omega=omega)


def iid_fast_path(xi, rho, tau, eps):
    """Scalar-state denoiser for R = rho I, Sigma = tau I.

    Numerically identical to ``mmse_denoise`` on those inputs, but with all
    matrix inversions and determinants reduced to scalar operations.
    """
    if tau <= 0.0:
        raise StateCollapseError(f"state trace collapsed (tau={tau})")
    if not 0.0 < eps < 1.0:
        raise ValueError("activity probability must lie strictly in (0, 1)")
    xi = np.asarray(xi, dtype=complex)
    num_antennas = xi.shape[0]
    energy = float(np.real(np.conj(xi) @ xi))
    log_lr = num_antennas * np.log1p(rho / tau) - rho * energy / (tau * (rho + tau))
    theta = float(theta_from_loglr(log_lr, eps))
    psi_gain = rho / (rho + tau)
    omega_gain = rho / (tau * (rho + tau))
    eye = np.eye(num_antennas, dtype=complex)
    xhat = theta * psi_gain * xi
    return DenoiserOutput(xhat=xhat, theta=theta, log_lr=float(log_lr),
                          psi=psi_gain * eye, omega=omega_gain * eye)


def denoiser_jacobian(output, xi):
    """Derivative of the denoiser with respect to xi (conjugate held fixed):
    theta * Psi (I + (1 - theta) xi xi^H Omega)."""
    xi = np.asarray(xi, dtype=complex)
    eye = np.eye(xi.shape[0], dtype=complex)
    outer = np.outer(xi, np.conj(xi))
    return output.theta * output.psi @ (eye + (1.0 - output.theta) * outer
                                        @ output.omega)


def onsager_matrix(outputs, xis, num_devices):
    """Mean denoiser Jacobian scaled by the total device count."""
    num_antennas = np.asarray(xis[0]).shape[0] if len(xis) else 0
    total = np.zeros((num_antennas, num_antennas), dtype=complex)
    for out, xi in zip(outputs, xis):
        total += denoiser_jacobian(out, xi)
    return total / num_devices


# ---------------------------------------------------------------------------
# Batched general (correlated-fading) path
# ---------------------------------------------------------------------------

def _batch_chol_logdet(mats):
    """Cholesky-based log-determinants of a stack of Hermitian PD matrices."""
    lower = np.linalg.cholesky(mats)
    diags = np.real(np.diagonal(lower, axis1=-2, axis2=-1))
    return 2.0 * np.sum(np.log(diags), axis=-1)


def batch_mmse_denoise(xi, r_stack, sigma, eps):
    """Vectorized general denoiser over served devices of one AP.

    xi: (S, M); r_stack: (S, M, M); sigma: (M, M); eps: (S,).
    Returns (xhat, loglr, theta, psi, omega) with per-device matrices.
    """
    num_antennas = sigma.shape[0]
    eye = np.eye(num_antennas, dtype=complex)
    total = r_stack + sigma
    logdet_sigma = _batch_chol_logdet(sigma[None])[0]
    logdet_total = _batch_chol_logdet(total)
    sigma_inv = symmetrize(np.linalg.solve(sigma, eye))
    total_inv = np.linalg.solve(total, np.broadcast_to(eye, total.shape))
    psi = r_stack @ total_inv
    omega = sigma_inv[None] - total_inv
    quad = np.real(np.einsum("sm,smn,sn->s", np.conj(xi), omega, xi))
    loglr = logdet_total - logdet_sigma - quad
    theta = theta_from_loglr(loglr, eps)
    xhat = theta[:, None] * np.einsum("smn,sn->sm", psi, xi)
    return xhat, loglr, theta, psi, omega


def batch_onsager(xi, psi, omega, theta, num_devices):
    """Sum of per-device denoiser Jacobians divided by the device count."""
    num_antennas = psi.shape[-1]
    eye = np.eye(num_antennas, dtype=complex)
    outer = xi[:, :, None] * np.conj(xi)[:, None, :]
    inner = eye[None] + (1.0 - theta)[:, None, None] * (outer @ omega)
    return np.einsum("s,smn,snp->mp", theta, psi, inner) / num_devices


def _general_phase_a(z, xhat, phis_h, r_stack, sigma, eps):
    xi = xhat + phis_h @ z
    xhat_new, loglr, theta, psi, omega = batch_mmse_denoise(xi, r_stack, sigma, eps)
    return xi, loglr, psi, omega


def _general_phase_b(y, z, phis, xi, theta_loglr, psi, omega, eps,
                     num_devices):
    # the residual correction contracts the transposed Jacobian sum, which
    # keeps the recursion equivariant under unitary antenna rotations
    pilot_len = y.shape[0]
    theta = theta_from_loglr(theta_loglr, eps)
    xhat_new = theta[:, None] * np.einsum("smn,sn->sm", psi, xi)
    onsager = batch_onsager(xi, psi, omega, theta, num_devices)
    z_new = y - phis @ xhat_new + (num_devices / pilot_len) * (z @ onsager.T)
    return z_new, xhat_new


# ---------------------------------------------------------------------------
# Local AMP state and the reference single-AP iteration
# ---------------------------------------------------------------------------

@dataclass
class LocalAmpState:
    """Working set of one AP chain at iteration t."""

    ap_index: int
    served: np.ndarray       # (S,) device indices this AP processes
    residual: np.ndarray     # (L, M)
    estimates: np.ndarray    # (S, M) per-served-device channel estimates
    state: np.ndarray        # (M, M) empirical Hermitian state
    iteration: int = 0


@dataclass(frozen=True)
class LocalReport:
    """Per-AP local log-LRs for the served devices at one iteration."""

    ap_index: int
    served: np.ndarray
    loglr: np.ndarray
    iteration: int


def init_local_state(ap_index, y, served):
    """Residual = Y, estimates = 0, state = (1/L) Y^T Y^* (symmetrized)."""
    y = np.asarray(y, dtype=complex)
    pilot_len = y.shape[0]
    served = np.asarray(served, dtype=np.intp)
    sigma0 = symmetrize(y.T @ y.conj() / pilot_len)
    estimates = np.zeros((served.shape[0], y.shape[1]), dtype=complex)
    return LocalAmpState(ap_index=ap_index, served=served, residual=y.copy(),
                         estimates=estimates, state=sigma0, iteration=0)


def local_iteration(state, y, pilots, r_stack, eps, num_devices):
    """One general-path AMP iteration for a single AP.

    Effective observations from the current residual and estimates, block
    MMSE denoising, Onsager-corrected residual update, then the empirical
    state refresh (1/L) Z^T Z^* (symmetrized).
    """
    pilot_len = y.shape[0]
    phis = pilots[:, state.served]
    phis_h = np.conj(phis.T)
    eps_served = np.broadcast_to(eps, (num_devices,))[state.served]
    try:
        xi = state.estimates + phis_h @ state.residual
        xhat_new, loglr, theta, psi, omega = batch_mmse_denoise(
            xi, r_stack, state.state, eps_served)
        onsager = batch_onsager(xi, psi, omega, theta, num_devices)
    except (NotPositiveDefiniteError, np.linalg.LinAlgError) as exc:
        raise StateCollapseError(
            f"AP {state.ap_index}: state not positive-definite at iteration "
            f"{state.iteration}") from exc
    z_new = y - phis @ xhat_new + (num_devices / pilot_len) * (
        state.residual @ onsager.T)
    sigma_new = symmetrize(z_new.T @ z_new.conj() / pilot_len)
    new_state = LocalAmpState(ap_index=state.ap_index, served=state.served,
                              residual=z_new, estimates=xhat_new,
                              state=sigma_new, iteration=state.iteration + 1)
    report = LocalReport(ap_index=state.ap_index, served=state.served,
                         loglr=loglr, iteration=state.iteration + 1)
    return new_state, report


# ---------------------------------------------------------------------------
# Whole-network runs
# ---------------------------------------------------------------------------

def _ap_inputs(scenario, k):
    served = scenario.ap_served[k]
    phis = np.ascontiguousarray(scenario.pilots[:, served])
    phis_h = np.ascontiguousarray(np.conj(phis.T))
    rho = np.ascontiguousarray(scenario.rho[k, served])
    eps = np.ascontiguousarray(scenario.eps[served])
    return served, phis, phis_h, rho, eps


def _use_fast_path(scenario, denoiser):
    if denoiser == "auto":
        return scenario.iid
    if denoiser == "iid":
        if not scenario.iid:
            raise ValueError("scalar-state denoiser requires an i.i.d. scenario")
        return True
    if denoiser == "general":
        return False
    raise ValueError(f"unknown denoiser mode {denoiser!r}")


def run_damp(realization, scenario, num_iterations, early_stop_tol=0.0,
             denoiser="auto"):
    """Distributed AMP: independent per-AP chains, no communication.

    Returns (LlrReport with the final local log-LRs, estimates (K, N, M)).
    """
    if num_iterations < 1:
        raise ValueError("num_iterations must be >= 1")
    fast = _use_fast_path(scenario, denoiser)
    num_aps, num_devices = scenario.num_aps, scenario.num_devices
    num_antennas = scenario.num_antennas
    values = np.zeros((num_aps, num_devices))
    estimates = np.zeros((num_aps, num_devices, num_antennas), dtype=complex)
    iterations_run = 0
    for k in range(num_aps):
        served, phis, phis_h, rho, eps = _ap_inputs(scenario, k)
        y = np.ascontiguousarray(realization.received[k])
        if fast:
            try:
                xhat, loglr, _tau, iters = backend.damp_run_iid(
                    y, phis, phis_h, rho, eps, num_devices, num_iterations,
                    early_stop_tol)
            except FloatingPointError as exc:
                raise StateCollapseError(f"AP {k}: {exc}") from exc
        else:
            r_stack = rho[:, None, None] * scenario.corr[None]
            state = init_local_state(k, y, served)
            loglr = np.zeros(served.shape[0])
            prev = None
            iters = 0
            for _ in range(num_iterations):
                state, report = local_iteration(state, y, scenario.pilots,
                                                r_stack, scenario.eps,
                                                num_devices)
                loglr = report.loglr
                iters += 1
                if early_stop_tol > 0.0 and prev is not None and loglr.size:
                    if np.max(np.abs(loglr - prev)) < early_stop_tol:
                        break
                prev = loglr.copy()
            xhat = state.estimates
        values[k, served] = loglr
        estimates[k, served] = xhat
        iterations_run = max(iterations_run, iters)
    report = LlrReport(values=values, served=scenario.served_mask(),
                       iteration=iterations_run)
    return report, estimates


def run_camp(realization, scenario, num_iterations, early_stop_tol=0.0,
             denoiser="auto"):
    """Centralized AMP: local linear steps plus per-iteration LLR fusion.

    Every iteration each AP publishes its local log-LRs; the fused
    per-device sums over the serving sets drive a common activity posterior
    that all APs apply in their denoising and Onsager steps.  Returns
    (fused log-LRs (N,), estimates (K, N, M)).
    """
    if num_iterations < 1:
        raise ValueError("num_iterations must be >= 1")
    fast = _use_fast_path(scenario, denoiser)
    num_aps, num_devices = scenario.num_aps, scenario.num_devices
    num_antennas = scenario.num_antennas
    served_mask = scenario.served_mask()

    inputs = [_ap_inputs(scenario, k) for k in range(num_aps)]
    ys = [np.ascontiguousarray(realization.received[k]) for k in range(num_aps)]
    residuals = [y.copy() for y in ys]
    estimates = [np.zeros((inputs[k][0].shape[0], num_antennas), dtype=complex)
                 for k in range(num_aps)]
    r_stacks = None
    if not fast:
        r_stacks = [inputs[k][3][:, None, None] * scenario.corr[None]
                    for k in range(num_aps)]

    fused = np.zeros(num_devices)
    prev = None
    local = np.zeros((num_aps, num_devices))
    for _ in range(num_iterations):
        cache = []
        for k in range(num_aps):
            served, phis, phis_h, rho, eps = inputs[k]
            if fast:
                xi, loglr, tau = backend.phase_a_iid(
                    residuals[k], estimates[k], phis_h, rho)
                if tau <= 0.0:
                    raise StateCollapseError(
                        f"AP {k}: state trace collapsed (tau={tau})")
                cache.append((xi, tau, None, None))
            else:
                pilot_len = ys[k].shape[0]
                sigma = symmetrize(
                    residuals[k].T @ residuals[k].conj() / pilot_len)
                try:
                    xi, loglr, psi, omega = _general_phase_a(
                        residuals[k], estimates[k], phis_h, r_stacks[k],
                        sigma, eps)
                except (NotPositiveDefiniteError, np.linalg.LinAlgError) as exc:
                    raise StateCollapseError(
                        f"AP {k}: state not positive-definite") from exc
                cache.append((xi, None, psi, omega))
            local[k, served] = loglr
        fused = np.where(served_mask, local, 0.0).sum(axis=0)
        for k in range(num_aps):
            served, phis, phis_h, rho, eps = inputs[k]
            xi, tau, psi, omega = cache[k]
            fused_served = np.ascontiguousarray(fused[served])
            if fast:
                residuals[k], estimates[k] = backend.phase_b_iid(
                    ys[k], residuals[k], phis, xi, fused_served, rho, eps,
                    tau, num_devices)
            else:
                residuals[k], estimates[k] = _general_phase_b(
                    ys[k], residuals[k], phis, xi, fused_served, psi, omega,
                    eps, num_devices)
        if early_stop_tol > 0.0 and prev is not None:
            if np.max(np.abs(fused - prev)) < early_stop_tol:
                break
        prev = fused.copy()

    est_array = np.zeros((num_aps, num_devices, num_antennas), dtype=complex)
    for k in range(num_aps):
        est_array[k, inputs[k][0]] = estimates[k]
    return fused, est_array
