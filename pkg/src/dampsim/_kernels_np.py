"""NumPy fallback for the per-AP AMP hot kernels (i.i.d. Rayleigh path).

Mirrors the API of the compiled extension ``dampsim._kernels``; one of the
two is selected at import time by ``dampsim.backend``.  Under i.i.d. fading
the state is a scaled identity, so the denoiser reduces to scalar
operations on the per-device effective observations.
"""

import numpy as np

BACKEND_NAME = "numpy"

# Log-likelihood ratios are clamped here before exponentiation: keeps the
# activity posterior saturation exact without overflowing double precision.
LOGLR_CLAMP = 700.0


def theta_from_loglr(loglr, eps):
    """Activity posterior theta = 1 / (1 + (1-eps)/eps * exp(loglr))."""
    clipped = np.clip(loglr, -LOGLR_CLAMP, LOGLR_CLAMP)
    return 1.0 / (1.0 + (1.0 - eps) / eps * np.exp(clipped))


def phase_a_iid(z, xhat, phis_h, rho):
    """Effective observations and local log-LRs for one AP iteration.

    z: (L, M) residual; xhat: (S, M) current estimates; phis_h: (S, L)
    conjugate-transposed served pilots; rho: (S,) received strengths.
    Returns (xi (S, M), loglr (S,), tau) where tau is the scalar state.
    """
    num_antennas = z.shape[1]
    tau = float((z.real ** 2 + z.imag ** 2).sum() / z.size)
    xi = xhat + phis_h @ z
    if tau <= 0.0:  # collapsed state; callers raise
        return xi, np.full(rho.shape, np.nan), tau
    energy = (xi.real ** 2 + xi.imag ** 2).sum(axis=1)
    loglr = num_antennas * np.log1p(rho / tau) - rho * energy / (tau * (rho + tau))
    return xi, loglr, tau


def phase_b_iid(y, z, phis, xi, theta_loglr, rho, eps, tau, num_devices):
    """Denoise, accumulate the Onsager matrix and update the residual.

    theta_loglr carries the log-LR that drives the activity posterior:
    the local one for plain distributed AMP, the fused one for the
    per-iteration combining variant.  Returns (z_new, xhat_new).
    """
    pilot_len = y.shape[0]
    num_antennas = y.shape[1]
    theta = theta_from_loglr(theta_loglr, eps)
    psi = rho / (rho + tau)
    omega = rho / (tau * (rho + tau))
    gain = theta * psi
    xhat_new = gain[:, None] * xi
    coeff = gain * (1.0 - theta) * omega
    # transposed Jacobian sum: the residual correction contracts the
    # denoiser derivatives against the antenna index of Z, which is what
    # keeps the recursion equivariant under unitary antenna rotations
    u_t = (xi.conj().T * coeff) @ xi if xi.size else np.zeros(
        (num_antennas, num_antennas), dtype=complex)
    u_t[np.diag_indices(num_antennas)] += gain.sum()
    u_t /= num_devices
    z_new = y - phis @ xhat_new + (num_devices / pilot_len) * (z @ u_t)
    return z_new, xhat_new


def se_accumulate(zv_raw, zs_raw, idx, noise_f, signal_f, psi_t, omega_t,
                  ldiff, eps, acc):
    """Vectorized Monte-Carlo accumulation for one state-evolution batch.

    Mirrors the compiled kernel: float32 interleaved draws are promoted to
    double precision, pushed through the denoiser, and the error outer
    products are added to acc in place.  Returns the sample count.
    """
    zv = np.ascontiguousarray(zv_raw, dtype=np.float32).astype(np.float64)
    xi = zv.view(np.complex128) @ noise_f
    idx = np.asarray(idx, dtype=np.int64)
    x_active = None
    if idx.size:
        zs = np.ascontiguousarray(zs_raw, dtype=np.float32).astype(np.float64)
        x_active = zs.view(np.complex128) @ signal_f
        xi[idx] += x_active
    quad = np.einsum("sm,sm->s", np.conj(xi), xi @ omega_t).real
    err = xi @ psi_t
    if eps < 1.0:
        err *= theta_from_loglr(ldiff - quad, eps)[:, None]
    if idx.size:
        err[idx] -= x_active
    acc += err.T @ np.conj(err)
    return zv.shape[0]


def damp_run_iid(y, phis, phis_h, rho, eps, num_devices, num_iterations,
                 early_tol=0.0):
    """Full local AMP recursion for one AP under i.i.d. fading.

    Returns (xhat (S, M), loglr (S,), tau, iterations_run).  A non-positive
    state trace aborts with FloatingPointError (state collapse).
    """
    z = y.copy()
    xhat = np.zeros((rho.shape[0], y.shape[1]), dtype=complex)
    loglr = np.zeros(rho.shape[0])
    prev = None
    tau = 0.0
    iterations = 0
    for _ in range(num_iterations):
        xi, loglr, tau = phase_a_iid(z, xhat, phis_h, rho)
        if tau <= 0.0:
            raise FloatingPointError("state trace collapsed to zero")
        z, xhat = phase_b_iid(y, z, phis, xi, loglr, rho, eps, tau, num_devices)
        iterations += 1
        if early_tol > 0.0 and prev is not None and loglr.size:
            if np.max(np.abs(loglr - prev)) < early_tol:
                break
        prev = loglr.copy()
    return xhat, loglr, tau, iterations
