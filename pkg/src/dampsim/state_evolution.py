"""Monte-Carlo evaluation of the AMP state evolution and its structure checks.

The analytic state recursion replaces the per-coordinate denoiser error by
its expectation over the Bernoulli-Gaussian signal prior and the Gaussian
effective noise.  Here that expectation is estimated by plain Monte Carlo
with a shared sample budget split evenly across devices, and two structural
properties of the iterates are measured:

* block_offmass: relative Frobenius mass outside the prescribed diagonal
  blocks (zero in the exact recursion when every prior is block-diagonal);
* identity_deviation: per-block distance from a scaled identity (zero in
  the exact recursion under i.i.d. per-block priors).

Both decay as 1/sqrt(samples), which is what the verification suite checks.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels_np, backend
from .numerics import (covariance_factor, hermitian_inverse, logdet,
                       symmetrize)
from .amp_core import theta_from_loglr

# Eigenvalue floor applied to the Monte-Carlo state estimate so sampling
# noise cannot destroy positive-definiteness.
EIGEN_FLOOR = 1e-12


def block_slices(block_sizes):
    edges = np.concatenate([[0], np.cumsum(block_sizes)])
    return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def block_offmass(sigma, block_sizes):
    """Frobenius mass outside the diagonal blocks over total Frobenius mass."""
    sigma = np.asarray(sigma)
    if int(np.sum(block_sizes)) != sigma.shape[0]:
        raise ValueError("block sizes must sum to the matrix dimension")
    mask = np.zeros(sigma.shape, dtype=bool)
    for sl in block_slices(block_sizes):
        mask[sl, sl] = True
    total = np.linalg.norm(sigma)
    if total == 0.0:
        return 0.0
    return float(np.linalg.norm(np.where(mask, 0.0, sigma)) / total)


def identity_deviation(block):
    """Relative Frobenius distance from the trace-matched scaled identity."""
    block = np.asarray(block)
    dim = block.shape[0]
    tau = np.trace(block) / dim
    total = np.linalg.norm(block)
    if total == 0.0:
        return 0.0
    return float(np.linalg.norm(block - tau * np.eye(dim)) / total)


@dataclass(frozen=True)
class SeConfig:
    """State-evolution run description.

    priors: sequence of (R_n, eps_n) with R_n Hermitian PSD of dimension
    sum(block_sizes); noise_var and pilot_length set the recursion scale;
    mc_samples is the total per-iteration sample budget shared across
    devices.
    """

    priors: tuple
    noise_var: float
    pilot_length: int
    block_sizes: tuple
    mc_samples: int
    iterations: int
    rng_seed: int = 0

    def __post_init__(self):
        if self.mc_samples < 1 or self.iterations < 0 or self.pilot_length < 1:
            raise ValueError("mc_samples and pilot_length must be >= 1, "
                             "iterations >= 0")
        dim = int(np.sum(self.block_sizes))
        for i, (r, eps) in enumerate(self.priors):
            r = np.asarray(r)
            if r.shape != (dim, dim):
                raise ValueError(f"prior {i}: covariance dimension {r.shape} "
                                 f"does not match block sizes (total {dim})")
            if not 0.0 <= eps <= 1.0:
                raise ValueError(f"prior {i}: activity probability out of range")
            if block_offmass(r, self.block_sizes) > 1e-12:
                raise ValueError(f"prior {i}: covariance is not block-diagonal "
                                 "with the declared block sizes")

    @property
    def dim(self):
        return int(np.sum(self.block_sizes))

    def samples_per_device(self):
        return max(1, round(self.mc_samples / len(self.priors)))


def se_initial(cfg):
    """Initial state: noise_var * I + (1/L) * sum_n R_n."""
    sigma = cfg.noise_var * np.eye(cfg.dim, dtype=complex)
    for r, _eps in cfg.priors:
        sigma = sigma + np.asarray(r, dtype=complex) / cfg.pilot_length
    return sigma


def _floor_state(sigma):
    w, v = np.linalg.eigh(symmetrize(sigma))
    w = np.maximum(w, EIGEN_FLOOR)
    return (v * w[None, :]) @ np.conj(v.T)


# Stack-buffer limit of the compiled accumulation kernel.
_KERNEL_MAXDIM = 16


def se_step_mc(sigma, cfg, rng, batch_size=1 << 15):
    """One Monte-Carlo state-evolution step.

    For each device, samples (x, v) with x Bernoulli(eps)-Gaussian(R) and
    v ~ CN(0, Sigma), pushes x + v through the MMSE denoiser and averages
    the outer product of the denoiser error.  The per-device sample count
    is the shared budget divided by the number of devices.  Gaussian draws
    are generated in float32 (their quantization is far below the Monte-
    Carlo noise floor); all arithmetic runs in double precision.
    """
    sigma = np.asarray(sigma, dtype=complex)
    dim = cfg.dim
    inv_sqrt2 = 1.0 / math.sqrt(2.0)
    noise_f = np.ascontiguousarray(covariance_factor(sigma).T) * inv_sqrt2
    logdet_sigma = logdet(sigma)
    sigma_inv = hermitian_inverse(sigma)
    per_device = cfg.samples_per_device()
    accumulate = (backend.se_accumulate if dim <= _KERNEL_MAXDIM
                  else _kernels_np.se_accumulate)

    acc = np.zeros((dim, dim), dtype=complex)
    for r, eps in cfg.priors:
        if eps <= 0.0:
            continue  # x = 0 and theta = 0: the denoiser error vanishes
        r = np.asarray(r, dtype=complex)
        total = r + sigma
        logdet_total = logdet(total)
        total_inv = hermitian_inverse(total)
        psi_t = np.ascontiguousarray((r @ total_inv).T)
        omega_t = np.ascontiguousarray((sigma_inv - total_inv).T)
        ldiff = logdet_total - logdet_sigma
        signal_f = np.ascontiguousarray(covariance_factor(r).T) * inv_sqrt2

        device_acc = np.zeros((dim, dim), dtype=complex)
        remaining = per_device
        while remaining > 0:
            batch = min(batch_size, remaining)
            remaining -= batch
            zv = rng.standard_normal((batch, 2 * dim), dtype=np.float32)
            idx = np.flatnonzero(rng.random(batch, dtype=np.float32) < eps)
            zs = rng.standard_normal((idx.size, 2 * dim), dtype=np.float32)
            accumulate(zv, zs, idx, noise_f, signal_f, psi_t, omega_t, ldiff,
                       float(eps), device_acc)
        acc += device_acc / per_device

    sigma_new = cfg.noise_var * np.eye(dim, dtype=complex) + acc / cfg.pilot_length
    return _floor_state(symmetrize(sigma_new))


def run_state_evolution(cfg, rng=None):
    """Initial state plus cfg.iterations Monte-Carlo steps (full history)."""
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    history = [se_initial(cfg)]
    for _ in range(cfg.iterations):
        history.append(se_step_mc(history[-1], cfg, rng))
    return history


def make_block_priors(num_blocks, block_size, num_devices, rng, eps=0.15,
                      corr=0.0, angle=0.0, gain_sigma=0.7):
    """Random block-diagonal priors for the structure verification runs.

    Per (device, block) gains are log-normal; within-block correlation is
    exponential with the given magnitude and phase progression (corr=0
    gives scaled-identity blocks).
    """
    from .scenario import spatial_correlation

    base = (spatial_correlation(block_size, corr, angle) if corr > 0.0
            else np.eye(block_size, dtype=complex))
    dim = num_blocks * block_size
    priors = []
    for _ in range(num_devices):
        gains = np.exp(gain_sigma * rng.standard_normal(num_blocks))
        r = np.zeros((dim, dim), dtype=complex)
        for b, sl in enumerate(block_slices([block_size] * num_blocks)):
            r[sl, sl] = gains[b] * base
        priors.append((r, eps))
    return tuple(priors)


def write_history_csv(path, history, block_sizes, mc_samples):
    """Per-iteration structure metrics: off-block mass and per-block
    identity deviation."""
    slices = block_slices(block_sizes)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = (["iteration", "block_offmass"]
                  + [f"identity_deviation_{b}" for b in range(len(slices))]
                  + ["mc_samples"])
        writer.writerow(header)
        for it, sigma in enumerate(history):
            row = [it, repr(block_offmass(sigma, block_sizes))]
            row += [repr(identity_deviation(sigma[sl, sl])) for sl in slices]
            row.append(mc_samples)
            writer.writerow(row)
