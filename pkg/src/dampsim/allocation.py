"""User-centric power allocation and dynamic cooperation clustering.

Power allocation: each device is associated with the APs whose LSFC exceeds
a threshold (falling back to its strongest AP), a per-device coefficient is
computed under one of three schemes, and transmit powers equalize the
coefficients up to the power budget.  Clustering: each device is served by
its C strongest APs.

All tie-breaks (argmax, top-C) resolve to the lowest AP index so results
are reproducible.
"""

from dataclasses import dataclass

import numpy as np


class ConfigurationError(ValueError):
    """Invalid or inconsistent configuration."""


POWER_SCHEMES = ("full", "master", "avg")

# Received-SNR association threshold: p_max * beta_th is 6 dB over noise.
DEFAULT_THRESHOLD_SNR_DB = 6.0


@dataclass(frozen=True)
class PowerAssignment:
    scheme: str
    threshold: np.ndarray      # (N,) linear gain threshold per device
    sets: tuple                # per-device associated AP index arrays
    eligible: np.ndarray       # (N,) True when the threshold set was nonempty
    coefficients: np.ndarray   # (N,) scheme coefficients s_n
    powers: np.ndarray         # (N,) watts


@dataclass(frozen=True)
class ClusterAssignment:
    dcc_size: int
    device_sets: tuple         # per-device serving AP index arrays
    ap_sets: tuple             # per-AP served device index arrays


def snr_threshold_gain(noise_var_watts, p_max_watts,
                       snr_db=DEFAULT_THRESHOLD_SNR_DB):
    """LSFC threshold such that full-power reception sits snr_db over noise."""
    return noise_var_watts * 10.0 ** (snr_db / 10.0) / p_max_watts


def associate_power_aps(beta, beta_th):
    """Per-device AP sets: APs with LSFC above threshold, else the argmax AP.

    Returns (sets, eligible) where eligible marks devices whose threshold
    set was nonempty before the argmax fallback.
    """
    beta = np.asarray(beta, dtype=float)
    num_aps, num_devices = beta.shape
    thresholds = np.broadcast_to(np.asarray(beta_th, dtype=float), (num_devices,))
    sets = []
    eligible = np.zeros(num_devices, dtype=bool)
    for n in range(num_devices):
        above = np.flatnonzero(beta[:, n] > thresholds[n])
        best = int(np.argmax(beta[:, n]))  # ties -> lowest index
        eligible[n] = above.size > 0
        members = np.union1d(above, [best])
        sets.append(members.astype(np.intp))
    return tuple(sets), eligible


def power_coefficients(scheme, beta, sets):
    """Scheme coefficient per device: 1, max LSFC, or mean LSFC over its set."""
    if scheme not in POWER_SCHEMES:
        raise ConfigurationError(f"unknown power scheme {scheme!r}; "
                                 f"expected one of {POWER_SCHEMES}")
    beta = np.asarray(beta, dtype=float)
    num_devices = beta.shape[1]
    if scheme == "full":
        return np.ones(num_devices)
    out = np.empty(num_devices)
    for n, members in enumerate(sets):
        gains = beta[members, n]
        out[n] = gains.max() if scheme == "master" else gains.mean()
    return out


def allocate_power(coefficients, eligible, p_max):
    """p_n = min(s_min / s_n, 1) * p_max with s_min over eligible devices."""
    coefficients = np.asarray(coefficients, dtype=float)
    eligible = np.asarray(eligible, dtype=bool)
    if not eligible.any():
        raise ConfigurationError(
            "no device exceeds the LSFC threshold at any AP; the association "
            "threshold is too high for this scenario")
    s_min = coefficients[eligible].min()
    return np.minimum(s_min / coefficients, 1.0) * p_max


def compute_power_assignment(beta, noise_var_watts, p_max_watts, scheme,
                             snr_db=DEFAULT_THRESHOLD_SNR_DB):
    """Full pipeline: association, coefficients, powers."""
    beta = np.asarray(beta, dtype=float)
    beta_th = np.full(beta.shape[1],
                      snr_threshold_gain(noise_var_watts, p_max_watts, snr_db))
    sets, eligible = associate_power_aps(beta, beta_th)
    coefficients = power_coefficients(scheme, beta, sets)
    powers = allocate_power(coefficients, eligible, p_max_watts)
    return PowerAssignment(scheme=scheme, threshold=beta_th, sets=sets,
                           eligible=eligible, coefficients=coefficients,
                           powers=powers)


def dcc_assign(beta, dcc_size):
    """Serve each device by its min(C, K) strongest APs (ties: lower index)."""
    if dcc_size < 1:
        raise ConfigurationError("cluster size must be >= 1")
    beta = np.asarray(beta, dtype=float)
    num_aps, num_devices = beta.shape
    count = min(int(dcc_size), num_aps)
    device_sets = []
    served = [[] for _ in range(num_aps)]
    for n in range(num_devices):
        order = np.argsort(-beta[:, n], kind="stable")
        chosen = np.sort(order[:count]).astype(np.intp)
        device_sets.append(chosen)
        for k in chosen:
            served[int(k)].append(n)
    ap_sets = tuple(np.asarray(devs, dtype=np.intp) for devs in served)
    return ClusterAssignment(dcc_size=count, device_sets=tuple(device_sets),
                             ap_sets=ap_sets)
