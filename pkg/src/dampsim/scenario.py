"""Network construction and per-trial realization sampling.

A Scenario is an immutable description of one network drop: AP/device
geometry on a wrap-around square, large-scale fading coefficients (LSFCs),
unit-energy pilots, per-link spatial covariances, transmit powers and
cooperation clusters.  Realizations (activities, channels, noise, received
pilot signals) are drawn per Monte-Carlo trial from a caller-owned RNG.
"""

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import allocation
from .allocation import ConfigurationError
from .numerics import complex_normal, covariance_factor

# Physical near-field floor on AP-device distance (km); avoids unbounded
# LSFC at co-located points and affects no statistics materially.
DISTANCE_FLOOR_KM = 0.005


def dbm_to_watts(dbm):
    return 10.0 ** ((dbm - 30.0) / 10.0)


def db_to_linear(db):
    return 10.0 ** (db / 10.0)


@dataclass(frozen=True)
class NetworkConfig:
    """Immutable network parameters; JSON field names match attribute names.

    Units: area_side in km, max_power in dBm, bandwidth in Hz, noise_psd in
    dBm/Hz, shadow_std in dB, pathloss_intercept in dB at 1 km,
    pathloss_exponent_coeff in dB per decade of distance.
    """

    num_aps: int = 20
    antennas_per_ap: int = 3
    num_devices: int = 400
    area_side: float = 2.0
    pilot_length: int = 40
    activity_prob: object = 0.1          # scalar or per-device sequence
    max_power: float = 23.0
    bandwidth: float = 1e6
    noise_psd: float = -169.0
    shadow_std: float = 4.0
    pathloss_intercept: float = -140.6
    pathloss_exponent_coeff: float = -36.7
    fading_model: object = "iid_rayleigh"  # or {"correlated": {"corr": r, "angle": a}}
    ap_placement: str = "grid"             # "grid" or "uniform"
    rng_seed: int = 0

    def __post_init__(self):
        if min(self.num_aps, self.antennas_per_ap, self.num_devices,
               self.pilot_length) < 1:
            raise ConfigurationError("num_aps, antennas_per_ap, num_devices and "
                                     "pilot_length must all be >= 1")
        if self.area_side <= 0:
            raise ConfigurationError("area_side must be positive")
        eps = np.atleast_1d(np.asarray(self.activity_prob, dtype=float))
        if np.any(eps < 0) or np.any(eps > 1):
            raise ConfigurationError("activity_prob must lie in [0, 1]")
        if eps.size not in (1, self.num_devices):
            raise ConfigurationError("activity_prob must be scalar or one value "
                                     "per device")
        if self.ap_placement not in ("grid", "uniform"):
            raise ConfigurationError("ap_placement must be 'grid' or 'uniform'")
        self._parse_fading()

    def _parse_fading(self):
        fm = self.fading_model
        if fm == "iid_rayleigh":
            return "iid", 0.0, 0.0
        if isinstance(fm, dict) and "correlated" in fm:
            spec = fm["correlated"]
            corr = float(spec.get("corr", 0.5))
            angle = float(spec.get("angle", 0.0))
            if not 0.0 <= corr < 1.0:
                raise ConfigurationError("correlation magnitude must be in [0, 1)")
            return "correlated", corr, angle
        raise ConfigurationError(f"unknown fading_model: {fm!r}")

    @property
    def noise_variance_watts(self):
        return dbm_to_watts(self.noise_psd + 10.0 * math.log10(self.bandwidth))

    @property
    def max_power_watts(self):
        return dbm_to_watts(self.max_power)

    @property
    def activity_vector(self):
        return np.broadcast_to(
            np.asarray(self.activity_prob, dtype=float), (self.num_devices,)
        ).copy()

    @classmethod
    def from_dict(cls, data):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown NetworkConfig fields: {sorted(unknown)}")
        data = dict(data)
        if "activity_prob" in data and isinstance(data["activity_prob"], list):
            data["activity_prob"] = tuple(data["activity_prob"])
        return cls(**data)

    @classmethod
    def from_json_file(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        out = {}
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            if isinstance(value, tuple):
                value = list(value)
            out[name] = value
        return out


def grid_shape(num_aps):
    """Balanced rows x cols factorization for AP grid placement.

    Exact squares give the g x g grid; other counts use the most balanced
    rectangular factorization (e.g. 20 -> 4 x 5); primes degrade to 1 x K.
    """
    rows = int(math.isqrt(num_aps))
    while rows > 1 and num_aps % rows != 0:
        rows -= 1
    return rows, num_aps // rows


def build_topology(config, rng):
    """AP positions (grid or uniform random); devices uniform i.i.d.

    Grid placement puts the APs on a balanced rows x cols lattice; uniform
    placement drops them i.i.d. like the devices, which with wrap-around
    models a stationary random deployment.
    """
    side = config.area_side
    if config.ap_placement == "uniform":
        ap_positions = rng.uniform(0.0, side, size=(config.num_aps, 2))
    else:
        rows, cols = grid_shape(config.num_aps)
        xs = (np.arange(cols) + 0.5) * side / cols
        ys = (np.arange(rows) + 0.5) * side / rows
        ap_positions = np.array([(x, y) for x in xs for y in ys])
    device_positions = rng.uniform(0.0, side, size=(config.num_devices, 2))
    return ap_positions, device_positions


def wrap_distance(p, q, side):
    """Torus metric on the square: per-axis min(|d|, side - |d|), then l2."""
    delta = np.abs(np.asarray(p, dtype=float) - np.asarray(q, dtype=float))
    delta = np.minimum(delta, side - delta)
    return float(np.hypot(delta[..., 0], delta[..., 1]))


def wrap_distance_matrix(points_a, points_b, side):
    delta = np.abs(points_a[:, None, :] - points_b[None, :, :])
    delta = np.minimum(delta, side - delta)
    return np.hypot(delta[..., 0], delta[..., 1])


def lsfc_db(distance_km, shadow_db, intercept=-140.6, slope=-36.7):
    """Large-scale fading coefficient in dB at the given distance."""
    d = np.maximum(distance_km, DISTANCE_FLOOR_KM)
    return intercept + slope * np.log10(d) + shadow_db


def generate_pilots(pilot_length, num_devices, rng):
    """Random complex Gaussian pilot columns normalized to unit energy."""
    raw = complex_normal(rng, (pilot_length, num_devices))
    return raw / np.linalg.norm(raw, axis=0, keepdims=True)


def spatial_correlation(num_antennas, corr, angle):
    """Exponential antenna correlation with unit diagonal (trace = M)."""
    idx = np.arange(num_antennas)
    diff = idx[:, None] - idx[None, :]
    return (corr ** np.abs(diff)) * np.exp(1j * angle * diff)


@dataclass(frozen=True)
class Scenario:
    """One immutable network drop; shareable across concurrent trials."""

    config: NetworkConfig
    power_scheme: str
    dcc_size: object                      # None => every AP serves every device
    ap_positions: np.ndarray              # (K, 2) km
    device_positions: np.ndarray          # (N, 2) km
    lsfc: np.ndarray                      # (K, N) linear gains
    pilots: np.ndarray                    # (L, N) complex, unit-energy columns
    corr: np.ndarray                      # (M, M) antenna correlation (I for iid)
    corr_factor: np.ndarray               # (M, M) with F F^H = corr
    powers: np.ndarray                    # (N,) watts
    power_sets: tuple                     # per-device AP index arrays
    dcc_sets: tuple                       # per-device serving AP index arrays
    ap_served: tuple                      # per-AP served device index arrays
    rho: np.ndarray                       # (K, N) received strengths L * p_n * beta
    eps: np.ndarray                       # (N,) activity probabilities
    noise_var: float
    iid: bool = field(default=True)

    @property
    def num_aps(self):
        return self.lsfc.shape[0]

    @property
    def num_devices(self):
        return self.lsfc.shape[1]

    @property
    def num_antennas(self):
        return self.corr.shape[0]

    @property
    def pilot_len(self):
        return self.pilots.shape[0]

    def covariance_tilde(self, k, n):
        """Per-link spatial covariance with trace/M equal to the LSFC."""
        return self.lsfc[k, n] * self.corr

    def effective_covariance(self, k, n):
        """Covariance of the effective (power- and pilot-scaled) channel."""
        return self.rho[k, n] * self.corr

    def served_mask(self):
        mask = np.zeros((self.num_aps, self.num_devices), dtype=bool)
        for k, devices in enumerate(self.ap_served):
            mask[k, devices] = True
        return mask


def build_scenario(config, power_scheme="full", dcc_size=None, rng=None):
    """Compose topology, LSFCs, pilots, covariances, powers and clusters.

    Draw order (topology, shadow fading, pilots) is fixed so that scenarios
    built from the same seed differ only through the deterministic power and
    cluster parameters.  Shadow fading is drawn once per scenario: the LSFC
    is quasi-static across trials.
    """
    if rng is None:
        rng = np.random.default_rng(config.rng_seed)
    ap_positions, device_positions = build_topology(config, rng)
    shadow = rng.normal(0.0, config.shadow_std,
                        size=(config.num_aps, config.num_devices))
    pilots = generate_pilots(config.pilot_length, config.num_devices, rng)

    dists = wrap_distance_matrix(ap_positions, device_positions, config.area_side)
    beta_db = lsfc_db(dists, shadow, config.pathloss_intercept,
                      config.pathloss_exponent_coeff)
    beta = db_to_linear(beta_db)

    kind, corr, angle = config._parse_fading()
    if kind == "iid":
        corr_matrix = np.eye(config.antennas_per_ap, dtype=complex)
        corr_factor = corr_matrix.copy()
    else:
        corr_matrix = spatial_correlation(config.antennas_per_ap, corr, angle)
        corr_factor = covariance_factor(corr_matrix)

    assignment = allocation.compute_power_assignment(
        beta, config.noise_variance_watts, config.max_power_watts, power_scheme)
    clusters = allocation.dcc_assign(beta, dcc_size if dcc_size else config.num_aps)

    rho = config.pilot_length * assignment.powers[None, :] * beta
    return Scenario(
        config=config,
        power_scheme=power_scheme,
        dcc_size=dcc_size,
        ap_positions=ap_positions,
        device_positions=device_positions,
        lsfc=beta,
        pilots=pilots,
        corr=corr_matrix,
        corr_factor=corr_factor,
        powers=assignment.powers,
        power_sets=assignment.sets,
        dcc_sets=clusters.device_sets,
        ap_served=clusters.ap_sets,
        rho=rho,
        eps=config.activity_vector,
        noise_var=config.noise_variance_watts,
        iid=(kind == "iid"),
    )


def with_power_scheme(scenario, power_scheme):
    """Same drop with powers recomputed for a different allocation scheme."""
    assignment = allocation.compute_power_assignment(
        scenario.lsfc, scenario.noise_var, scenario.config.max_power_watts,
        power_scheme)
    rho = scenario.pilot_len * assignment.powers[None, :] * scenario.lsfc
    return replace(scenario, power_scheme=power_scheme, powers=assignment.powers,
                   power_sets=assignment.sets, rho=rho)


def with_dcc_size(scenario, dcc_size):
    """Same drop with serving clusters recomputed for a different size."""
    clusters = allocation.dcc_assign(
        scenario.lsfc, dcc_size if dcc_size else scenario.num_aps)
    return replace(scenario, dcc_size=dcc_size, dcc_sets=clusters.device_sets,
                   ap_served=clusters.ap_sets)


@dataclass(frozen=True)
class Realization:
    """One Monte-Carlo draw: activities, effective channels, noise, pilots out."""

    activities: np.ndarray   # (N,) in {0, 1}
    channels: np.ndarray     # (K, N, M) effective channels sqrt(L p_n) h~_kn
    noise: np.ndarray        # (K, L, M)
    received: np.ndarray     # (K, L, M)


def sample_realization(scenario, rng):
    """Draw activities, channels and noise, then assemble the received pilots.

    The draw order (activities, raw channels, noise) is fixed: scenarios
    that share a seed and differ only in power allocation consume identical
    randomness, which is what makes scheme comparisons paired.
    """
    cfg = scenario.config
    num_aps, num_devices = scenario.num_aps, scenario.num_devices
    num_antennas, pilot_len = scenario.num_antennas, scenario.pilot_len

    activities = (rng.random(num_devices) < scenario.eps).astype(np.int8)
    raw = complex_normal(rng, (num_aps, num_devices, num_antennas))
    if not scenario.iid:
        raw = raw @ scenario.corr_factor.T
    htilde = raw * np.sqrt(scenario.lsfc)[:, :, None]
    scale = np.sqrt(pilot_len * scenario.powers)
    channels = htilde * scale[None, :, None]
    noise = math.sqrt(scenario.noise_var) * complex_normal(
        rng, (num_aps, pilot_len, num_antennas))
    received = assemble_received(scenario.pilots, activities, channels, noise)
    return Realization(activities=activities, channels=channels, noise=noise,
                       received=received)


def assemble_received(pilots, activities, channels, noise):
    """Y_k = sum_n a_n phi_n h_kn^T + W_k for every AP."""
    weighted = activities.astype(float)[None, :, None] * channels
    return np.einsum("ln,knm->klm", pilots, weighted) + noise
