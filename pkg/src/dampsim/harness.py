"""Experiment runner: seeded paired Monte-Carlo trials, scheme sweeps,
CSV persistence and the property-suite entry points.

Pairing contract: the realization consumed by every (scheme, power, dcc, L)
combination in trial t is drawn from the same per-trial seed, so scheme and
clustering comparisons are exactly paired and power-scheme comparisons
share activities, raw channels and noise bit-for-bit.
"""

import csv
import hashlib
import json
import math
import os
import time
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__, allocation, amp_core, backend, detection
from . import scenario as scenario_mod
from . import state_evolution as se
from .allocation import ConfigurationError
from .scenario import NetworkConfig

SCHEMES = ("camp", "damp", "hard_fusion")

LLR_COLUMNS = ("trial", "scheme", "power", "dcc", "L", "ap", "device", "iter",
               "logllr")
ROC_COLUMNS = ("scheme", "power_scheme", "dcc_mode", "L", "gamma", "pfa",
               "pmd", "trials")
TIMING_COLUMNS = ("scheme", "dcc", "L", "trial", "seconds")

# Experiments abort with a nonzero exit when more than this fraction of
# trials fail.
FAILURE_BUDGET = 0.01


class ExperimentError(RuntimeError):
    """Too many failed trials or an unusable experiment configuration."""


def trial_seed(master_seed, trial_index, label="realization"):
    """Deterministic per-trial seed stream, independent of scheduling."""
    return np.random.SeedSequence(
        (int(master_seed), int(trial_index), zlib.crc32(label.encode())))


def _normalize_dcc(entry):
    """'all_aps' or {'top_c': C} (or a bare int C) -> (label, size-or-None)."""
    if entry in ("all_aps", None):
        return "all_aps", None
    if isinstance(entry, dict) and "top_c" in entry:
        size = int(entry["top_c"])
    elif isinstance(entry, int):
        size = entry
    elif isinstance(entry, str) and entry.startswith("top_c"):
        size = int(entry[len("top_c"):])
    else:
        raise ConfigurationError(f"unknown dcc mode {entry!r}")
    if size < 1:
        raise ConfigurationError("dcc cluster size must be >= 1")
    return f"top_c{size}", size


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment matrix; every list-like field is swept."""

    network: NetworkConfig = field(default_factory=NetworkConfig)
    schemes: tuple = ("camp", "damp")
    power_schemes: tuple = ("full",)
    dcc: tuple = ("all_aps",)
    pilot_lengths: tuple = (40,)
    trials: int = 200
    amp_iterations: int = 20
    gamma_grid: tuple = (-50.0, 50.0, 201)
    output_dir: str = "out"
    workers: int = 1
    seed: int = 0
    early_stop_tol: float = 0.0
    calibration_trials: int = 100
    # Redraw the network drop (positions, shadowing) every trial, seeded
    # from the master seed: Monte-Carlo over deployments rather than over
    # activities/channels only.
    redraw_drop: bool = False

    def __post_init__(self):
        if self.trials < 1 or self.amp_iterations < 1:
            raise ConfigurationError("trials and amp_iterations must be >= 1")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ConfigurationError(f"unknown scheme {s!r}")
        for p in self.power_schemes:
            if p not in allocation.POWER_SCHEMES:
                raise ConfigurationError(f"unknown power scheme {p!r}")
        for entry in self.dcc:
            _normalize_dcc(entry)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if "network" in data:
            data["network"] = NetworkConfig.from_dict(data["network"])
        for key in ("schemes", "power_schemes", "pilot_lengths", "dcc"):
            if key in data and isinstance(data[key], list):
                data[key] = tuple(
                    tuple(v) if isinstance(v, list) else v for v in data[key])
        if "dcc" in data and not isinstance(data["dcc"], tuple):
            data["dcc"] = (data["dcc"],)
        if "gamma_grid" in data and isinstance(data["gamma_grid"], list):
            data["gamma_grid"] = tuple(data["gamma_grid"])
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(
                f"unknown ExperimentConfig fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json_file(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def dcc_modes(self):
        return tuple(_normalize_dcc(entry) for entry in self.dcc)

    def log_gamma_grid(self):
        low, high, count = self.gamma_grid
        return detection.default_log_gamma_grid(low, high, int(count))

    def to_dict(self):
        out = {
            "network": self.network.to_dict(),
            "schemes": list(self.schemes),
            "power_schemes": list(self.power_schemes),
            "dcc": [list(d) if isinstance(d, tuple) else d for d in self.dcc],
            "pilot_lengths": list(self.pilot_lengths),
            "trials": self.trials,
            "amp_iterations": self.amp_iterations,
            "gamma_grid": list(self.gamma_grid),
            "output_dir": self.output_dir,
            "workers": self.workers,
            "seed": self.seed,
            "early_stop_tol": self.early_stop_tol,
            "calibration_trials": self.calibration_trials,
        }
        return out


def content_hash(obj):
    """Stable hash of a JSON-serializable object (canonical encoding)."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha1(blob).hexdigest()


# ---------------------------------------------------------------------------
# Scenario construction for the sweep
# ---------------------------------------------------------------------------

def build_scenarios(config):
    """One Scenario per (power, dcc, L); geometry and shadowing shared.

    The base drop per pilot length is built from the network seed (topology
    and shadowing are drawn before pilots, so they coincide across L); power
    and clustering variants are deterministic reparameterizations.
    """
    scenarios = {}
    for pilot_len in config.pilot_lengths:
        net = replace(config.network, pilot_length=int(pilot_len))
        base = scenario_mod.build_scenario(net, power_scheme="full")
        for power in config.power_schemes:
            powered = (base if power == "full"
                       else scenario_mod.with_power_scheme(base, power))
            for label, size in config.dcc_modes():
                scenarios[(power, label, int(pilot_len))] = \
                    scenario_mod.with_dcc_size(powered, size)
    return scenarios


def _draw_trial(base_scenario, rng):
    """Raw per-trial draws in the order sample_realization consumes them."""
    num_aps = base_scenario.num_aps
    num_devices = base_scenario.num_devices
    num_antennas = base_scenario.num_antennas
    activities = (rng.random(num_devices) < base_scenario.eps).astype(np.int8)
    raw = scenario_mod.complex_normal(
        rng, (num_aps, num_devices, num_antennas))
    if not base_scenario.iid:
        raw = raw @ base_scenario.corr_factor.T
    htilde = raw * np.sqrt(base_scenario.lsfc)[:, :, None]
    noise = math.sqrt(base_scenario.noise_var) * scenario_mod.complex_normal(
        rng, (num_aps, base_scenario.pilot_len, num_antennas))
    return activities, htilde, noise


def _realize(scen, activities, htilde, noise):
    scale = np.sqrt(scen.pilot_len * scen.powers)
    channels = htilde * scale[None, :, None]
    received = scenario_mod.assemble_received(scen.pilots, activities,
                                              channels, noise)
    return scenario_mod.Realization(activities=activities, channels=channels,
                                    noise=noise, received=received)


# ---------------------------------------------------------------------------
# Paired trial engine
# ---------------------------------------------------------------------------

_WORKER_CTX = {}


def _worker_init(payload):
    _WORKER_CTX.clear()
    _WORKER_CTX.update(payload)


def _evaluate_trial(args):
    """Evaluate every configured (scheme, power, dcc, L) on one trial."""
    trial_index, seed_label = args
    ctx = _WORKER_CTX
    config = ctx["config"]
    scenarios = ctx["scenarios"]
    keep_local = ctx["keep_local"]
    out = {"trial": trial_index, "activities": {}, "fused": {}, "local": {},
           "served": {}, "iters": {}, "timing": {}}
    try:
        if config.redraw_drop:
            drop_seed = int(trial_seed(config.seed, trial_index,
                                       seed_label + "-drop").generate_state(1)[0])
            net = replace(config.network, rng_seed=drop_seed)
            scenarios = build_scenarios(replace(config, network=net))
        for pilot_len in config.pilot_lengths:
            pilot_len = int(pilot_len)
            rng_seed = trial_seed(config.seed, trial_index, seed_label)
            first_key = (config.power_schemes[0], config.dcc_modes()[0][0],
                         pilot_len)
            base = scenarios[first_key]
            activities, htilde, noise = _draw_trial(
                base, np.random.default_rng(rng_seed))
            out["activities"][pilot_len] = activities
            for power in config.power_schemes:
                realization = None
                for label, _size in config.dcc_modes():
                    scen = scenarios[(power, label, pilot_len)]
                    if realization is None:
                        realization = _realize(scen, activities, htilde, noise)
                    for scheme in ctx["solver_schemes"]:
                        key = (scheme, power, label, pilot_len)
                        tic = time.perf_counter()
                        if scheme == "damp":
                            report, _est = amp_core.run_damp(
                                realization, scen, config.amp_iterations,
                                config.early_stop_tol)
                            fused = detection.fuse_llrs(report, scen.dcc_sets)
                            iters = report.iteration
                            if key in keep_local:
                                out["local"][key] = report.values
                                out["served"][(label, pilot_len)] = \
                                    report.served
                        else:
                            fused, _est = amp_core.run_camp(
                                realization, scen, config.amp_iterations,
                                config.early_stop_tol)
                            iters = config.amp_iterations
                        toc = time.perf_counter()
                        out["fused"][key] = fused
                        out["iters"][key] = iters
                        if power == config.power_schemes[0]:
                            out["timing"][(scheme, label, pilot_len)] = toc - tic
    except (amp_core.StateCollapseError, ConfigurationError) as exc:
        return {"trial": trial_index, "error": f"{type(exc).__name__}: {exc}"}
    return out


@dataclass
class TrialBatch:
    """In-memory results of a paired sweep (shared by files and analyses)."""

    config: ExperimentConfig
    scenarios: dict
    results: list               # per-successful-trial dicts from _evaluate_trial
    failures: list              # {"trial": t, "error": msg}

    def trials_ok(self):
        return [r["trial"] for r in self.results]

    def activities(self, pilot_len):
        return [r["activities"][int(pilot_len)] for r in self.results]

    def fused(self, key):
        return [r["fused"][key] for r in self.results]

    def local(self, key):
        return [r["local"][key] for r in self.results]

    def served(self, result, label, pilot_len):
        """Served mask for one trial (falls back to the shared scenario)."""
        mask = result.get("served", {}).get((label, int(pilot_len)))
        if mask is None:
            for power in self.config.power_schemes:
                scen = self.scenarios.get((power, label, int(pilot_len)))
                if scen is not None:
                    return scen.served_mask()
        return mask

    def fused_by_trial(self, key):
        return [r["fused"][key] for r in self.results]

    def activities_by_trial(self, pilot_len):
        return [r["activities"][int(pilot_len)] for r in self.results]

    def pooled(self, key):
        """(scores, activities) pooled over trials for one configuration."""
        pilot_len = key[3]
        scores = np.concatenate(self.fused(key))
        acts = np.concatenate(self.activities(pilot_len))
        return scores, acts


def run_trials(config, seed_label="realization", solver_schemes=None,
               keep_local=(), scenarios=None):
    """Run the paired sweep, trial-parallel, results merged in trial order."""
    if scenarios is None:
        scenarios = build_scenarios(config)
    if solver_schemes is None:
        solver_schemes = tuple(s for s in ("camp", "damp")
                               if s in config.schemes)
        if "hard_fusion" in config.schemes and "damp" not in solver_schemes:
            solver_schemes = solver_schemes + ("damp",)
    payload = {
        "config": config,
        "scenarios": scenarios,
        "solver_schemes": solver_schemes,
        "keep_local": frozenset(keep_local),
    }
    tasks = [(t, seed_label) for t in range(config.trials)]
    if config.workers and config.workers > 1:
        import multiprocessing

        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(config.workers, initializer=_worker_init,
                      initargs=(payload,)) as pool:
            raw = pool.map(_evaluate_trial, tasks, chunksize=1)
    else:
        _worker_init(payload)
        raw = [_evaluate_trial(task) for task in tasks]
    results = [r for r in raw if "error" not in r]
    failures = [{"trial": r["trial"], "error": r["error"]}
                for r in raw if "error" in r]
    return TrialBatch(config=config, scenarios=scenarios, results=results,
                      failures=failures)


def hard_fusion_keys(config):
    """dAMP keys whose local LLRs feed the hard-decision baseline."""
    if "hard_fusion" not in config.schemes:
        return set()
    return {("damp", power, label, int(pilot_len))
            for power in config.power_schemes
            for label, _size in config.dcc_modes()
            for pilot_len in config.pilot_lengths}


def calibrate_hard_fusion(config, scenarios):
    """Per-(power, dcc, L) AP thresholds and rates from a held-out run.

    The calibration stream is seeded independently of the evaluation stream,
    so calibrated rates never peek at the evaluated realizations.
    """
    keys = hard_fusion_keys(config)
    if not keys:
        return {}
    calib_cfg = replace(config, trials=config.calibration_trials,
                        schemes=("damp",))
    batch = run_trials(calib_cfg, seed_label="calibration",
                       solver_schemes=("damp",), keep_local=keys,
                       scenarios=scenarios)
    grid = config.log_gamma_grid()
    calibration = {}
    for key in keys:
        _scheme, power, label, pilot_len = key
        reports = [detection.LlrReport(values=r["local"][key],
                                       served=batch.served(r, label, pilot_len),
                                       iteration=0)
                   for r in batch.results]
        acts = batch.activities(pilot_len)
        calibration[(power, label, pilot_len)] = \
            detection.calibrate_local_detectors(reports, acts, grid)
    return calibration


def hard_fusion_scores(batch, key, calibration):
    """Negated fusion scores (LLR convention: small favors active)."""
    _scheme, power, label, pilot_len = key
    eps = batch.config.network.activity_vector
    thresholds, pfa, pmd = calibration[(power, label, pilot_len)]
    damp_key = ("damp", power, label, pilot_len)
    scores = []
    for result in batch.results:
        served = batch.served(result, label, pilot_len)
        report = detection.LlrReport(values=result["local"][damp_key],
                                     served=served, iteration=0)
        serving_sets = [np.flatnonzero(served[:, n])
                        for n in range(served.shape[1])]
        _decisions, score = detection.hard_fusion_baseline(
            report, serving_sets, thresholds, pfa, pmd, eps)
        scores.append(-score)
    return scores


# ---------------------------------------------------------------------------
# File outputs
# ---------------------------------------------------------------------------

def _write_llr_csv(path, config, batch, calibration):
    eps = config.network.activity_vector
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LLR_COLUMNS)
        for result in batch.results:
            trial = result["trial"]
            for pilot_len in config.pilot_lengths:
                pilot_len = int(pilot_len)
                for power in config.power_schemes:
                    for label, _size in config.dcc_modes():
                        for scheme in config.schemes:
                            key = (scheme, power, label, pilot_len)
                            base = (trial, scheme, power, label, pilot_len)
                            if scheme == "damp":
                                values = result["local"].get(key)
                                if values is None:
                                    continue
                                served = batch.served(result, label, pilot_len)
                                iters = result["iters"][key]
                                for k, n in zip(*np.nonzero(served)):
                                    writer.writerow(base + (
                                        int(k), int(n), iters,
                                        repr(float(values[k, n]))))
                            elif scheme == "camp":
                                fused = result["fused"].get(key)
                                if fused is None:
                                    continue
                                iters = result["iters"][key]
                                for n, value in enumerate(fused):
                                    writer.writerow(base + (
                                        -1, n, iters, repr(float(value))))
                            else:  # hard_fusion: negated vote score
                                dkey = ("damp", power, label, pilot_len)
                                values = result["local"].get(dkey)
                                if values is None or not calibration:
                                    continue
                                skey = (power, label, pilot_len)
                                served = batch.served(result, label, pilot_len)
                                thresholds, pfa, pmd = calibration[skey]
                                report = detection.LlrReport(
                                    values=values, served=served, iteration=0)
                                sets = [np.flatnonzero(served[:, n])
                                        for n in range(served.shape[1])]
                                _dec, score = detection.hard_fusion_baseline(
                                    report, sets, thresholds, pfa, pmd, eps)
                                for n, value in enumerate(-score):
                                    writer.writerow(base + (
                                        -1, n, 0, repr(float(value))))


def _write_roc_csv(path, config, batch):
    grid = config.log_gamma_grid()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ROC_COLUMNS)
        if not batch.results:
            return
        for pilot_len in config.pilot_lengths:
            pilot_len = int(pilot_len)
            for power in config.power_schemes:
                for label, _size in config.dcc_modes():
                    for scheme in config.schemes:
                        if scheme == "hard_fusion":
                            continue  # single-operating-point method
                        key = (scheme, power, label, pilot_len)
                        scores, acts = batch.pooled(key)
                        try:
                            curve = detection.roc(scores, acts, grid,
                                                  len(batch.results))
                        except ValueError:
                            continue  # undefined rate: one class is empty
                        for lg, pfa, pmd in zip(curve.log_gamma, curve.pfa,
                                                curve.pmd):
                            writer.writerow((
                                scheme, power, label, pilot_len,
                                repr(float(np.exp(lg))), repr(float(pfa)),
                                repr(float(pmd)), len(batch.results)))


def _write_timing_csv(path, config, batch):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TIMING_COLUMNS)
        for result in batch.results:
            for (scheme, label, pilot_len), seconds in \
                    sorted(result.get("timing", {}).items()):
                writer.writerow((scheme, label, pilot_len, result["trial"],
                                 repr(float(seconds))))


def run_experiment(config):
    """Full experiment: paired trials, CSV outputs, manifest.

    Returns the manifest dict.  Raises ExperimentError (after writing all
    outputs) when more than FAILURE_BUDGET of the trials failed.
    """
    os.makedirs(config.output_dir, exist_ok=True)
    scenarios = build_scenarios(config)
    calibration = calibrate_hard_fusion(config, scenarios)
    keep_local = set()
    if "damp" in config.schemes or "hard_fusion" in config.schemes:
        keep_local = {("damp", power, label, int(pilot_len))
                      for power in config.power_schemes
                      for label, _size in config.dcc_modes()
                      for pilot_len in config.pilot_lengths}
    batch = run_trials(config, keep_local=keep_local, scenarios=scenarios)

    _write_llr_csv(os.path.join(config.output_dir, "llr.csv"), config, batch,
                   calibration)
    _write_roc_csv(os.path.join(config.output_dir, "roc.csv"), config, batch)
    _write_timing_csv(os.path.join(config.output_dir, "timing.csv"), config,
                      batch)

    resolved = config.to_dict()
    manifest = {
        "config": resolved,
        "content_hash": content_hash(resolved),
        "backend": backend.backend_name(),
        "version": __version__,
        "trials_requested": config.trials,
        "trials_completed": len(batch.results),
        "failures": batch.failures,
        "calibration": {
            f"{power}/{label}/L{pl}": {
                "thresholds_log": [float(x) for x in thr],
                "pfa": [float(x) for x in pfa],
                "pmd": [float(x) for x in pmd],
            }
            for (power, label, pl), (thr, pfa, pmd) in calibration.items()
        },
        "calibration_trials": (config.calibration_trials
                               if calibration else 0),
    }
    with open(os.path.join(config.output_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    failure_rate = len(batch.failures) / config.trials
    if failure_rate > FAILURE_BUDGET:
        raise ExperimentError(
            f"{len(batch.failures)} of {config.trials} trials failed "
            f"({failure_rate:.1%} > {FAILURE_BUDGET:.0%} budget); see manifest")
    return manifest


def measure_runtime(config, trials=None):
    """Single-worker wall-clock per (scheme, dcc, L) per trial.

    Uses the first configured power scheme; rows match timing.csv.
    """
    cfg = replace(config, workers=1,
                  trials=int(trials) if trials else config.trials,
                  power_schemes=(config.power_schemes[0],))
    batch = run_trials(cfg)
    rows = []
    for result in batch.results:
        for (scheme, label, pilot_len), seconds in \
                sorted(result.get("timing", {}).items()):
            rows.append((scheme, label, pilot_len, result["trial"], seconds))
    return rows


def write_timing_rows(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TIMING_COLUMNS)
        for scheme, label, pilot_len, trial, seconds in rows:
            writer.writerow((scheme, label, pilot_len, trial,
                             repr(float(seconds))))
