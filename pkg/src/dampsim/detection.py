"""LLR fusion, likelihood-ratio thresholding, ROC pooling and the
hard-decision fusion baseline.

The fused per-device statistic is the exact sum of local log-LRs over the
serving APs; thresholding declares a device active when the fused log-LR
falls below log(gamma) (small likelihood ratio of inactive over active
favors activity).  ROC operating points are pooled over trials: every
device decision carries equal weight.
"""

from dataclasses import dataclass

import numpy as np


class ProtocolError(ValueError):
    """A serving AP failed to report an LLR entry it was responsible for."""


# Degenerate per-AP operating rates are clamped away from {0, 1} before the
# fusion weights are formed.
RATE_CLAMP = 1e-6


@dataclass(frozen=True)
class LlrReport:
    """Per-(AP, device) local log likelihood-ratios at one iteration."""

    values: np.ndarray     # (K, N) log-LRs; meaningful where served
    served: np.ndarray     # (K, N) bool mask of reported entries
    iteration: int

    def finite(self):
        return bool(np.isfinite(self.values[self.served]).all())


@dataclass(frozen=True)
class RocCurve:
    """Threshold-parameterized (false-alarm, missed-detection) points."""

    log_gamma: np.ndarray  # (G,) strictly increasing thresholds
    pfa: np.ndarray        # (G,) false-alarm probabilities (non-decreasing)
    pmd: np.ndarray        # (G,) missed-detection probabilities (non-increasing)
    trial_count: int


def default_log_gamma_grid(low=-50.0, high=50.0, count=201):
    """Logarithmically spaced thresholds: uniform grid in log(gamma)."""
    return np.linspace(low, high, count)


def fuse_llrs(report, serving_sets):
    """Per-device sum of local log-LRs over the serving APs (no weighting).

    Raises ProtocolError when a serving AP is missing an entry.
    """
    num_aps, num_devices = report.values.shape
    for n, aps in enumerate(serving_sets):
        if not report.served[np.asarray(aps, dtype=np.intp), n].all():
            raise ProtocolError(
                f"device {n}: missing local LLR from one of its serving APs")
    return np.where(report.served, report.values, 0.0).sum(axis=0)


def decide(loglr, gamma):
    """Declare active iff log-LR < log(gamma); boundary resolves inactive."""
    if np.any(np.asarray(gamma) <= 0):
        raise ValueError("gamma must be positive")
    return np.asarray(loglr) < np.log(gamma)


def decide_log(loglr, log_gamma):
    return np.asarray(loglr) < log_gamma


def roc(scores, activities, log_gamma_grid, trial_count=None):
    """Pooled ROC over trials.

    scores, activities: arrays (pooled over trials) of fused log-LRs and
    ground-truth {0,1} activities.  Raises ValueError when either class is
    empty (undefined rate).
    """
    if isinstance(scores, (list, tuple)):
        scores = np.concatenate([np.ravel(s) for s in scores])
    else:
        scores = np.ravel(scores)
    if isinstance(activities, (list, tuple)):
        activities = np.concatenate([np.ravel(a) for a in activities])
    else:
        activities = np.ravel(activities)
    log_gamma_grid = np.asarray(log_gamma_grid, dtype=float)
    if np.any(np.diff(log_gamma_grid) <= 0):
        raise ValueError("threshold grid must be strictly increasing")
    active = activities.astype(bool)
    num_active = int(active.sum())
    num_inactive = int(active.size - num_active)
    if num_active == 0 or num_inactive == 0:
        raise ValueError("undefined rate: need at least one active and one "
                         "inactive device across the pooled trials")
    s_active = np.sort(scores[active])
    s_inactive = np.sort(scores[~active])
    # decide-active counts via sorted order statistics: score < log_gamma
    fa = np.searchsorted(s_inactive, log_gamma_grid, side="left")
    detected = np.searchsorted(s_active, log_gamma_grid, side="left")
    pfa = fa / num_inactive
    pmd = 1.0 - detected / num_active
    return RocCurve(log_gamma=log_gamma_grid, pfa=pfa, pmd=pmd,
                    trial_count=int(trial_count) if trial_count else 1)


def pooled_error(scores, activities, log_gamma):
    """Fraction of wrong decisions at one threshold, pooled over devices."""
    active = np.ravel(activities).astype(bool)
    decisions = decide_log(np.ravel(scores), log_gamma)
    return float((decisions != active).mean())


def min_pooled_error(scores, activities, log_gamma_grid):
    """Minimum pooled decision error over the threshold grid."""
    errors = [pooled_error(scores, activities, lg) for lg in log_gamma_grid]
    idx = int(np.argmin(errors))
    return errors[idx], float(log_gamma_grid[idx])


def pmd_at_pfa(scores, activities, pfa_target):
    """Missed-detection rate at the threshold meeting a false-alarm target.

    The threshold is the empirical pfa_target-quantile of the inactive-class
    scores, so the realized false-alarm rate matches the target up to one
    pooled sample.
    """
    scores = np.ravel(scores)
    active = np.ravel(activities).astype(bool)
    s_inactive = scores[~active]
    s_active = scores[active]
    if s_inactive.size == 0 or s_active.size == 0:
        raise ValueError("undefined rate: empty class")
    log_gamma = float(np.quantile(s_inactive, pfa_target))
    pmd = float((s_active >= log_gamma).mean())
    return pmd, log_gamma


# ---------------------------------------------------------------------------
# Paired trial-level bootstrap for operating-point comparisons
# ---------------------------------------------------------------------------

def _pmd_histograms(scores_by_trial, acts_by_trial, grid):
    """Per-trial cumulative decision counts over a threshold grid."""
    num_trials = len(scores_by_trial)
    num_points = grid.shape[0]
    fa = np.empty((num_trials, num_points), dtype=np.int64)
    det = np.empty((num_trials, num_points), dtype=np.int64)
    n_inact = np.empty(num_trials, dtype=np.int64)
    n_act = np.empty(num_trials, dtype=np.int64)
    for t, (scores, acts) in enumerate(zip(scores_by_trial, acts_by_trial)):
        active = np.asarray(acts, dtype=bool)
        s_act = np.sort(np.asarray(scores)[active])
        s_inact = np.sort(np.asarray(scores)[~active])
        fa[t] = np.searchsorted(s_inact, grid, side="left")
        det[t] = np.searchsorted(s_act, grid, side="left")
        n_inact[t] = s_inact.size
        n_act[t] = s_act.size
    return fa, det, n_inact, n_act


def _weighted_pmd_at_pfa(weights, fa, det, n_inact, n_act, pfa_target):
    """Pooled pmd at the pfa target for each bootstrap weight vector."""
    pfa_curves = (weights @ fa) / (weights @ n_inact)[:, None]
    pmd_curves = 1.0 - (weights @ det) / (weights @ n_act)[:, None]
    idx = np.sum(pfa_curves < pfa_target, axis=1)
    idx = np.clip(idx, 1, pfa_curves.shape[1] - 1)
    rows = np.arange(pfa_curves.shape[0])
    lo, hi = pfa_curves[rows, idx - 1], pfa_curves[rows, idx]
    frac = np.where(hi > lo, (pfa_target - lo) / np.maximum(hi - lo, 1e-300),
                    0.0)
    frac = np.clip(frac, 0.0, 1.0)
    return (1.0 - frac) * pmd_curves[rows, idx - 1] + frac * pmd_curves[rows, idx]


def compare_pmd_at_pfa(scores_a, scores_b, acts_by_trial, pfa_target,
                       n_boot=2000, seed=0, grid_points=1500):
    """Paired comparison of pooled pmd at a false-alarm target.

    scores_a/scores_b: per-trial fused score arrays for the two systems on
    the same realizations; acts_by_trial: matching truth arrays.  Bootstrap
    resamples trials (identically for both systems).  Returns point
    estimates, the bootstrap distribution of delta = pmd_b - pmd_a, and
    prob_a_worse = P(delta < 0).
    """
    pooled_a = np.concatenate([np.ravel(s) for s in scores_a])
    pooled_b = np.concatenate([np.ravel(s) for s in scores_b])
    acts = np.concatenate([np.ravel(a) for a in acts_by_trial]).astype(bool)
    pmd_a, _ = pmd_at_pfa(pooled_a, acts, pfa_target)
    pmd_b, _ = pmd_at_pfa(pooled_b, acts, pfa_target)

    inact = np.concatenate([pooled_a[~acts], pooled_b[~acts]])
    grid = np.unique(np.quantile(inact, np.linspace(1e-4, 0.8, grid_points)))
    fa_a, det_a, n_in, n_ac = _pmd_histograms(scores_a, acts_by_trial, grid)
    fa_b, det_b, _n_in, _n_ac = _pmd_histograms(scores_b, acts_by_trial, grid)

    num_trials = len(scores_a)
    rng = np.random.default_rng(seed)
    weights = rng.multinomial(num_trials,
                              np.full(num_trials, 1.0 / num_trials),
                              size=n_boot)
    boot_a = _weighted_pmd_at_pfa(weights, fa_a, det_a, n_in, n_ac, pfa_target)
    boot_b = _weighted_pmd_at_pfa(weights, fa_b, det_b, n_in, n_ac, pfa_target)
    delta = boot_b - boot_a
    return {
        "pmd_a": pmd_a,
        "pmd_b": pmd_b,
        "delta_point": pmd_b - pmd_a,
        "delta_q05": float(np.quantile(delta, 0.05)),
        "delta_q95": float(np.quantile(delta, 0.95)),
        "prob_a_worse": float(np.mean(delta < 0.0)),
        "both_zero": bool(pmd_a == 0.0 and pmd_b == 0.0),
    }


def compare_error_rates(errors_a, errors_b, totals, n_boot=2000, seed=0):
    """Paired bootstrap on per-trial wrong-decision counts.

    errors_a/errors_b: per-trial error counts for the two systems on the
    same realizations; totals: per-trial decision counts.  Returns point
    rates and prob_a_worse = P(rate_b - rate_a < 0) under resampling.
    """
    errors_a = np.asarray(errors_a, dtype=float)
    errors_b = np.asarray(errors_b, dtype=float)
    totals = np.asarray(totals, dtype=float)
    num_trials = errors_a.shape[0]
    rng = np.random.default_rng(seed)
    weights = rng.multinomial(num_trials,
                              np.full(num_trials, 1.0 / num_trials),
                              size=n_boot)
    rate_a = (weights @ errors_a) / (weights @ totals)
    rate_b = (weights @ errors_b) / (weights @ totals)
    delta = rate_b - rate_a
    return {
        "rate_a": float(errors_a.sum() / totals.sum()),
        "rate_b": float(errors_b.sum() / totals.sum()),
        "delta_q05": float(np.quantile(delta, 0.05)),
        "delta_q95": float(np.quantile(delta, 0.95)),
        "prob_a_worse": float(np.mean(delta < 0.0)),
    }


# ---------------------------------------------------------------------------
# Hard-decision fusion baseline
# ---------------------------------------------------------------------------

def calibrate_local_detectors(reports, activities, log_gamma_grid):
    """Per-AP minimum-error thresholds and operating rates from held-out runs.

    reports: list of LlrReport (calibration trials); activities: matching
    (N,) truth arrays.  For each AP the threshold minimizing its pooled
    local decision error is selected from the grid, and the (pfa, pmd) at
    that threshold are estimated and clamped away from {0, 1}.
    """
    num_aps = reports[0].values.shape[0]
    log_gamma_grid = np.asarray(log_gamma_grid, dtype=float)
    thresholds = np.empty(num_aps)
    pfa = np.empty(num_aps)
    pmd = np.empty(num_aps)
    for k in range(num_aps):
        vals = []
        truths = []
        for rep, act in zip(reports, activities):
            mask = rep.served[k]
            vals.append(rep.values[k, mask])
            truths.append(np.asarray(act, dtype=bool)[mask])
        vals = np.concatenate(vals)
        truths = np.concatenate(truths)
        active = truths
        n_active = max(int(active.sum()), 1)
        n_inactive = max(int((~active).sum()), 1)
        s_act = np.sort(vals[active])
        s_inact = np.sort(vals[~active])
        fa = np.searchsorted(s_inact, log_gamma_grid, side="left")
        det = np.searchsorted(s_act, log_gamma_grid, side="left")
        errors = (fa + (n_active - det)) / (n_active + n_inactive)
        best = int(np.argmin(errors))
        thresholds[k] = log_gamma_grid[best]
        pfa[k] = np.clip(fa[best] / n_inactive, RATE_CLAMP, 1.0 - RATE_CLAMP)
        pmd[k] = np.clip(1.0 - det[best] / n_active, RATE_CLAMP,
                         1.0 - RATE_CLAMP)
    return thresholds, pfa, pmd


def hard_fusion_baseline(report, serving_sets, thresholds, pfa, pmd, eps):
    """Minimum-error fusion of per-AP hard decisions (weighted vote).

    Each AP supplies the hard decision d_kn = [log-LR < threshold_k]; the
    fusion score adds log((1-pmd_k)/pfa_k) per active vote,
    log(pmd_k/(1-pfa_k)) per inactive vote, plus the prior log-odds
    log(eps/(1-eps)).  Declared active iff the score is positive.
    Returns (decisions (N,), scores (N,)).
    """
    num_aps, num_devices = report.values.shape
    pfa = np.clip(np.asarray(pfa, dtype=float), RATE_CLAMP, 1.0 - RATE_CLAMP)
    pmd = np.clip(np.asarray(pmd, dtype=float), RATE_CLAMP, 1.0 - RATE_CLAMP)
    w_active = np.log((1.0 - pmd) / pfa)
    w_inactive = np.log(pmd / (1.0 - pfa))
    eps_vec = np.broadcast_to(np.asarray(eps, dtype=float), (num_devices,))
    votes = report.values < np.asarray(thresholds)[:, None]
    contrib = np.where(votes, w_active[:, None], w_inactive[:, None])
    scores = np.where(report.served, contrib, 0.0).sum(axis=0)
    scores = scores + np.log(eps_vec / (1.0 - eps_vec))
    for n, aps in enumerate(serving_sets):
        if not report.served[np.asarray(aps, dtype=np.intp), n].all():
            raise ProtocolError(
                f"device {n}: missing local decision from a serving AP")
    return scores > 0.0, scores
