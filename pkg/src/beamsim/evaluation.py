"""Misalignment, effective spectral efficiency and method sweeps."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .antenna import ElementPattern, ut_codebook
from .channel import Scene, add_noise, assemble_channel, snr_of
from .dataset import Dataset, pose_features, replay_sample, sample_rng
from .geometry import DeviceDesign
from .selection import (
    CandidateList,
    conditional_scores,
    gifp_candidates,
    hpbs_run,
    plan_panels,
    rank_pairs,
    sense_and_pick,
    sn_scores,
)

T_FRAME = 20e-3
T_SLOT = 0.1e-3
MAX_SLOTS = int(round(T_FRAME / T_SLOT))

NOISE_STREAM = 1
HPBS_STREAM = 2

RESULT_FIELDS = [
    "method",
    "design",
    "n_train",
    "n_rf",
    "N_b",
    "slots",
    "misalignment",
    "mean_se_eff",
    "n_samples",
    "seed",
    "misalignment_picked",
]


def misalignment(chosen_rss, oracle_rss) -> float:
    """Fraction of samples whose chosen pair is strictly worse than the oracle pair."""
    chosen_rss = np.asarray(chosen_rss, dtype=float)
    oracle_rss = np.asarray(oracle_rss, dtype=float)
    if chosen_rss.shape != oracle_rss.shape:
        raise ValueError("length mismatch")
    if chosen_rss.size == 0:
        raise ValueError("empty list")
    return int(np.count_nonzero(chosen_rss < oracle_rss)) / chosen_rss.size


def effective_se(snr, n_b) -> float | np.ndarray:
    """Rate left after spending ``n_b`` slots of the frame on alignment."""
    n_b = np.asarray(n_b)
    if np.any(n_b < 0):
        raise ValueError("negative slot count")
    if np.any(n_b > MAX_SLOTS):
        raise ValueError("frame exhausted")
    snr = np.asarray(snr, dtype=float)
    if np.any(snr < 0):
        raise ValueError("negative SNR")
    frac = (T_FRAME - n_b * T_SLOT) / T_FRAME
    out = np.maximum(frac, 0.0) * np.log2(1.0 + snr)
    return float(out) if out.ndim == 0 else out


@dataclass
class EvalResult:
    method: str
    n_rf: int
    n_b: int
    slots: int
    misalignment: float
    mean_se_eff: float
    n_samples: int
    misalignment_picked: float = float("nan")


@dataclass
class Methods:
    """Trained models and tables, keyed by what each method needs."""

    sn: object = None
    net1: object = None
    net2_ps: object = None
    net2_bs: object = None
    gifp: object = None
    top_k: int | None = None


@dataclass
class SweepOutput:
    results: list[EvalResult]
    violations: list[str] = field(default_factory=list)
    design: str = ""
    n_train: int = 0
    seed: int = 0


def _check_nested(small: CandidateList, big: CandidateList) -> bool:
    return set(small.sensed) <= set(big.sensed)


def sweep(
    methods: list[str],
    models: Methods,
    test: Dataset,
    n_b_list,
    n_rf_list,
    scene: Scene,
    design: DeviceDesign,
    seed: int = 0,
    pattern: ElementPattern | None = None,
    p_ap_dbm: float = 24.0,
    sigma_n_dbm: float = -84.0,
    n_train: int = 0,
) -> SweepOutput:
    """Run every (method, N_RF, N_b) on the test set.

    Each candidate list is built once at the largest budget and truncated, so
    smaller budgets sense a prefix. The noisy RSS table of a sample is drawn
    once from (seed, sample id) and shared by all methods and budgets.

    ``misalignment`` compares the best noiseless RSS inside the sensed set with
    the oracle, so it can only drop as the set grows. ``misalignment_picked``
    and the effective SE use the pair actually reported from noisy sensing.
    """
    n_b_list = sorted(int(b) for b in n_b_list)
    n_rf_list = [int(r) for r in n_rf_list]
    if not n_b_list or not n_rf_list:
        raise ValueError("empty sweep grid")
    if max(n_b_list) > MAX_SLOTS:
        raise ValueError("frame exhausted")
    pattern = pattern or ElementPattern()
    n = len(test)
    n_ap, n_ut = test.n_ap, test.n_ut
    panel_of = test.panel_of
    panel_sizes = list(test.panel_sizes)
    offsets = np.concatenate([[0], np.cumsum(panel_sizes)])
    rss0 = test.rss
    labels = test.labels
    oracle = rss0[np.arange(n), labels[:, 0], labels[:, 1]]
    feats = pose_features(test.positions, test.rotations, scene.room)
    noisy = np.stack(
        [add_noise(rss0[k], sigma_n_dbm, sample_rng(seed, int(test.ids[k]), NOISE_STREAM)) for k in range(n)]
    )
    violations: list[str] = []
    b_max = n_b_list[-1]

    def scores_for(method):
        if method == "sn":
            return sn_scores(models.sn, feats, n_ap, n_ut)
        if method == "mnbs":
            return conditional_scores(models.net1, models.net2_bs, feats, models.top_k)
        if method == "mnps":
            return conditional_scores(models.net1, models.net2_ps, feats, models.top_k)
        return None

    results: list[EvalResult] = []
    cache: dict[tuple[str, int], list[CandidateList]] = {}
    for method in methods:
        if method == "hpbs":
            continue
        table = scores_for(method)
        for n_rf in n_rf_list:
            lists = []
            for k in range(n):
                if method == "gifp":
                    cand = gifp_candidates(models.gifp, test.pose(k), b_max, n_rf, panel_of)
                elif method == "mnps":
                    cand = plan_panels(table[k], b_max, n_rf, panel_sizes, offsets)
                elif method in ("sn", "mnbs"):
                    cand = rank_pairs(table[k], b_max, n_rf, panel_of)
                else:
                    raise ValueError(f"unknown method {method!r}")
                lists.append(cand)
            cache[(method, n_rf)] = lists

    hp = None
    if "hpbs" in methods:
        V = ut_codebook(design)
        picks, slots = [], []
        for k in range(n):
            pose, paths = replay_sample(test, k, scene)
            H = assemble_channel(paths, scene, pose, design, pattern)
            rng = sample_rng(seed, int(test.ids[k]), HPBS_STREAM)
            (i, j), s = hpbs_run(H, V, scene.ap_grid, p_ap_dbm, sigma_n_dbm, rng)
            picks.append(rss0[k, i, j])
            slots.append(s)
        hp = (np.asarray(picks), max(slots))
        if hp[1] > MAX_SLOTS:
            violations.append("hpbs: slot cost exceeds frame")

    for method in methods:
        for n_rf in n_rf_list:
            prev = None
            for n_b in n_b_list:
                if method == "hpbs":
                    picked, used = hp
                    best = picked
                    per_slots = np.full(n, used)
                else:
                    best, picked = np.empty(n), np.empty(n)
                    per_slots = np.empty(n, dtype=np.int64)
                    current = [full.truncate(n_b) for full in cache[(method, n_rf)]]
                    for k, cand in enumerate(current):
                        ii, jj = np.asarray(cand.sensed).T
                        best[k] = rss0[k, ii, jj].max()
                        i, j = sense_and_pick(cand, noisy[k])
                        picked[k] = rss0[k, i, j]
                        per_slots[k] = cand.slots
                        if prev is not None and not _check_nested(prev[k], cand):
                            violations.append(f"{method}: sensed set at N_b={n_b} misses pairs of a smaller budget")
                    prev = current
                    used = int(per_slots.max())
                p_mis = misalignment(best, oracle)
                p_pick = misalignment(picked, oracle)
                se = effective_se(snr_of(picked, sigma_n_dbm), per_slots)
                mean_se = math.fsum(np.atleast_1d(se)) / n
                if not (0.0 <= p_mis <= p_pick <= 1.0) or mean_se < 0:
                    violations.append(f"{method}: metric out of range at N_b={n_b}")
                results.append(EvalResult(method, n_rf, n_b, int(used), p_mis, mean_se, n, p_pick))
    return SweepOutput(results, violations, test.design, n_train, seed)


def write_results_csv(out: SweepOutput, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_FIELDS)
        for r in out.results:
            w.writerow(
                [r.method, out.design, out.n_train, r.n_rf, r.n_b, r.slots, repr(r.misalignment), repr(r.mean_se_eff), r.n_samples, out.seed, repr(r.misalignment_picked)]
            )


def read_results_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def summary_table(results: list[EvalResult]) -> str:
    lines = [f"{'method':<6} {'n_rf':>4} {'N_b':>4} {'slots':>5} {'P_mis':>8} {'P_pick':>8} {'SE_eff':>8}"]
    for r in results:
        lines.append(
            f"{r.method:<6} {r.n_rf:>4} {r.n_b:>4} {r.slots:>5} {r.misalignment:>8.4f}"
            f" {r.misalignment_picked:>8.4f} {r.mean_se_eff:>8.3f}"
        )
    return "\n".join(lines)
