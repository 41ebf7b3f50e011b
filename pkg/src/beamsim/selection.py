"""Candidate lists for beam alignment: learned selectors and baselines.

Score tables are indexed ``[i, j]`` (AP beam, UT combiner) or ``[i, p]`` (AP
beam, UT panel). Rankings are by descending score with ties broken by the
smaller flattened index, so every list is deterministic.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .antenna import Codebook
from .channel import ChannelMatrix, dbm_to_watt
from .geometry import Pose, orientation_mode
from .mlp import MlpModel, forward


@dataclass
class CandidateList:
    """Ranked beam pairs (``kind="pair"``) or beam-panel pairs (``kind="panel"``).

    ``sensed`` lists the (i, j) pairs actually measured and ``sensed_slot`` the
    time slot of each; for pair lists it equals ``entries``.
    """

    entries: list[tuple[int, int]]
    scores: list[float]
    slot_of: list[int]
    slots: int
    n_rf: int
    kind: str = "pair"
    sensed: list[tuple[int, int]] = field(default_factory=list)
    sensed_slot: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.kind == "pair" and not self.sensed:
            self.sensed = list(self.entries)
            self.sensed_slot = list(self.slot_of)

    def __len__(self) -> int:
        return len(self.entries)

    def truncate(self, n_slots: int) -> "CandidateList":
        """The list this planner would produce with a budget of ``n_slots``."""
        keep = [k for k, s in enumerate(self.slot_of) if s < n_slots]
        keep_s = [k for k, s in enumerate(self.sensed_slot) if s < n_slots]
        return CandidateList(
            [self.entries[k] for k in keep],
            [self.scores[k] for k in keep],
            [self.slot_of[k] for k in keep],
            min(self.slots, n_slots),
            self.n_rf,
            self.kind,
            [self.sensed[k] for k in keep_s],
            [self.sensed_slot[k] for k in keep_s],
        )


def _order(scores: np.ndarray) -> np.ndarray:
    return np.argsort(-scores.ravel(), kind="stable")


def rank_pairs(scores: np.ndarray, n_b: int, n_rf: int, panel_of) -> CandidateList:
    """Top ``n_b`` pairs by score, each slot expanded to ``n_rf`` panels.

    Each primary pair (i, j) is joined by the best-scoring pairs (i, j') from
    panels not yet used in that slot, one per panel, until the slot holds
    ``n_rf`` panels. Pairs already in the list are never repeated, so the list
    for ``n_b`` is a prefix of the list for ``n_b + 1``. Negative scores mark
    excluded pairs.
    """
    if n_b < 1:
        raise ValueError("N_b must be >= 1")
    panel_of = np.asarray(panel_of)
    n_panels = int(panel_of.max()) + 1
    if not 1 <= n_rf <= n_panels:
        raise ValueError(f"N_RF must be in [1, {n_panels}]")
    scores = np.asarray(scores, dtype=float)
    n_ut = scores.shape[1]
    seen: set[tuple[int, int]] = set()
    entries, vals, slot_of = [], [], []
    slot = 0
    for k in _order(scores):
        if slot == n_b:
            break
        i, j = divmod(int(k), n_ut)
        if scores[i, j] < 0:
            break
        if (i, j) in seen:
            continue
        seen.add((i, j))
        entries.append((i, j))
        vals.append(float(scores[i, j]))
        slot_of.append(slot)
        if n_rf > 1:
            used = {int(panel_of[j])}
            for j2 in np.argsort(-scores[i], kind="stable"):
                if len(used) == n_rf:
                    break
                j2 = int(j2)
                p2 = int(panel_of[j2])
                if p2 in used or (i, j2) in seen or scores[i, j2] < 0:
                    continue
                seen.add((i, j2))
                entries.append((i, j2))
                vals.append(float(scores[i, j2]))
                slot_of.append(slot)
                used.add(p2)
        slot += 1
    return CandidateList(entries, vals, slot_of, slot, n_rf)


def oracle_pair(rss: np.ndarray, panel_of) -> tuple[int, int, int]:
    """Argmax of a noiseless RSS table; ties go to the smallest (i, j)."""
    rss = np.asarray(rss, dtype=float)
    if rss.size == 0:
        raise ValueError("empty RSS table")
    k = int(np.argmax(rss))
    i, j = divmod(k, rss.shape[1])
    if not rss[i, j] > 0:
        raise ValueError("degenerate sample")
    return i, j, int(np.asarray(panel_of)[j])


def sense_and_pick(candidates: CandidateList, rss_noisy: np.ndarray) -> tuple[int, int]:
    """Pair with the highest measured RSS among the sensed pairs (first wins ties)."""
    pairs = candidates.sensed
    if not pairs:
        raise ValueError("empty candidate list")
    ii, jj = np.asarray(pairs).T
    k = int(np.argmax(np.asarray(rss_noisy)[ii, jj]))
    return pairs[k]


# ---------------------------------------------------------------------------
# learned selectors


def _require_trained(*models: MlpModel):
    for m in models:
        if not m.trained:
            raise ValueError(f"untrained model {m.name!r}")


def sn_scores(model: MlpModel, features: np.ndarray, n_ap: int, n_ut: int) -> np.ndarray:
    """Estimated P_{i,j}; ``features`` (n, 6) -> (n, n_ap, n_ut)."""
    _require_trained(model)
    return forward(model, features).reshape(-1, n_ap, n_ut)


def conditional_scores(net1: MlpModel, net2: MlpModel, features: np.ndarray, top_k: int | None = None):
    """``P_i * P_{.|i}`` for every AP beam; rows outside the top-``top_k`` beams are -1.

    ``features`` are (n, 6) pose features; net1 sees the first three.
    Returns an array (n, N_AP, out_dim).
    """
    _require_trained(net1, net2)
    features = np.atleast_2d(features)
    n = len(features)
    p_i = forward(net1, features[:, :3])
    n_ap = p_i.shape[1]
    rep = np.repeat(features, n_ap, axis=0)
    beams = np.tile(np.arange(n_ap), n)
    p_cond = forward(net2, rep, beams).reshape(n, n_ap, -1)
    joint = p_i[:, :, None] * p_cond
    if top_k is not None and top_k < n_ap:
        order = np.argsort(-p_i, axis=1, kind="stable")
        mask = np.ones_like(p_i, dtype=bool)
        np.put_along_axis(mask, order[:, :top_k], False, axis=1)
        joint[mask] = -1.0
    return joint


def sn_candidates(model, features, n_b, n_rf, panel_of) -> CandidateList:
    n_ut = len(panel_of)
    n_ap = model.output_dim // n_ut
    scores = sn_scores(model, np.atleast_2d(features), n_ap, n_ut)[0]
    return rank_pairs(scores, n_b, n_rf, panel_of)


def mnbs_candidates(net1, net2, features, n_b, n_rf, panel_of, top_k=None) -> CandidateList:
    if net2.output_dim != len(panel_of):
        raise ValueError("NET_II output must have N_UT entries")
    scores = conditional_scores(net1, net2, features, top_k)[0]
    return rank_pairs(scores, n_b, n_rf, panel_of)


def plan_panels(joint: np.ndarray, budget: int, n_rf: int, panel_sizes, panel_offsets) -> CandidateList:
    """Sensing plan over (AP beam, panel) scores within a slot budget.

    A group is one AP beam with up to ``n_rf`` panels, sensed in parallel;
    its cost is the largest panel in the group. The last group is cut short
    when the budget runs out: each of its panels scans only its first beams.
    """
    panel_sizes = list(panel_sizes)
    if budget < min(panel_sizes):
        raise ValueError("slot budget smaller than smallest panel")
    n_p = len(panel_sizes)
    if not 1 <= n_rf <= n_p:
        raise ValueError(f"N_RF must be in [1, {n_p}]")
    joint = np.asarray(joint, dtype=float)
    seen: set[tuple[int, int]] = set()
    entries, vals, slot_of, sensed, sensed_slot = [], [], [], [], []
    slot = 0
    for k in _order(joint):
        if slot >= budget:
            break
        i, p = divmod(int(k), n_p)
        if joint[i, p] < 0:
            break
        if (i, p) in seen:
            continue
        group = [p]
        seen.add((i, p))
        if n_rf > 1:
            for p2 in np.argsort(-joint[i], kind="stable"):
                if len(group) == n_rf:
                    break
                p2 = int(p2)
                if (i, p2) in seen or joint[i, p2] < 0:
                    continue
                group.append(p2)
                seen.add((i, p2))
        scan = min(max(panel_sizes[q] for q in group), budget - slot)
        for q in group:
            entries.append((i, q))
            vals.append(float(joint[i, q]))
            slot_of.append(slot)
            for m in range(min(scan, panel_sizes[q])):
                sensed.append((i, int(panel_offsets[q]) + m))
                sensed_slot.append(slot + m)
        slot += scan
    return CandidateList(entries, vals, slot_of, slot, n_rf, "panel", sensed, sensed_slot)


def mnps_candidates(net1, net2, features, n_b_slots, n_rf, panel_sizes, top_k=None) -> CandidateList:
    if net2.output_dim != len(panel_sizes):
        raise ValueError("NET_II output must have N_P entries")
    joint = conditional_scores(net1, net2, features, top_k)[0]
    offsets = np.concatenate([[0], np.cumsum(panel_sizes)])
    return plan_panels(joint, n_b_slots, n_rf, panel_sizes, offsets)


def joint_from_conditional(p_i: np.ndarray, p_cond: np.ndarray) -> np.ndarray:
    """Reference ``P_{i,x} = P_{x|i} P_i`` by explicit enumeration."""
    out = np.empty_like(p_cond, dtype=float)
    for i in range(p_cond.shape[0]):
        for x in range(p_cond.shape[1]):
            out[i, x] = p_cond[i, x] * p_i[i]
    return out


# ---------------------------------------------------------------------------
# generalized inverse fingerprinting


@dataclass
class GifpTable:
    room: tuple[float, float, float]
    n_ap: int
    n_ut: int
    cell: float = 0.5
    n_sectors: int = 8
    split_modes: bool = True
    min_samples: int = 5
    counts: dict = field(default_factory=dict)
    global_counts: np.ndarray | None = None

    def bin_of(self, position, rotation) -> tuple[int, int, int, int]:
        x, y = float(position[0]), float(position[1])
        if not (0.0 <= x <= self.room[0] and 0.0 <= y <= self.room[1] and 0.0 <= position[2] <= self.room[2]):
            raise ValueError("pose out of bounds")
        cx = min(int(x // self.cell), max(int(math.ceil(self.room[0] / self.cell)) - 1, 0))
        cy = min(int(y // self.cell), max(int(math.ceil(self.room[1] / self.cell)) - 1, 0))
        a = (float(rotation[0]) + math.pi) % (2 * math.pi)
        sector = min(int(a / (2 * math.pi / self.n_sectors)), self.n_sectors - 1)
        mode = (0 if orientation_mode(rotation) == "portrait" else 1) if self.split_modes else 0
        return cx, cy, sector, mode

    def ranking(self, key) -> list[int]:
        """Pair indices of one bin, most frequent first."""
        c = self.counts.get(key)
        if c is None:
            return []
        nz = np.nonzero(c)[0]
        return [int(k) for k in nz[np.argsort(-c[nz], kind="stable")]]

    def scores(self, position, rotation) -> np.ndarray:
        g = self.global_counts.astype(float)
        c = self.counts.get(self.bin_of(position, rotation))
        if c is None or c.sum() < self.min_samples:
            s = g
        else:
            # bin frequency first, global frequency breaks ties and fills the tail
            s = c + g / (g.sum() + 1.0)
        return s.reshape(self.n_ap, self.n_ut)


def gifp_build(positions, rotations, labels, n_ap, n_ut, room, **kw) -> GifpTable:
    """Count oracle pairs per (x, y cell, azimuth sector, mode) bin."""
    positions = np.asarray(positions)
    if len(positions) == 0:
        raise ValueError("empty training set")
    table = GifpTable(tuple(room), n_ap, n_ut, **kw)
    table.global_counts = np.zeros(n_ap * n_ut, dtype=np.int64)
    for pos, rot, (i, j) in zip(positions, rotations, labels):
        key = table.bin_of(pos, rot)
        k = int(i) * n_ut + int(j)
        table.counts.setdefault(key, np.zeros(n_ap * n_ut, dtype=np.int64))[k] += 1
        table.global_counts[k] += 1
    return table


def gifp_candidates(table: GifpTable, pose: Pose, n_b, n_rf, panel_of) -> CandidateList:
    return rank_pairs(table.scores(pose.position, pose.rotation), n_b, n_rf, panel_of)


# ---------------------------------------------------------------------------
# hierarchical panel-beam search


def _levels(ap_grid) -> int:
    nx, ny, nz = ap_grid
    levels = int(round(math.log2(ny))) if ny > 0 else -1
    if nx != 1 or ny != nz or 2**levels != ny:
        raise ValueError("hierarchical AP search needs a {1, 2^L, 2^L} array")
    return levels


def ap_wide_beams(level: int, ap_grid=(1, 8, 8)) -> np.ndarray:
    """AP beams of tree level ``level`` (rows), ordered row-major over (k_z, k_y).

    Only the first 2^level elements along y and z are active. Beam k of a
    level points at the centre of the finest-level beams it covers, so the
    deepest level is the full DFT codebook.
    """
    top = _levels(ap_grid)
    n_full = ap_grid[1]
    n = 2**level
    r = n_full // n
    k = np.arange(n)
    arg = 2.0 * k / n + (r - 1) / n_full
    w = np.zeros((n, n_full), dtype=complex)
    w[:, :n] = np.exp(1j * np.pi * np.outer(arg, np.arange(n))) / math.sqrt(n)
    if level > top:
        raise ValueError("level deeper than the array")
    return np.einsum("zq,yr->zyqr", w, w).reshape(n * n, n_full * n_full)


def hpbs_run(
    H: ChannelMatrix,
    ut_codebook: Codebook,
    ap_grid=(1, 8, 8),
    p_ap_dbm: float = 24.0,
    sigma_n_dbm: float = -84.0,
    rng: np.random.Generator | None = None,
):
    """Three-stage search; returns ((i, j), slots). ``rng=None`` is noiseless.

    1. AP single element, one single-element measurement per UT panel.
    2. AP single element, sweep of the chosen panel's codebook.
    3. Quad-tree AP refinement with the chosen combiner, 4 beams per level.
    """
    amp = math.sqrt(float(dbm_to_watt(p_ap_dbm)))
    sigma = math.sqrt(float(dbm_to_watt(sigma_n_dbm)))

    def measure(p, v, U):
        y = amp * (U @ (H[p].T @ v.conj()))
        if rng is not None:
            z = rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)
            y = y + sigma / math.sqrt(2.0) * np.linalg.norm(v) * z
        return np.abs(y) ** 2

    levels = _levels(ap_grid)
    wide = ap_wide_beams(0, ap_grid)
    n_panels = len(H)
    stage1 = []
    for p in range(n_panels):
        v = np.zeros(H[p].shape[0], dtype=complex)
        v[0] = 1.0
        stage1.append(measure(p, v, wide)[0])
    p_hat = int(np.argmax(stage1))
    block = ut_codebook.blocks[p_hat]
    stage2 = [measure(p_hat, v, wide)[0] for v in block]
    j_local = int(np.argmax(stage2))
    j_hat = ut_codebook.panel_slice(p_hat).start + j_local
    v_hat = block[j_local]
    kz = ky = 0
    for level in range(1, levels + 1):
        beams = ap_wide_beams(level, ap_grid)
        n = 2**level
        kids = [(2 * kz + a) * n + (2 * ky + b) for a in (0, 1) for b in (0, 1)]
        r = measure(p_hat, v_hat, beams[kids])
        kz, ky = divmod(kids[int(np.argmax(r))], n)
    i_hat = kz * ap_grid[1] + ky
    slots = n_panels + len(block) + 4 * levels
    return (i_hat, j_hat), slots


def write_candidates_csv(cand: CandidateList, path) -> None:
    """CSV rows: rank, i, j (or p), score, slot index."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "i", "j" if cand.kind == "pair" else "p", "score", "slot"])
        for r, ((i, x), s, t) in enumerate(zip(cand.entries, cand.scores, cand.slot_of)):
            w.writerow([r, i, x, repr(s), t])
