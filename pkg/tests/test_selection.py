import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beamsim.antenna import ElementPattern, ap_panel, dft_codebook, ut_codebook
from beamsim.channel import Path, Scene, assemble_channel, measure_rss
from beamsim.geometry import Pose, edge_design, edge_face_design
from beamsim.mlp import build_net1, build_net2, build_sn, forward
from beamsim.selection import (
    CandidateList,
    ap_wide_beams,
    conditional_scores,
    gifp_build,
    gifp_candidates,
    hpbs_run,
    joint_from_conditional,
    mnbs_candidates,
    mnps_candidates,
    oracle_pair,
    plan_panels,
    rank_pairs,
    sense_and_pick,
    sn_candidates,
    write_candidates_csv,
)

EF = edge_face_design()
PANEL_OF = ut_codebook(EF).panel_of
SIZES = EF.panel_sizes
OFFSETS = np.concatenate([[0], np.cumsum(SIZES)])
ROOM = (7.0, 7.0, 3.0)


def trained(model):
    model.trained = True
    return model


def brute_argmax(table):
    best, arg = -np.inf, None
    for i in range(table.shape[0]):
        for j in range(table.shape[1]):
            if table[i, j] > best:
                best, arg = table[i, j], (i, j)
    return arg


def test_oracle_unique_max():
    r = np.zeros((8, 20)) + 1e-9
    r[3, 7] = 1.0
    assert oracle_pair(r, PANEL_OF) == (3, 7, 1)


def test_oracle_tie_rule():
    r = np.full((4, 4), 0.1)
    r[1, 2] = r[2, 1] = 1.0
    assert oracle_pair(r, [0, 0, 1, 1])[:2] == (1, 2)


def test_oracle_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(200):
        r = rng.integers(1, 30, (6, 20)).astype(float)  # integer values make ties common
        assert oracle_pair(r, PANEL_OF)[:2] == brute_argmax(r)


def test_oracle_degenerate():
    with pytest.raises(ValueError, match="degenerate"):
        oracle_pair(np.zeros((2, 2)), [0, 1])


def test_pick_single_candidate():
    c = CandidateList([(2, 3)], [0.5], [0], 1, 1)
    assert sense_and_pick(c, np.random.default_rng(0).random((4, 20))) == (2, 3)


def test_pick_all_pairs_is_oracle():
    rng = np.random.default_rng(1)
    r = rng.random((8, 20))
    c = rank_pairs(np.ones((8, 20)), 160, 1, PANEL_OF)
    assert sense_and_pick(c, r) == oracle_pair(r, PANEL_OF)[:2]


def test_pick_restricted_argmax():
    rng = np.random.default_rng(2)
    for _ in range(200):
        r = rng.integers(0, 10, (8, 20)).astype(float)
        c = rank_pairs(rng.random((8, 20)), int(rng.integers(1, 30)), int(rng.integers(1, 6)), PANEL_OF)
        best, arg = -1.0, None
        for i, j in c.sensed:
            if r[i, j] > best:
                best, arg = r[i, j], (i, j)
        assert sense_and_pick(c, r) == arg
        assert arg in c.sensed


def test_pick_empty():
    with pytest.raises(ValueError):
        sense_and_pick(CandidateList([], [], [], 0, 1), np.ones((2, 2)))


def test_rank_single_rf_is_top_nb():
    rng = np.random.default_rng(3)
    s = rng.random((8, 20))
    c = rank_pairs(s, 10, 1, PANEL_OF)
    ref = sorted(((i, j) for i in range(8) for j in range(20)), key=lambda ij: -s[ij])[:10]
    assert c.entries == ref
    assert c.slot_of == list(range(10)) and c.slots == 10


def test_rank_uniform_ties_ascending():
    c = rank_pairs(np.ones((4, 20)), 6, 1, PANEL_OF)
    assert c.entries == [(0, j) for j in range(6)]


def test_rank_five_rf_distinct_panels_per_slot():
    rng = np.random.default_rng(4)
    for _ in range(50):
        c = rank_pairs(rng.random((8, 20)), 7, 5, PANEL_OF)
        assert c.slots == 7
        for slot in range(7):
            members = [e for e, s in zip(c.entries, c.slot_of) if s == slot]
            assert len(members) == 5
            assert len({PANEL_OF[j] for _, j in members}) == 5
            assert len({i for i, _ in members}) == 1
        assert len(set(c.entries)) == len(c.entries)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 30), st.sampled_from([1, 2, 5]))
def test_rank_prefix_monotone(seed, n_b, n_rf):
    s = np.random.default_rng(seed).random((8, 20))
    small = rank_pairs(s, n_b, n_rf, PANEL_OF)
    big = rank_pairs(s, n_b + 1, n_rf, PANEL_OF)
    assert big.entries[: len(small)] == small.entries
    assert big.truncate(n_b).entries == small.entries


def test_rank_argument_errors():
    with pytest.raises(ValueError):
        rank_pairs(np.ones((2, 20)), 0, 1, PANEL_OF)
    with pytest.raises(ValueError):
        rank_pairs(np.ones((2, 20)), 3, 6, PANEL_OF)


def test_plan_single_panel_mass():
    joint = np.zeros((64, 5))
    joint[0, 1] = 1.0
    c = plan_panels(joint, 4, 1, SIZES, OFFSETS)
    assert c.entries == [(0, 1)] and c.slots == 4
    assert c.sensed == [(0, 4), (0, 5), (0, 6), (0, 7)]


def test_plan_full_scan_under_one_beam():
    joint = np.zeros((64, 5))
    joint[7] = [0.1, 0.3, 0.2, 0.25, 0.15]
    c = plan_panels(joint, 4, 5, SIZES, OFFSETS)
    assert c.slots == 4
    assert sorted(c.sensed) == [(7, j) for j in range(20)]


def test_plan_truncates_last_scan():
    rng = np.random.default_rng(5)
    joint = rng.random((64, 5))
    c = plan_panels(joint, 6, 1, SIZES, OFFSETS)
    assert c.slots == 6 and len(c.entries) == 2 and len(c.sensed) == 6
    (i, p) = c.entries[1]
    assert c.sensed[4:] == [(i, OFFSETS[p]), (i, OFFSETS[p] + 1)]
    with pytest.raises(ValueError):
        plan_panels(joint, 3, 1, SIZES, OFFSETS)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(4, 60), st.sampled_from([1, 3, 5]))
def test_plan_truncate_matches_smaller_budget(seed, budget, n_rf):
    joint = np.random.default_rng(seed).random((16, 5))
    big = plan_panels(joint, budget + 7, n_rf, SIZES, OFFSETS)
    small = plan_panels(joint, budget, n_rf, SIZES, OFFSETS)
    cut = big.truncate(budget)
    assert cut.sensed == small.sensed and cut.entries == small.entries and cut.slots == small.slots
    assert len(set(small.sensed)) == len(small.sensed)


def test_joint_matches_product_oracle():
    rng = np.random.default_rng(6)
    net1, net2 = trained(build_net1(16, 2, 8, seed=1)), trained(build_net2(16, 5, 2, 8, seed=2))
    feats = rng.uniform(-1, 1, (3, 6))
    joint = conditional_scores(net1, net2, feats)
    for k in range(3):
        p_i = forward(net1, feats[k : k + 1, :3])[0]
        p_c = np.stack([forward(net2, feats[k : k + 1], [i])[0] for i in range(16)])
        np.testing.assert_allclose(joint[k], joint_from_conditional(p_i, p_c), rtol=1e-13)


@pytest.mark.parametrize("c", [0.5, 2.0, 8.0, 3.0])
def test_ranking_invariant_to_net1_scale(c):
    rng = np.random.default_rng(7)
    p_i = rng.random(16)
    p_c = rng.random((16, 20))
    a = rank_pairs(p_i[:, None] * p_c, 25, 3, PANEL_OF)
    b = rank_pairs((c * p_i)[:, None] * p_c, 25, 3, PANEL_OF)
    assert a.entries == b.entries


def test_ranking_equals_product_sort():
    rng = np.random.default_rng(8)
    p_i, p_c = rng.random(8), rng.random((8, 20))
    joint = joint_from_conditional(p_i, p_c)
    c = rank_pairs(p_i[:, None] * p_c, 160, 1, PANEL_OF)
    ref = sorted(((i, j) for i in range(8) for j in range(20)), key=lambda ij: (-joint[ij], ij))
    assert c.entries == ref
    assert set(c.entries) == {(i, j) for i in range(8) for j in range(20)}


def test_concentrated_net1_shares_beam():
    net1 = trained(build_net1(16, 2, 8, seed=1))
    net1.params[-1]["W"][:] = 0.0
    net1.params[-1]["b"][:] = 0.0
    net1.params[-1]["b"][3] = 60.0
    net2 = trained(build_net2(16, 20, 2, 8, seed=2))
    c = mnbs_candidates(net1, net2, np.zeros((1, 6)), 12, 1, PANEL_OF)
    assert {i for i, _ in c.entries} == {3}
    c = mnbs_candidates(net1, net2, np.zeros((1, 6)), 12, 5, PANEL_OF, top_k=1)
    assert {i for i, _ in c.entries} == {3}


def test_top_k_masks_other_beams():
    net1, net2 = trained(build_net1(16, 2, 8, seed=1)), trained(build_net2(16, 5, 2, 8, seed=2))
    feats = np.random.default_rng(0).uniform(-1, 1, (2, 6))
    j = conditional_scores(net1, net2, feats, top_k=4)
    assert np.all(np.sum(np.all(j >= 0, axis=2), axis=1) == 4)


def test_learned_candidate_wrappers():
    feats = np.zeros((1, 6))
    sn = trained(build_sn(8, 20, 2, 8, seed=0))
    assert sn_candidates(sn, feats, 5, 5, PANEL_OF).slots == 5
    net1, net2 = trained(build_net1(8, 2, 8)), trained(build_net2(8, 5, 2, 8))
    assert mnps_candidates(net1, net2, feats, 10, 2, SIZES).slots == 10
    with pytest.raises(ValueError):
        mnps_candidates(net1, trained(build_net2(8, 20, 2, 8)), feats, 10, 2, SIZES)


def test_untrained_model_rejected():
    with pytest.raises(ValueError, match="untrained"):
        sn_candidates(build_sn(8, 20, 1, 4), np.zeros((1, 6)), 5, 1, PANEL_OF)


def test_gifp_bin_first_candidate():
    rng = np.random.default_rng(9)
    n = 400
    pos = np.column_stack([rng.uniform(0, 7, n), rng.uniform(0, 7, n), np.full(n, 1.0)])
    rot = np.column_stack([rng.uniform(-math.pi, math.pi, n), np.zeros(n), rng.uniform(0, 1.5, n)])
    labels = rng.integers(0, 8, (n, 2)) * [1, 2]
    # bin B: cell (2, 3), first sector, portrait
    pos[:10] = [1.2, 1.7, 1.0]
    rot[:10] = [-3.0, 0.0, 0.5]
    labels[:10] = (2, 5)
    t = gifp_build(pos, rot, labels, 8, 20, ROOM)
    c = gifp_candidates(t, Pose((1.1, 1.6, 1.2), (-2.9, 0.0, 0.2)), 3, 1, PANEL_OF)
    assert c.entries[0] == (2, 5)


def test_gifp_empty_bin_falls_back_to_global():
    pos = np.array([[0.2, 0.2, 1.0]] * 6 + [[3.2, 3.2, 1.0]] * 3)
    rot = np.zeros((9, 3))
    labels = np.array([(1, 1)] * 6 + [(0, 2)] * 3)
    t = gifp_build(pos, rot, labels, 4, 20, ROOM)
    empty = gifp_candidates(t, Pose((6.5, 6.5, 1.0)), 4, 1, PANEL_OF)
    sparse = gifp_candidates(t, Pose((3.2, 3.2, 1.0)), 4, 1, PANEL_OF)
    glob = [(1, 1), (0, 2), (0, 0), (0, 1)]
    assert empty.entries == glob
    assert sparse.entries == glob  # 3 samples < 5: still the global ranking


def test_gifp_single_bin_equals_prior_ranking():
    rng = np.random.default_rng(10)
    n = 500
    pos = np.column_stack([rng.uniform(0, 7, n), rng.uniform(0, 7, n), np.full(n, 1.2)])
    rot = np.column_stack([rng.uniform(-3, 3, n), np.zeros(n), np.zeros(n)])
    labels = np.column_stack([rng.integers(0, 8, n), rng.integers(0, 20, n)])
    t = gifp_build(pos, rot, labels, 8, 20, ROOM, cell=7.0, n_sectors=1, split_modes=False)
    freq = Counter(int(i) * 20 + int(j) for i, j in labels)
    prior = sorted(range(160), key=lambda k: (-freq.get(k, 0), k))
    c = gifp_candidates(t, Pose((3.0, 3.0, 1.0), (1.0, -0.3, 0.0)), 40, 1, PANEL_OF)
    assert [i * 20 + j for i, j in c.entries] == prior[:40]


def test_gifp_out_of_bounds():
    t = gifp_build([[1, 1, 1]], [[0, 0, 0]], [(0, 0)], 4, 20, ROOM)
    with pytest.raises(ValueError):
        t.bin_of((8.0, 1.0, 1.0), (0, 0, 0))
    with pytest.raises(ValueError):
        gifp_build(np.zeros((0, 3)), np.zeros((0, 3)), [], 4, 20, ROOM)


def test_wide_beams_deepest_level_is_dft():
    np.testing.assert_allclose(ap_wide_beams(3), dft_codebook(ap_panel()).vectors, atol=1e-14)
    for level in range(4):
        w = ap_wide_beams(level)
        assert w.shape == (4**level, 64)
        np.testing.assert_allclose(np.linalg.norm(w, axis=1), 1.0, atol=1e-14)


def on_grid_channel(ky, kz, design=EF):
    # AP: cos(theta) = 2 kz / 8, sin(theta) sin(phi) = 2 ky / 8 (wrapped into [-1, 1))
    uz = ((2 * kz / 8 + 1) % 2) - 1
    uy = ((2 * ky / 8 + 1) % 2) - 1
    ux = math.sqrt(max(1 - uy**2 - uz**2, 0.0))
    aod_az, aod_el = math.atan2(uy, ux), math.acos(uz)
    aoa = (math.cos(math.pi / 6), math.sin(math.pi / 6), 0.0)
    path = Path(-70.0, 0.0, aod_az, aod_el, aoa, True)
    return assemble_channel([path], Scene(), Pose((3, 3, 1)), design, ElementPattern())


@pytest.mark.parametrize("ky,kz", [(1, 0), (0, 0), (3, 1), (6, 7), (2, 6)])
def test_hpbs_noiseless_on_grid_finds_oracle(ky, kz):
    H = on_grid_channel(ky, kz)
    V = ut_codebook(EF)
    r = measure_rss(H, dft_codebook(ap_panel()), V).values
    (i, j), slots = hpbs_run(H, V)
    assert (i, j) == oracle_pair(r, V.panel_of)[:2]
    assert slots == 21


def test_hpbs_edge_slots():
    H = on_grid_channel(1, 0, edge_design())
    (_, _), slots = hpbs_run(H, ut_codebook(edge_design()))
    assert slots == 19


def test_hpbs_noisy_is_deterministic():
    H = on_grid_channel(2, 1)
    V = ut_codebook(EF)
    a = hpbs_run(H, V, rng=np.random.default_rng(5))
    b = hpbs_run(H, V, rng=np.random.default_rng(5))
    assert a == b


def test_candidates_csv(tmp_path):
    c = rank_pairs(np.random.default_rng(0).random((8, 20)), 3, 2, PANEL_OF)
    write_candidates_csv(c, tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "rank,i,j,score,slot" and len(lines) == 1 + 6
