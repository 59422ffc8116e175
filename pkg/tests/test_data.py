import math

import numpy as np
import pytest

from bevintent import data as data_mod
from bevintent.anchors import build_anchor_grid, decode_array
from bevintent.data import (SampleSet, augment, build_targets, frame_ground_truth, future_stride, sample_frames,
                            scenario_seed, synthesize)
from bevintent.encoder import MAP_CHANNELS, VoxelConfig, encode_frame
from bevintent.geom import OrientedBox2D, RigidPose, transform_box
from bevintent.metrics import GroundTruth
from bevintent.scene.generator import GenerationError, GeneratorConfig
from bevintent.scene.types import ACTION_INDEX
from fixtures import separated_scene

CFG = VoxelConfig(L=51.2, W=51.2, H=4.0, dL=0.4, dW=0.4, dH=0.8, T_past=5)
GRID = build_anchor_grid(CFG)


@pytest.fixture(scope="module")
def scenario():
    return synthesize(GeneratorConfig(), 0, 1)[0][1]


def test_future_stride():
    assert future_stride(0.1) == 5
    assert future_stride(0.25) == 2
    with pytest.raises(ValueError):
        future_stride(0.3)


def test_sample_frames_window(scenario):
    frames = sample_frames(scenario, 5)
    assert frames[0] == 4 and frames[-1] == scenario.n_frames - 31
    assert len(frames) == 26


def test_ground_truth_in_extent_and_futures(scenario):
    f = 10
    gts = frame_ground_truth(scenario, f, CFG)
    assert gts
    ego = scenario.sweeps[f].ego_pose
    for g in gts:
        assert abs(g.box.cx) < 25.6 and abs(g.box.cy) < 25.6
        assert len(g.future) == 6
        tr = next(t for t in scenario.tracks if t.actor_id == g.track_id)
        assert g.action == tr.actions[f] and g.n_points == tr.lidar_point_counts[f]
        for k, fb in enumerate(g.future, 1):
            src = tr.boxes[f + 5 * k]
            if src is None:
                assert fb is None
            else:
                ref = transform_box(src, RigidPose(), ego)
                assert fb.as_tuple() == pytest.approx(ref.as_tuple(), abs=1e-9)


def test_targets_decode_to_ground_truth(scenario):
    gts = frame_ground_truth(scenario, 12, CFG)
    tg = build_targets(gts, GRID)
    pos = np.flatnonzero(tg.q == 1)
    assert len(pos) >= len(gts) - 1  # every box gets an anchor unless its center is off-grid
    boxes, valid = decode_array(tg.reg[pos].astype(np.float64), GRID.array[pos])
    assert valid.all()
    for n, b in zip(pos, boxes):
        # some ground truth box matches the decoded t=0 box to float32 precision
        err = min(np.abs(np.array(g.box.as_tuple()[:4]) - b[0, :4]).max() for g in gts)
        assert err < 1e-4
    assert not tg.reg[tg.q != 1].any()
    assert not tg.mask[tg.q != 1].any()


def test_cell_labels_only_on_positive_cells(scenario):
    gts = frame_ground_truth(scenario, 12, CFG)
    tg = build_targets(gts, GRID)
    cells = set(int(c) for c in np.flatnonzero(tg.q == 1) // GRID.per_cell)
    labelled = set(int(c) for c in np.flatnonzero(tg.intent.ravel() >= 0))
    assert labelled <= cells
    actions = {ACTION_INDEX[g.action] for g in gts if g.action in ACTION_INDEX}
    assert set(tg.intent[tg.intent >= 0].tolist()) <= actions


def test_empty_scene_targets():
    tg = build_targets([], GRID)
    assert (tg.q == 0).all() and (tg.intent == -1).all() and not tg.mask.any()


def test_sample_set_round_trip(scenario):
    ss = SampleSet(CFG, GRID)
    ss.add_scenario(scenario, 3, frames=[4, 9])
    assert len(ss) == 2 and ss.samples[1].frame == 9 and ss.samples[1].scenario == 3
    L, M = ss.inputs([1, 0])
    lidar, mp = encode_frame(scenario, 9, CFG)
    assert L.shape == (2, 128, 128, 25) and M.shape == (2, 128, 128, 17)
    assert np.array_equal(L[0], lidar.transpose(1, 2, 0).astype(np.float32))
    assert np.array_equal(M[0] > 0, (mp > 0).transpose(1, 2, 0))
    assert set(np.unique(M).tolist()) <= {-1.0, 1.0}
    _, Mz = ss.inputs([0], zero_map=True)
    assert not Mz.any()
    _, _, tgt = ss.batch([0, 1])
    assert tgt["q"].shape == (2, len(GRID))
    assert tgt["reg_targets"].shape == (2, len(GRID), 30)
    assert tgt["reg_mask"].shape == (2, len(GRID), 6)
    assert tgt["intent_labels"].shape == (2, 1, 16, 16)


def test_synthesize_deterministic_and_falls_back(monkeypatch):
    calls = []
    real = data_mod.generate_scenario

    def flaky(cfg, seed):
        calls.append(seed)
        if seed == scenario_seed(7, 0, 0):
            raise GenerationError("no room")
        return real(cfg, seed)

    monkeypatch.setattr(data_mod, "generate_scenario", flaky)
    out = synthesize(GeneratorConfig(), 7, 1)
    assert [s for s, _ in out] == [scenario_seed(7, 0, 1)]
    assert calls == [scenario_seed(7, 0, 0), scenario_seed(7, 0, 1)]


def test_synthesize_gives_up(monkeypatch):
    def never(cfg, seed):
        raise GenerationError("no room")

    monkeypatch.setattr(data_mod, "generate_scenario", never)
    with pytest.raises(GenerationError):
        synthesize(GeneratorConfig(), 0, 1, max_attempts=3)


def test_scenario_seed_distinct():
    seeds = {scenario_seed(0, i, a) for i in range(50) for a in range(3)}
    assert len(seeds) == 150


def _gt_list(rng, n):
    boxes, fut = separated_scene(rng, n)
    acts = ["turn_left", "lane_change_right", "keep_lane", "parked", "other", "turn_right"]
    out = []
    for g, b in enumerate(boxes):
        future = [OrientedBox2D(x, y, b.w, b.h, p) for x, y, p in fut[g]]
        future[-1] = None if g % 2 else future[-1]
        out.append(GroundTruth(b, future, acts[g % len(acts)], 50, g))
    return out


def _moved(gts, turn, mirror):
    def f(b):
        if b is None:
            return None
        x, y, phi = b.cx, b.cy, b.phi
        if turn:
            x, y, phi = -x, -y, phi + math.pi
        if mirror:
            y, phi = -y, -phi
        return OrientedBox2D(x, y, b.w, b.h, phi)
    swap = {"turn_left": "turn_right", "turn_right": "turn_left",
            "lane_change_left": "lane_change_right", "lane_change_right": "lane_change_left"}
    return [GroundTruth(f(g.box), [f(b) for b in g.future], swap.get(g.action, g.action) if mirror else g.action,
                        g.n_points, g.track_id) for g in gts]


@pytest.mark.parametrize("turn,mirror", [(True, False), (False, True), (True, True)])
def test_augment_matches_transformed_scene(turn, mirror):
    rng = np.random.default_rng(11)
    for _ in range(5):
        gts = _gt_list(rng, 5)
        tg = build_targets(gts, GRID)
        ref = build_targets(_moved(gts, turn, mirror), GRID)
        rows, cols = CFG.rows, CFG.cols
        L = rng.random((1, rows, cols, 25))
        M = rng.random((1, rows, cols, 17))
        L0, M0 = L.copy(), M.copy()
        tgt = {"q": tg.q[None].copy(), "reg_targets": tg.reg[None].astype(np.float64),
               "reg_mask": tg.mask[None].copy(), "intent_labels": tg.intent[None, None].astype(np.int64)}
        augment(L, M, tgt, 0, GRID.per_cell, turn, mirror)
        assert np.array_equal(tgt["q"][0], ref.q)
        assert np.array_equal(tgt["reg_mask"][0], ref.mask)
        assert np.allclose(tgt["reg_targets"][0], ref.reg, atol=1e-5)
        assert np.array_equal(tgt["intent_labels"][0, 0], ref.intent)
        i, j = 3, 101
        ii, jj = (rows - 1 - i if turn else i), (cols - 1 - j if turn != mirror else j)
        assert np.array_equal(L[0, ii, jj], L0[0, i, j])
        lane_left, lane_right = MAP_CHANNELS.index("lane_left"), MAP_CHANNELS.index("lane_right")
        assert M[0, ii, jj, lane_left] == M0[0, i, j, lane_right if mirror else lane_left]


def test_augmented_batch_is_seeded(scenario):
    ss = SampleSet(CFG, GRID)
    ss.add_scenario(scenario, 0, frames=[4, 9, 14])
    a = ss.batch([0, 1, 2], rng=np.random.default_rng(3))
    b = ss.batch([0, 1, 2], rng=np.random.default_rng(3))
    assert all(np.array_equal(x, y) for x, y in zip(a[:2], b[:2]))
    assert all(np.array_equal(a[2][k], b[2][k]) for k in a[2])
    plain = ss.batch([0, 1, 2])
    assert (a[2]["q"] == 1).sum() == (plain[2]["q"] == 1).sum()
