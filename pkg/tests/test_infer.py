import math

import numpy as np
import pytest

from bevintent.anchors import build_anchor_grid
from bevintent.encoder import VoxelConfig
from bevintent.geom import OrientedBox2D, rotated_iou, wrap_angle
from bevintent.infer import (DecodeStats, Detection, Tracker, TrackerConfig, decode_detections,
                             frame_record, nms, predicted_box, read_predictions, write_predictions)
from bevintent.geom import RigidPose
from bevintent.net import HeadOutputs, Tensor
from fixtures import cv_detection, separated_scene, synth_outputs

CFG = VoxelConfig(L=51.2, W=51.2, H=4.0, dL=0.4, dW=0.4, dH=0.8, T_past=5)
GRID = build_anchor_grid(CFG)


def blank_outputs(t_future=6):
    shape = (1, GRID.rows, GRID.cols, GRID.per_cell)
    det = np.zeros(shape + (2,))
    det[..., 0] = 10.0
    reg = np.zeros(shape + (6 + 4 * t_future,))
    reg[..., 3] = 1.0
    reg[..., 9::4] = 1.0
    return HeadOutputs(Tensor(det), Tensor(np.zeros(shape[:3] + (8,))), Tensor(reg))


def test_below_threshold_is_empty():
    assert decode_detections(blank_outputs(), GRID) == []


def test_single_anchor_zero_regression():
    out = blank_outputs()
    n = GRID.index(3, 7, 2)
    i, j, k = GRID.unravel(n)
    out.det_logits.data[0, i, j, k] = (0.0, 2.0)
    dets = decode_detections(out, GRID)
    assert len(dets) == 1
    d = dets[0]
    assert d.box.as_tuple() == pytest.approx(GRID.box(n).as_tuple(), abs=1e-12)
    assert d.score == pytest.approx(1 / (1 + math.exp(-2)))
    assert np.allclose(d.intent, 1 / 8) and abs(d.intent.sum() - 1) < 1e-6
    assert len(d.waypoints) == 6 and all(w.w == d.box.w and w.h == d.box.h for w in d.waypoints)


def test_degenerate_candidate_dropped():
    out = blank_outputs()
    out.det_logits.data[0, 0, 0, 0] = (0.0, 2.0)
    out.det_logits.data[0, 0, 0, 1] = (0.0, 2.0)
    out.reg.data[0, 0, 0, 1, 2:4] = 0.0
    stats = DecodeStats()
    dets = decode_detections(out, GRID, stats=stats)
    assert len(dets) == 1 and stats.candidates == 2 and stats.dropped == 1


def test_synthesized_outputs_recover_scene():
    rng = np.random.default_rng(0)
    for _ in range(5):
        gt, fut = separated_scene(rng, int(rng.integers(1, 6)))
        intents = rng.integers(0, 8, len(gt))
        out, _ = synth_outputs(GRID, gt, fut, intents)
        dets = nms(decode_detections(out, GRID))
        assert len(dets) == len(gt)
        for d in dets:
            g = int(np.argmin([math.hypot(d.box.cx - b.cx, d.box.cy - b.cy) for b in gt]))
            b = gt[g]
            assert d.box.as_tuple()[:4] == pytest.approx(b.as_tuple()[:4], abs=1e-9)
            assert abs(wrap_angle(d.box.phi - b.phi)) < 1e-9
            assert int(np.argmax(d.intent)) == intents[g]
            for w, f in zip(d.waypoints, fut[g]):
                assert (w.cx, w.cy) == pytest.approx(tuple(f[:2]), abs=1e-9)


def det(box, score):
    return Detection(box, score, np.full(8, 1 / 8), [])


def reference_nms(dets, thr):
    order = list(range(len(dets)))
    # insertion sort by score, stable
    for a in range(1, len(order)):
        b = a
        while b > 0 and dets[order[b - 1]].score < dets[order[b]].score:
            order[b - 1], order[b] = order[b], order[b - 1]
            b -= 1
    kept = []
    for i in order:
        ok = True
        for j in kept:
            if rotated_iou(dets[i].box, dets[j].box) >= thr:
                ok = False
        if ok:
            kept.append(i)
    return kept


def random_dets(rng, n):
    return [det(OrientedBox2D(*rng.uniform(-6, 6, 2), *rng.uniform(1, 5, 2), rng.uniform(-math.pi, math.pi)),
                float(np.round(rng.uniform(0.1, 1), 2))) for _ in range(n)]


def test_nms_simple_cases():
    b = OrientedBox2D(0, 0, 4, 2, 0.3)
    a = det(b, 0.8)
    assert nms([a]) == [a]
    hi = det(b, 0.9)
    assert nms([a, hi]) == [hi]
    assert nms([]) == []


def test_nms_matches_reference():
    rng = np.random.default_rng(1)
    for _ in range(100):
        dets = random_dets(rng, int(rng.integers(1, 30)))
        for thr in (0.1, 0.5):
            kept = nms(dets, thr)
            ref = [dets[i] for i in reference_nms(dets, thr)]
            assert [id(d) for d in kept] == [id(d) for d in ref]
            for x in range(len(kept)):
                for y in range(x + 1, len(kept)):
                    assert rotated_iou(kept[x].box, kept[y].box) < thr


def test_predicted_box_interpolates():
    d = cv_detection(0, 0, 10, 0, 0.0)
    p = predicted_box(d, 0.2)
    assert (p.cx, p.cy) == pytest.approx((2.0, 0.0))
    assert predicted_box(d, 10.0).cx == pytest.approx(30.0)


def cv_stream(n_frames, vehicles, drop=()):
    """Per-frame detections; ``drop`` holds (frame, vehicle) pairs to remove."""
    frames = []
    for f in range(n_frames):
        frames.append([cv_detection(*v, f * 0.1) for k, v in enumerate(vehicles) if (f, k) not in drop])
    return frames


def id_switches(tracker, vehicles, frames):
    """Count frames where a vehicle's track id differs from its first id."""
    first, switches = {}, 0
    for f, dets in enumerate(frames):
        tracks = tracker.update(dets, f)
        for t in tracks:
            e = t.last
            if e.coasted:
                continue
            k = int(np.argmin([math.hypot(e.det.box.cx - (v[0] + v[2] * f * 0.1),
                                          e.det.box.cy - (v[1] + v[3] * f * 0.1)) for v in vehicles]))
            if first.setdefault(k, t.id) != t.id:
                switches += 1
    return switches, first


def test_empty_tracks_spawn_one_per_detection():
    tr = Tracker()
    dets = [cv_detection(0, 0, 5, 0, 0), cv_detection(20, 0, 5, 0, 0)]
    tracks = tr.update(dets, 0)
    assert [t.id for t in tracks] == [0, 1]


def test_constant_velocity_no_id_switch():
    vehicles = [(-20, -6, 12, 0), (20, 3, -12, 0), (0, -20, 0.5, 9), (5, 12, 8, -3)]
    tr = Tracker()
    sw, first = id_switches(tr, vehicles, cv_stream(10, vehicles))
    assert sw == 0 and sorted(first.values()) == [0, 1, 2, 3]
    assert len(tr.all_tracks()) == 4


def test_dropped_detection_coasts_and_recovers():
    vehicles = [(-20, -6, 12, 0), (20, 3, -12, 0)]
    tr = Tracker()
    frames = cv_stream(10, vehicles, drop={(5, 0)})
    sw, _ = id_switches(tr, vehicles, frames)
    assert sw == 0 and len(tr.all_tracks()) == 2
    t0 = tr.all_tracks()[0]
    coast = [e for e in t0.history if e.coasted]
    assert [e.frame for e in coast] == [5]
    assert coast[0].score == pytest.approx(t0.history[4].score * 0.5)
    assert t0.frames == list(range(10))


def test_track_retires_after_coast_limit():
    tr = Tracker(TrackerConfig(max_coast=2))
    tr.update([cv_detection(0, 0, 5, 0, 0)], 0)
    assert len(tr.update([], 1)) == 1
    assert len(tr.update([], 2)) == 1
    assert tr.update([], 3) == [] and len(tr.retired) == 1


def test_score_fusion_ema():
    tr = Tracker()
    tr.update([cv_detection(0, 0, 5, 0, 0, score=0.8)], 0)
    t = tr.update([cv_detection(0, 0, 5, 0, 0.1, score=0.4)], 1)[0]
    assert t.score == pytest.approx(0.6)


def test_association_one_to_one():
    tr = Tracker()
    tr.update([cv_detection(0, 0, 0.0001, 0, 0)], 0)
    dets = [cv_detection(0.2, 0, 0.0001, 0, 0, score=0.5), cv_detection(0.1, 0, 0.0001, 0, 0, score=0.9)]
    tracks = tr.update(dets, 1)
    assert len(tracks) == 2
    matched = [t for t in tracks if len(t.history) == 2]
    assert len(matched) == 1 and matched[0].last.det is dets[1]


def test_frames_must_increase():
    tr = Tracker()
    tr.update([], 3)
    with pytest.raises(ValueError):
        tr.update([], 3)


def test_prediction_dump_round_trip(tmp_path):
    tr = Tracker()
    tracks = tr.update([cv_detection(0, 0, 5, 0, 0)], 0)
    rec = frame_record("s0", 0, RigidPose(1.0, 2.0, 0.0, 0.3), tracks)
    write_predictions(tmp_path / "p.jsonl", [rec])
    back = read_predictions(tmp_path / "p.jsonl")
    assert back == [rec]
    d = Detection.from_dict(back[0]["detections"][0])
    assert d.box.as_tuple() == pytest.approx(tracks[0].last.det.box.as_tuple())
    assert back[0]["detections"][0]["track_id"] == 0
