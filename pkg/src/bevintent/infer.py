"""Inference: score threshold, box/waypoint decoding, rotated NMS and a simple
tracker that matches detections against earlier predictions of the future."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .anchors import FUTURE_DT, AnchorGrid, decode_array
from .geom import OrientedBox2D, RigidPose, rotated_iou, transform_box, wrap_angle
from .scene.types import ACTIONS

SCORE_THRESHOLD = 0.1
NMS_IOU = 0.1
WORLD = RigidPose(0.0, 0.0, 0.0, 0.0)


@dataclass
class Detection:
    box: OrientedBox2D
    score: float
    intent: np.ndarray  # (n_actions,) probabilities
    waypoints: list  # OrientedBox2D per future step
    anchor: int = -1  # flat anchor index, decode order

    @property
    def action(self) -> str:
        return ACTIONS[int(np.argmax(self.intent))]

    def in_frame(self, from_pose: RigidPose, to_pose: RigidPose) -> "Detection":
        return Detection(transform_box(self.box, from_pose, to_pose), self.score, self.intent,
                         [transform_box(w, from_pose, to_pose) for w in self.waypoints], self.anchor)

    def to_dict(self) -> dict:
        return {"box": list(self.box.as_tuple()), "score": self.score,
                "intent": [float(v) for v in self.intent],
                "waypoints": [list(w.as_tuple()) for w in self.waypoints], "anchor": int(self.anchor)}

    @classmethod
    def from_dict(cls, d: dict) -> "Detection":
        return cls(OrientedBox2D(*d["box"]), float(d["score"]), np.asarray(d["intent"], dtype=float),
                   [OrientedBox2D(*w) for w in d["waypoints"]], int(d.get("anchor", -1)))


@dataclass
class DecodeStats:
    candidates: int = 0
    dropped: int = 0


def decode_detections(outputs, grid: AnchorGrid, threshold: float = SCORE_THRESHOLD, sample: int = 0,
                      stats: Optional[DecodeStats] = None) -> list:
    """Detections for one batch sample, in flat anchor order."""
    prob = outputs.vehicle_prob()[sample].astype(np.float64)
    rows, cols, K = prob.shape
    if (rows, cols, K) != (grid.rows, grid.cols, grid.per_cell):
        raise ValueError(f"outputs {prob.shape} do not match the anchor grid "
                         f"{(grid.rows, grid.cols, grid.per_cell)}")
    flat = prob.reshape(-1)
    idx = np.flatnonzero(flat >= threshold)
    stats = stats if stats is not None else DecodeStats()
    stats.candidates += len(idx)
    if len(idx) == 0:
        return []
    reg = outputs.reg.data[sample].reshape(rows * cols * K, -1)[idx].astype(np.float64)
    boxes, valid = decode_array(reg, grid.array[idx])
    stats.dropped += int((~valid).sum())
    intent = outputs.intent_prob()[sample].astype(np.float64).reshape(rows * cols, -1)
    out = []
    for n, b, ok in zip(idx, boxes, valid):
        if not ok:
            continue
        steps = [OrientedBox2D(*row) for row in b]
        out.append(Detection(steps[0], float(flat[n]), intent[n // K], steps[1:], int(n)))
    return out


def nms(dets: Sequence[Detection], iou_threshold: float = NMS_IOU) -> list:
    """Greedy rotated NMS; ties in score keep decode order."""
    if not dets:
        return []
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)  # stable
    circ = np.array([[d.box.cx, d.box.cy, d.box.radius()] for d in dets])
    kept: list = []
    for i in order:
        if kept:
            k = np.array(kept)
            near = k[np.hypot(circ[k, 0] - circ[i, 0], circ[k, 1] - circ[i, 1]) < circ[k, 2] + circ[i, 2]]
            if any(rotated_iou(dets[i].box, dets[j].box) >= iou_threshold for j in near):
                continue
        kept.append(i)
    return [dets[i] for i in kept]


# ---------------------------------------------------------------- tracking

@dataclass(frozen=True)
class TrackerConfig:
    gate: float = 2.0  # metres between a detection and the predicted center
    ema: float = 0.5  # weight of the new score
    max_coast: int = 2
    coast_decay: float = 0.5
    frame_dt: float = 0.1
    future_dt: float = FUTURE_DT


@dataclass
class TrackEntry:
    frame: int
    det: Detection
    score: float  # fused score after this frame
    coasted: bool = False


@dataclass
class Tracklet:
    id: int
    history: list = field(default_factory=list)
    misses: int = 0

    @property
    def last(self) -> TrackEntry:
        return self.history[-1]

    @property
    def last_observed(self) -> TrackEntry:
        for e in reversed(self.history):
            if not e.coasted:
                return e
        raise ValueError("tracklet without an observation")

    @property
    def score(self) -> float:
        return self.last.score

    @property
    def frames(self) -> list:
        return [e.frame for e in self.history]


def predicted_box(det: Detection, elapsed: float, future_dt: float = FUTURE_DT) -> OrientedBox2D:
    """Box ``elapsed`` seconds after ``det`` by linear interpolation of its
    waypoints; held at the last waypoint beyond the horizon."""
    steps = [det.box] + list(det.waypoints)
    if len(steps) == 1 or elapsed <= 0:
        return det.box
    times = np.arange(len(steps)) * future_dt
    cx = np.interp(elapsed, times, [b.cx for b in steps])
    cy = np.interp(elapsed, times, [b.cy for b in steps])
    phi = np.unwrap([b.phi for b in steps])
    return OrientedBox2D(float(cx), float(cy), det.box.w, det.box.h,
                         wrap_angle(float(np.interp(elapsed, times, phi))))


class Tracker:
    """Frame-serial tracklet decoder. Detections must share one fixed frame
    (e.g. world coordinates) across calls."""

    def __init__(self, cfg: TrackerConfig = TrackerConfig()):
        self.cfg = cfg
        self.tracks: list = []
        self.retired: list = []
        self.next_id = 0
        self.frame: Optional[int] = None

    def prediction(self, track: Tracklet, frame: int) -> OrientedBox2D:
        src = track.last_observed
        return predicted_box(src.det, (frame - src.frame) * self.cfg.frame_dt, self.cfg.future_dt)

    def update(self, dets: Sequence[Detection], frame: int) -> list:
        if self.frame is not None and frame <= self.frame:
            raise ValueError(f"frames must increase: got {frame} after {self.frame}")
        self.frame = frame
        cfg = self.cfg
        preds = [self.prediction(t, frame) for t in self.tracks]
        free = set(range(len(self.tracks)))
        matched_det: dict = {}
        for di in sorted(range(len(dets)), key=lambda i: -dets[i].score):
            c = dets[di].box.center
            best, arg = cfg.gate, None
            for ti in sorted(free):
                d = float(np.hypot(*(preds[ti].center - c)))
                if d <= best and (arg is None or d < best):
                    best, arg = d, ti
            if arg is not None:
                free.discard(arg)
                matched_det[di] = arg

        live = []
        for di, det in enumerate(dets):
            ti = matched_det.get(di)
            if ti is None:
                t = Tracklet(self.next_id)
                self.next_id += 1
                t.history.append(TrackEntry(frame, det, det.score))
            else:
                t = self.tracks[ti]
                fused = (1 - cfg.ema) * t.score + cfg.ema * det.score
                t.history.append(TrackEntry(frame, det, fused))
                t.misses = 0
            live.append(t)
        for ti in sorted(free):
            t = self.tracks[ti]
            if t.misses >= cfg.max_coast:
                self.retired.append(t)
                continue
            t.misses += 1
            src = t.last_observed.det
            box = preds[ti]
            coast = Detection(box, src.score, src.intent, [], src.anchor)
            t.history.append(TrackEntry(frame, coast, t.score * cfg.coast_decay, coasted=True))
            live.append(t)
        live.sort(key=lambda t: t.id)
        self.tracks = live
        return live

    def all_tracks(self) -> list:
        return sorted(self.retired + self.tracks, key=lambda t: t.id)


def update_tracks(tracker: Tracker, dets: Sequence[Detection], frame: int) -> list:
    return tracker.update(dets, frame)


# ----------------------------------------------------------- prediction dump

def frame_record(scenario_id: str, frame: int, ego: RigidPose, tracks: Sequence[Tracklet]) -> dict:
    """One JSONL record: tracklets alive at ``frame`` with their entry for it."""
    dets = []
    for t in tracks:
        e = t.last
        if e.frame != frame:
            continue
        d = e.det.to_dict()
        d.update(track_id=t.id, fused_score=e.score, coasted=e.coasted)
        dets.append(d)
    return {"scenario": scenario_id, "frame": int(frame),
            "ego_pose": [ego.tx, ego.ty, ego.tz, ego.yaw, ego.pitch, ego.roll], "detections": dets}


def write_predictions(path, records: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_predictions(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


__all__ = [
    "SCORE_THRESHOLD", "NMS_IOU", "WORLD", "Detection", "DecodeStats", "decode_detections", "nms",
    "TrackerConfig", "TrackEntry", "Tracklet", "predicted_box", "Tracker", "update_tracks",
    "frame_record", "write_predictions", "read_predictions",
]
