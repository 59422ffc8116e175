"""Scenario files, format ``v1``.

A scenario file is UTF-8 JSON Lines:

* line 1, header: ``{"format": "bevintent-scenario", "version": "v1", "units": {...},
  "seed", "frame_dt", "n_frames", "n_tracks"}``. Lengths are meters, angles
  radians counter-clockwise from +x, times seconds.
* line 2, map: polygons as ``[[x, y], ...]``, lanes, light timelines, signs.
* one ``sweep`` line per frame: timestamp, ego pose ``[tx, ty, tz, yaw, pitch,
  roll]`` (world frame) and points ``[[x, y, z], ...]`` in the ego frame.
* one ``track`` line per actor: per-frame ``{"box": [cx, cy, w, h, phi] | null,
  "action": str | null, "points": int}`` with boxes in the world frame.
* a closing ``{"kind": "end"}`` line.
"""
from __future__ import annotations

import json
import os
from pathlib import Path as FsPath
from typing import Any

import numpy as np

from ..geom import OrientedBox2D, Polygon, Polyline, RigidPose
from .types import (ACTIONS, ActorTrack, Boundary, LaneSegment, MapDocument, Scenario,
                    ScenarioError, Sweep)

FORMAT_NAME = "bevintent-scenario"
FORMAT_VERSION = "v1"
UNITS = {"length": "m", "angle": "rad", "time": "s", "frame": "index"}


class ScenarioParseError(ScenarioError):
    def __init__(self, path, line: int, field: str, message: str):
        self.path, self.line, self.field = str(path), line, field
        super().__init__(f"{path}:{line}: field {field!r}: {message}")


class ScenarioVersionError(ScenarioError):
    pass


# ---------------------------------------------------------------- writing

def _poly(p: Polygon) -> list:
    return [list(v) for v in p.vertices]


def _line(p: Polyline) -> dict:
    return {"vertices": [list(v) for v in p.vertices], "width": p.width}


def _lane_dict(ln: LaneSegment) -> dict:
    return {
        "id": ln.id,
        "centerline": _line(ln.centerline),
        "left_boundary": {"line": _line(ln.left_boundary.line), "kind": ln.left_boundary.kind},
        "right_boundary": {"line": _line(ln.right_boundary.line), "kind": ln.right_boundary.kind},
        "surface": _poly(ln.surface),
        "turn_type": ln.turn_type,
        "lane_class": ln.lane_class,
        "successors": list(ln.successors),
        "governing_control": ln.governing_control,
        "protected": ln.protected,
    }


def map_to_dict(m: MapDocument) -> dict:
    return {
        "road_polygons": [_poly(p) for p in m.road_polygons],
        "intersection_polygons": [_poly(p) for p in m.intersection_polygons],
        "crossing_polygons": [_poly(p) for p in m.crossing_polygons],
        "lanes": [_lane_dict(ln) for ln in m.lanes],
        "traffic_lights": {k: list(v) for k, v in sorted(m.traffic_lights.items())},
        "signs": [list(s) for s in m.signs],
    }


def _pose(p: RigidPose) -> list:
    return [p.tx, p.ty, p.tz, p.yaw, p.pitch, p.roll]


def scenario_lines(s: Scenario) -> list[str]:
    dumps = lambda obj: json.dumps(obj, separators=(",", ":"))  # noqa: E731
    header = {"format": FORMAT_NAME, "version": FORMAT_VERSION, "units": UNITS, "seed": s.seed,
              "frame_dt": s.frame_dt, "n_frames": s.n_frames, "n_tracks": len(s.tracks)}
    lines = [dumps(header), dumps({"kind": "map", **map_to_dict(s.map)})]
    for f, sw in enumerate(s.sweeps):
        lines.append(dumps({"kind": "sweep", "frame": f, "timestamp": sw.timestamp,
                            "ego_pose": _pose(sw.ego_pose),
                            "points": np.asarray(sw.points, dtype=float).tolist()}))
    for tr in s.tracks:
        frames = [{"box": list(b.as_tuple()) if b is not None else None, "action": a, "points": int(c)}
                  for b, a, c in zip(tr.boxes, tr.actions, tr.lidar_point_counts)]
        lines.append(dumps({"kind": "track", "actor_id": tr.actor_id, "frames": frames}))
    lines.append(dumps({"kind": "end"}))
    return lines


def save_scenario(s: Scenario, path) -> None:
    path = FsPath(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("\n".join(scenario_lines(s)) + "\n")
    os.replace(tmp, path)


# ---------------------------------------------------------------- reading

class _Reader:
    def __init__(self, path):
        self.path = path
        self.line = 0

    def fail(self, field: str, msg: str):
        raise ScenarioParseError(self.path, self.line, field, msg)

    def get(self, obj: dict, key: str, kind=None) -> Any:
        if not isinstance(obj, dict) or key not in obj:
            self.fail(key, "missing")
        v = obj[key]
        if kind is not None and not isinstance(v, kind):
            self.fail(key, f"expected {getattr(kind, '__name__', kind)}, got {type(v).__name__}")
        return v

    def polygon(self, v, field):
        try:
            return Polygon([tuple(map(float, p)) for p in v])
        except (TypeError, ValueError) as e:
            self.fail(field, str(e))

    def polyline(self, v, field):
        try:
            return Polyline([tuple(map(float, p)) for p in self.get(v, "vertices", list)],
                            float(self.get(v, "width")))
        except (TypeError, ValueError) as e:
            self.fail(field, str(e))

    def lane(self, d, i):
        f = f"lanes[{i}]"
        try:
            return LaneSegment(
                id=str(self.get(d, "id", str)),
                centerline=self.polyline(self.get(d, "centerline", dict), f + ".centerline"),
                left_boundary=Boundary(self.polyline(self.get(d["left_boundary"], "line", dict), f + ".left_boundary"),
                                       self.get(d["left_boundary"], "kind", str)),
                right_boundary=Boundary(self.polyline(self.get(d["right_boundary"], "line", dict), f + ".right_boundary"),
                                        self.get(d["right_boundary"], "kind", str)),
                surface=self.polygon(self.get(d, "surface", list), f + ".surface"),
                turn_type=self.get(d, "turn_type", str),
                lane_class=self.get(d, "lane_class", str),
                successors=tuple(self.get(d, "successors", list)),
                governing_control=d.get("governing_control"),
                protected=bool(self.get(d, "protected", bool)),
            )
        except ScenarioParseError:
            raise
        except (ScenarioError, KeyError, TypeError) as e:
            self.fail(f, str(e))

    def map(self, d) -> MapDocument:
        m = MapDocument(
            road_polygons=[self.polygon(p, "road_polygons") for p in self.get(d, "road_polygons", list)],
            intersection_polygons=[self.polygon(p, "intersection_polygons")
                                   for p in self.get(d, "intersection_polygons", list)],
            crossing_polygons=[self.polygon(p, "crossing_polygons") for p in self.get(d, "crossing_polygons", list)],
            lanes=[self.lane(ln, i) for i, ln in enumerate(self.get(d, "lanes", list))],
            traffic_lights={str(k): list(v) for k, v in self.get(d, "traffic_lights", dict).items()},
            signs=[tuple(s) for s in self.get(d, "signs", list)],
        )
        return m

    def box(self, v, field):
        if v is None:
            return None
        try:
            return OrientedBox2D(*map(float, v))
        except (TypeError, ValueError) as e:
            self.fail(field, str(e))


def load_scenario(path) -> Scenario:
    """Parse a v1 scenario file; raises ScenarioParseError / ScenarioVersionError."""
    r = _Reader(path)
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.read()
    rows = raw.split("\n")
    if rows and rows[-1] == "":
        rows.pop()
    objs = []
    for i, text in enumerate(rows, start=1):
        r.line = i
        try:
            objs.append(json.loads(text))
        except json.JSONDecodeError as e:
            r.fail("<json>", f"malformed JSON at column {e.colno}: {e.msg}")
    if not objs:
        r.line = 1
        r.fail("format", "empty file")

    r.line = 1
    header = objs[0]
    if r.get(header, "format", str) != FORMAT_NAME:
        r.fail("format", f"not a {FORMAT_NAME} file")
    version = r.get(header, "version", str)
    if version != FORMAT_VERSION:
        raise ScenarioVersionError(f"{path}: unsupported scenario version {version!r}, expected {FORMAT_VERSION!r}")
    n_frames = r.get(header, "n_frames", int)
    n_tracks = r.get(header, "n_tracks", int)
    seed = r.get(header, "seed", int)
    frame_dt = float(r.get(header, "frame_dt"))

    expected = 2 + n_frames + n_tracks + 1
    if len(objs) != expected:
        r.line = len(objs)
        r.fail("kind", f"file truncated or padded: {len(objs)} lines, expected {expected}")

    r.line = 2
    if r.get(objs[1], "kind", str) != "map":
        r.fail("kind", "expected map record")
    map_doc = r.map(objs[1])

    sweeps = []
    for f in range(n_frames):
        r.line = 3 + f
        o = objs[2 + f]
        if r.get(o, "kind", str) != "sweep":
            r.fail("kind", "expected sweep record")
        if r.get(o, "frame", int) != f:
            r.fail("frame", f"expected frame {f}")
        pose = r.get(o, "ego_pose", list)
        if len(pose) != 6:
            r.fail("ego_pose", "expected 6 values")
        pts = np.asarray(r.get(o, "points", list), dtype=float)
        if pts.size == 0:
            pts = np.zeros((0, 3))
        if pts.ndim != 2 or pts.shape[1] != 3:
            r.fail("points", "expected a list of [x, y, z]")
        sweeps.append(Sweep(float(r.get(o, "timestamp")), RigidPose(*map(float, pose)), pts))

    tracks = []
    for k in range(n_tracks):
        r.line = 3 + n_frames + k
        o = objs[2 + n_frames + k]
        if r.get(o, "kind", str) != "track":
            r.fail("kind", "expected track record")
        frames = r.get(o, "frames", list)
        if len(frames) != n_frames:
            r.fail("frames", f"expected {n_frames} entries, got {len(frames)}")
        boxes, actions, counts = [], [], []
        for f, fr in enumerate(frames):
            boxes.append(r.box(r.get(fr, "box"), f"frames[{f}].box"))
            a = r.get(fr, "action")
            if a is not None and a not in ACTIONS:
                r.fail(f"frames[{f}].action", f"unknown action label {a!r}")
            actions.append(a)
            c = r.get(fr, "points", int)
            if c < 0:
                r.fail(f"frames[{f}].points", "negative point count")
            counts.append(c)
        try:
            tracks.append(ActorTrack(str(r.get(o, "actor_id", str)), boxes, actions, counts))
        except ScenarioError as e:
            r.fail("frames", str(e))

    r.line = len(objs)
    if r.get(objs[-1], "kind", str) != "end":
        r.fail("kind", "missing end record")
    s = Scenario(map=map_doc, sweeps=sweeps, tracks=tracks, seed=seed, frame_dt=frame_dt)
    try:
        s.validate()
    except ScenarioError as e:
        raise ScenarioParseError(path, 2, "map", str(e)) from e
    return s
