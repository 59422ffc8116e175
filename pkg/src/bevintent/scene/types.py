from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..geom import OrientedBox2D, Polygon, Polyline, RigidPose

ACTIONS = (
    "keep_lane",
    "turn_left",
    "turn_right",
    "lane_change_left",
    "lane_change_right",
    "stopping_stopped",
    "parked",
    "other",
)
ACTION_INDEX = {a: i for i, a in enumerate(ACTIONS)}
# classes the intention loss downsamples
DOMINANT_ACTIONS = ("keep_lane", "stopping_stopped", "parked")

BOUNDARY_KINDS = ("crossable", "non_crossable", "conditionally_crossable")
TURN_TYPES = ("straight", "left", "right")
LANE_CLASSES = ("vehicle", "bike", "bus")
LIGHT_STATES = ("green", "yellow", "red", "unknown")
SIGN_KINDS = ("yield", "stop")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Boundary:
    line: Polyline
    kind: str

    def __post_init__(self):
        if self.kind not in BOUNDARY_KINDS:
            raise ScenarioError(f"unknown boundary kind {self.kind!r}")


@dataclass(frozen=True)
class LaneSegment:
    id: str
    centerline: Polyline
    left_boundary: Boundary
    right_boundary: Boundary
    surface: Polygon
    turn_type: str = "straight"
    lane_class: str = "vehicle"
    successors: tuple = ()
    governing_control: Optional[str] = None  # light id, or "yield"/"stop"
    protected: bool = False

    def __post_init__(self):
        if self.turn_type not in TURN_TYPES:
            raise ScenarioError(f"lane {self.id}: unknown turn type {self.turn_type!r}")
        if self.lane_class not in LANE_CLASSES:
            raise ScenarioError(f"lane {self.id}: unknown lane class {self.lane_class!r}")
        object.__setattr__(self, "successors", tuple(self.successors))

    @property
    def drivable(self) -> bool:
        return self.lane_class in ("vehicle", "bus")

    @property
    def sign(self) -> Optional[str]:
        return self.governing_control if self.governing_control in SIGN_KINDS else None

    @property
    def light(self) -> Optional[str]:
        c = self.governing_control
        return c if c is not None and c not in SIGN_KINDS else None


@dataclass
class MapDocument:
    road_polygons: list = field(default_factory=list)
    intersection_polygons: list = field(default_factory=list)
    crossing_polygons: list = field(default_factory=list)
    lanes: list = field(default_factory=list)
    traffic_lights: dict = field(default_factory=dict)  # id -> per-frame states
    signs: list = field(default_factory=list)  # (lane id, kind)

    def lane(self, lane_id: str) -> LaneSegment:
        for ln in self.lanes:
            if ln.id == lane_id:
                return ln
        raise KeyError(lane_id)

    def light_state(self, light_id: str, frame: int) -> str:
        return self.traffic_lights[light_id][frame]

    def validate(self, n_frames: Optional[int] = None) -> None:
        ids = {ln.id for ln in self.lanes}
        if len(ids) != len(self.lanes):
            raise ScenarioError("duplicate lane ids")
        for ln in self.lanes:
            c = ln.governing_control
            if c is not None and c not in SIGN_KINDS and c not in self.traffic_lights:
                raise ScenarioError(f"lane {ln.id} references missing light {c!r}")
            for s in ln.successors:
                if s not in ids:
                    raise ScenarioError(f"lane {ln.id} has unknown successor {s!r}")
        for lid, timeline in self.traffic_lights.items():
            for st in timeline:
                if st not in LIGHT_STATES:
                    raise ScenarioError(f"light {lid}: unknown state {st!r}")
            if n_frames is not None and len(timeline) != n_frames:
                raise ScenarioError(f"light {lid} covers {len(timeline)} frames, expected {n_frames}")
        for lane_id, kind in self.signs:
            if lane_id not in ids or kind not in SIGN_KINDS:
                raise ScenarioError(f"bad sign entry ({lane_id!r}, {kind!r})")


@dataclass
class Sweep:
    timestamp: float
    ego_pose: RigidPose
    points: np.ndarray  # (N, 3) in the ego frame at capture time


@dataclass
class ActorTrack:
    actor_id: str
    boxes: list  # OrientedBox2D or None per frame, world frame
    actions: list  # action name or None per frame
    lidar_point_counts: list

    def __post_init__(self):
        if not (len(self.boxes) == len(self.actions) == len(self.lidar_point_counts)):
            raise ScenarioError(f"track {self.actor_id}: per-frame lists differ in length")
        for f, (b, a, n) in enumerate(zip(self.boxes, self.actions, self.lidar_point_counts)):
            if b is not None and a not in ACTIONS:
                raise ScenarioError(f"track {self.actor_id} frame {f}: bad action {a!r}")
            if n < 0:
                raise ScenarioError(f"track {self.actor_id} frame {f}: negative point count")

    def present(self, frame: int) -> bool:
        return 0 <= frame < len(self.boxes) and self.boxes[frame] is not None


@dataclass
class Scenario:
    map: MapDocument
    sweeps: list
    tracks: list
    seed: int
    frame_dt: float = 0.1

    @property
    def n_frames(self) -> int:
        return len(self.sweeps)

    def validate(self) -> None:
        n = self.n_frames
        ts = [s.timestamp for s in self.sweeps]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ScenarioError("sweep timestamps must be strictly increasing")
        self.map.validate(n)
        for tr in self.tracks:
            if len(tr.boxes) != n:
                raise ScenarioError(f"track {tr.actor_id} covers {len(tr.boxes)} frames, expected {n}")


__all__ = [
    "ACTIONS", "ACTION_INDEX", "DOMINANT_ACTIONS", "BOUNDARY_KINDS", "TURN_TYPES",
    "LANE_CLASSES", "LIGHT_STATES", "SIGN_KINDS", "ScenarioError", "Boundary",
    "LaneSegment", "MapDocument", "Sweep", "ActorTrack", "Scenario", "OrientedBox2D",
]
