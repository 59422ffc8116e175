"""Seeded synthetic scenarios around a four-way intersection.

World layout (intersection centred at the origin, right-hand traffic):

* four arms, each with two incoming and two outgoing 3.5 m lanes;
* incoming lanes split into a far section and a near section in front of the
  stop line; the inner near lane is a left-turn lane;
* connector lanes (straight / left / right) inside the intersection square;
* off-road parking strips beside every arm, optional bike and bus lanes,
  crossings, and either a signalised or an all-way-stop control.

The ego vehicle approaches on the outer incoming lane of a random arm. Actors
are placed so that every frame with a complete past/future window carries
the label of the maneuver they were generated for.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from ..geom import OrientedBox2D, Polygon, Polyline, RigidPose, iou_matrix, wrap_angle
from .labels import LaneIndex, label_actions
from .types import (ACTIONS, ActorTrack, Boundary, LaneSegment, MapDocument, Scenario,
                    ScenarioError, Sweep)

LANE_WIDTH = 3.5
STOP_LINE = 9.0  # half size of the intersection square
NEAR_END = 29.0
ARM_END = 89.0
PARK_LATERAL = 10.5
ACTOR_CAPACITY = 20
EGO_SIZE = (4.8, 2.0)


class GenerationError(ScenarioError):
    pass


DEFAULT_WEIGHTS = {
    "keep_lane": 0.22,
    "turn_left": 0.10,
    "turn_right": 0.10,
    "lane_change_left": 0.08,
    "lane_change_right": 0.08,
    "stopping_stopped": 0.16,
    "parked": 0.18,
    "other": 0.08,
}


@dataclass
class GeneratorConfig:
    n_frames: int = 60
    frame_dt: float = 0.1
    min_actors: int = 3
    max_actors: int = 7
    maneuver_weights: dict = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    points_per_meter: float = 120.0  # scaled by visible perimeter / distance
    clutter_density: float = 0.04  # ground points per m^2
    clutter_radius: float = 32.0
    noise_sigma: float = 0.03
    view_half: float = 22.0  # actors start within this ego-frame square at mid window
    ego_speed_max: float = 1.0
    p_unknown_light: float = 0.15
    p_all_way_stop: float = 0.25
    p_bus_lane: float = 0.3
    p_bike_lane: float = 0.5
    p_crossing: float = 0.7
    boundary_width: float = 0.4
    horizon_frames: int = 30
    history_frames: int = 5  # first frame with a full history is history_frames - 1
    placement_attempts: int = 200

    def validate(self) -> None:
        if self.n_frames < 1 or self.frame_dt <= 0:
            raise GenerationError("n_frames must be >= 1 and frame_dt > 0")
        if not 0 <= self.min_actors <= self.max_actors:
            raise GenerationError("need 0 <= min_actors <= max_actors")
        if self.max_actors > ACTOR_CAPACITY:
            raise GenerationError(
                f"max_actors={self.max_actors} exceeds lane capacity {ACTOR_CAPACITY}")
        unknown = set(self.maneuver_weights) - set(ACTIONS)
        if unknown:
            raise GenerationError(f"unknown maneuvers in mix: {sorted(unknown)}")
        w = np.array([self.maneuver_weights.get(a, 0.0) for a in ACTIONS], dtype=float)
        if (w < 0).any() or (self.max_actors > 0 and w.sum() <= 0):
            raise GenerationError("maneuver weights must be non-negative with positive sum")
        if self.noise_sigma < 0 or self.points_per_meter < 0 or self.clutter_density < 0:
            raise GenerationError("noise and density parameters must be non-negative")

    def weights(self) -> np.ndarray:
        w = np.array([self.maneuver_weights.get(a, 0.0) for a in ACTIONS], dtype=float)
        return w / w.sum()

    @property
    def label_window(self) -> range:
        """Frames with a full history and a full label horizon."""
        return range(self.history_frames - 1, self.n_frames - self.horizon_frames)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        names = {f.name for f in fields(cls)}
        bad = set(d) - names
        if bad:
            raise GenerationError(f"unknown generator config keys: {sorted(bad)}")
        cfg = cls(**d)
        if "maneuver_weights" in d:
            cfg.maneuver_weights = {a: float(d["maneuver_weights"].get(a, 0.0)) for a in ACTIONS}
        return cfg


# ------------------------------------------------------------------ layout

def _arm_axes(arm: int) -> tuple[np.ndarray, np.ndarray]:
    ang = arm * math.pi / 2
    u = np.array([math.cos(ang), math.sin(ang)])
    return u, np.array([-u[1], u[0]])


def arm_point(arm: int, s: float, lateral: float) -> np.ndarray:
    u, n = _arm_axes(arm)
    return s * u + lateral * n


def _rect(arm: int, s0: float, s1: float, l0: float, l1: float) -> Polygon:
    return Polygon([tuple(arm_point(arm, s, l)) for s, l in ((s0, l0), (s1, l0), (s1, l1), (s0, l1))])


def _straight_lane(lane_id, arm, s_from, s_to, lateral, left_kind, right_kind, bw, **kw):
    """Lane along an arm driven from s_from to s_to."""
    u, n = _arm_axes(arm)
    heading = u if s_to > s_from else -u
    left = np.array([-heading[1], heading[0]])
    # lateral coordinate of the driver's left side
    sgn = 1.0 if float(left @ n) > 0 else -1.0
    lw = 0.5 * LANE_WIDTH
    center = [tuple(arm_point(arm, s, lateral)) for s in (s_from, s_to)]
    lb = [tuple(arm_point(arm, s, lateral + sgn * lw)) for s in (s_from, s_to)]
    rb = [tuple(arm_point(arm, s, lateral - sgn * lw)) for s in (s_from, s_to)]
    return LaneSegment(
        id=lane_id,
        centerline=Polyline(center, LANE_WIDTH),
        left_boundary=Boundary(Polyline(lb, bw), left_kind),
        right_boundary=Boundary(Polyline(rb, bw), right_kind),
        surface=_rect(arm, min(s_from, s_to), max(s_from, s_to), lateral - lw, lateral + lw),
        **kw,
    )


def _arc(start, h_start, end, left: bool, n_seg: int = 16, offset: float = 0.0) -> np.ndarray:
    """Quarter arc from start (heading h_start) to end; offset > 0 moves outward."""
    nl = np.array([-h_start[1], h_start[0]])
    normal = nl if left else -nl
    r = float((end - start) @ h_start)
    c = start + r * normal
    a0 = math.atan2(start[1] - c[1], start[0] - c[0])
    a1 = math.atan2(end[1] - c[1], end[0] - c[0])
    da = wrap_angle(a1 - a0)
    rr = r + offset
    ts = np.linspace(0.0, 1.0, n_seg + 1)
    return np.stack([c[0] + rr * np.cos(a0 + da * ts), c[1] + rr * np.sin(a0 + da * ts)], 1)


def _connector(lane_id, start, h_start, end, h_end, kind, bw, **kw):
    lw = 0.5 * LANE_WIDTH
    if kind == "straight":
        nl = np.array([-h_start[1], h_start[0]])
        center = np.array([start, end])
        left = center + lw * nl
        right = center - lw * nl
        surface = np.concatenate([right, left[::-1]])
    else:
        is_left = kind == "left"
        center = _arc(start, h_start, end, is_left)
        # outward offset widens the radius; for a left turn that is the right side
        outer = _arc(start, h_start, end, is_left, offset=lw)
        inner = _arc(start, h_start, end, is_left, offset=-lw)
        left, right = (inner, outer) if is_left else (outer, inner)
        surface = np.concatenate([outer, inner[::-1]])
    return LaneSegment(
        id=lane_id,
        centerline=Polyline([tuple(p) for p in center], LANE_WIDTH),
        left_boundary=Boundary(Polyline([tuple(p) for p in left], bw), "crossable"),
        right_boundary=Boundary(Polyline([tuple(p) for p in right], bw), "crossable"),
        surface=Polygon([tuple(p) for p in surface]),
        turn_type=kind,
        **kw,
    )


def _light_timelines(rng, cfg: GeneratorConfig) -> dict:
    green, yellow = 25, 5
    phase = green + yellow
    cycle = 4 * phase
    offset = int(rng.integers(0, cycle))
    order = [("s", (0, 2)), ("l", (0, 2)), ("s", (1, 3)), ("l", (1, 3))]
    lights = {}
    for arm in range(4):
        for kind in ("s", "l"):
            states = []
            for f in range(cfg.n_frames):
                k, pos = divmod((f + offset) % cycle, phase)
                kk, arms = order[k]
                if kk == kind and arm in arms:
                    states.append("green" if pos < green else "yellow")
                else:
                    states.append("red")
            lights[f"L{arm}{kind}"] = states
    for lid in sorted(lights):
        if rng.random() < cfg.p_unknown_light:
            lights[lid] = ["unknown"] * cfg.n_frames
    return lights


def build_map(rng, cfg: GeneratorConfig) -> MapDocument:
    bw = cfg.boundary_width
    signalised = rng.random() >= cfg.p_all_way_stop
    lanes = []
    roads = [_rect(a, STOP_LINE, ARM_END, -2 * LANE_WIDTH, 2 * LANE_WIDTH) for a in range(4)]
    square = Polygon([(-STOP_LINE, -STOP_LINE), (STOP_LINE, -STOP_LINE),
                      (STOP_LINE, STOP_LINE), (-STOP_LINE, STOP_LINE)])
    roads.append(square)
    crossings = [_rect(a, STOP_LINE + 0.5, STOP_LINE + 3.5, -2 * LANE_WIDTH, 2 * LANE_WIDTH)
                 for a in range(4) if rng.random() < cfg.p_crossing]
    bus_arm = int(rng.integers(0, 4)) if rng.random() < cfg.p_bus_lane else -1
    inner, outer = 0.5 * LANE_WIDTH, 1.5 * LANE_WIDTH

    for a in range(4):
        divider = "conditionally_crossable" if rng.random() < 0.5 else "non_crossable"
        # incoming lanes (lateral > 0), far then near section
        lanes.append(_straight_lane(f"a{a}_in_far_i", a, ARM_END, NEAR_END, inner, divider, "crossable", bw,
                                    successors=(f"a{a}_in_near_i",)))
        lanes.append(_straight_lane(f"a{a}_in_far_o", a, ARM_END, NEAR_END, outer, "crossable", "non_crossable", bw,
                                    successors=(f"a{a}_in_near_o",)))
        lanes.append(_straight_lane(f"a{a}_in_near_i", a, NEAR_END, STOP_LINE, inner, "non_crossable",
                                    "non_crossable", bw, turn_type="left", successors=(f"c{a}_l",)))
        lanes.append(_straight_lane(f"a{a}_in_near_o", a, NEAR_END, STOP_LINE, outer, "non_crossable",
                                    "non_crossable", bw, successors=(f"c{a}_s", f"c{a}_r")))
        # outgoing lanes (lateral < 0)
        lanes.append(_straight_lane(f"a{a}_out_i", a, STOP_LINE, ARM_END, -inner, "non_crossable", "crossable", bw))
        lanes.append(_straight_lane(f"a{a}_out_o", a, STOP_LINE, ARM_END, -outer, "crossable", "non_crossable", bw,
                                    lane_class="bus" if a == bus_arm else "vehicle"))
        if rng.random() < cfg.p_bike_lane:
            lanes.append(LaneSegment(
                id=f"a{a}_bike",
                centerline=Polyline([tuple(arm_point(a, s, -7.75)) for s in (STOP_LINE, ARM_END)], 1.5),
                left_boundary=Boundary(Polyline([tuple(arm_point(a, s, -7.0)) for s in (STOP_LINE, ARM_END)], bw),
                                       "conditionally_crossable"),
                right_boundary=Boundary(Polyline([tuple(arm_point(a, s, -8.5)) for s in (STOP_LINE, ARM_END)], bw),
                                        "non_crossable"),
                surface=_rect(a, STOP_LINE, ARM_END, -8.5, -7.0),
                lane_class="bike",
            ))

    lights = _light_timelines(rng, cfg) if signalised else {}
    signs = []
    for a in range(4):
        u, _ = _arm_axes(a)
        h_in = -u
        left_arm, right_arm, opposite = (a - 1) % 4, (a + 1) % 4, (a + 2) % 4
        specs = [
            ("s", "straight", arm_point(a, STOP_LINE, outer), arm_point(opposite, STOP_LINE, -outer), opposite, f"a{opposite}_out_o"),
            ("l", "left", arm_point(a, STOP_LINE, inner), arm_point(left_arm, STOP_LINE, -inner), left_arm, f"a{left_arm}_out_i"),
            ("r", "right", arm_point(a, STOP_LINE, outer), arm_point(right_arm, STOP_LINE, -outer), right_arm, f"a{right_arm}_out_o"),
        ]
        for key, kind, start, end, to_arm, succ in specs:
            lane_id = f"c{a}_{key}"
            if not signalised:
                control, protected = "stop", False
            elif kind == "left":
                control, protected = f"L{a}l", True
            elif kind == "right" and rng.random() < 0.5:
                control, protected = "yield", False
            else:
                control, protected = f"L{a}s", False
            h_end = _arm_axes(to_arm)[0]
            lanes.append(_connector(lane_id, start, h_in, end, h_end, kind, bw,
                                    successors=(succ,), governing_control=control, protected=protected))
            if control in ("stop", "yield"):
                signs.append((lane_id, control))
    doc = MapDocument(road_polygons=roads, intersection_polygons=[square], crossing_polygons=crossings,
                      lanes=lanes, traffic_lights=lights, signs=signs)
    doc.validate(cfg.n_frames)
    return doc


# ------------------------------------------------------------------- paths

class Path:
    """Arc-length parametrised polyline."""

    def __init__(self, pts: np.ndarray):
        pts = np.asarray(pts, dtype=float)
        keep = np.concatenate([[True], np.hypot(*np.diff(pts, axis=0).T) > 1e-9])
        self.pts = pts[keep]
        seg = np.hypot(*np.diff(self.pts, axis=0).T)
        self.s = np.concatenate([[0.0], np.cumsum(seg)])
        self.length = float(self.s[-1])

    def at(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s = np.clip(np.asarray(s, dtype=float), 0.0, self.length)
        x = np.interp(s, self.s, self.pts[:, 0])
        y = np.interp(s, self.s, self.pts[:, 1])
        idx = np.clip(np.searchsorted(self.s, s, side="right") - 1, 0, len(self.pts) - 2)
        d = self.pts[idx + 1] - self.pts[idx]
        return np.stack([x, y], -1), np.arctan2(d[..., 1], d[..., 0])

    def arclength_of(self, point) -> float:
        """Arc length of the vertex closest to ``point``."""
        return float(self.s[np.argmin(np.hypot(*(self.pts - np.asarray(point)).T))])


def _lane_line(arm, lateral, s_from, s_to, step=1.0):
    n = max(2, int(abs(s_to - s_from) / step) + 1)
    return np.array([arm_point(arm, s, lateral) for s in np.linspace(s_from, s_to, n)])


def _turn_path(arm: int, left: bool) -> tuple[Path, float]:
    inner, outer = 0.5 * LANE_WIDTH, 1.5 * LANE_WIDTH
    lat = inner if left else outer
    to_arm = (arm - 1) % 4 if left else (arm + 1) % 4
    out_lat = -inner if left else -outer
    u, _ = _arm_axes(arm)
    approach = _lane_line(arm, lat, ARM_END, STOP_LINE)
    arc = _arc(arm_point(arm, STOP_LINE, lat), -u, arm_point(to_arm, STOP_LINE, out_lat), left, n_seg=48)
    exit_ = _lane_line(to_arm, out_lat, STOP_LINE, ARM_END)
    path = Path(np.concatenate([approach, arc[1:], exit_[1:]]))
    return path, ARM_END - STOP_LINE


def _through_path(arm: int) -> Path:
    outer = 1.5 * LANE_WIDTH
    opp = (arm + 2) % 4
    return Path(np.concatenate([_lane_line(arm, outer, ARM_END, STOP_LINE),
                                _lane_line(opp, -outer, STOP_LINE, ARM_END)]))


# -------------------------------------------------------------- generation

@dataclass
class _Ego:
    arm: int
    s0: float
    speed: float

    def pose(self, f: int, dt: float) -> RigidPose:
        s = self.s0 - self.speed * f * dt
        p = arm_point(self.arm, s, 1.5 * LANE_WIDTH)
        u, _ = _arm_axes(self.arm)
        return RigidPose(float(p[0]), float(p[1]), 0.0, math.atan2(-u[1], -u[0]))


def _to_ego(xy: np.ndarray, pose: RigidPose) -> np.ndarray:
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    d = xy - np.array([pose.tx, pose.ty])
    return np.stack([c * d[..., 0] + s * d[..., 1], -s * d[..., 0] + c * d[..., 1]], -1)


def _trajectory(maneuver: str, rng, cfg: GeneratorConfig):
    """Per-frame centers (n, 2) and headings (n,) for one actor, world frame."""
    n, dt = cfg.n_frames, cfg.frame_dt
    frames = np.arange(n)
    arm = int(rng.integers(0, 4))
    inner, outer = 0.5 * LANE_WIDTH, 1.5 * LANE_WIDTH
    u, _ = _arm_axes(arm)

    if maneuver in ("turn_left", "turn_right"):
        left = maneuver == "turn_left"
        path, s_entry = _turn_path(arm, left)
        v = rng.uniform(5.5, 8.0) if left else rng.uniform(3.5, 5.0)
        # entry no later than one horizon after the first full-history frame and
        # late enough that the turn is still under way at the end of the window
        hi = cfg.history_frames - 1 + cfg.horizon_frames
        lo = min(hi, cfg.n_frames - cfg.horizon_frames - (8 if left else 12))
        entry = rng.integers(max(lo, 0), max(hi, 0) + 1)
        s = s_entry - v * dt * (entry - frames)
        return path.at(s)
    if maneuver == "keep_lane":
        v = rng.uniform(5.0, 10.0)
        if rng.random() < 0.5:
            path = _through_path(arm)
        else:
            lat = -inner if rng.random() < 0.5 else -outer
            path = Path(_lane_line(arm, lat, STOP_LINE, ARM_END))
        s0 = rng.uniform(0.0, max(0.0, path.length - v * dt * n))
        return path.at(s0 + v * dt * frames)
    if maneuver in ("lane_change_left", "lane_change_right"):
        v = rng.uniform(7.0, 10.0)
        duration = 40
        go_left = maneuver == "lane_change_left"
        lat_from = -outer if go_left else -inner
        shift = LANE_WIDTH if go_left else -LANE_WIDTH  # in arm lateral coordinates
        # the crossing must be visible from every frame of the label window
        c_lo = cfg.n_frames - cfg.horizon_frames + 1
        c_hi = max(c_lo, cfg.history_frames + cfg.horizon_frames - 2)
        cross = int(rng.integers(c_lo, c_hi + 1))
        f0 = cross - duration // 2
        s0 = rng.uniform(STOP_LINE + 3.0, max(STOP_LINE + 3.0, ARM_END - 2.0 - v * dt * n))
        s = s0 + v * dt * frames
        tau = np.clip((frames - f0) / duration, 0.0, 1.0)
        lat = lat_from + shift * 0.5 * (1.0 - np.cos(math.pi * tau))
        dlat = np.where((tau > 0) & (tau < 1), shift * 0.5 * math.pi * np.sin(math.pi * tau) / (duration * dt), 0.0)
        xy = np.array([arm_point(arm, si, li) for si, li in zip(s, lat)])
        # lateral axis is n; heading rotates by atan(dlat / v)
        phi = math.atan2(u[1], u[0]) + np.arctan2(dlat, v)
        return xy, phi
    if maneuver == "stopping_stopped":
        lat = inner if rng.random() < 0.5 else outer
        s = rng.uniform(STOP_LINE + 2.6, NEAR_END - 2.0)
        p = arm_point(arm, s, lat)
        return np.repeat(p[None], n, 0), np.full(n, math.atan2(-u[1], -u[0]))
    side = 1.0 if rng.random() < 0.5 else -1.0
    lat = side * PARK_LATERAL
    heading = u if rng.random() < 0.5 else -u
    if maneuver == "parked":
        p = arm_point(arm, rng.uniform(STOP_LINE + 5.0, ARM_END - 5.0), lat)
        return np.repeat(p[None], n, 0), np.full(n, math.atan2(heading[1], heading[0]))
    if maneuver == "other":
        v = rng.uniform(1.5, 3.0)
        direction = float(heading @ u)
        travel = v * dt * n
        s0 = rng.uniform(STOP_LINE + 4.0 + (travel if direction < 0 else 0.0),
                         ARM_END - 3.0 - (travel if direction > 0 else 0.0))
        s = s0 + direction * v * dt * frames
        xy = np.array([arm_point(arm, si, lat) for si in s])
        return xy, np.full(n, math.atan2(heading[1], heading[0]))
    raise GenerationError(f"unknown maneuver {maneuver!r}")


def _collides(boxes_a, boxes_b, step: int = 2, margin: float = 0.4) -> bool:
    for f in range(0, len(boxes_a), step):
        a, b = boxes_a[f], boxes_b[f]
        if a is None or b is None:
            continue
        if math.hypot(a.cx - b.cx, a.cy - b.cy) > a.radius() + b.radius() + 2 * margin:
            continue
        da = OrientedBox2D(a.cx, a.cy, a.w + 2 * margin, a.h + 2 * margin, a.phi)
        db = OrientedBox2D(b.cx, b.cy, b.w + 2 * margin, b.h + 2 * margin, b.phi)
        if iou_matrix([da], [db])[0, 0] > 0:
            return True
    return False


def _sample_points(box: OrientedBox2D, sensor: np.ndarray, rng, cfg: GeneratorConfig) -> np.ndarray:
    """Noisy points on the box sides facing the sensor, world xy plus z."""
    corners = box.corners()
    edges = []
    for i in range(4):
        p, q = corners[i], corners[(i + 1) % 4]
        e = q - p
        normal = np.array([e[1], -e[0]])  # outward for CCW corners
        if float(normal @ (sensor - 0.5 * (p + q))) > 0:
            edges.append((p, q, float(np.hypot(*e))))
    visible = sum(e[2] for e in edges)
    dist = max(1.0, float(np.hypot(box.cx - sensor[0], box.cy - sensor[1])))
    count = int(math.floor(cfg.points_per_meter * visible / dist))
    if count <= 0:
        return np.zeros((0, 3))
    lengths = np.array([e[2] for e in edges])
    which = rng.choice(len(edges), size=count, p=lengths / lengths.sum())
    t = rng.random(count)
    starts = np.array([edges[k][0] for k in which])
    ends = np.array([edges[k][1] for k in which])
    xy = starts + t[:, None] * (ends - starts) + rng.normal(0.0, cfg.noise_sigma, (count, 2))
    z = rng.uniform(0.3, 1.5, count) + rng.normal(0.0, cfg.noise_sigma, count)
    return np.concatenate([xy, z[:, None]], 1)


def _place_actors(drawn, rng, cfg, poses, ego_boxes, mid, restarts: int = 25):
    """Collision-free trajectories for the drawn maneuvers, all inside the view at ``mid``."""
    for _restart in range(restarts):
        placed = []
        for maneuver in drawn:
            length = float(rng.uniform(4.2, 5.0))
            width = float(rng.uniform(1.75, 2.05))
            for _attempt in range(cfg.placement_attempts):
                xy, phi = _trajectory(maneuver, rng, cfg)
                local = _to_ego(xy[mid], poses[mid])
                if abs(local[0]) > cfg.view_half or abs(local[1]) > cfg.view_half:
                    continue
                boxes = [OrientedBox2D(float(x), float(y), length, width, float(p))
                         for (x, y), p in zip(xy, phi)]
                if _collides(boxes, ego_boxes) or any(_collides(boxes, o) for o in placed):
                    continue
                placed.append(boxes)
                break
            else:
                break
        if len(placed) == len(drawn):
            return placed
    raise GenerationError(f"could not place actors {drawn} without collisions "
                          f"after {restarts} restarts")


_PLACEMENT_ORDER = ["turn_right", "turn_left", "lane_change_left", "lane_change_right",
                    "keep_lane", "other", "stopping_stopped", "parked"]


def generate_scenario(cfg: GeneratorConfig, seed: int) -> Scenario:
    cfg.validate()
    layout_ss, actor_ss, lidar_ss = np.random.SeedSequence(int(seed)).spawn(3)
    layout_rng = np.random.default_rng(layout_ss)
    actor_rng = np.random.default_rng(actor_ss)
    lidar_rng = np.random.default_rng(lidar_ss)
    n, dt = cfg.n_frames, cfg.frame_dt

    map_doc = build_map(layout_rng, cfg)
    ego = _Ego(int(layout_rng.integers(0, 4)), float(layout_rng.uniform(13.0, 22.0)),
               float(layout_rng.uniform(0.0, cfg.ego_speed_max)))
    poses = [ego.pose(f, dt) for f in range(n)]
    ego_boxes = [OrientedBox2D(p.tx, p.ty, EGO_SIZE[0], EGO_SIZE[1], p.yaw) for p in poses]

    index = LaneIndex(map_doc)
    window = cfg.label_window
    mid = (window.start + window.stop) // 2 if len(window) else n // 2
    mid = min(max(mid, 0), n - 1)
    n_actors = int(actor_rng.integers(cfg.min_actors, cfg.max_actors + 1))
    weights = cfg.weights() if n_actors else None
    drawn = [ACTIONS[int(actor_rng.choice(len(ACTIONS), p=weights))] for _ in range(n_actors)]
    # constrained paths first; static actors fit around them
    drawn.sort(key=_PLACEMENT_ORDER.index)
    placed = _place_actors(drawn, actor_rng, cfg, poses, ego_boxes, mid)
    maneuvers = list(drawn)

    sweeps = []
    counts = [[0] * n for _ in placed]
    for f in range(n):
        pose = poses[f]
        sensor = np.array([pose.tx, pose.ty])
        chunks = []
        for k, boxes in enumerate(placed):
            pts = _sample_points(boxes[f], sensor, lidar_rng, cfg)
            counts[k][f] = len(pts)
            if len(pts):
                chunks.append(np.concatenate([_to_ego(pts[:, :2], pose), pts[:, 2:]], 1))
        area = (2 * cfg.clutter_radius) ** 2
        m = int(lidar_rng.poisson(cfg.clutter_density * area))
        clutter = np.stack([lidar_rng.uniform(-cfg.clutter_radius, cfg.clutter_radius, m),
                            lidar_rng.uniform(-cfg.clutter_radius, cfg.clutter_radius, m),
                            lidar_rng.uniform(0.0, 0.15, m)], 1)
        chunks.append(clutter)
        pts = np.round(np.concatenate(chunks), 3) + 0.0
        sweeps.append(Sweep(timestamp=round(f * dt, 6), ego_pose=pose, points=pts))

    tracks = []
    for k, boxes in enumerate(placed):
        labels = label_actions(boxes, map_doc, cfg.horizon_frames, dt, index=index)
        tracks.append(ActorTrack(actor_id=f"actor{k}", boxes=boxes, actions=labels,
                                 lidar_point_counts=counts[k]))
    scenario = Scenario(map=map_doc, sweeps=sweeps, tracks=tracks, seed=int(seed), frame_dt=dt)
    scenario.validate()
    scenario.maneuvers = maneuvers  # generation intent, not serialised
    return scenario


def class_histogram(scenarios, cfg: Optional[GeneratorConfig] = None) -> dict:
    """Label frequencies over frames with a complete history and horizon."""
    counts = {a: 0 for a in ACTIONS}
    for sc in scenarios:
        n = sc.n_frames
        window = cfg.label_window if cfg is not None else range(n)
        for tr in sc.tracks:
            for f in window:
                if 0 <= f < n and tr.actions[f] is not None:
                    counts[tr.actions[f]] += 1
    total = sum(counts.values())
    return {a: (c / total if total else 0.0) for a, c in counts.items()}


def load_generator_config(path) -> tuple[GeneratorConfig, int]:
    """Read a JSON key-value generator config. ``seed`` is mandatory."""
    import json

    with open(path, "r", encoding="utf-8") as fh:
        d = json.load(fh)
    if not isinstance(d, dict):
        raise GenerationError(f"{path}: generator config must be a JSON object")
    if "seed" not in d:
        raise GenerationError(f"{path}: generator config must set 'seed'")
    d = dict(d)
    seed = int(d.pop("seed"))
    return GeneratorConfig.from_dict(d), seed
