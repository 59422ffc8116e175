"""Network inputs: stacked height x time occupancy and the rasterized semantic map.

Both tensors are channels-first over a BEV grid anchored at the current ego
pose: rows run along +x (forward), columns along +y (left), and the grid origin
is at (-L/2, -W/2). Height bins start at ``z_min`` in the ego frame.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .geom import (GridSpec, Polygon, Polyline, RigidPose, points_in_polygon, polygons_intersect,
                   rasterize_polygon, rasterize_polyline, transform_points)
from .scene.types import BOUNDARY_KINDS, MapDocument, Scenario, Sweep

MAP_CHANNELS = (
    "road",
    "intersection",
    "crossing",
    "boundary_crossable",
    "boundary_non_crossable",
    "boundary_conditionally_crossable",
    "lane_straight",
    "lane_left",
    "lane_right",
    "lane_bike",
    "lane_bus",
    "light_green",
    "light_yellow",
    "light_red",
    "protected",
    "yield",
    "stop",
)
N_MAP_CHANNELS = len(MAP_CHANNELS)
_WORLD = RigidPose(0.0, 0.0, 0.0, 0.0)
BIN_SNAP = 1e-9  # in cell units


class EncoderConfigError(ValueError):
    pass


def _integral(value: float, step: float, name: str) -> int:
    n = value / step
    k = int(round(n))
    if k < 1 or abs(n - k) > 1e-6:
        raise EncoderConfigError(f"{name} extent {value} is not an integral number of {step} m cells")
    return k


@dataclass(frozen=True)
class VoxelConfig:
    L: float = 144.0
    W: float = 80.0
    H: float = 5.8
    dL: float = 0.2
    dW: float = 0.2
    dH: float = 0.2
    T_past: int = 10
    z_min: float = 0.0

    def __post_init__(self):
        for name in ("dL", "dW", "dH"):
            if not getattr(self, name) > 0:
                raise EncoderConfigError(f"{name} must be positive")
        self.rows, self.cols, self.n_height  # noqa: B018  (validates)
        if int(self.T_past) != self.T_past or self.T_past < 1:
            raise EncoderConfigError("T_past must be an integer >= 1")

    @property
    def rows(self) -> int:
        return _integral(self.L, self.dL, "L")

    @property
    def cols(self) -> int:
        return _integral(self.W, self.dW, "W")

    @property
    def n_height(self) -> int:
        return _integral(self.H, self.dH, "H")

    @property
    def lidar_channels(self) -> int:
        return self.n_height * self.T_past

    @property
    def lidar_shape(self) -> tuple:
        return (self.lidar_channels, self.rows, self.cols)

    @property
    def map_shape(self) -> tuple:
        return (N_MAP_CHANNELS, self.rows, self.cols)

    def grid(self) -> GridSpec:
        if abs(self.dL - self.dW) > 1e-12:
            raise EncoderConfigError("map rasterization needs square cells (dL == dW)")
        return GridSpec(origin=(-0.5 * self.L, -0.5 * self.W), resolution=self.dL,
                        rows=self.rows, cols=self.cols)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "VoxelConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise EncoderConfigError(f"unknown voxel config keys: {sorted(unknown)}")
        return cls(**d)


# ----------------------------------------------------------------- lidar

def voxel_indices(points: np.ndarray, cfg: VoxelConfig) -> tuple:
    """(row, col, height) bins of ego-frame points inside the extent, half-open."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    # coordinates within BIN_SNAP of a cell edge snap onto it, so exact edges are
    # not lost to rounding (25.6 / 0.4 == 63.99...)
    r = np.floor((pts[:, 0] + 0.5 * cfg.L) / cfg.dL + BIN_SNAP)
    c = np.floor((pts[:, 1] + 0.5 * cfg.W) / cfg.dW + BIN_SNAP)
    h = np.floor((pts[:, 2] - cfg.z_min) / cfg.dH + BIN_SNAP)
    keep = ((r >= 0) & (r < cfg.rows) & (c >= 0) & (c < cfg.cols)
            & (h >= 0) & (h < cfg.n_height))
    return r[keep].astype(np.int64), c[keep].astype(np.int64), h[keep].astype(np.int64)


def voxelize_sweeps(sweeps: Sequence[Sweep], current_ego: RigidPose, cfg: VoxelConfig) -> np.ndarray:
    """Occupancy tensor (H/dH * T_past, rows, cols) of uint8.

    ``sweeps`` are ordered oldest first; the last one is the current sweep. Fewer
    than ``T_past`` sweeps leave the oldest slabs empty.
    """
    if len(sweeps) < 1:
        raise EncoderConfigError("need at least one sweep")
    sweeps = list(sweeps)[-cfg.T_past:]
    out = np.zeros(cfg.lidar_shape, dtype=np.uint8)
    offset = cfg.T_past - len(sweeps)
    nh = cfg.n_height
    for k, sw in enumerate(sweeps):
        if len(sw.points) == 0:
            continue
        pts = transform_points(sw.points, sw.ego_pose, current_ego)
        r, c, h = voxel_indices(pts, cfg)
        out[(offset + k) * nh + h, r, c] = 1
    return out


# ------------------------------------------------------------------- map

def _conflicts(map_doc: MapDocument) -> dict:
    """Straight light-governed lane id -> protected lane ids whose surfaces cross
    it inside an intersection. Cached on the map document."""
    cached = map_doc.__dict__.get("_conflict_cache")
    if cached is not None:
        return cached
    straights = [ln for ln in map_doc.lanes if ln.turn_type == "straight" and ln.light]
    protected = [ln for ln in map_doc.lanes if ln.protected and ln.light]
    table = {}
    for s in straights:
        hits = []
        sb = s.surface.bounds()
        for p in protected:
            if p.id == s.id:
                continue
            pb = p.surface.bounds()
            if sb[0] > pb[2] or pb[0] > sb[2] or sb[1] > pb[3] or pb[1] > sb[3]:
                continue
            witnesses = polygons_intersect(s.surface, p.surface)
            if not witnesses:
                continue
            w = np.array(witnesses, dtype=float)
            inside = np.zeros(len(w), dtype=bool)
            for poly in map_doc.intersection_polygons:
                inside |= points_in_polygon(poly, w[:, 0], w[:, 1])
            if inside.any():
                hits.append(p.id)
        table[s.id] = hits
    map_doc.__dict__["_conflict_cache"] = table
    return table


def infer_unobserved_lights(map_doc: MapDocument, frame: int) -> dict:
    """Light id -> state at ``frame``, with unknown lights resolved where safe.

    A straight lane whose light is unknown and whose path crosses a protected turn
    that currently has a green light must be red. Applied until nothing changes.
    """
    states = {lid: tl[frame] for lid, tl in map_doc.traffic_lights.items()}
    table = _conflicts(map_doc)
    lanes = {ln.id: ln for ln in map_doc.lanes}
    changed = True
    while changed:
        changed = False
        for sid, others in table.items():
            light = lanes[sid].light
            if states[light] != "unknown":
                continue
            if any(states[lanes[o].light] == "green" for o in others):
                states[light] = "red"
                changed = True
    return states


def _local_polygon(poly: Polygon, ego: RigidPose) -> Optional[Polygon]:
    v = poly.as_array()
    xyz = np.concatenate([v, np.zeros((len(v), 1))], 1)
    loc = transform_points(xyz, _WORLD, ego)[:, :2]
    return Polygon([tuple(p) for p in loc])


def _local_polyline(line: Polyline, ego: RigidPose) -> Polyline:
    v = line.as_array()
    xyz = np.concatenate([v, np.zeros((len(v), 1))], 1)
    loc = transform_points(xyz, _WORLD, ego)[:, :2]
    return Polyline([tuple(p) for p in loc], line.width)


def _visible(bounds, extent) -> bool:
    x0, y0, x1, y1 = bounds
    return not (x1 < -extent[0] or x0 > extent[0] or y1 < -extent[1] or y0 > extent[1])


def rasterize_map(map_doc: MapDocument, frame: int, cfg: VoxelConfig, ego: RigidPose) -> np.ndarray:
    """Semantic map tensor (17, rows, cols) of int8 in {-1, +1}."""
    grid = cfg.grid()
    masks = np.zeros(cfg.map_shape, dtype=bool)
    extent = (0.5 * cfg.L + 1.0, 0.5 * cfg.W + 1.0)
    states = infer_unobserved_lights(map_doc, frame) if map_doc.traffic_lights else {}
    signs = {}
    for lane_id, kind in map_doc.signs:
        signs.setdefault(lane_id, set()).add(kind)

    def poly_mask(poly: Polygon):
        loc = _local_polygon(poly, ego)
        if not _visible(loc.bounds(), extent):
            return None
        return rasterize_polygon(loc, grid)

    for ch, polys in ((0, map_doc.road_polygons), (1, map_doc.intersection_polygons),
                      (2, map_doc.crossing_polygons)):
        for poly in polys:
            m = poly_mask(poly)
            if m is not None:
                masks[ch] |= m

    for ln in map_doc.lanes:
        for b in (ln.left_boundary, ln.right_boundary):
            loc = _local_polyline(b.line, ego)
            v = loc.as_array()
            if _visible((v[:, 0].min(), v[:, 1].min(), v[:, 0].max(), v[:, 1].max()), extent):
                masks[3 + BOUNDARY_KINDS.index(b.kind)] |= rasterize_polyline(loc, grid)
        surf = poly_mask(ln.surface)
        if surf is None:
            continue
        if ln.drivable:
            masks[6 + ("straight", "left", "right").index(ln.turn_type)] |= surf
        if ln.lane_class == "bike":
            masks[9] |= surf
        elif ln.lane_class == "bus":
            masks[10] |= surf
        light = ln.light
        state = states.get(light) if light else None
        if state in ("green", "yellow", "red"):
            masks[11 + ("green", "yellow", "red").index(state)] |= surf
        if ln.protected and state == "green":
            masks[14] |= surf
        kinds = set(signs.get(ln.id, ()))
        if ln.sign:
            kinds.add(ln.sign)
        if "yield" in kinds:
            masks[15] |= surf
        if "stop" in kinds:
            masks[16] |= surf
    # overlapping lanes under different lights: the most restrictive wins
    masks[11] &= ~(masks[12] | masks[13])
    masks[12] &= ~masks[13]
    return np.where(masks, 1, -1).astype(np.int8)


def encode_frame(scenario: Scenario, frame: int, cfg: VoxelConfig) -> tuple:
    """(lidar, map) tensors for ``frame`` using the sweeps up to and including it."""
    if not 0 <= frame < scenario.n_frames:
        raise IndexError(f"frame {frame} outside 0..{scenario.n_frames - 1}")
    ego = scenario.sweeps[frame].ego_pose
    lo = max(0, frame - cfg.T_past + 1)
    lidar = voxelize_sweeps(scenario.sweeps[lo:frame + 1], ego, cfg)
    return lidar, rasterize_map(scenario.map, frame, cfg, ego)


# ------------------------------------------------------------ tensor dumps

def dump_tensor(path, array: np.ndarray) -> None:
    """Write a tensor as ``.npy`` (shape + dtype header, row-major values)."""
    np.save(path, np.ascontiguousarray(array), allow_pickle=False)


def load_tensor(path) -> np.ndarray:
    return np.load(path, allow_pickle=False)


def channel_index(t_index: int, h_index: int, cfg: VoxelConfig) -> int:
    return t_index * cfg.n_height + h_index


__all__ = [
    "MAP_CHANNELS", "N_MAP_CHANNELS", "EncoderConfigError", "VoxelConfig", "voxel_indices",
    "voxelize_sweeps", "infer_unobserved_lights", "rasterize_map", "encode_frame",
    "dump_tensor", "load_tensor", "channel_index",
]
