"""Map-grounded rules that turn a track's geometry into per-frame action labels.

Labels look at a window of ``horizon_frames`` around each frame (3 s at 10 Hz
by default). Rules are applied in priority order:

1. parked: slow over the whole window and centroid off every drivable lane
2. stopping_stopped: slow now, centroid on a drivable lane or intersection
3. other: off every drivable surface, or moving against its own heading
4. turn_left / turn_right: the intersection episode containing the frame, or
   the next one starting within the horizon, turns the heading by >= 45 deg;
   otherwise, outside intersections, the lane being followed is a turn lane
5. lane_change_left / lane_change_right: within the horizon the centroid
   enters a parallel neighbouring lane while the heading stays within 15 deg
6. keep_lane
"""
from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from ..geom import OrientedBox2D, points_in_polygon, wrap_angle
from .types import MapDocument

SLOW_SPEED = 0.5  # m/s
TURN_ANGLE = math.radians(45.0)
LANE_CHANGE_MAX_HEADING = math.radians(15.0)
LANE_ALIGN_COS = math.cos(math.radians(45.0))
PARALLEL_COS = math.cos(math.radians(15.0))
NEIGHBOUR_MIN_OFFSET = 1.0  # m between parallel centerlines


class LaneIndex:
    """Vectorised lane lookups over the drivable lanes of a map."""

    def __init__(self, map_doc: MapDocument):
        self.lanes = [ln for ln in map_doc.lanes if ln.drivable]
        self.intersections = list(map_doc.intersection_polygons)
        self._centerlines = [ln.centerline.as_array() for ln in self.lanes]

    def inside(self, xy: np.ndarray) -> np.ndarray:
        """(n, lanes) membership of points in lane surfaces."""
        out = np.zeros((len(xy), len(self.lanes)), dtype=bool)
        for k, ln in enumerate(self.lanes):
            out[:, k] = points_in_polygon(ln.surface, xy[:, 0], xy[:, 1])
        return out

    def in_intersection(self, xy: np.ndarray) -> np.ndarray:
        out = np.zeros(len(xy), dtype=bool)
        for poly in self.intersections:
            out |= points_in_polygon(poly, xy[:, 0], xy[:, 1])
        return out

    def frame(self, k: int, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Tangent (n, 2) of lane ``k`` at the nearest centerline point and the
        signed lateral offset (left positive) of each point from that centerline."""
        v = self._centerlines[k]
        a, b = v[:-1], v[1:]
        e = b - a
        L2 = np.maximum((e ** 2).sum(1), 1e-12)
        d = xy[:, None, :] - a[None, :, :]
        t = np.clip((d * e[None]).sum(-1) / L2[None], 0.0, 1.0)
        proj = a[None] + t[..., None] * e[None]
        dist = np.hypot(*(xy[:, None, :] - proj).transpose(2, 0, 1))
        seg = dist.argmin(1)
        tan = e[seg] / np.sqrt(L2[seg])[:, None]
        rel = xy - a[seg]
        lateral = tan[:, 0] * rel[:, 1] - tan[:, 1] * rel[:, 0]
        return tan, lateral


def _velocities(centers: np.ndarray, present: np.ndarray, dt: float) -> np.ndarray:
    n = len(centers)
    vel = np.zeros((n, 2))
    for f in range(n):
        if not present[f]:
            continue
        lo = f - 1 if f > 0 and present[f - 1] else f
        hi = f + 1 if f + 1 < n and present[f + 1] else f
        if hi > lo:
            vel[f] = (centers[hi] - centers[lo]) / ((hi - lo) * dt)
    return vel


def label_actions(boxes: Sequence[Optional[OrientedBox2D]], map_doc: MapDocument,
                  horizon_frames: int = 30, dt: float = 0.1,
                  index: Optional[LaneIndex] = None) -> list:
    """One action label per frame (None where the actor is absent)."""
    n = len(boxes)
    present = np.array([b is not None for b in boxes])
    labels: list = [None] * n
    if not present.any():
        return labels
    index = index or LaneIndex(map_doc)
    centers = np.array([(b.cx, b.cy) if b is not None else (0.0, 0.0) for b in boxes])
    phis = np.array([b.phi if b is not None else 0.0 for b in boxes])
    hvec = np.stack([np.cos(phis), np.sin(phis)], 1)
    vel = _velocities(centers, present, dt)
    speed = np.hypot(vel[:, 0], vel[:, 1])
    slow = speed < SLOW_SPEED

    member = index.inside(centers) & present[:, None]
    in_inter = index.in_intersection(centers) & present
    on_lane = member.any(1)

    # lane followed at each frame: aligned member lane nearest its centerline
    tangents, laterals = [], []
    for k in range(len(index.lanes)):
        t, lat = index.frame(k, centers)
        tangents.append(t)
        laterals.append(lat)
    lane_at = np.full(n, -1)
    for f in np.nonzero(on_lane)[0]:
        best = None
        for k in np.nonzero(member[f])[0]:
            if float(tangents[k][f] @ hvec[f]) < LANE_ALIGN_COS:
                continue
            key = abs(laterals[k][f])
            if best is None or key < best[0]:
                best = (key, k)
        if best is not None:
            lane_at[f] = best[1]

    episodes = []
    f = 0
    while f < n:
        if in_inter[f]:
            g = f
            while g + 1 < n and in_inter[g + 1]:
                g += 1
            episodes.append((f, g))
            f = g + 1
        else:
            f += 1

    def episode_turn(a: int, b: int) -> float:
        pre = a - 1 if a > 0 and present[a - 1] else a
        post = b + 1 if b + 1 < n and present[b + 1] else b
        return wrap_angle(phis[post] - phis[pre])

    for f in np.nonzero(present)[0]:
        lo, hi = max(0, f - horizon_frames), min(n - 1, f + horizon_frames)
        window = present[lo:hi + 1]
        if slow[f]:
            if slow[lo:hi + 1][window].all() and not on_lane[f]:
                labels[f] = "parked"
                continue
            if on_lane[f] or in_inter[f]:
                labels[f] = "stopping_stopped"
                continue
            labels[f] = "other"
            continue
        if not (on_lane[f] or in_inter[f]):
            labels[f] = "other"
            continue
        if float(vel[f] @ hvec[f]) < 0:
            labels[f] = "other"
            continue

        episode = None
        for a, b in episodes:
            if a <= f <= b or f < a <= f + horizon_frames:
                episode = (a, b)
                break
        if episode is not None:
            turn = episode_turn(*episode)
            if abs(turn) >= TURN_ANGLE:
                labels[f] = "turn_left" if turn > 0 else "turn_right"
                continue
        k = lane_at[f]
        if k >= 0 and not in_inter[f] and index.lanes[k].turn_type != "straight":
            labels[f] = "turn_" + index.lanes[k].turn_type
            continue

        change = _lane_change(f, k, in_inter, present, lane_at, centers, phis, index,
                              tangents, laterals, horizon_frames)
        labels[f] = change or "keep_lane"
    return labels


def _lane_change(f, k, in_inter, present, lane_at, centers, phis, index, tangents, laterals, horizon):
    if k < 0 or in_inter[f]:
        return None
    n = len(present)
    cur = k
    for s in range(f + 1, min(n, f + horizon + 1)):
        if not present[s] or in_inter[s]:
            return None
        other = lane_at[s]
        if other < 0 or other == cur:
            continue
        parallel = float(tangents[cur][s] @ tangents[other][s]) > PARALLEL_COS
        offset = laterals[cur][s] - laterals[other][s]
        if parallel and abs(offset) > NEIGHBOUR_MIN_OFFSET:
            if abs(wrap_angle(phis[s] - phis[f])) < LANE_CHANGE_MAX_HEADING:
                return "lane_change_left" if offset > 0 else "lane_change_right"
            return None
        cur = other  # longitudinal successor
    return None
