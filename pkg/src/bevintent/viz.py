"""Static SVG rendering of one frame in the ego's bird's eye view."""
from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from .geom import OrientedBox2D, RigidPose, transform_box, transform_points
from .scene.types import ACTIONS, Scenario

_WORLD = RigidPose()
SCALE = 8.0  # pixels per metre
ARROW_MAX = 4.0  # metres at probability 1
# glyph direction per action, relative to the box heading
GLYPH_ANGLES = {
    "keep_lane": 0.0,
    "turn_left": math.pi / 2,
    "turn_right": -math.pi / 2,
    "lane_change_left": math.pi / 4,
    "lane_change_right": -math.pi / 4,
    "stopping_stopped": math.pi,
    "parked": 3 * math.pi / 4,
    "other": -3 * math.pi / 4,
}
COLORS = {"road": "#2b2b2b", "intersection": "#3a3a3a", "crossing": "#45454f", "lane": "#5c5c5c",
          "points": "#6fa8dc", "gt": "#ffffff", "gt_empty": "#8a8a8a", "pred": "#e69138",
          "trail": "#f6b26b", "glyph": "#93c47d", "ego": "#cc0000", "bg": "#111111"}


def _f(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


class Canvas:
    """Ego-frame metres to SVG pixels: +x up the page, +y to the left."""

    def __init__(self, half_x: float, half_y: float):
        self.hx, self.hy = half_x, half_y
        self.w, self.h = 2 * half_y * SCALE, 2 * half_x * SCALE
        self.items: list = []

    def px(self, x, y) -> tuple:
        return (self.hy - y) * SCALE, (self.hx - x) * SCALE

    def polygon(self, pts, fill="none", stroke="none", width=1.0, cls=""):
        s = " ".join(f"{_f(a)},{_f(b)}" for a, b in (self.px(x, y) for x, y in pts))
        self.items.append(f'<polygon class="{cls}" points="{s}" fill="{fill}" stroke="{stroke}" '
                          f'stroke-width="{_f(width)}"/>')

    def polyline(self, pts, stroke, width=1.0, cls="", dash=None):
        s = " ".join(f"{_f(a)},{_f(b)}" for a, b in (self.px(x, y) for x, y in pts))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.items.append(f'<polyline class="{cls}" points="{s}" fill="none" stroke="{stroke}" '
                          f'stroke-width="{_f(width)}"{extra}/>')

    def circle(self, x, y, r, fill, cls=""):
        a, b = self.px(x, y)
        self.items.append(f'<circle class="{cls}" cx="{_f(a)}" cy="{_f(b)}" r="{_f(r)}" fill="{fill}"/>')

    def line(self, x0, y0, x1, y1, stroke, width=1.0, cls="", length=None):
        a0, b0 = self.px(x0, y0)
        a1, b1 = self.px(x1, y1)
        data = f' data-length="{length:.6f}"' if length is not None else ""
        self.items.append(f'<line class="{cls}" x1="{_f(a0)}" y1="{_f(b0)}" x2="{_f(a1)}" y2="{_f(b1)}" '
                          f'stroke="{stroke}" stroke-width="{_f(width)}"{data}/>')

    def render(self) -> str:
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(self.w)}" height="{_f(self.h)}" '
                f'viewBox="0 0 {_f(self.w)} {_f(self.h)}">')
        bg = f'<rect width="{_f(self.w)}" height="{_f(self.h)}" fill="{COLORS["bg"]}"/>'
        return "\n".join([head, bg, *self.items, "</svg>"]) + "\n"


def _local_poly(poly, ego):
    v = poly.as_array()
    xyz = np.concatenate([v, np.zeros((len(v), 1))], 1)
    return transform_points(xyz, _WORLD, ego)[:, :2]


def intent_glyph(c: Canvas, box: OrientedBox2D, intent: Sequence[float]) -> None:
    """One arrow per action from the box center; length proportional to its probability."""
    for a, p in zip(ACTIONS, intent):
        p = float(p)
        if p < 0.01:
            continue
        ang = box.phi + GLYPH_ANGLES[a]
        L = ARROW_MAX * p
        c.line(box.cx, box.cy, box.cx + L * math.cos(ang), box.cy + L * math.sin(ang),
               COLORS["glyph"], 1.5, cls=f"intent {a}", length=L)


def render_frame(scenario: Scenario, frame: int, predictions: Optional[dict] = None,
                 half_x: float = 25.6, half_y: float = 25.6) -> str:
    """SVG text for ``frame``: map, current sweep, ground truth (grey when the
    object has no LiDAR points), predicted boxes with waypoint trails and glyphs.
    ``predictions`` is one record of the prediction dump (ego-frame detections)."""
    if not 0 <= frame < scenario.n_frames:
        raise IndexError(f"frame {frame} out of range; valid frames are 0..{scenario.n_frames - 1}")
    ego = scenario.sweeps[frame].ego_pose
    c = Canvas(half_x, half_y)
    m = scenario.map
    for key, polys in (("road", m.road_polygons), ("intersection", m.intersection_polygons),
                       ("crossing", m.crossing_polygons)):
        for p in polys:
            c.polygon(_local_poly(p, ego), fill=COLORS[key], cls=key)
    for ln in m.lanes:
        c.polygon(_local_poly(ln.surface, ego), stroke=COLORS["lane"], width=0.5, cls="lane")
    pts = scenario.sweeps[frame].points
    keep = (np.abs(pts[:, 0]) < half_x) & (np.abs(pts[:, 1]) < half_y) if len(pts) else np.zeros(0, bool)
    for x, y in pts[keep, :2]:
        c.circle(x, y, 0.8, COLORS["points"], cls="pt")
    c.polygon(OrientedBox2D(0.0, 0.0, 4.5, 1.9, 0.0).corners(), stroke=COLORS["ego"], width=1.5, cls="ego")
    for tr in scenario.tracks:
        b = tr.boxes[frame]
        if b is None:
            continue
        lb = transform_box(b, _WORLD, ego)
        empty = tr.lidar_point_counts[frame] == 0
        c.polygon(lb.corners(), stroke=COLORS["gt_empty" if empty else "gt"], width=1.5,
                  cls="gt empty" if empty else "gt")
    for d in (predictions or {}).get("detections", []):
        box = OrientedBox2D(*d["box"])
        c.polygon(box.corners(), stroke=COLORS["pred"], width=1.5, cls="pred")
        trail = [(box.cx, box.cy)] + [(w[0], w[1]) for w in d.get("waypoints", [])]
        if len(trail) > 1:
            c.polyline(trail, COLORS["trail"], 1.0, cls="trail", dash="3,2")
        intent_glyph(c, box, d.get("intent", []))
    return c.render()


def ego_frame_record(record: dict, scenario: Scenario) -> dict:
    """Prediction dump records are in world coordinates; move them to the
    frame's ego coordinates for drawing."""
    ego = scenario.sweeps[record["frame"]].ego_pose
    out = dict(record)
    dets = []
    for d in record.get("detections", []):
        d = dict(d)
        d["box"] = list(transform_box(OrientedBox2D(*d["box"]), _WORLD, ego).as_tuple())
        d["waypoints"] = [list(transform_box(OrientedBox2D(*w), _WORLD, ego).as_tuple()) for w in d["waypoints"]]
        dets.append(d)
    out["detections"] = dets
    return out


__all__ = ["GLYPH_ANGLES", "ARROW_MAX", "Canvas", "intent_glyph", "render_frame", "ego_frame_record"]
