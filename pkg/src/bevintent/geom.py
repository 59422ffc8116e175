"""Planar and rigid-body geometry shared by the whole pipeline.

Boxes are BEV rectangles ``(cx, cy, w, h, phi)`` where ``w`` runs along the
heading and ``h`` across it. Grids index cells as ``(row, col)`` with rows
along +x and columns along +y, cell ``(0, 0)`` touching ``origin``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

_EPS = 1e-12


def wrap_angle(a: float) -> float:
    """Map an angle to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


@dataclass(frozen=True)
class OrientedBox2D:
    cx: float
    cy: float
    w: float
    h: float
    phi: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box dimensions must be positive, got w={self.w}, h={self.h}")
        object.__setattr__(self, "phi", wrap_angle(float(self.phi)))

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy])

    def corners(self) -> np.ndarray:
        """(4, 2) corners in counter-clockwise order."""
        c, s = math.cos(self.phi), math.sin(self.phi)
        hw, hh = 0.5 * self.w, 0.5 * self.h
        local = ((hw, hh), (-hw, hh), (-hw, -hh), (hw, -hh))
        return np.array([(self.cx + c * x - s * y, self.cy + s * x + c * y) for x, y in local])

    def radius(self) -> float:
        return 0.5 * math.hypot(self.w, self.h)

    def as_tuple(self) -> tuple:
        return (self.cx, self.cy, self.w, self.h, self.phi)


def _signed_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


@dataclass(frozen=True)
class Polygon:
    """Simple polygon; vertices are stored counter-clockwise."""

    vertices: tuple

    def __post_init__(self):
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        if len(verts) < 3:
            raise ValueError("polygon needs at least 3 vertices")
        if _signed_area(np.array(verts)) < 0:
            verts = verts[::-1]
        object.__setattr__(self, "vertices", verts)

    def as_array(self) -> np.ndarray:
        return np.array(self.vertices, dtype=float)

    @property
    def area(self) -> float:
        return _signed_area(self.as_array())

    def bounds(self) -> tuple[float, float, float, float]:
        a = self.as_array()
        return a[:, 0].min(), a[:, 1].min(), a[:, 0].max(), a[:, 1].max()


@dataclass(frozen=True)
class Polyline:
    vertices: tuple
    width: float

    def __post_init__(self):
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        if len(verts) < 2:
            raise ValueError("polyline needs at least 2 vertices")
        if not self.width > 0:
            raise ValueError(f"polyline width must be positive, got {self.width}")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "width", float(self.width))

    def as_array(self) -> np.ndarray:
        return np.array(self.vertices, dtype=float)


@dataclass(frozen=True)
class GridSpec:
    origin: tuple
    resolution: float
    rows: int
    cols: int

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError("grid resolution must be positive")
        if self.rows <= 0 or self.cols <= 0:
            raise ValueError("grid must have at least one row and column")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """x of each row center and y of each column center."""
        ox, oy = self.origin
        xs = ox + (np.arange(self.rows) + 0.5) * self.resolution
        ys = oy + (np.arange(self.cols) + 0.5) * self.resolution
        return xs, ys

    def _window(self, xmin, ymin, xmax, ymax):
        """Index ranges of rows/cols whose centers may fall in the given bounds."""
        ox, oy = self.origin
        r = self.resolution
        r0 = max(0, int(math.floor((xmin - ox) / r - 0.5)))
        r1 = min(self.rows, int(math.ceil((xmax - ox) / r - 0.5)) + 1)
        c0 = max(0, int(math.floor((ymin - oy) / r - 0.5)))
        c1 = min(self.cols, int(math.ceil((ymax - oy) / r - 0.5)) + 1)
        return r0, r1, c0, c1


# ---------------------------------------------------------------- IoU

def _clip(subject: list, a: np.ndarray, b: np.ndarray) -> list:
    """Keep the part of ``subject`` on the left of the directed edge a->b."""
    ex, ey = b[0] - a[0], b[1] - a[1]
    out = []
    n = len(subject)
    for i in range(n):
        p, q = subject[i], subject[(i + 1) % n]
        sp = ex * (p[1] - a[1]) - ey * (p[0] - a[0])
        sq = ex * (q[1] - a[1]) - ey * (q[0] - a[0])
        if sp >= 0:
            out.append(p)
        if (sp >= 0) != (sq >= 0):
            t = sp / (sp - sq)
            out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return out


def convex_intersection_area(p: np.ndarray, q: np.ndarray) -> float:
    """Area of the intersection of two CCW convex polygons."""
    poly = [tuple(v) for v in p]
    m = len(q)
    for i in range(m):
        poly = _clip(poly, q[i], q[(i + 1) % m])
        if len(poly) < 3:
            return 0.0
    return max(0.0, _signed_area(np.array(poly)))


def rotated_iou(a: OrientedBox2D, b: OrientedBox2D) -> float:
    """Exact IoU of two rotated rectangles."""
    dx, dy = a.cx - b.cx, a.cy - b.cy
    rr = a.radius() + b.radius()
    if dx * dx + dy * dy >= rr * rr:
        return 0.0
    # fixed operand order keeps iou(a, b) bit-identical to iou(b, a)
    if b.as_tuple() < a.as_tuple():
        a, b = b, a
    inter = convex_intersection_area(a.corners(), b.corners())
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return min(1.0, max(0.0, inter / union))


def iou_matrix(boxes_a: Sequence[OrientedBox2D], boxes_b: Sequence[OrientedBox2D]) -> np.ndarray:
    """Pairwise rotated IoU; pairs whose circumcircles are disjoint are skipped."""
    out = np.zeros((len(boxes_a), len(boxes_b)))
    if not len(boxes_a) or not len(boxes_b):
        return out
    ca = np.array([[bx.cx, bx.cy, bx.radius()] for bx in boxes_a])
    cb = np.array([[bx.cx, bx.cy, bx.radius()] for bx in boxes_b])
    d2 = (ca[:, None, 0] - cb[None, :, 0]) ** 2 + (ca[:, None, 1] - cb[None, :, 1]) ** 2
    rr = (ca[:, None, 2] + cb[None, :, 2]) ** 2
    for i, j in zip(*np.nonzero(d2 < rr)):
        out[i, j] = rotated_iou(boxes_a[i], boxes_b[j])
    return out


def point_in_box(box: OrientedBox2D, pts: np.ndarray, margin: float = 0.0) -> np.ndarray:
    """Boolean mask of 2D points inside the box dilated by ``margin``."""
    c, s = math.cos(box.phi), math.sin(box.phi)
    dx = pts[..., 0] - box.cx
    dy = pts[..., 1] - box.cy
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return (np.abs(u) <= 0.5 * box.w + margin) & (np.abs(v) <= 0.5 * box.h + margin)


# ---------------------------------------------------------- rasterization

def points_in_polygon(poly: Polygon, x: np.ndarray, y: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Even-odd point-in-polygon test; points on the boundary count as inside."""
    v = poly.as_array()
    n = len(v)
    inside = np.zeros(np.broadcast(x, y).shape, dtype=bool)
    on_edge = np.zeros_like(inside)
    for i in range(n):
        x1, y1 = v[i]
        x2, y2 = v[(i + 1) % n]
        crosses = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < xi)
        on_edge |= _dist_to_segment(x, y, x1, y1, x2, y2) <= tol
    return inside | on_edge


def _dist_to_segment(x, y, x1, y1, x2, y2):
    ex, ey = x2 - x1, y2 - y1
    L2 = ex * ex + ey * ey
    if L2 <= _EPS:
        return np.hypot(x - x1, y - y1)
    t = np.clip(((x - x1) * ex + (y - y1) * ey) / L2, 0.0, 1.0)
    return np.hypot(x - (x1 + t * ex), y - (y1 + t * ey))


def rasterize_polygon(poly: Polygon, grid: GridSpec) -> np.ndarray:
    """Boolean (rows, cols) mask of cells whose center lies in the polygon."""
    mask = np.zeros(grid.shape, dtype=bool)
    r0, r1, c0, c1 = grid._window(*poly.bounds())
    if r0 >= r1 or c0 >= c1:
        return mask
    xs, ys = grid.cell_centers()
    X, Y = np.meshgrid(xs[r0:r1], ys[c0:c1], indexing="ij")
    mask[r0:r1, c0:c1] = points_in_polygon(poly, X, Y)
    return mask


def dedupe_vertices(verts: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    keep = [0]
    for i in range(1, len(verts)):
        if np.hypot(*(verts[i] - verts[keep[-1]])) > tol:
            keep.append(i)
    return verts[keep]


def rasterize_polyline(line: Polyline, grid: GridSpec) -> np.ndarray:
    """Boolean mask of cells whose center is within width/2 of the polyline."""
    mask = np.zeros(grid.shape, dtype=bool)
    v = dedupe_vertices(line.as_array())
    half = 0.5 * line.width
    xs, ys = grid.cell_centers()
    if len(v) == 1:
        segments = [(v[0], v[0])]
    else:
        segments = list(zip(v[:-1], v[1:]))
    for p, q in segments:
        r0, r1, c0, c1 = grid._window(min(p[0], q[0]) - half, min(p[1], q[1]) - half,
                                      max(p[0], q[0]) + half, max(p[1], q[1]) + half)
        if r0 >= r1 or c0 >= c1:
            continue
        X, Y = np.meshgrid(xs[r0:r1], ys[c0:c1], indexing="ij")
        mask[r0:r1, c0:c1] |= _dist_to_segment(X, Y, p[0], p[1], q[0], q[1]) <= half + 1e-12
    return mask


def polygons_intersect(a: Polygon, b: Polygon) -> list[tuple[float, float]]:
    """Witness points of overlap between two simple polygons (empty if disjoint).

    Witnesses are edge crossings plus vertices of one polygon lying inside the other.
    """
    pa, pb = a.as_array(), b.as_array()
    out = []
    for i in range(len(pa)):
        p1, p2 = pa[i], pa[(i + 1) % len(pa)]
        for j in range(len(pb)):
            q1, q2 = pb[j], pb[(j + 1) % len(pb)]
            hit = _segment_intersection(p1, p2, q1, q2)
            if hit is not None:
                out.append(hit)
    ina = points_in_polygon(b, pa[:, 0], pa[:, 1])
    inb = points_in_polygon(a, pb[:, 0], pb[:, 1])
    out.extend(map(tuple, pa[ina]))
    out.extend(map(tuple, pb[inb]))
    return out


def _segment_intersection(p1, p2, q1, q2):
    r = p2 - p1
    s = q2 - q1
    den = r[0] * s[1] - r[1] * s[0]
    if abs(den) < _EPS:
        return None
    d = q1 - p1
    t = (d[0] * s[1] - d[1] * s[0]) / den
    u = (d[0] * r[1] - d[1] * r[0]) / den
    if 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0:
        return (float(p1[0] + t * r[0]), float(p1[1] + t * r[1]))
    return None


# ------------------------------------------------------------- rigid motion

@dataclass(frozen=True)
class RigidPose:
    tx: float = 0.0
    ty: float = 0.0
    tz: float = 0.0
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0

    def __post_init__(self):
        for name in ("yaw", "pitch", "roll"):
            object.__setattr__(self, name, wrap_angle(float(getattr(self, name))))

    def rotation(self) -> np.ndarray:
        cy, sy = math.cos(self.yaw), math.sin(self.yaw)
        cp, sp = math.cos(self.pitch), math.sin(self.pitch)
        cr, sr = math.cos(self.roll), math.sin(self.roll)
        rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
        ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
        rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
        return rz @ ry @ rx

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous transform from this frame into the world frame."""
        m = np.eye(4)
        m[:3, :3] = self.rotation()
        m[:3, 3] = (self.tx, self.ty, self.tz)
        return m

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "RigidPose":
        r = m[:3, :3]
        pitch = math.asin(max(-1.0, min(1.0, -r[2, 0])))
        yaw = math.atan2(r[1, 0], r[0, 0])
        roll = math.atan2(r[2, 1], r[2, 2])
        return cls(float(m[0, 3]), float(m[1, 3]), float(m[2, 3]), yaw, pitch, roll)

    def compose(self, other: "RigidPose") -> "RigidPose":
        """Pose of ``other`` (given in this frame) expressed in the world frame."""
        return RigidPose.from_matrix(self.matrix() @ other.matrix())


def relative_transform(from_pose: RigidPose, to_pose: RigidPose) -> np.ndarray:
    """Homogeneous matrix mapping from_pose-frame coordinates into to_pose frame."""
    return np.linalg.inv(to_pose.matrix()) @ from_pose.matrix()


def transform_points(points, from_pose: RigidPose, to_pose: RigidPose) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    m = relative_transform(from_pose, to_pose)
    return pts @ m[:3, :3].T + m[:3, 3]


def transform_box(box: OrientedBox2D, from_pose: RigidPose, to_pose: RigidPose) -> OrientedBox2D:
    """BEV projection of a box moved between frames (yaw-only part of the rotation)."""
    m = relative_transform(from_pose, to_pose)
    c = m[:3, :3] @ np.array([box.cx, box.cy, 0.0]) + m[:3, 3]
    dyaw = math.atan2(m[1, 0], m[0, 0])
    return OrientedBox2D(float(c[0]), float(c[1]), box.w, box.h, box.phi + dyaw)


def boxes_to_array(boxes: Iterable[OrientedBox2D]) -> np.ndarray:
    return np.array([b.as_tuple() for b in boxes], dtype=float).reshape(-1, 5)
