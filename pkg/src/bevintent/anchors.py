"""Anchor grid, ground-truth assignment and regression targets.

Anchors sit at feature-cell centers (stride 8 over the BEV grid), heading 0,
five shapes of equal area. Flat anchor index is ``(i * cols + j) * K + k``.

Per-anchor regression vector (length 6 + 4 * T_f)::

    [cx, cy, sin, cos, log w, log h,  cx1, cy1, sin1, cos1,  ...,  cxT, cyT, sinT, cosT]

with centers in units of the anchor's (w, h) and sizes as log ratios.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .encoder import VoxelConfig
from .geom import OrientedBox2D, boxes_to_array, rotated_iou

STRIDE = 8
T_FUTURE = 6
FUTURE_DT = 0.5  # seconds between future steps
POS_IOU = 0.5
DEGENERATE = 1e-12


class AnchorConfigError(ValueError):
    pass


class DecodeError(ValueError):
    pass


def reg_width(t_future: int = T_FUTURE) -> int:
    return 6 + 4 * t_future


@dataclass(frozen=True)
class AnchorSpec:
    size: float = 3.2
    aspect_ratios: tuple = ((1, 1), (1, 2), (2, 1), (1, 6), (6, 1))

    def __post_init__(self):
        if len(self.aspect_ratios) != 5:
            raise AnchorConfigError("exactly 5 aspect ratios are required")
        if not self.size > 0 or any(not (r > 0 and s > 0) for r, s in self.aspect_ratios):
            raise AnchorConfigError("anchor size and ratios must be positive")
        object.__setattr__(self, "aspect_ratios", tuple(tuple(r) for r in self.aspect_ratios))

    def dims(self) -> np.ndarray:
        """(5, 2) anchor (w, h); ratio r:s gives w = size sqrt(r/s), h = size sqrt(s/r)."""
        return np.array([(self.size * math.sqrt(r / s), self.size * math.sqrt(s / r))
                         for r, s in self.aspect_ratios])


@dataclass
class AnchorGrid:
    rows: int
    cols: int
    centers_x: np.ndarray  # (rows,)
    centers_y: np.ndarray  # (cols,)
    dims: np.ndarray  # (K, 2)
    _array: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def per_cell(self) -> int:
        return len(self.dims)

    def __len__(self) -> int:
        return self.rows * self.cols * self.per_cell

    @property
    def array(self) -> np.ndarray:
        """(N, 5) anchors as (cx, cy, w, h, phi) in flat index order."""
        if self._array is None:
            K = self.per_cell
            cx = np.repeat(self.centers_x, self.cols * K)
            cy = np.tile(np.repeat(self.centers_y, K), self.rows)
            wh = np.tile(self.dims, (self.rows * self.cols, 1))
            self._array = np.column_stack([cx, cy, wh, np.zeros(len(cx))])
        return self._array

    def box(self, n: int) -> OrientedBox2D:
        return OrientedBox2D(*self.array[n])

    def index(self, i: int, j: int, k: int) -> int:
        return (i * self.cols + j) * self.per_cell + k

    def unravel(self, n) -> tuple:
        return np.unravel_index(n, (self.rows, self.cols, self.per_cell))


def build_anchor_grid(cfg: VoxelConfig, spec: AnchorSpec = AnchorSpec(),
                      stride: int = STRIDE) -> AnchorGrid:
    if cfg.rows % stride or cfg.cols % stride:
        raise AnchorConfigError(
            f"grid {cfg.rows}x{cfg.cols} is not divisible by the network stride {stride}")
    rows, cols = cfg.rows // stride, cfg.cols // stride
    cx = -0.5 * cfg.L + (np.arange(rows) + 0.5) * cfg.dL * stride
    cy = -0.5 * cfg.W + (np.arange(cols) + 0.5) * cfg.dW * stride
    return AnchorGrid(rows, cols, cx, cy, spec.dims())


# ------------------------------------------------------------- assignment

@dataclass
class Assignment:
    q: np.ndarray  # (N,) int8 class label
    matched: np.ndarray  # (N,) ground-truth index, -1 for negatives
    iou: np.ndarray  # (N,) IoU with the matched / best ground truth

    @property
    def positives(self) -> np.ndarray:
        return np.flatnonzero(self.q)


def anchor_iou(grid: AnchorGrid, gt: Sequence[OrientedBox2D]) -> np.ndarray:
    """(N, G) rotated IoU; pairs whose circumcircles are disjoint are skipped."""
    A = grid.array
    out = np.zeros((len(A), len(gt)))
    ra = 0.5 * np.hypot(A[:, 2], A[:, 3])
    for g, b in enumerate(gt):
        near = np.flatnonzero(np.hypot(A[:, 0] - b.cx, A[:, 1] - b.cy) < ra + b.radius())
        for n in near:
            out[n, g] = rotated_iou(OrientedBox2D(*A[n]), b)
    return out


def assign_targets(grid: AnchorGrid, gt: Sequence[OrientedBox2D], threshold: float = POS_IOU,
                   iou: Optional[np.ndarray] = None) -> Assignment:
    """Threshold matching, then force-match every ground truth left without an anchor."""
    N, G = len(grid), len(gt)
    q = np.zeros(N, dtype=np.int8)
    matched = np.full(N, -1, dtype=np.int64)
    if G == 0:
        return Assignment(q, matched, np.zeros(N))
    iou = anchor_iou(grid, gt) if iou is None else iou
    best_gt = iou.argmax(1)  # first max: lowest gt index on ties
    best = iou[np.arange(N), best_gt]
    pos = best >= threshold
    q[pos] = 1
    matched[pos] = best_gt[pos]
    out_iou = best.copy()

    forced = np.zeros(N, dtype=bool)
    for _ in range(G + 1):
        counts = np.bincount(matched[matched >= 0], minlength=G)
        lonely = np.flatnonzero(counts == 0)
        if len(lonely) == 0:
            break
        for g in lonely:
            if (matched == g).any():
                continue
            col = np.where(forced, -np.inf, iou[:, g])
            n = int(np.argmax(col))  # lowest flat index on ties
            q[n], matched[n], out_iou[n] = 1, g, iou[n, g]
            forced[n] = True
    return Assignment(q, matched, out_iou)


# ---------------------------------------------------------------- targets

@dataclass
class RegressionTargets:
    values: np.ndarray  # (6 + 4 T_f,)
    mask: np.ndarray  # (T_f,) future steps with a ground-truth box

    @property
    def t_future(self) -> int:
        return len(self.mask)


def encode_array(t0: np.ndarray, future: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Vectorised encoding.

    t0: (M, 5) boxes, future: (M, T_f, 3) centers and headings (cx, cy, phi),
    anchors: (M, >=4) with (cx, cy, w, h). Returns (M, 6 + 4 T_f).
    """
    t0 = np.asarray(t0, dtype=float)
    future = np.asarray(future, dtype=float)
    a = np.asarray(anchors, dtype=float)
    M, T = future.shape[:2]
    out = np.empty((M, reg_width(T)))
    aw, ah = a[:, 2], a[:, 3]
    out[:, 0] = (t0[:, 0] - a[:, 0]) / aw
    out[:, 1] = (t0[:, 1] - a[:, 1]) / ah
    out[:, 2] = np.sin(t0[:, 4])
    out[:, 3] = np.cos(t0[:, 4])
    out[:, 4] = np.log(t0[:, 2] / aw)
    out[:, 5] = np.log(t0[:, 3] / ah)
    f = out[:, 6:].reshape(M, T, 4)
    f[..., 0] = (future[..., 0] - a[:, None, 0]) / aw[:, None]
    f[..., 1] = (future[..., 1] - a[:, None, 1]) / ah[:, None]
    f[..., 2] = np.sin(future[..., 2])
    f[..., 3] = np.cos(future[..., 2])
    return out


def decode_array(reg: np.ndarray, anchors: np.ndarray) -> tuple:
    """Inverse of :func:`encode_array`.

    Returns ``(boxes, valid)``: boxes (M, 1 + T_f, 5) as (cx, cy, w, h, phi) with
    future sizes copied from t=0, and valid (M,) False where any (sin, cos) pair
    is degenerate.
    """
    reg = np.asarray(reg, dtype=float)
    a = np.asarray(anchors, dtype=float)
    M = reg.shape[0]
    T = (reg.shape[1] - 6) // 4
    aw, ah = a[:, 2], a[:, 3]
    steps = np.concatenate([reg[:, None, :4], reg[:, 6:].reshape(M, T, 4)], 1)
    norm = np.hypot(steps[..., 2], steps[..., 3])
    degenerate = (np.abs(steps[..., 2]) < DEGENERATE) & (np.abs(steps[..., 3]) < DEGENERATE)
    valid = ~degenerate
    valid = valid.all(1) & np.isfinite(reg).all(1)
    safe = np.where(norm > 0, norm, 1.0)
    boxes = np.empty((M, T + 1, 5))
    boxes[..., 0] = a[:, None, 0] + steps[..., 0] * aw[:, None]
    boxes[..., 1] = a[:, None, 1] + steps[..., 1] * ah[:, None]
    boxes[..., 2] = (aw * np.exp(reg[:, 4]))[:, None]
    boxes[..., 3] = (ah * np.exp(reg[:, 5]))[:, None]
    boxes[..., 4] = np.arctan2(steps[..., 2] / safe, steps[..., 3] / safe)
    return boxes, valid


def encode_targets(gt_track: Sequence[Optional[OrientedBox2D]], anchor: OrientedBox2D,
                   t_future: Optional[int] = None) -> RegressionTargets:
    """Targets for one positive anchor from the ground-truth boxes at t = 0..T_f.

    Missing future boxes (``None`` or a short track) are masked out and encoded
    as the t=0 values.
    """
    if not gt_track or gt_track[0] is None:
        raise ValueError("ground truth at t=0 is required")
    T = len(gt_track) - 1 if t_future is None else t_future
    b0 = gt_track[0]
    future = np.empty((T, 3))
    mask = np.zeros(T, dtype=bool)
    for t in range(1, T + 1):
        b = gt_track[t] if t < len(gt_track) else None
        if b is None:
            future[t - 1] = (b0.cx, b0.cy, b0.phi)
        else:
            future[t - 1] = (b.cx, b.cy, b.phi)
            mask[t - 1] = True
    a = np.array([[anchor.cx, anchor.cy, anchor.w, anchor.h]])
    vals = encode_array(np.array([b0.as_tuple()]), future[None], a)[0]
    return RegressionTargets(vals, mask)


def decode_targets(t, anchor: OrientedBox2D) -> list:
    """Boxes at t = 0..T_f; raises DecodeError on an undefined heading."""
    vals = t.values if isinstance(t, RegressionTargets) else np.asarray(t, dtype=float)
    boxes, valid = decode_array(vals[None], np.array([[anchor.cx, anchor.cy, anchor.w, anchor.h]]))
    if not valid[0]:
        raise DecodeError("degenerate (sin, cos) pair: heading undefined")
    return [OrientedBox2D(*row) for row in boxes[0]]


__all__ = [
    "STRIDE", "T_FUTURE", "FUTURE_DT", "POS_IOU", "AnchorConfigError", "DecodeError",
    "reg_width", "AnchorSpec", "AnchorGrid", "build_anchor_grid", "Assignment", "anchor_iou",
    "assign_targets", "RegressionTargets", "encode_array", "decode_array", "encode_targets",
    "decode_targets", "boxes_to_array",
]
