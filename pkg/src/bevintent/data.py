"""Training samples from scenarios: encoded inputs, anchor assignment,
regression targets and per-cell action labels, plus a packed in-memory cache."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .anchors import FUTURE_DT, T_FUTURE, AnchorGrid, assign_targets, encode_array, reg_width
from .encoder import MAP_CHANNELS, VoxelConfig, encode_frame
from .geom import RigidPose, transform_box
from .metrics import GroundTruth
from .scene.generator import GenerationError, GeneratorConfig, generate_scenario
from .scene.types import ACTION_INDEX, ACTIONS, Scenario

_WORLD = RigidPose()


def future_stride(frame_dt: float, future_dt: float = FUTURE_DT) -> int:
    k = future_dt / frame_dt
    if abs(k - round(k)) > 1e-9 or round(k) < 1:
        raise ValueError(f"future step {future_dt}s is not a multiple of the frame period {frame_dt}s")
    return int(round(k))


def sample_frames(scenario: Scenario, t_past: int, horizon_frames: int = 30) -> list:
    """Frames with a full LiDAR history and a full label horizon after them."""
    return list(range(t_past - 1, max(t_past - 1, scenario.n_frames - horizon_frames)))


def frame_ground_truth(scenario: Scenario, frame: int, cfg: VoxelConfig, t_future: int = T_FUTURE) -> list:
    """Ground truth at ``frame`` in that frame's ego coordinates, restricted to
    boxes whose center lies inside the grid extent. Futures are sampled every
    FUTURE_DT seconds and expressed in the same (current) ego frame."""
    ego = scenario.sweeps[frame].ego_pose
    world = _WORLD
    step = future_stride(scenario.frame_dt)
    out = []
    for tr in scenario.tracks:
        b = tr.boxes[frame]
        if b is None:
            continue
        local = transform_box(b, world, ego)
        if not (abs(local.cx) < 0.5 * cfg.L and abs(local.cy) < 0.5 * cfg.W):
            continue
        fut = []
        for k in range(1, t_future + 1):
            f = frame + k * step
            fb = tr.boxes[f] if f < scenario.n_frames else None
            fut.append(None if fb is None else transform_box(fb, world, ego))
        out.append(GroundTruth(local, fut, tr.actions[frame], int(tr.lidar_point_counts[frame]), tr.actor_id))
    return out


@dataclass
class Targets:
    q: np.ndarray  # (A,) int8
    reg: np.ndarray  # (A, R) float32, zero for negatives
    mask: np.ndarray  # (A, T_f) bool
    intent: np.ndarray  # (rows, cols) int8, -1 undefined


def build_targets(gts: Sequence[GroundTruth], grid: AnchorGrid, t_future: int = T_FUTURE) -> Targets:
    A = len(grid)
    boxes = [g.box for g in gts]
    a = assign_targets(grid, boxes)
    q = a.q.astype(np.int8)
    reg = np.zeros((A, reg_width(t_future)), np.float32)
    mask = np.zeros((A, t_future), bool)
    intent = np.full((grid.rows, grid.cols), -1, np.int8)
    pos = a.positives
    if len(pos):
        g_idx = a.matched[pos]
        t0 = np.array([gts[g].box.as_tuple() for g in g_idx])
        fut = np.empty((len(pos), t_future, 3))
        for r, g in enumerate(g_idx):
            b0 = gts[g].box
            for k in range(t_future):
                fb = gts[g].future[k] if k < len(gts[g].future) else None
                if fb is None:
                    fut[r, k] = (b0.cx, b0.cy, b0.phi)
                else:
                    fut[r, k] = (fb.cx, fb.cy, fb.phi)
                    mask[pos[r], k] = True
        reg[pos] = encode_array(t0, fut, grid.array[pos]).astype(np.float32)
        # cell label: the matched box of the best-overlapping positive anchor in the cell
        order = sorted(range(len(pos)), key=lambda r: (-a.iou[pos[r]], pos[r]))
        K = grid.per_cell
        for r in order:
            cell = pos[r] // K
            i, j = divmod(int(cell), grid.cols)
            action = gts[g_idx[r]].action
            if intent[i, j] < 0 and action in ACTION_INDEX:
                intent[i, j] = ACTION_INDEX[action]
    return Targets(q, reg, mask, intent)


# -------------------------------------------------------------- dataset

def scenario_seed(master: int, index: int, attempt: int = 0) -> int:
    return int(np.random.SeedSequence([int(master), 0, index, attempt]).generate_state(1)[0])


def synthesize(gen_cfg: GeneratorConfig, master: int, n: int, start: int = 0, max_attempts: int = 20) -> list:
    """``n`` scenarios as (seed, Scenario). A seed whose actors cannot be placed
    is replaced by the next attempt's seed for the same index."""
    out = []
    for index in range(start, start + n):
        for attempt in range(max_attempts):
            seed = scenario_seed(master, index, attempt)
            try:
                out.append((seed, generate_scenario(gen_cfg, seed)))
                break
            except GenerationError:
                continue
        else:
            raise GenerationError(f"scenario {index}: no placeable seed in {max_attempts} attempts")
    return out


@dataclass
class Sample:
    lidar: np.ndarray  # packed bits of (C, rows, cols) uint8 occupancy
    map: np.ndarray  # packed bits of (17, rows, cols) map > 0
    targets: Targets
    scenario: int
    frame: int


class SampleSet:
    """Encoded samples kept bit-packed in memory."""

    def __init__(self, cfg: VoxelConfig, grid: AnchorGrid, t_future: int = T_FUTURE):
        self.cfg, self.grid, self.t_future = cfg, grid, t_future
        self.samples: list = []

    def __len__(self) -> int:
        return len(self.samples)

    def add_scenario(self, scenario: Scenario, index: int, frames: Optional[Sequence[int]] = None) -> None:
        frames = sample_frames(scenario, self.cfg.T_past) if frames is None else frames
        for f in frames:
            lidar, mp = encode_frame(scenario, f, self.cfg)
            gts = frame_ground_truth(scenario, f, self.cfg, self.t_future)
            tg = build_targets(gts, self.grid, self.t_future)
            self.samples.append(Sample(np.packbits(lidar.astype(bool)), np.packbits(mp > 0), tg, index, f))

    def inputs(self, idx: Sequence[int], zero_map: bool = False, dtype=np.float32) -> tuple:
        """Channels-last (N, rows, cols, C) LiDAR and map arrays; the map is +-1."""
        cfg = self.cfg
        ls, ms = cfg.lidar_shape, cfg.map_shape
        L = np.empty((len(idx), ls[1], ls[2], ls[0]), dtype)
        M = np.empty((len(idx), ms[1], ms[2], ms[0]), dtype)
        for n, i in enumerate(idx):
            s = self.samples[i]
            lid = np.unpackbits(s.lidar, count=int(np.prod(ls))).reshape(ls)
            L[n] = lid.transpose(1, 2, 0)
            if zero_map:
                M[n] = 0.0
            else:
                m = np.unpackbits(s.map, count=int(np.prod(ms))).reshape(ms)
                M[n] = (2.0 * m - 1.0).transpose(1, 2, 0)
        return L, M

    def batch(self, idx: Sequence[int], zero_map: bool = False, dtype=np.float32, rng=None) -> tuple:
        """Inputs and stacked targets; with ``rng`` each sample is randomly
        turned by 180 degrees and mirrored across the x axis."""
        L, M = self.inputs(idx, zero_map, dtype)
        ts = [self.samples[i].targets for i in idx]
        tgt = {
            "q": np.stack([t.q for t in ts]),
            "reg_targets": np.stack([t.reg for t in ts]).astype(np.float64),
            "reg_mask": np.stack([t.mask for t in ts]),
            "intent_labels": np.stack([t.intent for t in ts])[:, None].astype(np.int64),
        }
        if rng is not None:
            for n, (turn, mirror) in enumerate(rng.random((len(idx), 2)) < 0.5):
                augment(L, M, tgt, n, self.grid.per_cell, bool(turn), bool(mirror))
        return L, M, tgt


def _swap(names: Sequence[str], pairs) -> np.ndarray:
    perm = np.arange(len(names))
    for a, b in pairs:
        i, j = names.index(a), names.index(b)
        perm[i], perm[j] = j, i
    return perm


ACTION_MIRROR = _swap(ACTIONS, [("turn_left", "turn_right"), ("lane_change_left", "lane_change_right")])
MAP_MIRROR = _swap(MAP_CHANNELS, [("lane_left", "lane_right")])


def augment(L, M, tgt: dict, n: int, per_cell: int, turn: bool, mirror: bool) -> None:
    """In-place rigid augmentation of sample ``n`` of a batch.

    ``turn`` rotates the scene 180 degrees about the ego (x, y, phi) ->
    (-x, -y, phi + pi); ``mirror`` maps (x, y, phi) -> (x, -y, -phi) and swaps
    left and right lane types and actions. Both keep anchors on anchors since the
    grid is centered on the ego and anchors have zero heading.
    """
    if not (turn or mirror):
        return
    rows, cols = tgt["intent_labels"].shape[-2:]  # feature grid; inputs are finer by the stride
    axes = ((0,) if turn else ()) + ((1,) if turn != mirror else ())
    if axes:
        L[n] = np.flip(L[n], axes)
        M[n] = np.flip(M[n], axes)
    if mirror:
        M[n] = M[n][..., MAP_MIRROR]
    q = tgt["q"][n].reshape(rows, cols, per_cell)
    tgt["q"][n] = np.flip(q, axes).reshape(-1)
    mask = tgt["reg_mask"][n].reshape(rows, cols, per_cell, -1)
    tgt["reg_mask"][n] = np.flip(mask, axes).reshape(rows * cols * per_cell, -1)
    reg = np.flip(tgt["reg_targets"][n].reshape(rows, cols, per_cell, -1), axes).copy()
    steps = [0] + list(range(6, reg.shape[-1], 4))  # offsets of (dx, dy, sin, cos) groups
    for o in steps:
        if turn:
            reg[..., o:o + 4] *= -1
        if mirror:
            reg[..., o + 1] *= -1
            reg[..., o + 2] *= -1
    tgt["reg_targets"][n] = reg.reshape(rows * cols * per_cell, -1)
    lab = np.flip(tgt["intent_labels"][n], tuple(a + 1 for a in axes)).copy()
    if mirror:
        lab = np.where(lab >= 0, ACTION_MIRROR[np.maximum(lab, 0)], lab)
    tgt["intent_labels"][n] = lab


__all__ = [
    "scenario_seed", "synthesize", "future_stride", "sample_frames", "frame_ground_truth", "Targets", "build_targets", "Sample",
    "SampleSet", "augment", "ACTION_MIRROR", "MAP_MIRROR",
]
