"""Shared synthetic fixtures: head outputs built from a known scene, and
constant-velocity detection streams."""
import math

import numpy as np

from bevintent.anchors import assign_targets, encode_array
from bevintent.geom import OrientedBox2D
from bevintent.infer import Detection
from bevintent.net import HeadOutputs, Tensor

BIG = 30.0


def synth_outputs(grid, gt, futures, intents, n_actions=8):
    """HeadOutputs whose decoding is exactly ``gt``: one confident anchor per
    box (its best-IoU anchor), everything else scored ~0.

    ``futures``: (G, T, 3) centers and headings; ``intents``: action index per box.
    """
    T = np.asarray(futures).shape[1]
    A = len(grid)
    det = np.zeros((A, 2))
    det[:, 0] = BIG
    reg = np.zeros((A, 6 + 4 * T))
    reg[:, 3] = 1.0
    reg[:, 9::4] = 1.0
    intent = np.zeros((grid.rows * grid.cols, n_actions))
    a = assign_targets(grid, gt)
    chosen = []
    for g in range(len(gt)):
        cand = np.flatnonzero(a.matched == g)
        n = int(cand[np.argmax(a.iou[cand])])
        chosen.append(n)
        det[n] = (0.0, BIG)
        arr = np.array([gt[g].as_tuple()])
        reg[n] = encode_array(arr, np.asarray(futures)[g][None], grid.array[n][None])[0]
        intent[n // grid.per_cell, intents[g]] = BIG
    shape = (1, grid.rows, grid.cols, grid.per_cell)
    out = HeadOutputs(Tensor(det.reshape(shape + (2,))), Tensor(intent.reshape(shape[:3] + (n_actions,))),
                      Tensor(reg.reshape(shape + (-1,))))
    return out, chosen


def separated_scene(rng, n, extent=20.0, min_gap=9.0, t_future=6):
    """Boxes whose centers are at least ``min_gap`` apart (no BEV overlap)."""
    boxes = []
    while len(boxes) < n:
        c = rng.uniform(-extent, extent, 2)
        if all(math.hypot(c[0] - b.cx, c[1] - b.cy) >= min_gap for b in boxes):
            boxes.append(OrientedBox2D(c[0], c[1], rng.uniform(3.5, 5.5), rng.uniform(1.6, 2.2),
                                       rng.uniform(-math.pi, math.pi)))
    fut = np.zeros((n, t_future, 3))
    for g, b in enumerate(boxes):
        v = rng.uniform(0, 12)
        for t in range(t_future):
            s = v * 0.5 * (t + 1)
            fut[g, t] = (b.cx + s * math.cos(b.phi), b.cy + s * math.sin(b.phi), b.phi)
    return boxes, fut


def cv_detection(x0, y0, vx, vy, time, score=0.9, t_future=6, dt=0.5):
    """Noiseless detection of a constant-velocity vehicle at ``time`` seconds."""
    phi = math.atan2(vy, vx)
    x, y = x0 + vx * time, y0 + vy * time
    box = OrientedBox2D(x, y, 4.5, 1.9, phi)
    wps = [OrientedBox2D(x + vx * dt * k, y + vy * dt * k, 4.5, 1.9, phi) for k in range(1, t_future + 1)]
    intent = np.full(8, 1 / 8)
    return Detection(box, score, intent, wps)
