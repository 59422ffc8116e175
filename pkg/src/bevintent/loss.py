"""Multi-task objective: focal detection with hard negative mining, smooth-L1
box and waypoint regression over positive anchors, and downsampled action
cross-entropy.

Array conventions (flat over a batch of N samples, A anchors each):

* ``q``: (N, A) 0/1 anchor labels
* ``reg_targets``: (N, A, 6 + 4 T_f), ``reg_mask``: (N, A, T_f)
* ``intent_labels``: (N, T_int, rows, cols) action indices, -1 where undefined
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .net.tensor import Tensor, add_n, fused, reshape, scale, take_rows
from .scene.types import ACTION_INDEX, DOMINANT_ACTIONS

CLAMP_EPS = 1e-7
TARGET_NAMES = ("cx", "cy", "sin", "cos", "w", "h")


class LossConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1.0
    beta: float = 1.0
    lam: float = 0.97
    chi: tuple = (1.0, 1.0, 1.0, 1.0, 1.0, 1.0)  # cx, cy, sin, cos, w, h
    neg_pos_ratio: float = 3.0
    empty_negatives: int = 64
    focal_gamma: float = 1.0
    downsample_keep: float = 0.05
    dominant: tuple = DOMINANT_ACTIONS
    intent_steps: int = 1
    normalize: bool = True

    def __post_init__(self):
        object.__setattr__(self, "chi", tuple(float(c) for c in self.chi))
        object.__setattr__(self, "dominant", tuple(self.dominant))
        self.validate()

    def validate(self):
        if not 0 < self.lam <= 1:
            raise LossConfigError(f"lambda must be in (0, 1], got {self.lam}")
        if len(self.chi) != 6 or min(self.chi) <= 0:
            raise LossConfigError("chi needs 6 positive weights (cx, cy, sin, cos, w, h)")
        if not self.neg_pos_ratio > 0:
            raise LossConfigError("neg_pos_ratio must be positive")
        if not 0 < self.downsample_keep <= 1:
            raise LossConfigError("downsample_keep must be in (0, 1]")
        if self.alpha < 0 or self.beta < 0 or self.focal_gamma < 0:
            raise LossConfigError("alpha, beta and focal_gamma must be >= 0")
        if self.empty_negatives < 0 or self.intent_steps < 1:
            raise LossConfigError("empty_negatives must be >= 0 and intent_steps >= 1")
        unknown = set(self.dominant) - set(ACTION_INDEX)
        if unknown:
            raise LossConfigError(f"unknown dominant classes {sorted(unknown)}")

    def discount(self, t: int) -> float:
        return self.lam ** t

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise LossConfigError(f"unknown loss config keys: {sorted(unknown)}")
        return cls(**d)


# -------------------------------------------------------------- detection

def focal_terms(pbar: np.ndarray, gamma: float) -> tuple:
    """Per-sample (1 - pbar)^gamma * -log(pbar) and its derivative in pbar."""
    one_minus = 1.0 - pbar
    log_p = np.log(pbar)
    value = -(one_minus ** gamma) * log_p
    if gamma == 0:
        d = -1.0 / pbar
    else:
        d = gamma * one_minus ** (gamma - 1.0) * log_p - one_minus ** gamma / pbar
    return value, d


def mine_negatives(p: np.ndarray, q: np.ndarray, n_keep: int) -> np.ndarray:
    """Indices of the ``n_keep`` negatives with the highest vehicle probability
    (ties broken by lower index)."""
    neg = np.flatnonzero(q == 0)
    if n_keep <= 0 or len(neg) == 0:
        return neg[:0]
    order = np.argsort(-p[neg], kind="stable")
    return neg[order[:n_keep]]


def focal_detection_loss(det_logits: Tensor, q: np.ndarray, cfg: LossConfig) -> tuple:
    """Scalar loss Tensor and counts {pos, neg, clamped}."""
    z = det_logits.data
    N = z.shape[0]
    z = z.reshape(N, -1, 2).astype(np.float64)
    q = np.asarray(q).reshape(N, -1)
    p = 1.0 / (1.0 + np.exp(z[..., 0] - z[..., 1]))

    selected = np.zeros(q.shape, dtype=bool)
    n_pos = n_neg = 0
    for b in range(N):
        pos = np.flatnonzero(q[b] == 1)
        k = int(math.floor(cfg.neg_pos_ratio * len(pos))) if len(pos) else cfg.empty_negatives
        neg = mine_negatives(p[b], q[b], k)
        selected[b, pos] = True
        selected[b, neg] = True
        n_pos += len(pos)
        n_neg += len(neg)

    pbar = np.where(q == 1, p, 1.0 - p)
    clamped = (pbar < CLAMP_EPS) | (pbar > 1.0 - CLAMP_EPS)
    pc = np.clip(pbar, CLAMP_EPS, 1.0 - CLAMP_EPS)
    value, d_pbar = focal_terms(pc, cfg.focal_gamma)
    d_pbar = np.where(clamped, 0.0, d_pbar)
    norm = max(n_pos + n_neg, 1) if cfg.normalize else 1.0
    # d pbar / d (z1 - z0) = +-pbar (1 - pbar)
    sign = np.where(q == 1, 1.0, -1.0)
    dz = np.where(selected, d_pbar * sign * pbar * (1.0 - pbar), 0.0) / norm
    grad = np.stack([-dz, dz], -1).reshape(det_logits.shape).astype(det_logits.dtype)
    loss = float(value[selected].sum()) / norm
    counts = {"pos": n_pos, "neg": n_neg, "clamped": int((clamped & selected).sum())}
    return fused(np.asarray(loss, dtype=det_logits.dtype), [(det_logits, grad)]), counts


# -------------------------------------------------------------- regression

def smooth_l1(x, y):
    d = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
    return np.where(d < 1.0, 0.5 * d * d, d - 0.5)


def smooth_l1_grad(x, y):
    """d smooth_l1 / d x."""
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return np.where(np.abs(diff) < 1.0, diff, np.sign(diff))


def target_columns(t: int) -> tuple:
    """Regression columns and their chi-weight slots at horizon step t."""
    if t == 0:
        return np.arange(6), np.arange(6)
    base = 6 + 4 * (t - 1)
    return np.arange(base, base + 4), np.arange(4)


def regression_loss(reg: Tensor, q: np.ndarray, reg_targets: np.ndarray, reg_mask: np.ndarray,
                    cfg: LossConfig) -> tuple:
    """Per-step loss Tensors (t = 0..T_f) over positive anchors, and the positive count."""
    R = reg.shape[-1]
    T = (R - 6) // 4
    flat_q = np.asarray(q).reshape(-1)
    pos = np.flatnonzero(flat_q == 1)
    n_pos = len(pos)
    if n_pos == 0:
        zero = Tensor(np.asarray(0.0, dtype=reg.dtype))
        return [zero] * (T + 1), 0
    pred = take_rows(reg, pos)
    x = pred.data.astype(np.float64)
    y = np.asarray(reg_targets).reshape(-1, R)[pos]
    mask = np.asarray(reg_mask).reshape(-1, T)[pos]
    chi = np.asarray(cfg.chi)
    norm = n_pos if cfg.normalize else 1.0
    losses = []
    for t in range(T + 1):
        cols, w_idx = target_columns(t)
        w = chi[w_idx][None, :] * (1.0 if t == 0 else mask[:, t - 1:t])
        val = float((w * smooth_l1(x[:, cols], y[:, cols])).sum()) / norm
        g = np.zeros_like(x)
        g[:, cols] = w * smooth_l1_grad(x[:, cols], y[:, cols]) / norm
        losses.append(fused(np.asarray(val, dtype=reg.dtype), [(pred, g.astype(reg.dtype))]))
    return losses, n_pos


# --------------------------------------------------------------- intention

def downsample_mask(labels: np.ndarray, cfg: LossConfig, rng) -> np.ndarray:
    """Cells that survive sampling: dominant classes kept with probability
    ``downsample_keep``, others always; undefined (-1) cells never."""
    labels = np.asarray(labels)
    dominant = np.isin(labels, [ACTION_INDEX[a] for a in cfg.dominant])
    draws = rng.random(labels.shape)
    return (labels >= 0) & (~dominant | (draws < cfg.downsample_keep))


def cross_entropy_terms(logits: np.ndarray, labels: np.ndarray) -> tuple:
    """Per-row -log softmax[label] and its gradient w.r.t. the logits."""
    z = logits - logits.max(-1, keepdims=True)
    logz = np.log(np.exp(z).sum(-1, keepdims=True))
    logp = z - logz
    rows = np.arange(len(labels))
    value = -logp[rows, labels]
    g = np.exp(logp)
    g[rows, labels] -= 1.0
    return value, g


def intention_loss(intent_logits: Tensor, labels: np.ndarray, cfg: LossConfig,
                   rng=None, downsample: bool = True) -> tuple:
    """Per-step loss Tensors (one per label step) and the sampled cell counts."""
    rng = np.random.default_rng(0) if rng is None else rng
    labels = np.asarray(labels)
    if labels.ndim == 3:
        labels = labels[:, None]
    n_cls = intent_logits.shape[-1]
    flat = reshape(intent_logits, (-1, n_cls))
    losses, counts = [], []
    for t in range(labels.shape[1]):
        lab = labels[:, t].reshape(-1)
        keep = downsample_mask(lab, cfg, rng) if downsample else lab >= 0
        idx = np.flatnonzero(keep)
        counts.append(len(idx))
        if len(idx) == 0:
            losses.append(Tensor(np.asarray(0.0, dtype=intent_logits.dtype)))
            continue
        rows = take_rows(flat, idx)
        value, g = cross_entropy_terms(rows.data.astype(np.float64), lab[idx])
        norm = len(idx) if cfg.normalize else 1.0
        losses.append(fused(np.asarray(value.sum() / norm, dtype=intent_logits.dtype),
                            [(rows, (g / norm).astype(intent_logits.dtype))]))
    return losses, counts


# ------------------------------------------------------------------- total

@dataclass
class LossBreakdown:
    cla: float
    int: list
    reg: list
    total: float
    n_pos: int = 0
    n_neg: int = 0
    n_int: list = field(default_factory=list)
    clamped: int = 0
    int_empty: bool = False

    def row(self, step: int) -> dict:
        out = {"step": step, "cla": self.cla}
        out.update({f"int_{t}": v for t, v in enumerate(self.int)})
        out.update({f"reg_{t}": v for t, v in enumerate(self.reg)})
        out.update({"total": self.total, "n_pos": self.n_pos, "n_neg": self.n_neg,
                    "n_int": sum(self.n_int), "clamped": self.clamped})
        return out


def total_loss(cla: Tensor, ints: list, regs: list, cfg: LossConfig, counts: Optional[dict] = None) -> tuple:
    """(total Tensor, LossBreakdown) with lambda^t weighting both per-step streams."""
    counts = counts or {}
    terms = [cla]
    if cfg.alpha:
        terms += [scale(x, cfg.alpha * cfg.discount(t)) for t, x in enumerate(ints)]
    if cfg.beta:
        terms += [scale(x, cfg.beta * cfg.discount(t)) for t, x in enumerate(regs)]
    tot = add_n(terms)
    n_int = list(counts.get("int", []))
    bd = LossBreakdown(
        cla=float(cla.data), int=[float(x.data) for x in ints], reg=[float(x.data) for x in regs],
        total=float(tot.data), n_pos=int(counts.get("pos", 0)), n_neg=int(counts.get("neg", 0)),
        n_int=n_int, clamped=int(counts.get("clamped", 0)),
        int_empty=bool(n_int) and sum(n_int) == 0,
    )
    return tot, bd


def compute_loss(outputs, batch: dict, cfg: LossConfig, rng=None, downsample: bool = True) -> tuple:
    """Full objective on one batch. ``batch`` holds q, reg_targets, reg_mask, intent_labels."""
    cla, dcounts = focal_detection_loss(outputs.det_logits, batch["q"], cfg)
    regs, _ = regression_loss(outputs.reg, batch["q"], batch["reg_targets"], batch["reg_mask"], cfg)
    labels = np.asarray(batch["intent_labels"])
    if labels.ndim == 3:
        labels = labels[:, None]
    ints, n_int = intention_loss(outputs.intent_logits, labels[:, :cfg.intent_steps], cfg, rng, downsample)
    dcounts["int"] = n_int
    return total_loss(cla, ints, regs, cfg, dcounts)


# --------------------------------------------------------------------- log

def log_columns(n_int: int, t_future: int) -> list:
    return (["step", "cla"] + [f"int_{t}" for t in range(n_int)] + [f"reg_{t}" for t in range(t_future + 1)]
            + ["total", "n_pos", "n_neg", "n_int", "clamped"])


def append_log(path, breakdown: LossBreakdown, step: int) -> None:
    row = breakdown.row(step)
    new = not _exists(path)
    with open(path, "a", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(row), lineterminator="\n")
        if new:
            w.writeheader()
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def read_log(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append({k: (int(v) if k in ("step", "n_pos", "n_neg", "n_int", "clamped") else float(v))
                    for k, v in r.items()})
    return out


def _exists(path) -> bool:
    import os

    return os.path.exists(path) and os.path.getsize(path) > 0


__all__ = [
    "CLAMP_EPS", "LossConfigError", "LossConfig", "focal_terms", "mine_negatives",
    "focal_detection_loss", "smooth_l1", "smooth_l1_grad", "target_columns", "regression_loss",
    "downsample_mask", "cross_entropy_terms", "intention_loss", "LossBreakdown", "total_loss",
    "compute_loss", "log_columns", "append_log", "read_log",
]
