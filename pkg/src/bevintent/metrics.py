"""Evaluation: rotated-IoU average precision, along/across-track regression
errors on true positives, and per-class intention accuracy / F1."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .anchors import FUTURE_DT
from .geom import OrientedBox2D, iou_matrix, wrap_angle
from .scene.types import ACTIONS

AP_THRESHOLDS = (0.5, 0.6, 0.7, 0.8, 0.9)
HORIZONS = (0.0, 1.0, 2.0, 3.0)  # seconds
TP_IOU = 0.5


@dataclass(frozen=True)
class EvalFilter:
    min_points: int = 1

    def __post_init__(self):
        if self.min_points < 0:
            raise ValueError("min_points must be >= 0")


@dataclass
class GroundTruth:
    box: OrientedBox2D
    future: list = field(default_factory=list)  # OrientedBox2D or None per future step
    action: Optional[str] = None
    n_points: int = 0
    track_id: str = ""


# -------------------------------------------------------------- matching

def match_frame(dets: Sequence, gts: Sequence[GroundTruth], threshold: float,
                ignore: Optional[np.ndarray] = None) -> list:
    """Greedy matching in score order (stable). Returns, per detection, the
    matched ground-truth index or -1. Ignored ground truths are matched only
    when no regular one is available."""
    out = [-1] * len(dets)
    if not dets or not gts:
        return out
    iou = iou_matrix([d.box for d in dets], [g.box for g in gts])
    ignore = np.zeros(len(gts), bool) if ignore is None else np.asarray(ignore, bool)
    taken = np.zeros(len(gts), bool)
    for i in sorted(range(len(dets)), key=lambda k: -dets[k].score):
        for pool in (~ignore, ignore):
            cand = np.where(pool & ~taken & (iou[i] >= threshold), iou[i], -1.0)
            g = int(np.argmax(cand))
            if cand[g] >= 0:
                out[i] = g
                taken[g] = True
                break
    return out


def average_precision(scores: np.ndarray, tp: np.ndarray, n_gt: int) -> float:
    """All-point interpolated AP from pooled (score, is_tp) pairs."""
    if n_gt == 0:
        return 1.0 if len(scores) == 0 else 0.0
    if len(scores) == 0:
        return 0.0
    order = np.argsort(-np.asarray(scores), kind="stable")
    tp = np.asarray(tp, dtype=float)[order]
    ctp = np.cumsum(tp)
    prec = ctp / np.arange(1, len(tp) + 1)
    rec = ctp / n_gt
    # interpolated precision: max precision at any recall >= r
    interp = np.maximum.accumulate(prec[::-1])[::-1]
    prev = np.concatenate([[0.0], rec[:-1]])
    return float(np.sum((rec - prev) * interp))


@dataclass
class APResult:
    ap: float
    recall: float
    n_gt: int
    n_det: int
    empty: bool = False


def detection_ap(dets_per_frame: Sequence[Sequence], gt_per_frame: Sequence[Sequence[GroundTruth]],
                 iou_threshold: float = 0.5, flt: EvalFilter = EvalFilter()) -> APResult:
    if len(dets_per_frame) != len(gt_per_frame):
        raise ValueError("predictions and ground truth cover different frame counts")
    scores, tps = [], []
    n_gt = 0
    for dets, gts in zip(dets_per_frame, gt_per_frame):
        ignore = np.array([g.n_points < flt.min_points for g in gts], bool)
        n_gt += int((~ignore).sum())
        m = match_frame(dets, gts, iou_threshold, ignore)
        for d, g in zip(dets, m):
            if g >= 0 and ignore[g]:
                continue
            scores.append(d.score)
            tps.append(g >= 0)
    scores, tps = np.array(scores, float), np.array(tps, bool)
    ap = average_precision(scores, tps, n_gt)
    recall = float(tps.sum() / n_gt) if n_gt else 1.0
    return APResult(ap, recall, n_gt, len(scores), empty=n_gt == 0 and len(scores) == 0)


# ----------------------------------------------------------- regression

@dataclass
class TPPair:
    frame: int
    gt_index: int
    det: object
    gt: GroundTruth

    @property
    def key(self) -> tuple:
        return (self.frame, self.gt_index)


def true_positives(dets_per_frame, gt_per_frame, threshold: float = TP_IOU,
                   flt: EvalFilter = EvalFilter()) -> list:
    pairs = []
    for f, (dets, gts) in enumerate(zip(dets_per_frame, gt_per_frame)):
        ignore = np.array([g.n_points < flt.min_points for g in gts], bool)
        for d, g in zip(dets, match_frame(dets, gts, threshold, ignore)):
            if g >= 0 and not ignore[g]:
                pairs.append(TPPair(f, g, d, gts[g]))
    return pairs


def intersect_pairs(*pair_sets: Sequence[TPPair]) -> list:
    """Restrict each model's TP list to ground truths every model detected."""
    common = set.intersection(*[{p.key for p in ps} for ps in pair_sets]) if pair_sets else set()
    return [[p for p in ps if p.key in common] for ps in pair_sets]


def displacement_errors(pred: OrientedBox2D, gt: OrientedBox2D) -> tuple:
    """(along, across, l2, heading_deg); heading wrapped modulo 180 degrees."""
    d = np.array([pred.cx - gt.cx, pred.cy - gt.cy])
    u = np.array([math.cos(gt.phi), math.sin(gt.phi)])
    n = np.array([-u[1], u[0]])
    dh = abs(math.degrees(wrap_angle(pred.phi - gt.phi)))
    return abs(float(d @ u)), abs(float(d @ n)), float(np.hypot(*d)), min(dh, 180.0 - dh)


def horizon_step(seconds: float, future_dt: float = FUTURE_DT) -> int:
    k = seconds / future_dt
    if abs(k - round(k)) > 1e-9:
        raise ValueError(f"horizon {seconds}s is not a multiple of {future_dt}s")
    return int(round(k))


def _at(boxes0, future, k):
    if k == 0:
        return boxes0
    return future[k - 1] if k - 1 < len(future) else None


@dataclass
class ErrorRow:
    horizon: float
    along: float
    across: float
    l2: float
    heading: float
    n: int
    skipped: int


def regression_errors(pairs: Sequence[TPPair], horizons=HORIZONS, future_dt: float = FUTURE_DT) -> list:
    rows = []
    for h in horizons:
        k = horizon_step(h, future_dt)
        errs, skipped = [], 0
        for p in pairs:
            g = _at(p.gt.box, p.gt.future, k)
            q = _at(p.det.box, p.det.waypoints, k)
            if g is None or q is None:
                skipped += 1
                continue
            errs.append(displacement_errors(q, g))
        e = np.array(errs).reshape(-1, 4)
        mean = e.mean(0) if len(e) else np.full(4, float("nan"))
        rows.append(ErrorRow(h, *map(float, mean), len(e), skipped))
    return rows


def constant_position(det):
    """Baseline prediction: the detection stays where it is."""
    from .infer import Detection

    return Detection(det.box, det.score, det.intent, [det.box] * len(det.waypoints), det.anchor)


# ------------------------------------------------------------ intention

@dataclass
class ClassStats:
    name: str
    accuracy: float
    precision: float
    recall: float
    f1: float
    support: int
    predicted: int


@dataclass
class IntentionResult:
    per_class: list
    mean_accuracy: float
    mean_f1: float
    absent: list
    n: int


def intention_metrics(pred: Sequence[int], gt: Sequence[int], n_classes: int = len(ACTIONS),
                      names: Sequence[str] = ACTIONS) -> IntentionResult:
    pred, gt = np.asarray(pred, int), np.asarray(gt, int)
    if pred.shape != gt.shape:
        raise ValueError("predictions and labels differ in length")
    N = len(gt)
    rows, absent = [], []
    for c in range(n_classes):
        tp = int(((pred == c) & (gt == c)).sum())
        fp = int(((pred == c) & (gt != c)).sum())
        fn = int(((pred != c) & (gt == c)).sum())
        if tp + fp + fn == 0:
            absent.append(names[c])
            continue
        tn = N - tp - fp - fn
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        rows.append(ClassStats(names[c], (tp + tn) / N, prec, rec, f1, tp + fn, tp + fp))
    macc = float(np.mean([r.accuracy for r in rows])) if rows else float("nan")
    mf1 = float(np.mean([r.f1 for r in rows])) if rows else float("nan")
    return IntentionResult(rows, macc, mf1, absent, N)


# --------------------------------------------------------------- report

@dataclass
class EvalReport:
    ap: dict  # threshold -> APResult
    errors: list  # ErrorRow per horizon
    intention: IntentionResult
    baseline_errors: list = field(default_factory=list)
    by_action: dict = field(default_factory=dict)  # action -> list of ErrorRow
    min_points: int = 1

    @property
    def mean_ap(self) -> float:
        return float(np.mean([r.ap for r in self.ap.values()]))

    def error_at(self, horizon: float, rows=None) -> ErrorRow:
        for r in rows if rows is not None else self.errors:
            if abs(r.horizon - horizon) < 1e-9:
                return r
        raise KeyError(horizon)

    def summary_rows(self) -> list:
        out = []
        for t, r in sorted(self.ap.items()):
            out.append(("ap", f"{t:.1f}", r.ap))
            out.append(("recall", f"{t:.1f}", r.recall))
        out.append(("map", "", self.mean_ap))
        for tag, rows in (("", self.errors), ("baseline_", self.baseline_errors)):
            for r in rows:
                for m in ("along", "across", "l2", "heading", "n"):
                    out.append((f"{tag}{m}", f"{r.horizon:g}", getattr(r, m)))
        for c in self.intention.per_class:
            out.append(("accuracy", c.name, c.accuracy))
            out.append(("f1", c.name, c.f1))
        out.append(("mean_accuracy", "", self.intention.mean_accuracy))
        out.append(("mean_f1", "", self.intention.mean_f1))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "key", "value"])
        for m, k, v in self.summary_rows():
            w.writerow([m, k, repr(float(v)) if isinstance(v, float) else v])
        return buf.getvalue()

    def by_action_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["action", "horizon", "along", "across", "l2", "heading", "n"])
        for a in sorted(self.by_action):
            for r in self.by_action[a]:
                w.writerow([a, f"{r.horizon:g}", repr(r.along), repr(r.across), repr(r.l2), repr(r.heading), r.n])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"Detection (objects with >= {self.min_points} points)"]
        lines.append("  " + "  ".join(f"AP@{t:.1f}" for t in sorted(self.ap)) + "   mAP")
        lines.append("  " + "  ".join(f"{self.ap[t].ap:6.4f}" for t in sorted(self.ap))
                     + f"  {self.mean_ap:6.4f}")
        lines.append("")
        lines.append("Regression (true positives at IoU 0.5)")
        lines.append("  horizon   along  across      L2  heading     n")
        for r in self.errors:
            lines.append(f"  {r.horizon:5.1f}s  {r.along:6.3f}  {r.across:6.3f}  {r.l2:6.3f}  {r.heading:7.2f}  {r.n:4d}")
        if self.baseline_errors:
            lines.append("  constant-position baseline")
            for r in self.baseline_errors:
                lines.append(f"  {r.horizon:5.1f}s  {r.along:6.3f}  {r.across:6.3f}  {r.l2:6.3f}  "
                             f"{r.heading:7.2f}  {r.n:4d}")
        lines.append("")
        lines.append("Intention (current frame)")
        lines.append("  class                 acc      F1  support")
        for c in self.intention.per_class:
            lines.append(f"  {c.name:18s}  {c.accuracy:6.4f}  {c.f1:6.4f}  {c.support:7d}")
        lines.append(f"  {'mean':18s}  {self.intention.mean_accuracy:6.4f}  {self.intention.mean_f1:6.4f}")
        if self.intention.absent:
            lines.append(f"  absent: {', '.join(self.intention.absent)}")
        return "\n".join(lines) + "\n"


def evaluate(dets_per_frame, gt_per_frame, flt: EvalFilter = EvalFilter(),
             thresholds=AP_THRESHOLDS, horizons=HORIZONS, future_dt: float = FUTURE_DT) -> EvalReport:
    ap = {t: detection_ap(dets_per_frame, gt_per_frame, t, flt) for t in thresholds}
    pairs = true_positives(dets_per_frame, gt_per_frame, TP_IOU, flt)
    errors = regression_errors(pairs, horizons, future_dt)
    base = [TPPair(p.frame, p.gt_index, constant_position(p.det), p.gt) for p in pairs]
    baseline = regression_errors(base, horizons, future_dt)
    labelled = [p for p in pairs if p.gt.action in ACTIONS]
    intent = intention_metrics([int(np.argmax(p.det.intent)) for p in labelled],
                               [ACTIONS.index(p.gt.action) for p in labelled])
    by_action = {}
    for a in sorted({p.gt.action for p in labelled}):
        by_action[a] = regression_errors([p for p in labelled if p.gt.action == a], horizons, future_dt)
    return EvalReport(ap, errors, intent, baseline, by_action, flt.min_points)


__all__ = [
    "AP_THRESHOLDS", "HORIZONS", "TP_IOU", "EvalFilter", "GroundTruth", "match_frame",
    "average_precision", "APResult", "detection_ap", "TPPair", "true_positives", "intersect_pairs",
    "displacement_errors", "horizon_step", "ErrorRow", "regression_errors", "constant_position",
    "ClassStats", "IntentionResult", "intention_metrics", "EvalReport", "evaluate",
]
