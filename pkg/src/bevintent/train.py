"""Training loop, seeded run plumbing and model evaluation over scenarios."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .anchors import AnchorGrid
from .data import SampleSet, frame_ground_truth
from .infer import (NMS_IOU, SCORE_THRESHOLD, Detection, Tracker, TrackerConfig, decode_detections,
                    frame_record, nms)
from .loss import LossConfig, append_log, compute_loss
from .metrics import EvalFilter, EvalReport, evaluate
from .net import AdamState, IntentNet, NetworkConfig, TrainingError, adam_step, save_checkpoint
from .geom import RigidPose

log = logging.getLogger(__name__)
_WORLD = RigidPose()

# counter scheme: SeedSequence([master, k]) for each consumer k
SEED_SYNTH, SEED_INIT, SEED_ORDER, SEED_SAMPLING, SEED_AUGMENT = 0, 1, 2, 3, 4


def derived_seed(master: int, k: int) -> int:
    return int(np.random.SeedSequence([int(master), k]).generate_state(1)[0])


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 6
    lr: float = 1e-3
    weight_decay: float = 1e-4
    decay_at: float = 0.75  # fraction of steps after which lr is multiplied by decay_factor
    decay_factor: float = 0.1
    checkpoint_every: int = 500
    zero_map: bool = False
    augment: bool = True  # random 180 degree turns and mirrors of each sample

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.checkpoint_every < 1:
            raise ValueError("steps >= 0, batch_size >= 1 and checkpoint_every >= 1 are required")
        if not (self.lr > 0 and math.isfinite(self.lr)) or self.weight_decay < 0:
            raise ValueError("lr must be positive and weight_decay >= 0")
        if not 0 <= self.decay_at <= 1 or not 0 < self.decay_factor <= 1:
            raise ValueError("decay_at must be in [0, 1] and decay_factor in (0, 1]")

    def lr_at(self, step: int) -> float:
        return self.lr * (self.decay_factor if step >= int(self.decay_at * self.steps) else 1.0)

    def to_dict(self) -> dict:
        return asdict(self)


class BatchOrder:
    """Epoch-wise permutations drawn from one generator; position is resumable."""

    def __init__(self, n: int, seed: int):
        if n < 1:
            raise TrainingError("no training samples")
        self.n, self.rng = n, np.random.default_rng(seed)
        self.perm = self.rng.permutation(n)
        self.pos = 0

    def next(self, k: int) -> np.ndarray:
        out = []
        while len(out) < k:
            if self.pos == self.n:
                self.perm, self.pos = self.rng.permutation(self.n), 0
            take = min(k - len(out), self.n - self.pos)
            out.extend(self.perm[self.pos:self.pos + take])
            self.pos += take
        return np.array(out)


@dataclass
class TrainResult:
    net: IntentNet
    state: AdamState
    losses: list  # total loss per step


def train(samples: SampleSet, net_cfg: NetworkConfig, loss_cfg: LossConfig, cfg: TrainConfig,
          master_seed: int, log_path=None, checkpoint_path=None, resume: Optional[tuple] = None) -> TrainResult:
    """Adam over random mini-batches. ``resume`` is ``(net, state)`` from a
    checkpoint; the batch order and sampling streams are fast-forwarded so a
    resumed run matches an uninterrupted one."""
    if resume is None:
        net = IntentNet(net_cfg, seed=derived_seed(master_seed, SEED_INIT))
        state = AdamState()
    else:
        net, state = resume
    order = BatchOrder(len(samples), derived_seed(master_seed, SEED_ORDER))
    sampling = np.random.default_rng(derived_seed(master_seed, SEED_SAMPLING))
    aug = np.random.default_rng(derived_seed(master_seed, SEED_AUGMENT)) if cfg.augment else None
    for _ in range(state.step):  # replay the streams up to the resume point
        idx = order.next(cfg.batch_size)
        if aug is not None:
            aug.random((len(idx), 2))
        labels = np.stack([samples.samples[i].targets.intent for i in idx])
        sampling.random(labels[:, None][:, :loss_cfg.intent_steps].shape)

    losses = []
    last_good = None
    for step in range(state.step, cfg.steps):
        idx = order.next(cfg.batch_size)
        L, M, tgt = samples.batch(idx, zero_map=cfg.zero_map, dtype=net.dtype, rng=aug)
        out = net(L, M)
        total, bd = compute_loss(out, tgt, loss_cfg, sampling)
        if not math.isfinite(bd.total):
            raise TrainingError(f"non-finite loss at step {step}"
                                + (f"; last good checkpoint at step {last_good}" if last_good is not None else ""))
        net.zero_grad()
        total.backward()
        adam_step(net.params, state, cfg.lr_at(step), cfg.weight_decay)
        losses.append(bd.total)
        if log_path is not None:
            append_log(log_path, bd, step)
        if checkpoint_path is not None and (state.step % cfg.checkpoint_every == 0 or state.step == cfg.steps):
            save_checkpoint(checkpoint_path, net, state, {"master_seed": int(master_seed)})
            last_good = state.step
        if step % 100 == 0:
            log.info("step %d total %.4f cla %.4f reg0 %.4f int0 %.4f", step, bd.total, bd.cla,
                     bd.reg[0] if bd.reg else 0.0, bd.int[0] if bd.int else 0.0)
    return TrainResult(net, state, losses)


# ------------------------------------------------------------- inference

@dataclass(frozen=True)
class InferConfig:
    threshold: float = SCORE_THRESHOLD
    nms_iou: float = NMS_IOU
    tracker: TrackerConfig = TrackerConfig()
    use_tracker: bool = True
    batch_size: int = 8


def predict_scenario(net: IntentNet, samples: SampleSet, indices: Sequence[int], scenario, grid: AnchorGrid,
                     cfg: InferConfig = InferConfig(), zero_map: bool = False, scenario_id: str = "") -> tuple:
    """Per-frame detections in each frame's ego coordinates, plus JSONL records.

    With the tracker on, reported scores are the fused track scores and coasted
    tracks are reported for the frames they bridge.
    """
    tracker = Tracker(TrackerConfig(**{**asdict(cfg.tracker), "frame_dt": scenario.frame_dt}))
    per_frame, records = [], []
    indices = list(indices)
    for b in range(0, len(indices), cfg.batch_size):
        chunk = indices[b:b + cfg.batch_size]
        L, M = samples.inputs(chunk, zero_map=zero_map, dtype=net.dtype)
        out = net(L, M)
        for n, i in enumerate(chunk):
            frame = samples.samples[i].frame
            ego = scenario.sweeps[frame].ego_pose
            dets = nms(decode_detections(out, grid, cfg.threshold, sample=n), cfg.nms_iou)
            if not cfg.use_tracker:
                per_frame.append(dets)
                continue
            tracks = tracker.update([d.in_frame(ego, _WORLD) for d in dets], frame)
            local = []
            for t in tracks:
                e = t.last
                d = e.det.in_frame(_WORLD, ego)
                local.append(Detection(d.box, float(e.score), d.intent, d.waypoints, d.anchor))
            per_frame.append(local)
            records.append(frame_record(scenario_id, frame, ego, tracks))
    return per_frame, records


def evaluate_model(net: IntentNet, samples: SampleSet, scenarios: Sequence, grid: AnchorGrid,
                   cfg: InferConfig = InferConfig(), flt: EvalFilter = EvalFilter(),
                   zero_map: bool = False) -> tuple:
    """(EvalReport, prediction records) over every sample of every scenario."""
    dets_all, gts_all, records = [], [], []
    by_scn: dict = {}
    for i, s in enumerate(samples.samples):
        by_scn.setdefault(s.scenario, []).append(i)
    for k in sorted(by_scn):
        sc = scenarios[k]
        idx = sorted(by_scn[k], key=lambda i: samples.samples[i].frame)
        dets, recs = predict_scenario(net, samples, idx, sc, grid, cfg, zero_map, scenario_id=str(sc.seed))
        dets_all += dets
        records += recs
        gts_all += [frame_ground_truth(sc, samples.samples[i].frame, samples.cfg, samples.t_future) for i in idx]
    return evaluate(dets_all, gts_all, flt), records


def write_report(report: EvalReport, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(report.to_csv())
    (out / "report.txt").write_text(report.to_text())
    (out / "by_action.csv").write_text(report.by_action_csv())


__all__ = [
    "SEED_SYNTH", "SEED_INIT", "SEED_ORDER", "SEED_SAMPLING", "SEED_AUGMENT", "derived_seed", "TrainConfig",
    "BatchOrder", "TrainResult", "train", "InferConfig", "predict_scenario", "evaluate_model",
    "write_report",
]
