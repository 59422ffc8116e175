"""Batch command line: synth / encode / train / eval / predict / viz.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .anchors import build_anchor_grid
from .config import ConfigError, RunConfig
from .data import SampleSet, synthesize
from .encoder import dump_tensor, encode_frame
from .infer import read_predictions, write_predictions
from .net import CheckpointError, TrainingError, load_checkpoint
from .scene.io import load_scenario, save_scenario
from .scene.types import ScenarioError
from .train import evaluate_model, train, write_report
from .viz import ego_frame_record, render_frame

log = logging.getLogger("bevintent")
MANIFEST = "manifest.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


@contextmanager
def output_lock(out_dir: Path):
    """At most one writer per output directory."""
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RuntimeError(f"{out_dir} is locked by another run (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _writable_dir(path: Path) -> Path:
    p = path
    while not p.exists():
        p = p.parent
    if not p.is_dir() or not os.access(p, os.W_OK):
        raise UsageError(f"output directory {path} is not writable")
    return path


def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    d = cfg.to_dict()
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    if getattr(args, "steps", None) is not None:
        d["train"]["steps"] = args.steps
    if getattr(args, "zero_map", False):
        d["train"]["zero_map"] = True
    return RunConfig.from_dict(d)


def read_manifest(dataset: Path) -> dict:
    path = dataset / MANIFEST
    if not path.is_file():
        raise UsageError(f"{dataset}: no {MANIFEST} (run `synth` first)")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def load_dataset(dataset: Path) -> list:
    man = read_manifest(dataset)
    return [load_scenario(dataset / e["path"]) for e in man["scenarios"]]


def encode_dataset(scenarios, cfg: RunConfig) -> SampleSet:
    ss = SampleSet(cfg.voxel, build_anchor_grid(cfg.voxel, cfg.anchors), cfg.network.t_future)
    for i, sc in enumerate(scenarios):
        ss.add_scenario(sc, i)
    return ss


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    cfg = load_config(args)
    if args.n < 0:
        raise UsageError("--n must be >= 0")
    out = _writable_dir(Path(args.out))
    with output_lock(out):
        entries = []
        for k, (seed, sc) in enumerate(synthesize(cfg.generator, cfg.seed, args.n)):
            name = f"scenario_{k:04d}.jsonl"
            save_scenario(sc, out / name)
            entries.append({"index": k, "path": name, "seed": seed,
                            "maneuvers": list(getattr(sc, "maneuvers", []))})
        man = {"master_seed": cfg.seed, "generator": cfg.generator.to_dict(), "scenarios": entries}
        tmp = out / (MANIFEST + ".tmp")
        tmp.write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
        os.replace(tmp, out / MANIFEST)
    log.info("wrote %d scenarios to %s", args.n, out)
    return 0


def cmd_encode(args) -> int:
    cfg = load_config(args)
    sc = load_scenario(args.scenario)
    frames = range(sc.n_frames) if args.frame is None else [args.frame]
    for f in frames:
        if not 0 <= f < sc.n_frames:
            raise UsageError(f"frame {f} out of range 0..{sc.n_frames - 1}")
    out = _writable_dir(Path(args.out))
    with output_lock(out):
        for f in frames:
            lidar, mp = encode_frame(sc, f, cfg.voxel)
            dump_tensor(out / f"lidar_{f:04d}.npy", lidar)
            dump_tensor(out / f"map_{f:04d}.npy", mp)
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args)
    dataset = Path(args.dataset)
    read_manifest(dataset)
    out = _writable_dir(Path(args.out))
    ckpt = out / "checkpoint.npz"
    resume = None
    if args.resume:
        if not ckpt.is_file():
            raise UsageError(f"--resume given but {ckpt} does not exist")
        net, state, _ = load_checkpoint(ckpt, cfg.network)
        resume = (net, state)
    with output_lock(out):
        cfg.save(out / "config.json")
        log_path = out / "train_log.csv"
        if resume is None and log_path.exists():
            log_path.unlink()
        if resume is not None:
            _truncate_log(log_path, resume[1].step)
        samples = encode_dataset(load_dataset(dataset), cfg)
        log.info("training on %d samples", len(samples))
        train(samples, cfg.network, cfg.loss, cfg.train, cfg.seed, log_path=log_path,
              checkpoint_path=ckpt, resume=resume)
    return 0


def _truncate_log(path: Path, step: int) -> None:
    """Drop log rows at or after ``step`` so a resumed run continues cleanly."""
    if not path.exists():
        return
    lines = path.read_text().splitlines(keepends=True)
    keep = lines[:1] + [ln for ln in lines[1:] if int(ln.split(",", 1)[0]) < step]
    path.write_text("".join(keep))


def _predict(args, cfg):
    net, _, _ = load_checkpoint(args.checkpoint, cfg.network)
    scenarios = load_dataset(Path(args.dataset))
    if not scenarios:
        return None, [], scenarios
    samples = encode_dataset(scenarios, cfg)
    grid = build_anchor_grid(cfg.voxel, cfg.anchors)
    report, records = evaluate_model(net, samples, scenarios, grid, cfg.infer, cfg.eval,
                                     zero_map=cfg.train.zero_map)
    return report, records, scenarios


def cmd_eval(args) -> int:
    cfg = load_config(args)
    read_manifest(Path(args.dataset))
    out = _writable_dir(Path(args.out))
    with output_lock(out):
        report, records, scenarios = _predict(args, cfg)
        if report is None:
            log.warning("dataset %s is empty; writing an empty report", args.dataset)
            (out / "report.csv").write_text("metric,key,value\n")
            (out / "report.txt").write_text("empty dataset\n")
            return 0
        write_report(report, out)
        write_predictions(out / "predictions.jsonl", records)
        sys.stdout.write(report.to_text())
    return 0


def cmd_predict(args) -> int:
    cfg = load_config(args)
    read_manifest(Path(args.dataset))
    out = _writable_dir(Path(args.out))
    with output_lock(out):
        _, records, _ = _predict(args, cfg)
        write_predictions(out / "predictions.jsonl", records)
    return 0


def cmd_viz(args) -> int:
    sc = load_scenario(args.scenario)
    if not 0 <= args.frame < sc.n_frames:
        raise UsageError(f"frame {args.frame} out of range; valid frames are 0..{sc.n_frames - 1}")
    rec = None
    if args.predictions:
        recs = [r for r in read_predictions(args.predictions) if r["frame"] == args.frame
                and (args.scenario_id is None or r["scenario"] == args.scenario_id)]
        rec = ego_frame_record(recs[0], sc) if recs else None
    svg = render_frame(sc, args.frame, rec)
    Path(args.out).write_text(svg)
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bevintent", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=True):
        sp.add_argument("--config", help="run config JSON (defaults: toy settings)")
        if seed:
            sp.add_argument("--seed", type=int, help="master seed override")

    s = sub.add_parser("synth", help="generate synthetic scenarios")
    common(s)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("encode", help="dump network input tensors as .npy")
    common(s, seed=False)
    s.add_argument("--scenario", required=True)
    s.add_argument("--frame", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("train", help="train a model on a synthesized dataset")
    common(s)
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int)
    s.add_argument("--zero-map", action="store_true", help="ablation: feed an all-zero map")
    s.add_argument("--resume", action="store_true")
    s.set_defaults(func=cmd_train)

    for name, fn, helptext in (("eval", cmd_eval, "evaluate a checkpoint"),
                               ("predict", cmd_predict, "write tracked predictions")):
        s = sub.add_parser(name, help=helptext)
        common(s, seed=False)
        s.add_argument("--checkpoint", required=True)
        s.add_argument("--dataset", required=True)
        s.add_argument("--out", required=True)
        s.add_argument("--zero-map", action="store_true")
        s.set_defaults(func=fn)

    s = sub.add_parser("viz", help="render one frame as SVG")
    s.add_argument("--scenario", required=True)
    s.add_argument("--frame", type=int, required=True)
    s.add_argument("--predictions")
    s.add_argument("--scenario-id", help="select records of one scenario in the prediction dump")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_viz)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    np.seterr(over="ignore", under="ignore")
    try:
        return args.func(args)
    except (UsageError, ConfigError, FileNotFoundError) as e:
        print(f"bevintent: error: {e}", file=sys.stderr)
        return 1
    except (CheckpointError, TrainingError, ScenarioError, RuntimeError, IndexError, ValueError) as e:
        print(f"bevintent: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
