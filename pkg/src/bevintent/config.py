"""Run configuration: one JSON object bundling every module's config, validated
as a whole before any command touches the filesystem."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .anchors import AnchorSpec
from .encoder import VoxelConfig
from .infer import TrackerConfig
from .loss import LossConfig
from .metrics import EvalFilter
from .net import NetworkConfig
from .scene.generator import GeneratorConfig
from .train import InferConfig, TrainConfig


class ConfigError(ValueError):
    pass


# 0.2 m cells keep anchors 1.6 m apart at the 8x stride; the extent is cut to fit a CPU budget
TOY_VOXEL = dict(L=38.4, W=38.4, H=4.0, dL=0.2, dW=0.2, dH=0.8, T_past=5)


@dataclass
class RunConfig:
    voxel: VoxelConfig = field(default_factory=lambda: VoxelConfig(**TOY_VOXEL))
    anchors: AnchorSpec = field(default_factory=AnchorSpec)
    network: NetworkConfig = None  # derived from the voxel config when absent
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    infer: InferConfig = field(default_factory=InferConfig)
    eval: EvalFilter = field(default_factory=EvalFilter)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    seed: int = 0

    def __post_init__(self):
        if self.network is None:
            self.network = NetworkConfig.toy(lidar_in=self.voxel.lidar_channels)
        self.validate()

    def validate(self) -> None:
        v, n = self.voxel, self.network
        if n.lidar_in != v.lidar_channels:
            raise ConfigError(f"network.lidar_in={n.lidar_in} but the voxel grid gives "
                              f"{v.lidar_channels} LiDAR channels")
        if n.map_in != v.map_shape[0]:
            raise ConfigError(f"network.map_in={n.map_in} but the map has {v.map_shape[0]} channels")
        if v.rows % 8 or v.cols % 8:
            raise ConfigError(f"grid {v.rows}x{v.cols} is not divisible by the network stride 8")
        if n.anchors_per_cell != len(self.anchors.aspect_ratios):
            raise ConfigError("network.anchors_per_cell must equal the number of anchor ratios")
        v.grid()
        self.generator.validate()
        if abs(self.generator.frame_dt * round(0.5 / self.generator.frame_dt) - 0.5) > 1e-9:
            raise ConfigError("generator.frame_dt must divide the 0.5 s waypoint spacing")
        t = self.infer.tracker
        if t.gate <= 0 or not 0 <= t.ema <= 1 or t.max_coast < 0 or not 0 <= t.coast_decay <= 1:
            raise ConfigError("tracker: gate > 0, ema and coast_decay in [0, 1], max_coast >= 0")
        if not 0 <= self.infer.threshold <= 1 or not 0 < self.infer.nms_iou <= 1:
            raise ConfigError("infer: threshold in [0, 1] and nms_iou in (0, 1]")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")

    def to_dict(self) -> dict:
        infer = asdict(self.infer)
        return {
            "voxel": self.voxel.to_dict(),
            "anchors": {"size": self.anchors.size, "aspect_ratios": [list(r) for r in self.anchors.aspect_ratios]},
            "network": self.network.to_dict(),
            "loss": self.loss.to_dict(),
            "train": self.train.to_dict(),
            "infer": infer,
            "eval": asdict(self.eval),
            "generator": self.generator.to_dict(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {"voxel", "anchors", "network", "loss", "train", "infer", "eval", "generator", "seed"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        try:
            kw = {}
            if "voxel" in d:
                kw["voxel"] = VoxelConfig.from_dict(d["voxel"])
            if "anchors" in d:
                kw["anchors"] = AnchorSpec(**d["anchors"])
            if "network" in d:
                kw["network"] = NetworkConfig.from_dict(d["network"])
            if "loss" in d:
                kw["loss"] = LossConfig.from_dict(d["loss"])
            if "train" in d:
                kw["train"] = _build(TrainConfig, d["train"], "train")
            if "infer" in d:
                inf = dict(d["infer"])
                tracker = _build(TrackerConfig, inf.pop("tracker", {}), "infer.tracker")
                kw["infer"] = _build(InferConfig, {**inf, "tracker": tracker}, "infer")
            if "eval" in d:
                kw["eval"] = _build(EvalFilter, d["eval"], "eval")
            if "generator" in d:
                kw["generator"] = GeneratorConfig.from_dict(d["generator"])
            if "seed" in d:
                kw["seed"] = int(d["seed"])
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from e
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(d)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _build(cls, d: dict, section: str):
    unknown = set(d) - set(cls.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"{section}: unknown keys {sorted(unknown)}")
    return cls(**d)


__all__ = ["ConfigError", "TOY_VOXEL", "RunConfig"]
