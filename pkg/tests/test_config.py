import json

import pytest

from bevintent.config import ConfigError, RunConfig
from bevintent.train import TrainConfig


def test_defaults_are_toy_and_consistent():
    cfg = RunConfig()
    assert cfg.voxel.lidar_shape == (25, 192, 192)
    assert cfg.network.lidar_in == 25
    assert cfg.train.steps == 2000


def test_round_trip(tmp_path):
    cfg = RunConfig()
    path = tmp_path / "c.json"
    cfg.save(path)
    back = RunConfig.load(path)
    assert back.to_dict() == cfg.to_dict()
    assert json.loads(path.read_text())["seed"] == 0


def test_partial_override():
    cfg = RunConfig.from_dict({"seed": 5, "train": {"steps": 10, "lr": 5e-4}})
    assert cfg.seed == 5 and cfg.train.steps == 10 and cfg.train.lr == 5e-4
    assert cfg.train.batch_size == TrainConfig().batch_size


@pytest.mark.parametrize("d", [
    {"bogus": {}},
    {"train": {"stepz": 3}},
    {"train": {"lr": -1.0}},
    {"infer": {"threshold": 2.0}},
    {"infer": {"tracker": {"gate": 0.0}}},
    {"seed": -1},
    {"network": {**RunConfig().network.to_dict(), "lidar_in": 24}},
    {"voxel": {"L": 38.0, "W": 38.4, "H": 4.0, "dL": 0.2, "dW": 0.2, "dH": 0.8, "T_past": 5}},
])
def test_invalid_rejected(d):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(d)


def test_invalid_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{nope")
    with pytest.raises(ConfigError):
        RunConfig.load(p)
    p.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        RunConfig.load(p)


def test_lr_schedule():
    t = TrainConfig(steps=100, lr=1e-3, decay_at=0.75, decay_factor=0.1)
    assert t.lr_at(0) == 1e-3 and t.lr_at(74) == 1e-3
    assert t.lr_at(75) == pytest.approx(1e-4)
    with pytest.raises(ValueError):
        TrainConfig(decay_factor=0.0)
