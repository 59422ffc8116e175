import shutil

import numpy as np
import pytest

from bevintent.anchors import build_anchor_grid
from bevintent.data import SampleSet, synthesize
from bevintent.encoder import VoxelConfig
from bevintent.loss import LossConfig, read_log
from bevintent import train as train_mod
from bevintent.net import NetworkConfig, TrainingError, load_checkpoint, save_checkpoint
from bevintent.scene.generator import GeneratorConfig
from bevintent.train import BatchOrder, InferConfig, TrainConfig, derived_seed, evaluate_model, train

CFG = VoxelConfig(L=51.2, W=51.2, H=4.0, dL=0.4, dW=0.4, dH=0.8, T_past=5)
GRID = build_anchor_grid(CFG)
NET = NetworkConfig.toy(lidar_in=25)


@pytest.fixture(scope="module")
def world():
    scs = [s for _, s in synthesize(GeneratorConfig(), 0, 1)]
    ss = SampleSet(CFG, GRID)
    ss.add_scenario(scs[0], 0, frames=[4, 8, 12, 16, 20, 24])
    return scs, ss


def test_derived_seeds_distinct():
    assert len({derived_seed(m, k) for m in range(5) for k in range(4)}) == 20
    assert derived_seed(3, 1) == derived_seed(3, 1)


def test_batch_order_covers_epochs():
    bo = BatchOrder(5, 0)
    a = np.concatenate([bo.next(2) for _ in range(5)])
    assert sorted(a[:5].tolist()) == list(range(5)) and sorted(a[5:].tolist()) == list(range(5))
    with pytest.raises(TrainingError):
        BatchOrder(0, 0)


def test_loss_decreases(world):
    _, ss = world
    res = train(ss, NET, LossConfig(), TrainConfig(steps=50, batch_size=2), master_seed=0)
    assert len(res.losses) == 50 and all(np.isfinite(res.losses))
    assert np.mean(res.losses[-10:]) < 0.5 * np.mean(res.losses[:10])


def test_same_seed_identical_log(world, tmp_path):
    _, ss = world
    cfg = TrainConfig(steps=6, batch_size=2)
    for name in ("a.csv", "b.csv"):
        train(ss, NET, LossConfig(), cfg, master_seed=4, log_path=tmp_path / name)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    train(ss, NET, LossConfig(), cfg, master_seed=5, log_path=tmp_path / "c.csv")
    assert (tmp_path / "a.csv").read_bytes() != (tmp_path / "c.csv").read_bytes()


def test_resume_matches_uninterrupted(world, tmp_path, monkeypatch):
    _, ss = world
    full = TrainConfig(steps=8, batch_size=2, checkpoint_every=4)
    saved = []

    def keep_copies(path, net, state, meta=None):
        save_checkpoint(path, net, state, meta)
        shutil.copy(path, tmp_path / f"ck_{state.step}.npz")
        saved.append(state.step)

    monkeypatch.setattr(train_mod, "save_checkpoint", keep_copies)
    ref = train(ss, NET, LossConfig(), full, master_seed=1, log_path=tmp_path / "ref.csv",
                checkpoint_path=tmp_path / "ck.npz")
    assert saved == [4, 8]
    net, state, meta = load_checkpoint(tmp_path / "ck_4.npz", NET)
    assert state.step == 4 and meta["master_seed"] == 1
    res = train(ss, NET, LossConfig(), full, master_seed=1, resume=(net, state))
    assert res.losses == ref.losses[4:]
    assert ref.net.params.keys() == res.net.params.keys()
    for k, p in ref.net.params.items():
        assert np.array_equal(p.data, res.net.params[k].data)
    assert len(read_log(tmp_path / "ref.csv")) == 8


def test_evaluate_model_runs_and_is_deterministic(world):
    scs, ss = world
    res = train(ss, NET, LossConfig(), TrainConfig(steps=2, batch_size=2), master_seed=0)
    r1, rec1 = evaluate_model(res.net, ss, scs, GRID)
    r2, rec2 = evaluate_model(res.net, ss, scs, GRID)
    assert r1.to_csv() == r2.to_csv() and rec1 == rec2
    assert [r["frame"] for r in rec1] == [4, 8, 12, 16, 20, 24]
    r3, rec3 = evaluate_model(res.net, ss, scs, GRID, InferConfig(use_tracker=False))
    assert rec3 == [] and len(r3.ap) == 5
