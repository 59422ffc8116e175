"""Checkpoints: one ``.npz`` holding parameters, optimizer moments and a JSON
``__meta__`` entry (format version, configs, step)."""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .model import IntentNet, NetworkConfig
from .optim import AdamState

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: IntentNet, state: AdamState, extra: dict | None = None) -> None:
    meta = {"version": CHECKPOINT_VERSION, "network": model.cfg.to_dict(), "step": state.step,
            "dtype": model.dtype.name, "params": list(model.params)}
    meta.update(extra or {})
    arrays = {"__meta__": np.array(json.dumps(meta, sort_keys=True))}
    for name, p in model.params.items():
        arrays["param/" + name] = p.data
        if name in state.m:
            arrays["adam_m/" + name] = state.m[name]
            arrays["adam_v/" + name] = state.v[name]
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, **arrays)
    os.replace(tmp, path)


def read_meta(path) -> dict:
    with np.load(path, allow_pickle=False) as z:
        if "__meta__" not in z:
            raise CheckpointError(f"{path}: not a checkpoint (no __meta__ entry)")
        return json.loads(str(z["__meta__"]))


def load_checkpoint(path, cfg: NetworkConfig | None = None) -> tuple:
    """(model, adam_state, meta). With ``cfg`` given, every stored tensor must match
    the shape that config implies."""
    meta = read_meta(path)
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {meta.get('version')} "
                              f"is not supported (expected {CHECKPOINT_VERSION})")
    stored_cfg = NetworkConfig.from_dict(meta["network"])
    model = IntentNet(cfg or stored_cfg, seed=0, dtype=meta.get("dtype", "float32"))
    state = AdamState(step=int(meta["step"]))
    with np.load(path, allow_pickle=False) as z:
        for name, p in model.params.items():
            key = "param/" + name
            if key not in z:
                raise CheckpointError(f"{path}: missing tensor {name!r}")
            arr = z[key]
            if arr.shape != p.shape:
                raise CheckpointError(f"{path}: tensor {name!r} has shape {arr.shape}, "
                                      f"config expects {p.shape}")
            p.data = arr.astype(model.dtype)
            if "adam_m/" + name in z:
                state.m[name] = z["adam_m/" + name]
                state.v[name] = z["adam_v/" + name]
        extra = set(k.split("/", 1)[1] for k in z.files if k.startswith("param/")) - set(model.params)
        if extra:
            raise CheckpointError(f"{path}: tensors {sorted(extra)} are not in the network config")
    return model, state, meta
