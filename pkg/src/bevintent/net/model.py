"""Two-stream BEV detector with a three-branch header.

LiDAR and map tensors pass through separate residual CNNs that each downsample
by 8, are concatenated along channels and fused. The header predicts per-anchor
vehicle scores, per-cell action logits, and per-anchor box and waypoint
regression. The regression branch also sees a convolutional embedding of the
softmaxed action scores.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..anchors import reg_width
from ..scene.types import ACTIONS
from .tensor import Tensor, add, concat, conv2d, parameter, relu, reshape, softmax


class NetworkConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    lidar_in: int = 290
    map_in: int = 17
    lidar_widths: tuple = (32, 64, 128)
    map_widths: tuple = (32, 64, 128)
    stage_blocks: tuple = (1, 1, 1)
    strides: tuple = (2, 2, 2)
    fusion_width: int = 256
    fusion_blocks: int = 2
    head_width: int = 128
    embed_width: int = 16
    t_future: int = 6
    anchors_per_cell: int = 5
    n_actions: int = len(ACTIONS)
    head_init_scale: float = 0.1
    det_prior: float = 0.01

    def __post_init__(self):
        for name in ("lidar_widths", "map_widths", "stage_blocks", "strides"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        self.validate()

    def validate(self):
        n = len(self.strides)
        if not (len(self.lidar_widths) == len(self.map_widths) == len(self.stage_blocks) == n):
            raise NetworkConfigError("widths, stage_blocks and strides must have one entry per stage")
        if int(np.prod(self.strides)) != 8:
            raise NetworkConfigError(f"strides {self.strides} multiply to {int(np.prod(self.strides))}, not 8")
        widths = (self.lidar_in, self.map_in, *self.lidar_widths, *self.map_widths,
                  self.fusion_width, self.head_width, self.embed_width, self.t_future,
                  self.anchors_per_cell, self.n_actions)
        if min(widths) < 1:
            raise NetworkConfigError("all widths and counts must be >= 1")
        if min(self.stage_blocks) < 0 or self.fusion_blocks < 0:
            raise NetworkConfigError("block counts must be >= 0")
        if not 0 < self.det_prior < 1:
            raise NetworkConfigError("det_prior must be in (0, 1)")

    @property
    def reg_width(self) -> int:
        return reg_width(self.t_future)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise NetworkConfigError(f"unknown network config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def toy(cls, lidar_in: int, map_in: int = 17, **kw) -> "NetworkConfig":
        base = dict(lidar_in=lidar_in, map_in=map_in, lidar_widths=(16, 24, 32),
                    map_widths=(8, 16, 16), stage_blocks=(0, 1, 1), fusion_width=64,
                    fusion_blocks=1, head_width=64, embed_width=8)
        base.update(kw)
        return cls(**base)


@dataclass
class HeadOutputs:
    det_logits: Tensor  # (N, rows, cols, K, 2); index 1 is the vehicle score
    intent_logits: Tensor  # (N, rows, cols, n_actions)
    reg: Tensor  # (N, rows, cols, K, reg_width)
    extras: dict = field(default_factory=dict)

    def vehicle_prob(self) -> np.ndarray:
        z = self.det_logits.data
        return 1.0 / (1.0 + np.exp(z[..., 0] - z[..., 1]))

    def intent_prob(self) -> np.ndarray:
        z = self.intent_logits.data
        e = np.exp(z - z.max(-1, keepdims=True))
        return e / e.sum(-1, keepdims=True)


class IntentNet:
    """Parameters live in ``self.params`` (ordered name -> Tensor)."""

    def __init__(self, cfg: NetworkConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.params: dict = {}
        self._rng = np.random.default_rng(seed)
        self._build()
        del self._rng

    # -------------------------------------------------------------- params
    def _conv(self, name, k, cin, cout, gain=1.0, bias=None):
        std = gain * np.sqrt(2.0 / (k * k * cin))
        w = self._rng.normal(0.0, std, (k, k, cin, cout))
        b = np.zeros(cout) if bias is None else np.asarray(bias, dtype=float)
        self.params[name + ".w"] = parameter(w.astype(self.dtype), name + ".w")
        self.params[name + ".b"] = parameter(b.astype(self.dtype), name + ".b")

    def _build(self):
        c = self.cfg
        for stream, cin, widths in (("lidar", c.lidar_in, c.lidar_widths), ("map", c.map_in, c.map_widths)):
            for s, (w, nb) in enumerate(zip(widths, c.stage_blocks)):
                self._conv(f"{stream}.s{s}.down", 3, cin, w)
                for r in range(nb):
                    self._conv(f"{stream}.s{s}.res{r}.a", 3, w, w)
                    self._conv(f"{stream}.s{s}.res{r}.b", 3, w, w)
                cin = w
        self._conv("fusion.in", 3, c.lidar_widths[-1] + c.map_widths[-1], c.fusion_width)
        for r in range(c.fusion_blocks):
            self._conv(f"fusion.res{r}.a", 3, c.fusion_width, c.fusion_width)
            self._conv(f"fusion.res{r}.b", 3, c.fusion_width, c.fusion_width)
        K, F, Hd = c.anchors_per_cell, c.fusion_width, c.head_width
        prior = np.log(c.det_prior / (1 - c.det_prior))
        det_bias = np.tile([0.0, prior], K)
        g = c.head_init_scale
        self._conv("det.0", 3, F, Hd)
        self._conv("det.1", 3, Hd, 2 * K, gain=g, bias=det_bias)
        self._conv("int.0", 3, F, Hd)
        self._conv("int.1", 3, Hd, c.n_actions, gain=g)
        self._conv("embed", 3, c.n_actions, c.embed_width)
        self._conv("reg.0", 3, F + c.embed_width, Hd)
        self._conv("reg.1", 3, Hd, K * c.reg_width, gain=g)

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def astype(self, dtype) -> "IntentNet":
        self.dtype = np.dtype(dtype)
        for p in self.params.values():
            p.data = p.data.astype(self.dtype)
            p.grad = None
        return self

    # ------------------------------------------------------------- forward
    def _apply(self, name, x, stride=1, act=True):
        y = conv2d(x, self.params[name + ".w"], self.params[name + ".b"], stride=stride, padding=1)
        return relu(y) if act else y

    def _residual(self, name, x):
        h = self._apply(name + ".a", x)
        h = self._apply(name + ".b", h, act=False)
        return relu(add(x, h))

    def _stream(self, stream, x):
        c = self.cfg
        for s, (stride, nb) in enumerate(zip(c.strides, c.stage_blocks)):
            x = self._apply(f"{stream}.s{s}.down", x, stride=stride)
            for r in range(nb):
                x = self._residual(f"{stream}.s{s}.res{r}", x)
        return x

    def backbone(self, lidar, map_t) -> tuple:
        """Fused features (N, rows/8, cols/8, F) plus the two pre-fusion stream outputs."""
        lidar = lidar if isinstance(lidar, Tensor) else Tensor(np.asarray(lidar, dtype=self.dtype))
        map_t = map_t if isinstance(map_t, Tensor) else Tensor(np.asarray(map_t, dtype=self.dtype))
        self._check_input(lidar, self.cfg.lidar_in, "lidar")
        self._check_input(map_t, self.cfg.map_in, "map")
        if lidar.shape[:3] != map_t.shape[:3]:
            raise NetworkConfigError(f"lidar {lidar.shape} and map {map_t.shape} grids differ")
        fl = self._stream("lidar", lidar)
        fm = self._stream("map", map_t)
        x = self._apply("fusion.in", concat([fl, fm], axis=-1))
        for r in range(self.cfg.fusion_blocks):
            x = self._residual(f"fusion.res{r}", x)
        return x, fl, fm

    def _check_input(self, t, channels, what):
        if t.data.ndim != 4 or t.shape[-1] != channels:
            raise NetworkConfigError(f"{what} input must be (N, rows, cols, {channels}), got {t.shape}")
        if t.shape[1] % 8 or t.shape[2] % 8:
            raise NetworkConfigError(f"{what} grid {t.shape[1]}x{t.shape[2]} is not divisible by 8")

    def header(self, feats: Tensor) -> HeadOutputs:
        c = self.cfg
        N, R, C, _ = feats.shape
        K = c.anchors_per_cell
        det = self._apply("det.1", self._apply("det.0", feats), act=False)
        intent = self._apply("int.1", self._apply("int.0", feats), act=False)
        emb = self._apply("embed", softmax(intent, axis=-1))
        reg = self._apply("reg.1", self._apply("reg.0", concat([feats, emb], axis=-1)), act=False)
        return HeadOutputs(det_logits=reshape(det, (N, R, C, K, 2)), intent_logits=intent,
                           reg=reshape(reg, (N, R, C, K, c.reg_width)))

    def forward(self, lidar, map_t) -> HeadOutputs:
        """Inputs are channels-last batches (N, rows, cols, channels)."""
        feats, fl, fm = self.backbone(lidar, map_t)
        out = self.header(feats)
        out.extras = {"features": feats, "lidar_features": fl, "map_features": fm}
        return out

    __call__ = forward


def to_channels_last(x: np.ndarray) -> np.ndarray:
    """(C, rows, cols) or (N, C, rows, cols) -> channels-last."""
    x = np.asarray(x)
    if x.ndim == 3:
        return np.ascontiguousarray(x.transpose(1, 2, 0))[None]
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1))


__all__ = ["NetworkConfigError", "NetworkConfig", "HeadOutputs", "IntentNet", "to_channels_last"]
