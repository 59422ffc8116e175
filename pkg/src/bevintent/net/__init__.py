from .checkpoint import CHECKPOINT_VERSION, CheckpointError, load_checkpoint, read_meta, save_checkpoint
from .model import HeadOutputs, IntentNet, NetworkConfig, NetworkConfigError, to_channels_last
from .optim import AdamState, TrainingError, adam_step
from .tensor import (ShapeError, Tensor, add, add_n, concat, conv2d, fused, parameter, relu,
                     reshape, scale, softmax, take_rows, total)

__all__ = [
    "CHECKPOINT_VERSION", "CheckpointError", "load_checkpoint", "read_meta", "save_checkpoint",
    "HeadOutputs", "IntentNet", "NetworkConfig", "NetworkConfigError", "to_channels_last",
    "AdamState", "TrainingError", "adam_step", "ShapeError", "Tensor", "add", "add_n", "concat",
    "conv2d", "fused", "parameter", "relu", "reshape", "scale", "softmax", "take_rows", "total",
]
