"""Minimal dense-tensor engine: forward and backward for the Mbed-ATN layer set."""
from .gru import GruLayer, GruParams, gru, gru_forward
from .ops import (
    concat,
    conv1d,
    dense,
    dropout,
    flatten,
    maxpool1d,
    prelu,
    relu,
    reshape,
    sigmoid,
    silu,
    softmax,
    softmax_xent,
    take_last,
)
from .optim import Adam, AdamState, adam_step
from .serialize import load_params, save_params
from .tensor import Tensor, as_tensor

__all__ = [
    "Adam",
    "AdamState",
    "GruLayer",
    "GruParams",
    "Tensor",
    "adam_step",
    "as_tensor",
    "concat",
    "conv1d",
    "dense",
    "dropout",
    "flatten",
    "gru",
    "gru_forward",
    "load_params",
    "maxpool1d",
    "prelu",
    "relu",
    "reshape",
    "save_params",
    "sigmoid",
    "silu",
    "softmax",
    "softmax_xent",
    "take_last",
]
