"""Minimal float64 neural-network engine with exact input gradients."""

from .graph import ForwardPass, ModelGraph, NonFiniteError, cross_entropy, one_hot
from .layers import (
    Conv1D,
    Dense,
    LSTM,
    SeqSplit,
    Softmax,
    TailConcat,
    layer_from_spec,
    softmax,
)
from .optim import Adam, train_step
from .weights_io import WeightsIOError, load_weights, save_weights

__all__ = [
    "Adam", "Conv1D", "Dense", "ForwardPass", "LSTM", "ModelGraph",
    "NonFiniteError", "SeqSplit", "Softmax", "TailConcat", "WeightsIOError",
    "cross_entropy", "layer_from_spec", "load_weights", "one_hot",
    "save_weights", "softmax", "train_step",
]
