"""Minimal float64 tensor kernel with reverse-mode gradients."""
from .layers import MLP, init_dense, init_layer_norm, init_lstm
from .ops import (bce, clip, dense, dropout, exp, layer_norm, log, lstm_cell, minimum,
                  mse, relu, sigmoid, softplus, square, tanh)
from .optim import Adam, AdamState
from .params import ParamStore, file_digest, load_checkpoint, save_checkpoint
from .tensor import Tensor, as_tensor, backward, concat, is_grad_enabled, no_grad

__all__ = [
    "MLP", "Adam", "AdamState", "ParamStore", "Tensor",
    "as_tensor", "backward", "bce", "clip", "concat", "dense", "dropout", "exp",
    "file_digest", "init_dense", "init_layer_norm", "init_lstm", "is_grad_enabled",
    "layer_norm", "load_checkpoint", "log", "lstm_cell", "minimum", "mse", "no_grad",
    "relu", "save_checkpoint", "sigmoid", "softplus", "square", "tanh",
]
