"""Dense-tensor compute with reverse-mode gradients and the Adam optimizer."""

from .tensor import GraphError, Tensor, constant, no_grad
from .params import AdamState, ParamStore, adam_step, backward, load_checkpoint, save_checkpoint
from .ops import conv2d, dense, dropout, layernorm, log_softmax, mha, relu, softmax

__all__ = [
    "AdamState",
    "GraphError",
    "ParamStore",
    "Tensor",
    "adam_step",
    "backward",
    "constant",
    "conv2d",
    "dense",
    "dropout",
    "layernorm",
    "load_checkpoint",
    "log_softmax",
    "mha",
    "no_grad",
    "relu",
    "save_checkpoint",
    "softmax",
]
