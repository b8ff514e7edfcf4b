"""Numerical core: tensors, autodiff, layers, optimizer."""

from . import functional
from .layers import BatchNorm1d, BiGRU, Conv1d, ConvBlock, GRULayer, Linear, Module, ModuleList
from .optim import AdamW
from .tensor import Parameter, Tensor, concat, no_grad, stack

__all__ = [
    "AdamW",
    "BatchNorm1d",
    "BiGRU",
    "Conv1d",
    "ConvBlock",
    "GRULayer",
    "Linear",
    "Module",
    "ModuleList",
    "Parameter",
    "Tensor",
    "concat",
    "functional",
    "no_grad",
    "stack",
]
