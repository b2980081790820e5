"""Minimal tensor/layer engine with hand-derived gradients.

Activations are NHWC float arrays; see :mod:`gearhdm.nn.functional` for
the operation contracts and :mod:`gearhdm.nn.layers` for the layer
objects used to assemble the fixed model topologies.
"""

from .adam import Adam, LRSchedule, adam_step
from .functional import (
    ShapeError,
    batchnorm_backward,
    batchnorm_forward,
    conv2d_backward,
    conv2d_forward,
    elu_backward,
    elu_forward,
    fully_connected_backward,
    fully_connected_forward,
    maxpool_backward,
    maxpool_forward,
    mse,
    relu_backward,
    relu_forward,
    softmax,
    softmax_cross_entropy,
    transposed_conv2d_backward,
    transposed_conv2d_forward,
)
from .layers import (
    BatchNorm,
    CenterCropPad,
    Conv2D,
    Dense,
    ELU,
    ELUMaxPool,
    Flatten,
    MaxPool2D,
    Network,
    Param,
    ReLU,
    ReLUMaxPool,
    Reshape,
    TransposedConv2D,
)
from .weights_io import load_network, save_weights

__all__ = [
    "Adam", "LRSchedule", "adam_step", "ShapeError",
    "conv2d_forward", "conv2d_backward",
    "transposed_conv2d_forward", "transposed_conv2d_backward",
    "maxpool_forward", "maxpool_backward",
    "relu_forward", "relu_backward", "elu_forward", "elu_backward",
    "batchnorm_forward", "batchnorm_backward",
    "fully_connected_forward", "fully_connected_backward",
    "softmax", "softmax_cross_entropy", "mse",
    "Param", "Network", "Conv2D", "TransposedConv2D", "MaxPool2D",
    "ReLU", "ELU", "ReLUMaxPool", "ELUMaxPool", "BatchNorm", "Dense", "Flatten", "Reshape",
    "CenterCropPad", "load_network", "save_weights",
]
