"""Tensor core: autodiff, layers, optimizer, RNG streams, checkpoints."""

from .tensor import (
    Tensor, set_default_dtype, default_dtype,
    conv_out_side, conv_transpose_out_side,
)
from .layers import (
    LAYER_KINDS, LayerSpec, Module, Sequential,
    Conv2d, ConvTranspose2d, BatchNorm2d, InstanceNorm2d,
    LeakyReLU, ReLU, Tanh, Sigmoid, Dropout, ResidualBlock, ConcatSkip,
    build_layer, build_network, forward,
)
from .optim import Adam, AdamState, adam_step
from .rng import seeded_rng, derive_rng, rng_state, restore_rng
from .serialize import save_tensors, load_tensors

__all__ = [
    "Tensor", "set_default_dtype", "default_dtype",
    "conv_out_side", "conv_transpose_out_side",
    "LAYER_KINDS", "LayerSpec", "Module", "Sequential",
    "Conv2d", "ConvTranspose2d", "BatchNorm2d", "InstanceNorm2d",
    "LeakyReLU", "ReLU", "Tanh", "Sigmoid", "Dropout", "ResidualBlock", "ConcatSkip",
    "build_layer", "build_network", "forward",
    "Adam", "AdamState", "adam_step",
    "seeded_rng", "derive_rng", "rng_state", "restore_rng",
    "save_tensors", "load_tensors",
]
