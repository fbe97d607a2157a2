"""Unitary convolutional layers of any shape, built from Lie-algebra parameters."""

__version__ = "0.1.0"

from .conv import ConvGeometry, conv_direct, im2col, unitary_conv_forward
from .lie import ExpmConfig, ExpmOverflowError, LieParams, SkewSymmetric, expm, expm_grad, lie_to_skew, unpack
from .model import ConvNet, DenseHead, UnitaryConv, toy6
from .optim import SgdConfig, sgd_step
from .tensor import ShapeError
from .unitary import FilterSpec, Mapping, UnitaryWeight, WeightCase, apply_weight, build_weight, reshape_to_filters

__all__ = [
    "ConvGeometry", "ConvNet", "DenseHead", "ExpmConfig", "ExpmOverflowError", "FilterSpec",
    "LieParams", "Mapping", "SgdConfig", "ShapeError", "SkewSymmetric", "UnitaryConv",
    "UnitaryWeight", "WeightCase", "apply_weight", "build_weight", "conv_direct", "expm",
    "expm_grad", "im2col", "lie_to_skew", "reshape_to_filters", "sgd_step", "toy6",
    "unitary_conv_forward", "unpack",
]
