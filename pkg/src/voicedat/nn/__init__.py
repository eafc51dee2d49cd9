"""Hand-written neural network engine: kernels, layers, losses, Adam."""

from . import ops
from .adam import Adam
from .gradcheck import finite_difference_check, relative_error
from .layers import (
    AvgPool2d, BatchNorm, Dense, DepthwiseConv2d, Flatten, FreqAvgPool,
    GradientReversal, Layer, LeakyReLU, NotReadyError, PointwiseConv2d,
    StandardConv2d, glorot_uniform,
)
from .losses import mean_feature_distance, softmax, softmax_cross_entropy

__all__ = [
    "ops", "Adam", "finite_difference_check", "relative_error",
    "AvgPool2d", "BatchNorm", "Dense", "DepthwiseConv2d", "Flatten",
    "FreqAvgPool", "GradientReversal", "Layer", "LeakyReLU", "NotReadyError",
    "PointwiseConv2d", "StandardConv2d", "glorot_uniform",
    "mean_feature_distance", "softmax", "softmax_cross_entropy",
]
