"""Differentiable primitives, layers, and optimizers."""

from .functional import (
    BCE_EPS,
    BN_EPS,
    BN_MOMENTUM,
    RunningStats,
    batchnorm,
    bce_loss,
    bce_loss_grad,
    bce_with_logits,
    cond_batchnorm,
    sigmoid,
    sparsemax,
    sparsemax_vjp,
)
from .layers import (
    AvgPool3d,
    BatchNorm,
    Conv2d,
    Conv3d,
    ConvNd,
    ConvTranspose3d,
    Dense,
    Param,
    relu,
    relu_backward,
)
from .optim import Adam, MomentumSGD, OptimizerConfig, optimizer_step

__all__ = [
    "BCE_EPS",
    "BN_EPS",
    "BN_MOMENTUM",
    "RunningStats",
    "batchnorm",
    "bce_loss",
    "bce_loss_grad",
    "bce_with_logits",
    "cond_batchnorm",
    "sigmoid",
    "sparsemax",
    "sparsemax_vjp",
    "AvgPool3d",
    "BatchNorm",
    "Conv2d",
    "Conv3d",
    "ConvNd",
    "ConvTranspose3d",
    "Dense",
    "Param",
    "relu",
    "relu_backward",
    "Adam",
    "MomentumSGD",
    "OptimizerConfig",
    "optimizer_step",
]
