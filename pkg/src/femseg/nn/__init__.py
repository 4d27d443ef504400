from femseg.nn.functional import (
    batchnorm3d,
    concat_channels,
    conv3d,
    conv_transpose3d,
    maxpool3d,
    relu,
    soft_dice_loss,
    softmax_channels,
)
from femseg.nn.init import he_init
from femseg.nn.optim import Adam, OptimizerConfig, adam_step
from femseg.nn.tensor import Tensor

__all__ = [
    "Adam",
    "OptimizerConfig",
    "Tensor",
    "adam_step",
    "batchnorm3d",
    "concat_channels",
    "conv3d",
    "conv_transpose3d",
    "he_init",
    "maxpool3d",
    "relu",
    "soft_dice_loss",
    "softmax_channels",
]
