"""Proximal-femur segmentation with a 3-D u-net written on numpy/scipy."""
from femseg.volume import CropRecord, LabelMask, PreprocessConfig, Volume
from femseg.patching import PatchSpec
from femseg.unet import UNet, UNetConfig
from femseg.augment import AugmentConfig
from femseg.nn.optim import OptimizerConfig
from femseg.pipeline import Case, Dataset, TrainConfig, evaluate, predict, train

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig",
    "Case",
    "CropRecord",
    "Dataset",
    "LabelMask",
    "OptimizerConfig",
    "PatchSpec",
    "PreprocessConfig",
    "TrainConfig",
    "UNet",
    "UNetConfig",
    "Volume",
    "evaluate",
    "predict",
    "train",
]
