"""Simultaneous colorization and continuous-magnification super-resolution
on a small, deterministic CPU autodiff engine."""

from .autodiff import Tape, Tensor
from .config import RunConfig, load_config, parse_config
from .imaging import (
    LabImage,
    RgbImage,
    augment_reference,
    bicubic_downsample,
    lab_to_rgb,
    make_pair,
    rgb_to_lab,
    synth_dataset,
)
from .metrics import MetricReport, colorfulness, psnr, ssim
from .model import (
    Discriminator,
    Generator,
    Mode,
    SCSNetConfig,
    cpm_coords,
)
from .training import (
    AdamConfig,
    LossWeights,
    OptimState,
    SurrogateFeatureNet,
    adam_step,
    adversarial_losses,
    content_loss,
    load_checkpoint,
    load_generator,
    perceptual_loss,
    save_checkpoint,
    total_loss,
    train_loop,
)

__version__ = "0.1.0"

__all__ = [
    "Tape",
    "Tensor",
    "RunConfig",
    "load_config",
    "parse_config",
    "LabImage",
    "RgbImage",
    "augment_reference",
    "bicubic_downsample",
    "lab_to_rgb",
    "make_pair",
    "rgb_to_lab",
    "synth_dataset",
    "MetricReport",
    "colorfulness",
    "psnr",
    "ssim",
    "Discriminator",
    "Generator",
    "Mode",
    "SCSNetConfig",
    "cpm_coords",
    "AdamConfig",
    "LossWeights",
    "OptimState",
    "SurrogateFeatureNet",
    "adam_step",
    "adversarial_losses",
    "content_loss",
    "load_checkpoint",
    "load_generator",
    "perceptual_loss",
    "save_checkpoint",
    "total_loss",
    "train_loop",
    "__version__",
]
