"""Desk-scale frequency-aware selective-scan network for image deraining."""

from .tensor import Tensor, backward, grad_check, no_grad
from .model import Model, ModelConfig, build, load, save
from .training import LossWeights, RainSynthParams, TrainConfig, loss_total, \
    psnr_y, ssim_y, synth_rain, train

__all__ = [
    "Tensor", "backward", "grad_check", "no_grad",
    "Model", "ModelConfig", "build", "load", "save",
    "LossWeights", "RainSynthParams", "TrainConfig", "loss_total",
    "psnr_y", "ssim_y", "synth_rain", "train",
]
__version__ = "0.1.0"
