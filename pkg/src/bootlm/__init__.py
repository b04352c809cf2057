"""Latent-bootstrapping pretraining for small masked-autoencoder language models."""

from .config import RunConfig, TrainConfig
from .model import BootModel, ModelConfig

__all__ = ["BootModel", "ModelConfig", "RunConfig", "TrainConfig"]
__version__ = "0.1.0"
