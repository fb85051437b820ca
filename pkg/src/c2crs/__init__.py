"""Coarse-to-fine contrastive learning for conversational recommendation."""

from .config import ModelConfig, TrainConfig, load_config
from .model import C2CRSModel

__version__ = "0.1.0"

__all__ = ["ModelConfig", "TrainConfig", "load_config", "C2CRSModel",
           "__version__"]
