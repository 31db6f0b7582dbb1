"""Ego trajectory prediction network."""

from .config import ModelConfig
from .network import FusionTrace, StgcnnPredictor
from .checkpoint import FORMAT_VERSION, load_checkpoint, save_checkpoint

__all__ = [
    "ModelConfig",
    "FusionTrace",
    "StgcnnPredictor",
    "FORMAT_VERSION",
    "load_checkpoint",
    "save_checkpoint",
]
