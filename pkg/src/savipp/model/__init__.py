"""Slot-based video network."""

from .checkpoint import CheckpointMismatch, load_checkpoint, load_config, read_checkpoint, save_checkpoint
from .config import ModelConfig, full_config, smoke_config, tiny_config
from .savi import SAVi, UnrollOutput

__all__ = [
    "CheckpointMismatch", "ModelConfig", "SAVi", "UnrollOutput", "full_config", "load_checkpoint",
    "load_config", "read_checkpoint", "save_checkpoint", "smoke_config", "tiny_config",
]
