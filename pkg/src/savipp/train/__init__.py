"""Losses, optimizer, schedule, and training loops."""

from .losses import huber_loss, masked_l2_loss, masked_l2_weights
from .loop import (
    LOG_FIELDS, TrainConfig, TrainingDiverged, TrainResult, build_batch, compute_losses, pad_boxes,
    load_optimizer, prepare_clip, read_loss_log, save_optimizer, supervised_model_config, train_loop, train_supervised_variant,
)
from .optim import AdamState, adam_step, clip_global_norm, global_norm, lr_schedule

__all__ = [
    "LOG_FIELDS", "AdamState", "TrainConfig", "TrainResult", "TrainingDiverged", "adam_step",
    "build_batch", "clip_global_norm", "compute_losses", "global_norm", "huber_loss", "load_optimizer", "lr_schedule",
    "masked_l2_loss", "masked_l2_weights", "pad_boxes", "prepare_clip", "read_loss_log", "save_optimizer",
    "supervised_model_config", "train_loop", "train_supervised_variant",
]
