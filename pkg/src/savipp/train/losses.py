"""Masked reconstruction loss and the box regression loss."""

from __future__ import annotations

import numpy as np

from .. import ndgrad as nd
from ..ndgrad import ContractError, Tensor


def masked_l2_weights(valid: np.ndarray, channels: int, group_dims: int = 2):
    """Flat element indices and weights realizing the nested mean.

    Mean over valid (pixel, channel) pairs within a frame, then over frames
    that have any valid pixel, then over videos that have any valid frame.
    ``valid`` is ``[B, T, ...]`` when ``group_dims`` is 2.
    """
    valid = np.asarray(valid, dtype=bool)
    groups = valid.shape[:group_dims]
    per_frame = valid.reshape(groups + (-1,)).sum(-1)              # [B, T]
    frames_used = (per_frame > 0).sum(-1, keepdims=True)           # [B, 1]
    videos_used = int((frames_used > 0).sum())
    if videos_used == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    with np.errstate(divide="ignore", invalid="ignore"):
        w_frame = np.where(per_frame > 0, 1.0 / (per_frame * channels * frames_used * videos_used), 0.0)
    pix = np.flatnonzero(valid.reshape(-1))
    elem = (pix[:, None] * channels + np.arange(channels)[None, :]).reshape(-1)
    frame_of_pix = pix // int(np.prod(valid.shape[group_dims:], dtype=np.int64))
    weights = np.repeat(w_frame.reshape(-1)[frame_of_pix], channels)
    return elem, weights


def masked_l2_loss(pred: Tensor, target: np.ndarray, valid: np.ndarray, group_dims: int = 2) -> Tensor:
    """Squared error restricted to valid positions; values at invalid positions are never read."""
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ContractError(f"prediction {pred.shape} and target {target.shape} differ")
    if tuple(valid.shape) != pred.shape[:-1]:
        raise ContractError(f"validity {valid.shape} does not match prediction {pred.shape}")
    elem, weights = masked_l2_weights(valid, pred.shape[-1], group_dims)
    flat_target = target.reshape(-1)[elem].astype(pred.dtype)
    picked = nd.take(pred, elem)
    diff = nd.sub(picked, Tensor(flat_target))
    return nd.sum(nd.mul(nd.square(diff), Tensor(weights.astype(pred.dtype))))


def huber_loss(pred: Tensor, target: np.ndarray, delta: float = 1.0) -> Tensor:
    """Mean over elements of 0.5 x^2 (|x| <= 1) or |x| - 0.5."""
    target = np.asarray(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ContractError(f"prediction {pred.shape} and target {target.shape} differ")
    return nd.mean(nd.huber(nd.sub(pred, Tensor(target)), delta))
