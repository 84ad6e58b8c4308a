"""PNG panels: input frames, decoded depth, and slot masks side by side."""

from __future__ import annotations

import numpy as np
from PIL import Image

from .metrics import mask_threshold_filter
from .targets import decode_depth

# label 0 (background / filtered) is black; slot k uses PALETTE[k % len] for label k + 1
PALETTE = np.array([
    [230, 25, 75], [60, 180, 75], [255, 225, 25], [0, 130, 200], [245, 130, 48], [145, 30, 180],
    [70, 240, 240], [240, 50, 230], [210, 245, 60], [250, 190, 212], [0, 128, 128], [220, 190, 255],
    [170, 110, 40], [255, 250, 200], [128, 0, 0], [170, 255, 195], [128, 128, 0], [255, 215, 180],
    [0, 0, 128], [128, 128, 128], [255, 255, 255], [100, 60, 200], [60, 100, 20], [200, 100, 100],
], dtype=np.uint8)

REFERENCE_AREA = 128 * 192
REFERENCE_THRESHOLD = 1300


def filter_threshold(h: int, w: int) -> float:
    """Average-area cutoff scaled from 1300 pixels at 128x192 to an h x w frame."""
    return REFERENCE_THRESHOLD * (h * w) / REFERENCE_AREA


def colorize_masks(labels: np.ndarray) -> np.ndarray:
    """``[..., H, W]`` integer labels (slot + 1, 0 = none) -> uint8 RGB."""
    labels = np.asarray(labels)
    out = np.zeros(labels.shape + (3,), dtype=np.uint8)
    fg = labels > 0
    out[fg] = PALETTE[(labels[fg] - 1) % len(PALETTE)]
    return out


def depth_to_gray(log_depth: np.ndarray) -> np.ndarray:
    """Log-depth -> inverse-distance grayscale (near is bright), normalized over the clip."""
    inv = 1.0 / np.maximum(decode_depth(log_depth), 1e-3)
    lo, hi = inv.min(), inv.max()
    g = (inv - lo) / (hi - lo) if hi > lo else np.zeros_like(inv)
    return np.repeat((g * 255).round().astype(np.uint8)[..., None], 3, axis=-1)


def to_uint8(rgb: np.ndarray) -> np.ndarray:
    return (np.clip(rgb, 0.0, 1.0) * 255).round().astype(np.uint8)


def frame_grid(rows: list) -> np.ndarray:
    """Stack rows of ``[T, H, W, 3]`` uint8 frames into one ``[R*H, T*W, 3]`` image."""
    return np.concatenate([np.concatenate(list(r), axis=1) for r in rows], axis=0)


def render_panels(rgb, masks, log_depth=None, gt_masks=None, filter_masks: bool = False) -> np.ndarray:
    """Rows: input, decoded depth (if given), predicted masks, ground-truth masks (if given)."""
    t, h, w = masks.shape
    if filter_masks:
        masks = mask_threshold_filter(masks, filter_threshold(h, w))
    rows = [to_uint8(rgb[:t])]
    if log_depth is not None:
        rows.append(depth_to_gray(log_depth[:t]))
    rows.append(colorize_masks(masks))
    if gt_masks is not None:
        rows.append(colorize_masks(gt_masks[:t]))
    return frame_grid(rows)


def save_png(path, image: np.ndarray) -> None:
    Image.fromarray(image).save(path, format="PNG", optimize=False)
