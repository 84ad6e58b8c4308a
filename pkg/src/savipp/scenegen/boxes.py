"""Tight per-object boxes from instance masks."""

from __future__ import annotations

import numpy as np


def extract_bboxes(masks: np.ndarray, num_slots: int) -> np.ndarray:
    """``masks [T, H, W]`` -> ``[T, K, 4]`` normalized (ymin, xmin, ymax, xmax).

    Coordinates are pixel edges divided by the frame size, so rows 10..19 of a
    100-row frame give ymin 0.10, ymax 0.20. Object id ``o`` fills slot
    ``o - 1``; absent objects get all zeros.
    """
    masks = np.asarray(masks)
    if masks.ndim == 2:
        masks = masks[None]
    t, h, w = masks.shape
    if masks.max(initial=0) > num_slots:
        raise ValueError(f"mask id {int(masks.max())} exceeds {num_slots} slots")
    boxes = np.zeros((t, num_slots, 4), dtype=np.float64)
    for f in range(t):
        m = masks[f]
        for oid in np.unique(m):
            if oid == 0:
                continue
            rows = np.flatnonzero(np.any(m == oid, axis=1))
            cols = np.flatnonzero(np.any(m == oid, axis=0))
            boxes[f, oid - 1] = [rows[0] / h, cols[0] / w, (rows[-1] + 1) / h, (cols[-1] + 1) / w]
    return boxes


def box_area(boxes: np.ndarray) -> np.ndarray:
    return np.clip(boxes[..., 2] - boxes[..., 0], 0, None) * np.clip(boxes[..., 3] - boxes[..., 1], 0, None)


def box_present(boxes: np.ndarray) -> np.ndarray:
    return box_area(boxes) > 0


def rasterize_box(box: np.ndarray, h: int, w: int) -> np.ndarray:
    """Boolean ``[H, W]`` of pixels whose centers fall inside the normalized box."""
    ymin, xmin, ymax, xmax = box
    rc = (np.arange(h) + 0.5) / h
    cc = (np.arange(w) + 0.5) / w
    return ((rc >= ymin) & (rc < ymax))[:, None] & ((cc >= xmin) & (cc < xmax))[None, :]
