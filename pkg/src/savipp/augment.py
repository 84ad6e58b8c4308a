"""Crop-and-resize augmentation applied identically to every frame and modality."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scenegen.dataset import VideoSample
from .scenegen.sparse import SparsePoints

ASPECT_RANGE = (0.75, 1.33)
MAX_ATTEMPTS = 64


@dataclass(frozen=True)
class CropParams:
    y0: int
    x0: int
    h: int
    w: int
    out_h: int
    out_w: int

    @staticmethod
    def full(h: int, w: int) -> "CropParams":
        return CropParams(0, 0, h, w, h, w)

    def is_identity(self, h: int, w: int) -> bool:
        return (self.y0, self.x0, self.h, self.w, self.out_h, self.out_w) == (0, 0, h, w, h, w)


def sample_crop(rng: np.random.Generator, h: int, w: int, min_cover: float = 0.2,
                aspect_range=ASPECT_RANGE, out_hw=None) -> CropParams:
    """Area fraction ~ U[min_cover, 1], log-aspect ~ uniform; full frame after 64 rejections."""
    if not 0 < min_cover <= 1:
        raise ValueError(f"min_cover must be in (0, 1], got {min_cover}")
    out_h, out_w = out_hw if out_hw is not None else (h, w)
    lo, hi = aspect_range
    area = h * w
    for _ in range(MAX_ATTEMPTS):
        frac = rng.uniform(min_cover, 1.0)
        aspect = math.exp(rng.uniform(math.log(lo), math.log(hi)))
        cw = int(round(math.sqrt(frac * area * aspect)))
        ch = int(round(math.sqrt(frac * area / aspect)))
        if not (1 <= cw <= w and 1 <= ch <= h):
            continue
        if ch * cw < min_cover * area or not lo <= cw / ch <= hi:
            continue
        y0 = int(rng.integers(0, h - ch + 1))
        x0 = int(rng.integers(0, w - cw + 1))
        return CropParams(y0, x0, ch, cw, out_h, out_w)
    return CropParams(0, 0, h, w, out_h, out_w)


def _bilinear_axis(n_in: int, n_out: int):
    """Half-pixel-center source positions: (lower index, upper index, fraction)."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_bilinear(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize axes (-3, -2) of ``[..., H, W, C]``; written as a + f (b - a) so constants stay exact."""
    h, w = x.shape[-3], x.shape[-2]
    if (h, w) == (out_h, out_w):
        return x.copy()
    r0, r1, fr = _bilinear_axis(h, out_h)
    c0, c1, fc = _bilinear_axis(w, out_w)
    fr = fr[:, None, None]
    fc = fc[:, None]
    top = x[..., r0, :, :]
    bot = x[..., r1, :, :]
    rows = top + fr * (bot - top)
    left = rows[..., c0, :]
    right = rows[..., c1, :]
    return left + fc * (right - left)


def resize_nearest(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest source pixel by center for label maps ``[..., H, W]``."""
    h, w = x.shape[-2], x.shape[-1]
    r = np.minimum(np.floor((np.arange(out_h) + 0.5) * h / out_h).astype(np.int64), h - 1)
    c = np.minimum(np.floor((np.arange(out_w) + 0.5) * w / out_w).astype(np.int64), w - 1)
    return x[..., r[:, None], c[None, :]]


def _crop(x: np.ndarray, crop: CropParams, channel_last: bool) -> np.ndarray:
    if channel_last:
        return x[..., crop.y0:crop.y0 + crop.h, crop.x0:crop.x0 + crop.w, :]
    return x[..., crop.y0:crop.y0 + crop.h, crop.x0:crop.x0 + crop.w]


def apply_to_video(rgb: np.ndarray, crop: CropParams) -> np.ndarray:
    return resize_bilinear(_crop(rgb, crop, True), crop.out_h, crop.out_w)


def apply_to_flow(flow: np.ndarray, crop: CropParams) -> np.ndarray:
    """Crop, resize, then scale (dx, dy) by (out_w / w, out_h / h)."""
    out = resize_bilinear(_crop(flow, crop, True), crop.out_h, crop.out_w)
    scale = np.array([crop.out_w / crop.w, crop.out_h / crop.h], dtype=out.dtype)
    return out * scale


def apply_to_depth(depth: np.ndarray, masks: np.ndarray, crop: CropParams):
    d = resize_bilinear(_crop(depth, crop, False)[..., None], crop.out_h, crop.out_w)[..., 0]
    m = resize_nearest(_crop(masks, crop, False), crop.out_h, crop.out_w)
    return d, m


def apply_to_sparse(points: SparsePoints, crop: CropParams) -> SparsePoints:
    """Map pixel-center coordinates through the crop; drop points that leave the output frame."""
    ey = (points.row + 0.5 - crop.y0) * (crop.out_h / crop.h)
    ex = (points.col + 0.5 - crop.x0) * (crop.out_w / crop.w)
    keep = (ey >= 0) & (ey < crop.out_h) & (ex >= 0) & (ex < crop.out_w)
    return SparsePoints(points.frame[keep], ey[keep] - 0.5, ex[keep] - 0.5, points.dist[keep])


def apply_to_bboxes(boxes: np.ndarray, crop: CropParams, h: int, w: int) -> np.ndarray:
    """Normalized boxes of an ``h x w`` frame -> normalized boxes of the crop output."""
    b = np.asarray(boxes, dtype=np.float64)
    out = np.empty_like(b)
    out[..., 0] = (b[..., 0] * h - crop.y0) / crop.h
    out[..., 2] = (b[..., 2] * h - crop.y0) / crop.h
    out[..., 1] = (b[..., 1] * w - crop.x0) / crop.w
    out[..., 3] = (b[..., 3] * w - crop.x0) / crop.w
    out = np.clip(out, 0.0, 1.0)
    empty = (out[..., 2] <= out[..., 0]) | (out[..., 3] <= out[..., 1])
    out[empty] = 0.0
    return out


def augment_sample(sample: VideoSample, crop: CropParams) -> VideoSample:
    """One crop for every frame and every modality of the clip."""
    h, w = sample.depth.shape[-2:]
    if crop.is_identity(h, w):
        return sample
    depth, masks = apply_to_depth(sample.depth, sample.masks, crop)
    return VideoSample(
        apply_to_video(sample.rgb, crop), depth, apply_to_flow(sample.flow, crop),
        sample.flow_valid.copy(), masks, apply_to_bboxes(sample.boxes, crop, h, w),
        apply_to_sparse(sample.sparse, crop), sample.name)
