"""Prediction targets: log-depth, color-wheel flow, and their validity masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenegen.sparse import rasterize

TARGET_ORDER = ("depth", "flow")
TARGET_CHANNELS = {"depth": 1, "flow": 3}


class DataError(ValueError):
    """Input data violates a target's domain (e.g. negative depth)."""


def encode_depth(d: np.ndarray) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0):
        raise DataError("depth must be non-negative")
    return np.log1p(d)


def decode_depth(x: np.ndarray) -> np.ndarray:
    return np.expm1(np.asarray(x, dtype=np.float64))


def hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Vectorized six-sector conversion; ``h`` in [0, 1)."""
    h6 = (h % 1.0) * 6.0
    i = np.floor(h6).astype(np.int64) % 6
    f = h6 - np.floor(h6)
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def flow_to_rgb(flow: np.ndarray, max_magnitude: float) -> np.ndarray:
    """Direction -> hue, clipped relative magnitude -> saturation, value 1."""
    if max_magnitude <= 0:
        raise ValueError("max_magnitude must be positive")
    flow = np.asarray(flow, dtype=np.float64)
    dx, dy = flow[..., 0], flow[..., 1]
    hue = (np.arctan2(dy, dx) / (2 * np.pi)) % 1.0
    sat = np.minimum(1.0, np.hypot(dx, dy) / max_magnitude)
    return np.clip(hsv_to_rgb(hue, sat, np.ones_like(sat)), 0.0, 1.0)


@dataclass
class TargetBundle:
    values: np.ndarray        # [T, H, W, C]
    valid: np.ndarray         # [T, H, W] bool
    channel_map: dict         # name -> (start, stop)

    @property
    def channels(self) -> int:
        return self.values.shape[-1]


def parse_selection(spec) -> tuple:
    """``"depth+flow"`` or an iterable of names -> names in canonical order."""
    names = spec.split("+") if isinstance(spec, str) else list(spec)
    names = [n.strip() for n in names if n.strip()]
    if not names:
        raise ValueError("target selection is empty")
    unknown = sorted(set(names) - set(TARGET_ORDER))
    if unknown:
        raise ValueError(f"unknown targets {unknown}")
    return tuple(n for n in TARGET_ORDER if n in names)


def target_channels(selection) -> int:
    return sum(TARGET_CHANNELS[n] for n in parse_selection(selection))


def assemble_targets(selection, sample, flow_max: float = 1.0, sparse: bool = False,
                     points=None) -> TargetBundle:
    """Concatenate (depth, flow_rgb) channels of ``sample``.

    Dense mode: every pixel valid, except frames whose flow is undefined when
    flow is selected. Sparse mode: depth comes from ``points`` (default
    ``sample.sparse``) and flow shares the depth validity.
    """
    names = parse_selection(selection)
    t, h, w = sample.depth.shape
    valid = np.ones((t, h, w), dtype=bool)
    chans, cmap, start = [], {}, 0
    if "depth" in names:
        if sparse:
            pts = sample.sparse if points is None else points
            dist, valid = rasterize(pts, t, h, w)
            chans.append(encode_depth(dist)[..., None])
        else:
            chans.append(encode_depth(sample.depth)[..., None])
        cmap["depth"] = (start, start + 1)
        start += 1
    if "flow" in names:
        chans.append(flow_to_rgb(sample.flow, flow_max))
        cmap["flow_rgb"] = (start, start + 3)
        start += 3
        valid = valid & np.asarray(sample.flow_valid, dtype=bool)[:, None, None]
    values = np.concatenate(chans, axis=-1).astype(np.float32)
    return TargetBundle(values, valid, cmap)
