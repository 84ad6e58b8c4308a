"""Sparse LiDAR-like depth: scanline sampling, additive noise, rasterization."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class SparsePoints:
    """Point samples of a video's depth.

    ``row``/``col`` are pixel-center coordinates (pixel ``r`` covers the edge
    interval ``[r, r + 1)``); they stay integral until a crop rescales them.
    """

    frame: np.ndarray
    row: np.ndarray
    col: np.ndarray
    dist: np.ndarray

    def __post_init__(self):
        self.frame = np.asarray(self.frame, dtype=np.int64)
        self.row = np.asarray(self.row, dtype=np.float64)
        self.col = np.asarray(self.col, dtype=np.float64)
        self.dist = np.asarray(self.dist, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.dist)

    def select(self, keep: np.ndarray) -> "SparsePoints":
        return SparsePoints(self.frame[keep], self.row[keep], self.col[keep], self.dist[keep])

    def frames(self, start: int, stop: int) -> "SparsePoints":
        """Points of frames ``[start, stop)``, renumbered from 0."""
        sel = (self.frame >= start) & (self.frame < stop)
        out = self.select(sel)
        out.frame = out.frame - start
        return out

    def records(self) -> np.ndarray:
        """``[P, 4]`` float array of (frame, row, col, dist)."""
        return np.stack([self.frame, self.row, self.col, self.dist], axis=1)

    @staticmethod
    def empty() -> "SparsePoints":
        return SparsePoints(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0))


def _scanline_frame(h: int, w: int, n: int, rows: np.ndarray, rng: np.random.Generator):
    """Spread ``n`` samples over the given scanlines, evenly spaced with a random phase per line."""
    lines = len(rows)
    counts = np.full(lines, n // lines)
    counts[rng.permutation(lines)[: n - counts.sum()]] += 1
    rr, cc = [], []
    for r, m in zip(rows, counts):
        if m == 0:
            continue
        phase = rng.uniform(0.0, w / m)
        cols = np.floor(phase + np.arange(m) * (w / m)).astype(np.int64)
        cols = np.minimum(cols, w - 1)
        rr.append(np.full(m, r))
        cc.append(cols)
    return np.concatenate(rr), np.concatenate(cc)


def sample_sparse_depth(depth: np.ndarray, density: float, rng: np.random.Generator,
                        pattern: str = "scanline") -> SparsePoints:
    """Pick ``round(density * H * W)`` pixels per frame of ``depth [T, H, W]``.

    ``scanline``: a fixed set of evenly spaced sensor rows (chosen once per
    video), each line sampled at even spacing with a per-frame random phase.
    ``uniform``: pixels drawn without replacement.
    """
    if not 0.0 < density <= 1.0:
        raise ValueError(f"density must be in (0, 1], got {density}")
    depth = np.asarray(depth)
    if depth.ndim == 2:
        depth = depth[None]
    t, h, w = depth.shape
    n = int(round(density * h * w))
    n = max(n, 1)
    lines = min(h, max(math.ceil(n / w), int(round(h * math.sqrt(density)))))
    offset = rng.uniform(0.0, h / lines)
    rows = np.minimum(np.floor(offset + np.arange(lines) * (h / lines)).astype(np.int64), h - 1)
    frames, rr, cc = [], [], []
    for f in range(t):
        if pattern == "scanline":
            r, c = _scanline_frame(h, w, n, rows, rng)
        elif pattern == "uniform":
            flat = rng.choice(h * w, size=n, replace=False)
            r, c = np.divmod(flat, w)
        else:
            raise ValueError(f"unknown pattern {pattern!r}")
        order = np.lexsort((c, r))
        r, c = r[order], c[order]
        frames.append(np.full(len(r), f))
        rr.append(r)
        cc.append(c)
    frame = np.concatenate(frames)
    row = np.concatenate(rr)
    col = np.concatenate(cc)
    return SparsePoints(frame, row, col, depth[frame, row, col])


def add_depth_noise(points: SparsePoints, sigma: float, rng: np.random.Generator,
                    floor: float = 1e-3) -> SparsePoints:
    """Independent N(0, sigma^2) offset per distance, clamped to at least ``floor`` (> 0)."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0 or len(points) == 0:
        return SparsePoints(points.frame, points.row, points.col, points.dist.copy())
    noisy = points.dist + rng.normal(0.0, sigma, size=len(points))
    return SparsePoints(points.frame, points.row, points.col, np.maximum(noisy, floor))


def rasterize(points: SparsePoints, t: int, h: int, w: int):
    """Dense ``[T, H, W]`` distances and validity; among duplicates the nearest return wins."""
    values = np.zeros((t, h, w))
    valid = np.zeros((t, h, w), dtype=bool)
    if len(points) == 0:
        return values, valid
    r = np.floor(points.row + 0.5).astype(np.int64)
    c = np.floor(points.col + 0.5).astype(np.int64)
    f = points.frame
    ok = (f >= 0) & (f < t) & (r >= 0) & (r < h) & (c >= 0) & (c < w)
    f, r, c, d = f[ok], r[ok], c[ok], points.dist[ok]
    # write far-to-near so the nearest sample lands last
    order = np.argsort(-d, kind="stable")
    values[f[order], r[order], c[order]] = d[order]
    valid[f, r, c] = True
    return values, valid
