"""Reference baselines: first-frame box copy, learned box propagation, pixel k-means."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndgrad as nd
from .model.config import ModelConfig
from .model.layers import Module
from .model.savi import ConditionalInit, Predictor, Readout
from .scenegen.boxes import box_present, rasterize_box
from .scenegen.sparse import rasterize
from .targets import encode_depth, flow_to_rgb
from .train.losses import huber_loss
from .train.loop import TrainConfig, pad_boxes, step_rng
from .train.optim import AdamState, adam_step, clip_global_norm, lr_schedule


# -- box copy ----------------------------------------------------------------

def bbox_copy(first_boxes: np.ndarray, t: int, h: int, w: int) -> np.ndarray:
    """Paint each first-frame box into every frame; later boxes overwrite earlier ones."""
    frame = np.zeros((h, w), dtype=np.int32)
    for k, box in enumerate(np.asarray(first_boxes)):
        if box_present(box):
            frame[rasterize_box(box, h, w)] = k + 1
    return np.repeat(frame[None], t, axis=0)


# -- learned box propagation -------------------------------------------------

class BoxPropagation(Module):
    """Conditional initializer, slot predictor, and box readout; no visual input at all."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.init = self.child("init", ConditionalInit(rng, cfg))
        self.predictor = self.child("predictor", Predictor(rng, cfg))
        self.readout = self.child("readout", Readout(rng, cfg, barrier=False))

    def __call__(self, first_boxes, t: int) -> nd.Tensor:
        """``[B, K, 4]`` -> ``[B, T, K, 4]`` box tracks."""
        slots = self.init(first_boxes)
        out = []
        for i in range(t):
            if i > 0:
                slots = self.predictor(slots)
            out.append(self.readout(slots))
        return nd.stack(out, axis=1)

    def predict(self, first_boxes: np.ndarray, t: int, frames=None) -> np.ndarray:
        """``frames`` is accepted for interface parity and never read."""
        squeeze = np.asarray(first_boxes).ndim == 2
        boxes = np.asarray(first_boxes, dtype=np.float32)
        if squeeze:
            boxes = boxes[None]
        with nd.no_grad():
            out = self(boxes, t).data
        return out[0] if squeeze else out


def train_bbox_propagation(videos, model_cfg: ModelConfig, cfg: TrainConfig, progress=None):
    """Huber regression of whole box tracks from first-frame boxes; absent objects target zeros."""
    model = BoxPropagation(model_cfg)
    params = model.parameters()
    state = AdamState()
    k = model_cfg.num_slots
    losses = []
    for step in range(cfg.total_steps):
        rng = step_rng(cfg.seed, step)
        tracks = []
        for i in rng.integers(0, len(videos), size=cfg.batch_size):
            v = videos[int(i)]
            length = min(cfg.seq_len, v.num_frames)
            start = int(rng.integers(0, v.num_frames - length + 1))
            tracks.append(pad_boxes(v.boxes[start:start + length], k))
        tracks = np.stack(tracks).astype(np.float32)
        model.zero_grad()
        loss = huber_loss(model(tracks[:, 0], tracks.shape[1]), tracks)
        if not np.isfinite(loss.item()):
            raise RuntimeError(f"non-finite loss at step {step}")
        loss.backward()
        grads, _ = clip_global_norm([p.grad if p.grad is not None else np.zeros_like(p.data) for p in params],
                                    cfg.clip_norm)
        adam_step(params, grads, state, lr_schedule(step, cfg.total_steps, cfg.warmup_steps, cfg.peak_lr))
        losses.append(loss.item())
        if progress is not None:
            progress(step, loss.item())
    return model, np.array(losses)


# -- k-means -----------------------------------------------------------------

@dataclass
class KMeansConfig:
    use_depth: bool = True
    use_flow: bool = False
    sparse: bool = False
    max_iters: int = 300


def pixel_features(sample, use_depth: bool = True, use_flow: bool = False, flow_max: float = 1.0,
                   sparse: bool = False):
    """Per-pixel features scaled to [0, 1]: log-depth, flow color, (row, col), time.

    Returns (features ``[N, F]``, flat pixel indices into ``[T, H, W]``,
    slice of the position/time columns). In sparse mode only pixels with a
    depth sample are returned.
    """
    t, h, w = sample.depth.shape
    cols = []
    keep = np.ones((t, h, w), dtype=bool)
    if use_depth:
        if sparse:
            dist, keep = rasterize(sample.sparse, t, h, w)
            ld = encode_depth(dist)
        else:
            ld = encode_depth(sample.depth)
        lo, hi = ld[keep].min(), ld[keep].max()
        cols.append(((ld - lo) / (hi - lo if hi > lo else 1.0))[..., None])
    if use_flow:
        cols.append(flow_to_rgb(sample.flow, flow_max))
    tt, rr, cc = np.meshgrid(np.arange(t), np.arange(h), np.arange(w), indexing="ij")
    cols.append(np.stack([rr / max(h - 1, 1), cc / max(w - 1, 1), tt / max(t - 1, 1)], axis=-1))
    feats = np.concatenate(cols, axis=-1)
    idx = np.flatnonzero(keep.reshape(-1))
    return feats.reshape(-1, feats.shape[-1])[idx], idx, slice(feats.shape[-1] - 3, feats.shape[-1])


def _assign(x: np.ndarray, centers: np.ndarray):
    d = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
    a = np.argmin(d, axis=1)
    return a, d[np.arange(len(x)), a]


def kmeans(x: np.ndarray, centers: np.ndarray, max_iters: int = 300):
    """Lloyd iterations until the assignment repeats or ``max_iters``.

    An emptied cluster is moved onto the point farthest from its current
    center. Returns (labels, centers, objective after each assignment).
    """
    centers = np.array(centers, dtype=np.float64)
    k = len(centers)
    labels, dist = _assign(x, centers)
    history = [float(dist.sum())]
    for _ in range(max_iters):
        for j in range(k):
            members = labels == j
            if members.any():
                centers[j] = x[members].mean(0)
            else:
                far = int(np.argmax(dist))
                centers[j] = x[far]
                labels[far], dist[far] = j, 0.0
        new, dist = _assign(x, centers)
        history.append(float(dist.sum()))
        if np.array_equal(new, labels):
            break
        labels = new
    return labels, centers, history


def kmeans_pixels(sample, cfg: KMeansConfig = KMeansConfig(), flow_max: float = 1.0):
    """Cluster every pixel of a clip; k = objects with a first-frame box + background.

    Centers start at the mean feature of each object's first-frame box and,
    for background (label 0), of all first-frame points.
    """
    t, h, w = sample.depth.shape
    x, idx, _ = pixel_features(sample, cfg.use_depth, cfg.use_flow, flow_max, cfg.sparse)
    frame_of = idx // (h * w)
    pix = idx % (h * w)
    first = frame_of == 0
    centers, ids = [x[first].mean(0)], [0]
    for k, box in enumerate(sample.boxes[0]):
        if not box_present(box):
            continue
        inside = rasterize_box(box, h, w).reshape(-1)[pix] & first
        if inside.any():
            centers.append(x[inside].mean(0))
            ids.append(k + 1)
    labels, fitted, history = kmeans(x, np.stack(centers), cfg.max_iters)
    out = np.zeros(t * h * w, dtype=np.int32)
    out[idx] = np.asarray(ids)[labels]
    if len(idx) < t * h * w:
        # pixels without a depth sample take the cluster nearest in position/time
        x_all, _, _ = pixel_features(sample, False, cfg.use_flow, flow_max)
        missing = np.setdiff1d(np.arange(t * h * w), idx)
        near, _ = _assign(x_all[missing], fitted[:, x.shape[1] - x_all.shape[1]:])
        out[missing] = np.asarray(ids)[near]
    return out.reshape(t, h, w), history
