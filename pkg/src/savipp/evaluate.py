"""Run a trained model or a baseline over clips and score it."""

from __future__ import annotations

import numpy as np

from . import ndgrad as nd
from .baselines import KMeansConfig, bbox_copy, kmeans_pixels
from .metrics import MetricReport, bbox_miou, evaluate_video, evaluated_objects
from .scenegen.sparse import rasterize
from .train.loop import pad_boxes


def predict_video(model, video, frames: int | None = None) -> dict:
    """Unroll on a whole clip: hard masks (slot index + 1), readout boxes, composited prediction."""
    t = video.num_frames if frames is None else min(frames, video.num_frames)
    k = model.cfg.num_slots
    rgb = video.rgb[:t].astype(np.float32)[None]
    boxes0 = pad_boxes(video.boxes[0], k).astype(np.float32)[None]
    with nd.no_grad():
        out = model.unroll(rgb, boxes0 if model.cfg.conditional else None, decode=model.decoder is not None)
    res = {"boxes": out.boxes.data[0]}
    if out.alpha is not None:
        res["masks"] = (out.hard_masks[0] + 1).astype(np.int32)
        res["alpha"] = out.alpha.data[0]
        res["prediction"] = out.prediction.data[0]
    return res


def _eval_inputs(video, frames, k):
    t = video.num_frames if frames is None else min(frames, video.num_frames)
    return t, video.masks[:t], pad_boxes(video.boxes[:t], k)


def evaluate_model(model, videos, matching: str | None = None, frames: int | None = None,
                   sparse_centroid: bool = False) -> MetricReport:
    if matching is None:
        matching = "ordered" if model.cfg.conditional else "hungarian"
    report = MetricReport()
    for v in videos:
        t, gt, gt_boxes = _eval_inputs(v, frames, model.cfg.num_slots)
        pred = predict_video(model, v, t)
        valid = rasterize(v.sparse, v.num_frames, *v.depth.shape[1:])[1][:t] if sparse_centroid else None
        row = evaluate_video(pred["masks"], gt, gt_boxes, pred["boxes"], matching, valid, v.name)
        report.excluded_objects += row.pop("excluded")
        report.per_video.append(row)
    return report


def baseline_masks(kind: str, video, features: str = "depth", flow_max: float = 1.0, sparse: bool = False):
    t, h, w = video.depth.shape
    if kind == "bbox_copy":
        return bbox_copy(video.boxes[0], t, h, w)
    if kind == "kmeans":
        names = set(features.split("+"))
        cfg = KMeansConfig(use_depth="depth" in names, use_flow="flow" in names, sparse=sparse)
        return kmeans_pixels(video, cfg, flow_max)[0]
    raise ValueError(f"unknown mask baseline {kind!r}")


def evaluate_baseline(kind: str, videos, num_slots: int, features: str = "depth", flow_max: float = 1.0,
                      frames: int | None = None, sparse: bool = False, box_model=None) -> MetricReport:
    """Score a baseline with the ordered protocol; ``box_model`` supplies tracks for box propagation."""
    report = MetricReport()
    for v in videos:
        t, gt, gt_boxes = _eval_inputs(v, frames, num_slots)
        if kind == "bbox_propagation":
            tracks = box_model.predict(gt_boxes[0], t)
            row = {"name": v.name, "fg_ari": None, "miou": None, "com": None, "b_recall": None,
                   "b_miou": _bmiou(tracks, gt_boxes, gt)}
        else:
            masks = baseline_masks(kind, v, features, flow_max, sparse)[:t]
            pred_boxes = gt_boxes[:1].repeat(t, axis=0) if kind == "bbox_copy" else None
            row = evaluate_video(masks, gt, gt_boxes, pred_boxes, "ordered", None, v.name)
            report.excluded_objects += row.pop("excluded")
        report.per_video.append(row)
    return report


def _bmiou(tracks, gt_boxes, gt):
    objects = evaluated_objects(gt, 1, gt_boxes[0])
    v = bbox_miou(tracks, gt_boxes, objects)
    return None if not np.isfinite(v) else v
