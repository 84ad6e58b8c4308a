"""Segmentation and tracking metrics, all evaluated from the second frame onward.

Label conventions: ground-truth masks hold object ids (0 = background);
predicted masks hold slot index + 1, so slot ``k`` is compared with object
``k + 1`` under ordered (conditional) correspondence.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .scenegen.boxes import box_present

START_FRAME = 1


def _comb2(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1.0) / 2.0


def contingency(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max(initial=-1) + 1, bi.max(initial=-1) + 1), dtype=np.int64)
    np.add.at(table, (ai.ravel(), bi.ravel()), 1)
    return table


def ari_from_labels(pred: np.ndarray, gt: np.ndarray) -> float:
    """Adjusted Rand index of two flat labelings; 1.0 when the index cannot exceed its expectation."""
    pred, gt = np.ravel(pred), np.ravel(gt)
    if pred.shape != gt.shape:
        raise ValueError("label arrays differ in size")
    n = pred.size
    if n == 0:
        return float("nan")
    table = contingency(pred, gt)
    index = _comb2(table).sum()
    a = _comb2(table.sum(1)).sum()
    b = _comb2(table.sum(0)).sum()
    total = n * (n - 1) / 2.0
    expected = a * b / total if total > 0 else 0.0
    maximum = (a + b) / 2.0
    if maximum == expected:
        return 1.0
    return float((index - expected) / (maximum - expected))


def adjusted_rand_index(pred: np.ndarray, gt: np.ndarray, foreground_only: bool = True,
                        start_frame: int = START_FRAME) -> float:
    """ARI pooled over all pixels of frames ``t >= start_frame`` of ``[T, H, W]`` label maps."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shapes differ: {pred.shape} vs {gt.shape}")
    if pred.ndim >= 3:
        pred, gt = pred[start_frame:], gt[start_frame:]
    pred, gt = pred.ravel(), gt.ravel()
    if foreground_only:
        keep = gt != 0
        pred, gt = pred[keep], gt[keep]
    return ari_from_labels(pred, gt)


def fg_ari(pred: np.ndarray, gt: np.ndarray, start_frame: int = START_FRAME) -> float:
    return adjusted_rand_index(pred, gt, True, start_frame)


def iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.logical_or(a, b).sum()
    return float(np.logical_and(a, b).sum() / union) if union else float("nan")


def evaluated_objects(gt: np.ndarray, start_frame: int = START_FRAME, first_frame_boxes=None) -> list:
    """Objects visible after ``start_frame - 1``; with conditioning boxes, only those given a box."""
    ids = [int(o) for o in np.unique(gt[start_frame:]) if o != 0]
    if first_frame_boxes is not None:
        present = box_present(np.asarray(first_frame_boxes))
        ids = [o for o in ids if o - 1 < len(present) and present[o - 1]]
    return ids


def video_miou_ordered(pred: np.ndarray, gt: np.ndarray, objects=None, start_frame: int = START_FRAME) -> float:
    """Per object: mean IoU over frames where it is visible; then mean over objects."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    objects = evaluated_objects(gt, start_frame) if objects is None else list(objects)
    scores = []
    for o in objects:
        per_frame = [iou(pred[t] == o, gt[t] == o) for t in range(start_frame, gt.shape[0]) if np.any(gt[t] == o)]
        if per_frame:
            scores.append(np.mean(per_frame))
    return float(np.mean(scores)) if scores else float("nan")


# -- assignment --------------------------------------------------------------

def hungarian(cost: np.ndarray):
    """Minimum-cost one-to-one assignment of ``min(n, m)`` pairs.

    Shortest augmenting paths with row/column potentials, O(n^2 m). Rows are
    inserted in index order and ties in the path search go to the lowest
    column index, which makes the result deterministic.
    Returns (row indices, column indices) sorted by row.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a matrix")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost must be finite")
    n, m = cost.shape
    if n == 0 or m == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    if n > m:
        cols, rows = hungarian(cost.T)
        order = np.argsort(rows)
        return rows[order], cols[order]
    inf = math.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=np.int64)  # owner[j]: 1-based row matched to column j, 0 = free
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            delta, j1 = inf, 0
            for j in range(1, m + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta, j1 = minv[j], j
            for j in range(m + 1):
                if used[j]:
                    u[owner[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    rows, cols = [], []
    for j in range(1, m + 1):
        if owner[j]:
            rows.append(owner[j] - 1)
            cols.append(j - 1)
    rows, cols = np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64)
    order = np.argsort(rows)
    return rows[order], cols[order]


def assignment_cost(cost: np.ndarray, rows, cols) -> float:
    total = 0.0
    for r, c in zip(rows, cols):
        total += float(cost[r, c])
    return total


def brute_force_assignment(cost: np.ndarray) -> float:
    """Minimum total over every injective matching of the smaller side."""
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    if n > m:
        return brute_force_assignment(cost.T)
    best = math.inf
    for perm in itertools.permutations(range(m), n):
        total = 0.0
        for r, c in enumerate(perm):
            total += float(cost[r, c])
        best = min(best, total)
    return best if n else 0.0


# -- centroid / box metrics --------------------------------------------------

def box_center_pixels(box: np.ndarray, h: int, w: int) -> np.ndarray:
    """Normalized (ymin, xmin, ymax, xmax) -> (row, col) center in pixel-index coordinates."""
    return np.array([(box[0] + box[2]) / 2 * h - 0.5, (box[1] + box[3]) / 2 * w - 0.5])


def segment_centroid(mask: np.ndarray, valid=None):
    if valid is not None:
        mask = mask & valid
    rr, cc = np.nonzero(mask)
    if rr.size == 0:
        return None
    return np.array([rr.mean(), cc.mean()])


def _diag(h: int, w: int) -> float:
    return math.hypot(h - 1, w - 1) or 1.0


def com_pair_distances(pred: np.ndarray, gt_boxes: np.ndarray, slot: int, obj: int,
                       start_frame: int = START_FRAME, valid=None) -> list:
    """Per evaluated frame where object ``obj`` has a box: normalized distance, or None if the slot is empty."""
    t, h, w = pred.shape
    out = []
    for f in range(start_frame, t):
        box = gt_boxes[f, obj - 1]
        if not box_present(box):
            continue
        c = segment_centroid(pred[f] == slot + 1, None if valid is None else valid[f])
        out.append(None if c is None else float(np.linalg.norm(c - box_center_pixels(box, h, w)) / _diag(h, w)))
    return out


def com_distance(pred: np.ndarray, gt_boxes: np.ndarray, matching: str = "ordered", objects=None,
                 start_frame: int = START_FRAME, valid=None) -> float:
    """Mean normalized centroid-to-box-center distance over evaluated (frame, object) pairs.

    ordered: slot ``o - 1`` scores object ``o``; frames where that slot is
    empty are skipped. hungarian: whole tracks are matched by mean distance,
    and an empty segment counts as the maximum distance 1.
    """
    pred = np.asarray(pred)
    gt_boxes = np.asarray(gt_boxes)
    num_slots = gt_boxes.shape[1]
    if objects is None:
        present = box_present(gt_boxes[start_frame:])
        objects = [k + 1 for k in range(num_slots) if present[:, k].any()]
    if matching == "ordered":
        vals = [d for o in objects for d in com_pair_distances(pred, gt_boxes, o - 1, o, start_frame, valid)
                if d is not None]
        return float(np.mean(vals)) if vals else float("nan")
    if matching != "hungarian":
        raise ValueError(f"unknown matching {matching!r}")
    slots = int(max(pred.max(initial=0), num_slots))
    if not objects:
        return float("nan")
    tracks = {}
    cost = np.zeros((len(objects), slots))
    for i, o in enumerate(objects):
        for k in range(slots):
            d = [1.0 if x is None else x for x in com_pair_distances(pred, gt_boxes, k, o, start_frame, valid)]
            tracks[i, k] = d
            cost[i, k] = np.mean(d) if d else 0.0
    rows, cols = hungarian(cost)
    vals = []
    matched = set(rows.tolist())
    for r, c in zip(rows, cols):
        vals.extend(tracks[r, c])
    for i, o in enumerate(objects):
        if i not in matched:
            vals.extend([1.0] * len(com_pair_distances(pred, gt_boxes, 0, o, start_frame)))
    return float(np.mean(vals)) if vals else float("nan")


def bbox_recall(pred: np.ndarray, gt_boxes: np.ndarray, objects=None, start_frame: int = START_FRAME) -> float:
    """Fraction of (frame, visible object) pairs whose slot predicts a non-empty segment."""
    pred = np.asarray(pred)
    gt_boxes = np.asarray(gt_boxes)
    if objects is None:
        objects = range(1, gt_boxes.shape[1] + 1)
    hits = total = 0
    for o in objects:
        for f in range(start_frame, pred.shape[0]):
            if box_present(gt_boxes[f, o - 1]):
                total += 1
                hits += bool(np.any(pred[f] == o))
    return hits / total if total else float("nan")


def box_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    ih = np.clip(np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0]), 0, None)
    iw = np.clip(np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1]), 0, None)
    inter = ih * iw
    area = lambda x: np.clip(x[..., 2] - x[..., 0], 0, None) * np.clip(x[..., 3] - x[..., 1], 0, None)
    union = area(a) + area(b) - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(union > 0, inter / union, 0.0)


def bbox_miou(pred_tracks: np.ndarray, gt_tracks: np.ndarray, objects=None, start_frame: int = START_FRAME) -> float:
    """Per object: mean box IoU over frames with a ground-truth box; mean over objects seen at all."""
    pred_tracks, gt_tracks = np.asarray(pred_tracks), np.asarray(gt_tracks)
    if objects is None:
        objects = range(1, gt_tracks.shape[1] + 1)
    scores = []
    for o in objects:
        frames = [f for f in range(start_frame, gt_tracks.shape[0]) if box_present(gt_tracks[f, o - 1])]
        if frames:
            scores.append(np.mean([box_iou(pred_tracks[f, o - 1], gt_tracks[f, o - 1]) for f in frames]))
    return float(np.mean(scores)) if scores else float("nan")


def mask_threshold_filter(masks: np.ndarray, max_avg_pixels: float) -> np.ndarray:
    """Suppress (set to 0) labels whose mean per-frame area exceeds ``max_avg_pixels``. Display only."""
    if not max_avg_pixels > 0:
        raise ValueError("max_avg_pixels must be positive")
    masks = np.asarray(masks)
    out = masks.copy()
    frames = masks.shape[0] if masks.ndim == 3 else 1
    for label in np.unique(masks):
        if label == 0:
            continue
        if (masks == label).sum() / frames > max_avg_pixels:
            out[masks == label] = 0
    return out


# -- reports -----------------------------------------------------------------

METRIC_NAMES = ("fg_ari", "miou", "com", "b_recall", "b_miou")


@dataclass
class MetricReport:
    per_video: list = field(default_factory=list)   # dicts: name + metric values
    excluded_objects: int = 0

    def aggregate(self) -> dict:
        out = {}
        for k in METRIC_NAMES:
            vals = [r[k] for r in self.per_video if r.get(k) is not None and np.isfinite(r[k])]
            out[k] = float(np.mean(vals)) if vals else None
        return out

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("video",) + METRIC_NAMES)
            for r in self.per_video:
                w.writerow([r["name"]] + [_cell(r.get(k)) for k in METRIC_NAMES])
            agg = self.aggregate()
            w.writerow(["mean"] + [_cell(agg[k]) for k in METRIC_NAMES])
        summary = {"aggregate": self.aggregate(), "videos": len(self.per_video),
                   "excluded_objects": self.excluded_objects}
        (out / "metrics.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def _cell(x) -> str:
    return "" if x is None or not np.isfinite(x) else repr(float(x))


def _clean(x):
    return None if x is None or not np.isfinite(x) else float(x)


def evaluate_video(pred_masks: np.ndarray, gt_masks: np.ndarray, gt_boxes: np.ndarray,
                   pred_boxes=None, matching: str = "ordered", valid=None, name: str = "",
                   start_frame: int = START_FRAME) -> dict:
    """All metrics for one clip; ``pred_masks`` hold slot index + 1 per pixel."""
    k = gt_boxes.shape[1]
    objects = evaluated_objects(gt_masks, start_frame, gt_boxes[0] if matching == "ordered" else None)
    objects = [o for o in objects if o <= k]
    row = {"name": name, "fg_ari": _clean(fg_ari(pred_masks, gt_masks, start_frame))}
    if matching == "ordered":
        row["miou"] = _clean(video_miou_ordered(pred_masks, gt_masks, objects, start_frame))
        row["b_recall"] = _clean(bbox_recall(pred_masks, gt_boxes, objects, start_frame))
        row["b_miou"] = (_clean(bbox_miou(pred_boxes, gt_boxes, objects, start_frame))
                         if pred_boxes is not None else None)
    else:
        row["miou"] = row["b_recall"] = row["b_miou"] = None
    row["com"] = _clean(com_distance(pred_masks, gt_boxes, matching, objects, start_frame, valid))
    all_ids = [int(o) for o in np.unique(gt_masks[start_frame:]) if o != 0]
    row["excluded"] = len(set(all_ids) - set(objects))
    return row
