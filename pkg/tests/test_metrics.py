import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment

from savipp.metrics import (
    MetricReport, adjusted_rand_index, ari_from_labels, assignment_cost, bbox_miou, bbox_recall, box_center_pixels,
    box_iou, brute_force_assignment, com_distance, evaluate_video, evaluated_objects, fg_ari, hungarian,
    mask_threshold_filter, video_miou_ordered,
)
from savipp.scenegen import extract_bboxes


def pair_counting_ari(a, b):
    """O(n^2) oracle: agreement over all unordered pixel pairs."""
    a, b = np.ravel(a), np.ravel(b)
    n = len(a)
    same_a = a[:, None] == a[None, :]
    same_b = b[:, None] == b[None, :]
    iu = np.triu_indices(n, 1)
    index = float(np.sum(same_a[iu] & same_b[iu]))
    sa, sb = float(np.sum(same_a[iu])), float(np.sum(same_b[iu]))
    total = n * (n - 1) / 2
    expected = sa * sb / total
    maximum = (sa + sb) / 2
    if maximum == expected:
        return 1.0
    return (index - expected) / (maximum - expected)


@given(st.integers(0, 100_000), st.integers(2, 60), st.integers(1, 5), st.integers(1, 5))
@settings(max_examples=100, deadline=None)
def test_ari_matches_pair_counting(seed, n, ka, kb):
    rng = np.random.default_rng(seed)
    a, b = rng.integers(0, ka, n), rng.integers(0, kb, n)
    assert abs(ari_from_labels(a, b) - pair_counting_ari(a, b)) < 1e-12


@given(st.integers(0, 100_000))
@settings(max_examples=50, deadline=None)
def test_ari_invariant_to_relabeling(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.integers(0, 4, 50), rng.integers(0, 4, 50)
    relabel = rng.permutation(10)
    assert ari_from_labels(relabel[a], b) == pytest.approx(ari_from_labels(a, b), abs=1e-12)
    assert ari_from_labels(a, a) == 1.0


def test_ari_worked_example_and_degenerate():
    assert ari_from_labels([0, 0, 1, 1], [0, 0, 0, 1]) == 0.0
    assert ari_from_labels([3, 3, 3], [1, 1, 1]) == 1.0
    assert math.isnan(ari_from_labels([], []))


def test_fg_ari_ignores_background_and_first_frame():
    gt = np.zeros((3, 4, 4), dtype=int)
    gt[:, :2, :2] = 1
    gt[:, 2:, 2:] = 2
    pred = gt.copy()
    pred[gt == 0] = 7  # background predictions never matter
    pred[0] = 0        # nor does frame 0
    assert fg_ari(pred, gt) == 1.0
    pred[1:, :2, :2] = 2
    assert fg_ari(pred, gt) < 1.0
    assert adjusted_rand_index(pred, gt, foreground_only=False, start_frame=0) < 1.0


def test_miou_ordered():
    gt = np.zeros((3, 4, 4), dtype=int)
    gt[:, :2, :2] = 1
    gt[:, 2:, :] = 2
    assert video_miou_ordered(gt, gt) == 1.0
    swapped = np.where(gt == 1, 2, np.where(gt == 2, 1, 0))
    assert video_miou_ordered(swapped, gt) == 0.0
    half = gt.copy()
    half[:, :2, 1] = 0
    assert video_miou_ordered(half, gt, [1]) == pytest.approx(0.5)


def test_evaluated_objects_needs_visible_and_boxed():
    gt = np.zeros((3, 4, 4), dtype=int)
    gt[0, 0, 0] = 3           # only on frame 0 -> never evaluated
    gt[1:, 1, 1] = 1
    gt[1:, 2, 2] = 2
    boxes = np.zeros((3, 4))
    boxes[0] = [0, 0, 0.5, 0.5]
    assert evaluated_objects(gt) == [1, 2]
    assert evaluated_objects(gt, 1, boxes) == [1]


@given(st.integers(0, 100_000), st.integers(1, 6), st.integers(1, 6))
@settings(max_examples=200, deadline=None)
def test_hungarian_matches_exhaustive(seed, n, m):
    rng = np.random.default_rng(seed)
    cost = rng.integers(0, 5, size=(n, m)).astype(float) if seed % 2 else rng.normal(size=(n, m))
    rows, cols = hungarian(cost)
    assert len(rows) == min(n, m)
    assert len(set(rows)) == len(rows) and len(set(cols)) == len(cols)
    assert assignment_cost(cost, rows, cols) == brute_force_assignment(cost) or math.isclose(
        assignment_cost(cost, rows, cols), brute_force_assignment(cost), abs_tol=1e-12)
    r2, c2 = linear_sum_assignment(cost)
    assert assignment_cost(cost, rows, cols) == pytest.approx(cost[r2, c2].sum(), abs=1e-12)


def test_hungarian_edge_cases():
    rows, cols = hungarian(np.zeros((0, 3)))
    assert len(rows) == 0
    with pytest.raises(ValueError):
        hungarian(np.array([[np.inf]]))
    rows, cols = hungarian(np.array([[1.0, 1.0], [1.0, 1.0]]))
    assert rows.tolist() == [0, 1] and sorted(cols.tolist()) == [0, 1]


def test_box_center_and_com():
    masks = np.zeros((2, 10, 20), dtype=int)
    masks[:, 2:6, 4:8] = 1
    boxes = extract_bboxes(masks, 2)
    np.testing.assert_allclose(box_center_pixels(boxes[0, 0], 10, 20), [3.5, 5.5])
    assert com_distance(masks, boxes) == pytest.approx(0.0, abs=1e-12)
    shifted = np.zeros_like(masks)
    shifted[:, 2:6, 7:11] = 1
    want = 3.0 / math.hypot(9, 19)
    assert com_distance(shifted, boxes) == pytest.approx(want)
    relabeled = np.where(shifted == 1, 2, 0)
    assert math.isnan(com_distance(relabeled, boxes))
    assert com_distance(relabeled, boxes, "hungarian") == pytest.approx(want)


def test_com_restricted_to_valid_points():
    masks = np.zeros((2, 10, 10), dtype=int)
    masks[:, 0:4, 0:4] = 1
    boxes = extract_bboxes(masks, 1)
    valid = np.zeros((2, 10, 10), dtype=bool)
    valid[:, 0, 0] = True
    assert com_distance(masks, boxes, valid=valid) == pytest.approx(math.hypot(1.5, 1.5) / math.hypot(9, 9))


def test_box_metrics():
    a = np.array([0.0, 0.0, 0.5, 0.5])
    b = np.array([0.25, 0.0, 0.75, 0.5])
    assert box_iou(a, b) == pytest.approx(1 / 3)
    assert box_iou(a, np.zeros(4)) == 0.0
    gt = np.stack([np.stack([a, b])] * 3)
    assert bbox_miou(gt, gt) == 1.0
    pred = np.zeros((3, 3, 3), dtype=int)
    pred[1:, 0, 0] = 1
    assert bbox_recall(pred, gt) == pytest.approx(0.5)


def test_mask_filter():
    m = np.zeros((2, 10, 10), dtype=int)
    m[:, :8, :] = 1
    m[:, 9, :3] = 2
    out = mask_threshold_filter(m, 10)
    assert set(np.unique(out)) == {0, 2}
    assert np.array_equal(mask_threshold_filter(m, 1e9), m)


def test_frame_zero_corruption_changes_nothing():
    rng = np.random.default_rng(0)
    gt = rng.integers(0, 3, size=(4, 8, 8))
    pred = rng.integers(0, 4, size=(4, 8, 8))
    boxes = extract_bboxes(gt, 3)
    row = evaluate_video(pred, gt, boxes, boxes, "ordered")
    bad_pred, bad_boxes = pred.copy(), boxes.copy()
    bad_pred[0] = rng.integers(0, 4, size=(8, 8))
    bad_boxes[0, :, :2] += 0.01  # perturbs the predicted track only at frame 0
    row2 = evaluate_video(bad_pred, gt, boxes, bad_boxes, "ordered")
    assert row == row2


def test_report_files(tmp_path):
    rep = MetricReport()
    rep.per_video.append({"name": "a", "fg_ari": 0.5, "miou": None, "com": 0.1, "b_recall": 1.0, "b_miou": 0.2})
    rep.per_video.append({"name": "b", "fg_ari": 1.0, "miou": None, "com": 0.3, "b_recall": 0.0, "b_miou": 0.4})
    rep.write(tmp_path)
    agg = json.loads((tmp_path / "metrics.json").read_text())["aggregate"]
    assert agg["fg_ari"] == 0.75 and agg["miou"] is None
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert lines[0] == "video,fg_ari,miou,com,b_recall,b_miou" and lines[-1].startswith("mean,0.75,,")
