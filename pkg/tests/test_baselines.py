import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from savipp.baselines import (
    BoxPropagation, KMeansConfig, bbox_copy, kmeans, kmeans_pixels, pixel_features, train_bbox_propagation,
)
from savipp.evaluate import baseline_masks, evaluate_baseline
from savipp.metrics import fg_ari, video_miou_ordered
from savipp.model import tiny_config
from savipp.scenegen import SparsePoints, VideoSample, extract_bboxes
from savipp.train import TrainConfig


def rect_video(t=4, h=16, w=16, moving=False):
    """Two rectangles at clearly different depths: boxes equal masks exactly."""
    masks = np.zeros((t, h, w), dtype=np.int32)
    for f in range(t):
        s = f if moving else 0
        masks[f, 2:7, 2 + s:7 + s] = 1
        masks[f, 9:14, 8:14] = 2
    depth = np.select([masks == 1, masks == 2], [2.0, 5.0], 20.0)
    rgb = np.zeros((t, h, w, 3))
    flow = np.zeros((t, h, w, 2))
    valid = np.ones(t, bool)
    valid[-1] = False
    rr, cc = np.nonzero(np.ones((h, w), bool))
    sparse = SparsePoints(np.repeat(np.arange(t), h * w // 4), np.tile(rr[::4], t), np.tile(cc[::4], t),
                          np.concatenate([depth[f].ravel()[::4] for f in range(t)]))
    return VideoSample(rgb, depth, flow, valid, masks, extract_bboxes(masks, 3), sparse, "rect")


def test_bbox_copy_is_frame_constant_and_exact_on_rectangles():
    v = rect_video()
    out = bbox_copy(v.boxes[0], 4, 16, 16)
    assert all(np.array_equal(out[0], out[f]) for f in range(4))
    np.testing.assert_array_equal(out, v.masks)
    assert video_miou_ordered(out, v.masks) == 1.0


def test_bbox_copy_skips_absent_boxes():
    out = bbox_copy(np.zeros((3, 4)), 2, 5, 5)
    assert out.shape == (2, 5, 5) and not out.any()


@given(st.integers(0, 1000))
@settings(max_examples=25, deadline=None)
def test_kmeans_objective_monotone(seed):
    rng = np.random.default_rng(seed)
    x = np.concatenate([rng.normal(c, 1.0, size=(40, 2)) for c in (0, 3, 6)])
    labels, centers, hist = kmeans(x, x[rng.choice(len(x), 4, replace=False)])
    assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))
    assert labels.shape == (120,) and centers.shape == (4, 2)


def test_kmeans_reseeds_empty_cluster():
    x = np.array([[0.0], [0.1], [10.0], [10.1]])
    labels, centers, _ = kmeans(x, np.array([[0.0], [10.0], [100.0]]))
    assert len(np.unique(labels)) == 3


def test_kmeans_separates_depth_layers():
    v = rect_video()
    labels, hist = kmeans_pixels(v, KMeansConfig(use_depth=True))
    assert fg_ari(labels, v.masks) == 1.0
    assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))


def test_kmeans_sparse_fills_every_pixel():
    v = rect_video()
    labels, _ = kmeans_pixels(v, KMeansConfig(use_depth=True, sparse=True))
    assert labels.shape == v.masks.shape
    assert fg_ari(labels, v.masks) > 0.9


def test_pixel_features_ranges():
    v = rect_video()
    x, idx, pos = pixel_features(v, True, True, 1.0)
    assert x.shape == (4 * 16 * 16, 1 + 3 + 3) and len(idx) == x.shape[0]
    assert x.min() >= 0 and x.max() <= 1
    xs, idxs, _ = pixel_features(v, True, False, sparse=True)
    assert len(idxs) == len(v.sparse)


def test_box_propagation_ignores_pixels():
    cfg = tiny_config(num_slots=3)
    model = BoxPropagation(cfg)
    v = rect_video(moving=True)
    a = model.predict(v.boxes[0], 4, frames=v.rgb)
    b = model.predict(v.boxes[0], 4, frames=np.zeros_like(v.rgb))
    np.testing.assert_array_equal(a, b)
    assert a.shape == (4, 3, 4)


def test_box_propagation_learns_motion():
    vids = [rect_video(moving=True) for _ in range(2)]
    cfg = TrainConfig(total_steps=150, warmup_steps=10, peak_lr=3e-3, batch_size=2, seq_len=4, clip_norm=1.0)
    model, losses = train_bbox_propagation(vids, tiny_config(num_slots=3), cfg)
    assert np.mean(losses[-10:]) < 0.3 * np.mean(losses[:10])


def test_baseline_dispatch():
    v = rect_video()
    assert baseline_masks("bbox_copy", v).shape == v.masks.shape
    with pytest.raises(ValueError):
        baseline_masks("oracle", v)
    rep = evaluate_baseline("bbox_copy", [v], 3)
    assert rep.aggregate()["miou"] == 1.0 and rep.aggregate()["fg_ari"] == 1.0
