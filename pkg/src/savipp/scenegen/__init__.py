"""Procedural multi-object videos with exact depth, flow, masks, boxes, and sparse depth."""

from .boxes import box_area, box_present, extract_bboxes, rasterize_box
from .dataset import (
    Dataset, DatasetConfig, VideoSample, generate_dataset, make_video, random_scene, read_sparse,
    read_tensor, read_video, video_rng, write_sparse, write_tensor, write_video,
)
from .geometry import REGIMES, CameraPath, ObjectSpec, SceneSpec
from .render import cast, compute_flow, render_frame, render_video
from .sparse import SparsePoints, add_depth_noise, rasterize, sample_sparse_depth

__all__ = [
    "REGIMES", "CameraPath", "Dataset", "DatasetConfig", "ObjectSpec", "SceneSpec", "SparsePoints",
    "VideoSample", "add_depth_noise", "box_area", "box_present", "cast", "compute_flow",
    "extract_bboxes", "generate_dataset", "make_video", "random_scene", "rasterize",
    "rasterize_box", "read_sparse", "read_tensor", "read_video", "render_frame", "render_video",
    "sample_sparse_depth", "video_rng", "write_sparse", "write_tensor", "write_video",
]
