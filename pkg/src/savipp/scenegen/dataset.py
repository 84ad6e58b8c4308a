"""Random scene sampling, video assembly, and the on-disk dataset format."""

from __future__ import annotations

import colorsys
import dataclasses
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .boxes import extract_bboxes
from .geometry import REGIMES, CameraPath, ObjectSpec, SceneSpec
from .render import render_video
from .sparse import SparsePoints, add_depth_noise, sample_sparse_depth

MAGIC = b"SVPP"
DTYPE_CODES = {"float32": 1, "int32": 2, "sparse": 3}
SPLIT_CODES = {"train": 0, "val": 1}


@dataclass
class VideoSample:
    rgb: np.ndarray          # [T, H, W, 3] in [0, 1]
    depth: np.ndarray        # [T, H, W] Euclidean distance
    flow: np.ndarray         # [T, H, W, 2] (dx, dy) to the next frame; last frame zero
    flow_valid: np.ndarray   # [T] bool
    masks: np.ndarray        # [T, H, W] instance ids, 0 = background
    boxes: np.ndarray        # [T, K, 4]
    sparse: SparsePoints
    name: str = ""

    @property
    def num_frames(self) -> int:
        return self.rgb.shape[0]

    def clip(self, start: int, length: int) -> "VideoSample":
        sl = slice(start, start + length)
        return VideoSample(self.rgb[sl], self.depth[sl], self.flow[sl], self.flow_valid[sl],
                           self.masks[sl], self.boxes[sl], self.sparse.frames(start, start + length),
                           self.name)


@dataclass
class DatasetConfig:
    out: str = "data"
    regime: str = "c"
    num_train: int = 8
    num_val: int = 2
    resolution: tuple = (64, 64)
    frames: int = 8
    min_objects: int = 3
    max_objects: int = 6
    sparse_density: float = 0.1
    sparse_pattern: str = "scanline"
    noise_sigma: float = 0.0
    fov_degrees: float = 45.0
    seed: int = 0

    def __post_init__(self):
        self.resolution = tuple(int(v) for v in self.resolution)
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {sorted(REGIMES)}, got {self.regime!r}")
        if self.num_train < 0 or self.num_val < 0 or self.num_train + self.num_val < 1:
            raise ValueError("need at least one video")
        if self.frames < 2:
            raise ValueError("frames must be >= 2")
        if not 1 <= self.min_objects <= self.max_objects:
            raise ValueError("need 1 <= min_objects <= max_objects")
        if not 0 < self.sparse_density <= 1:
            raise ValueError("sparse_density must be in (0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["resolution"] = list(self.resolution)
        return d


# -- scene sampling ----------------------------------------------------------

def _random_albedo(rng: np.random.Generator) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(rng.uniform(), rng.uniform(0.5, 0.95), rng.uniform(0.6, 1.0)))


def _random_velocity(rng: np.random.Generator, lo: float, hi: float) -> np.ndarray:
    a = rng.uniform(0, 2 * math.pi)
    s = rng.uniform(lo, hi)
    return np.array([s * math.cos(a), s * math.sin(a), 0.0])


def random_scene(rng: np.random.Generator, regime: str, resolution=(64, 64), frames: int = 8,
                 num_objects: int = 3, fov_degrees: float = 45.0) -> SceneSpec:
    """Objects resting on the ground plane around the origin, viewed from an elevated camera.

    c: every object slides; d: one or two slide, the rest are static;
    e: as d plus a linearly translating camera.
    """
    h, w = resolution
    focal = (w / 2.0) / math.tan(math.radians(fov_degrees) / 2.0)
    az = rng.uniform(0, 2 * math.pi)
    el = math.radians(rng.uniform(25, 40))
    dist = rng.uniform(9.0, 11.0)
    pos = dist * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
    cam_vel = np.zeros(3)
    if regime == "e":
        cam_vel = _random_velocity(rng, 0.15, 0.3)
    camera = CameraPath(focal=focal, position=pos, velocity=cam_vel, target=np.zeros(3))
    moving = num_objects if regime == "c" else int(rng.integers(1, min(2, num_objects) + 1))
    objects, placed = [], []
    for i in range(num_objects):
        shape = "sphere" if rng.uniform() < 0.5 else "box"
        size = np.array([rng.uniform(0.45, 0.9)]) if shape == "sphere" else rng.uniform(0.35, 0.75, 3)
        height = size[0] if shape == "sphere" else size[2]
        radius = size[0] if shape == "sphere" else float(np.linalg.norm(size[:2]))
        for _ in range(200):
            r = 2.6 * math.sqrt(rng.uniform())
            a = rng.uniform(0, 2 * math.pi)
            xy = np.array([r * math.cos(a), r * math.sin(a)])
            if all(np.linalg.norm(xy - q) > radius + s + 0.1 for q, s in placed):
                break
        placed.append((xy, radius))
        vel = _random_velocity(rng, 0.08, 0.2) if i < moving else np.zeros(3)
        objects.append(ObjectSpec(shape, size, _random_albedo(rng), np.array([xy[0], xy[1], height]),
                                  vel, i + 1))
    return SceneSpec(objects, camera, frames, resolution, regime)


def make_video(scene: SceneSpec, rng: np.random.Generator, num_slots: int, density: float,
               pattern: str = "scanline", noise_sigma: float = 0.0, name: str = "") -> VideoSample:
    out = render_video(scene)
    sparse = sample_sparse_depth(out["depth"], density, rng, pattern)
    sparse = add_depth_noise(sparse, noise_sigma, rng)
    boxes = extract_bboxes(out["masks"], num_slots)
    return VideoSample(out["rgb"], out["depth"], out["flow"], out["flow_valid"], out["masks"],
                       boxes, sparse, name)


def video_rng(seed: int, split: str, index: int) -> np.random.Generator:
    """Independent stream per (seed, split, index); train and val streams never coincide."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), SPLIT_CODES[split], int(index)]))


# -- binary tensors ----------------------------------------------------------

def write_tensor(path, arr: np.ndarray, kind: str | None = None) -> None:
    """16-byte preamble (magic, rank, dtype code, element count), rank extents, payload."""
    arr = np.asarray(arr)
    if kind is None:
        kind = "int32" if arr.dtype.kind in "iu" else "float32"
    if kind == "float32":
        payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    elif kind == "int32":
        payload = np.ascontiguousarray(arr, dtype="<i4").tobytes()
    else:
        raise ValueError(kind)
    header = MAGIC + struct.pack("<III", arr.ndim, DTYPE_CODES[kind], arr.size)
    Path(path).write_bytes(header + struct.pack(f"<{arr.ndim}I", *arr.shape) + payload)


def _read_header(blob: bytes, path) -> tuple[int, tuple, int]:
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic")
    rank, code, count = struct.unpack_from("<III", blob, 4)
    shape = struct.unpack_from(f"<{rank}I", blob, 16)
    return code, shape, 16 + 4 * rank


def read_tensor(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    code, shape, off = _read_header(blob, path)
    dtype = {1: "<f4", 2: "<i4"}.get(code)
    if dtype is None:
        raise ValueError(f"{path}: dtype code {code} is not a dense tensor")
    return np.frombuffer(blob, dtype=dtype, offset=off).reshape(shape).copy()


SPARSE_RECORD = np.dtype([("frame", "<u4"), ("row", "<u4"), ("col", "<u4"), ("dist", "<f4")])


def write_sparse(path, points: SparsePoints) -> None:
    rec = np.zeros(len(points), dtype=SPARSE_RECORD)
    rec["frame"], rec["row"], rec["col"] = points.frame, points.row, points.col
    rec["dist"] = points.dist
    header = MAGIC + struct.pack("<III", 1, DTYPE_CODES["sparse"], len(points))
    Path(path).write_bytes(header + struct.pack("<I", len(points)) + rec.tobytes())


def read_sparse(path) -> SparsePoints:
    blob = Path(path).read_bytes()
    code, shape, off = _read_header(blob, path)
    if code != DTYPE_CODES["sparse"]:
        raise ValueError(f"{path}: not a sparse point file")
    rec = np.frombuffer(blob, dtype=SPARSE_RECORD, offset=off, count=shape[0])
    return SparsePoints(rec["frame"], rec["row"], rec["col"], rec["dist"].astype(np.float64))


# -- dataset -----------------------------------------------------------------

def write_video(directory, video: VideoSample) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_tensor(d / "rgb.bin", video.rgb, "float32")
    write_tensor(d / "depth.bin", video.depth, "float32")
    write_tensor(d / "flow.bin", video.flow, "float32")
    write_tensor(d / "masks.bin", video.masks, "int32")
    write_tensor(d / "boxes.bin", video.boxes, "float32")
    write_sparse(d / "sparse.bin", video.sparse)


def read_video(directory) -> VideoSample:
    d = Path(directory)
    rgb = read_tensor(d / "rgb.bin")
    flow_valid = np.ones(rgb.shape[0], dtype=bool)
    flow_valid[-1] = False
    return VideoSample(rgb, read_tensor(d / "depth.bin"), read_tensor(d / "flow.bin"), flow_valid,
                       read_tensor(d / "masks.bin"), read_tensor(d / "boxes.bin"),
                       read_sparse(d / "sparse.bin"), d.name)


def generate_dataset(cfg: DatasetConfig) -> dict:
    """Render, serialize, and index every video; returns the manifest."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    videos, flow_max = [], 0.0
    for split, count in (("train", cfg.num_train), ("val", cfg.num_val)):
        for i in range(count):
            rng = video_rng(cfg.seed, split, i)
            n_obj = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
            scene = random_scene(rng, cfg.regime, cfg.resolution, cfg.frames, n_obj, cfg.fov_degrees)
            name = f"{split}_{i:04d}"
            video = make_video(scene, rng, cfg.max_objects, cfg.sparse_density, cfg.sparse_pattern,
                               cfg.noise_sigma, name)
            write_video(out / name, video)
            if split == "train":
                flow_max = max(flow_max, float(np.max(np.linalg.norm(video.flow, axis=-1))))
            videos.append({
                "name": name, "split": split, "num_objects": n_obj,
                "camera_velocity": [round(float(v), 12) for v in scene.camera.velocity],
                "sparse_points": len(video.sparse),
            })
    t, (h, w) = cfg.frames, cfg.resolution
    manifest = {
        "format": "svpp-1",
        "config": {k: v for k, v in cfg.to_dict().items() if k != "out"},
        "regime": cfg.regime,
        "regime_name": REGIMES[cfg.regime],
        "seed": cfg.seed,
        "flow_max_magnitude": max(flow_max, 1e-6) if cfg.num_train else None,
        "shapes": {"rgb": [t, h, w, 3], "depth": [t, h, w], "flow": [t, h, w, 2],
                   "masks": [t, h, w], "boxes": [t, cfg.max_objects, 4]},
        "last_frame_flow": "zero-filled, excluded from losses",
        "videos": videos,
    }
    if manifest["flow_max_magnitude"] is not None:
        manifest["flow_max_magnitude"] = float(np.float32(manifest["flow_max_magnitude"]))
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


class Dataset:
    """Read-only view over a generated dataset directory; videos are cached after first load."""

    def __init__(self, root):
        self.root = Path(root)
        self.manifest = json.loads((self.root / "manifest.json").read_text())
        self._cache: dict[str, VideoSample] = {}

    def names(self, split: str) -> list[str]:
        return [v["name"] for v in self.manifest["videos"] if v["split"] == split]

    @property
    def flow_max_magnitude(self) -> float:
        v = self.manifest.get("flow_max_magnitude")
        return float(v) if v else 1.0

    @property
    def max_objects(self) -> int:
        return int(self.manifest["shapes"]["boxes"][1])

    def video(self, name: str) -> VideoSample:
        if name not in self._cache:
            self._cache[name] = read_video(self.root / name)
        return self._cache[name]

    def split(self, split: str) -> list[VideoSample]:
        return [self.video(n) for n in self.names(split)]
