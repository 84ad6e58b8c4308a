"""Scene description: objects, camera path, and the camera basis."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

REGIMES = {
    "c": "static-camera-moving-objects",
    "d": "mixed-static-objects",
    "e": "moving-camera",
}
WORLD_UP = np.array([0.0, 0.0, 1.0])
DOME_RADIUS = 60.0  # backdrop sphere around the origin; every ray hits something


@dataclass
class ObjectSpec:
    """Sphere (``size`` = radius) or axis-aligned box (``size`` = 3 half-extents)."""

    shape: str
    size: np.ndarray
    albedo: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    id: int

    def __post_init__(self):
        self.size = np.atleast_1d(np.asarray(self.size, dtype=np.float64))
        self.albedo = np.asarray(self.albedo, dtype=np.float64)
        self.position = np.asarray(self.position, dtype=np.float64)
        self.velocity = np.asarray(self.velocity, dtype=np.float64)
        if self.shape not in ("sphere", "box"):
            raise ValueError(f"unknown shape {self.shape!r}")
        if np.any(self.size <= 0):
            raise ValueError("object sizes must be positive")
        if self.id <= 0:
            raise ValueError("object ids start at 1; 0 is background")

    def center(self, t: int) -> np.ndarray:
        return self.position + t * self.velocity

    def bounding_radius(self) -> float:
        return float(self.size[0]) if self.shape == "sphere" else float(np.linalg.norm(self.size))


@dataclass
class CameraPath:
    """Pinhole camera translating linearly while looking at ``target``.

    Pixel centers sit at integer (row, col); the principal point defaults to
    the image center ((W - 1) / 2, (H - 1) / 2).
    """

    focal: float
    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    target: np.ndarray = field(default_factory=lambda: np.zeros(3))
    principal: tuple | None = None

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.velocity = np.asarray(self.velocity, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.float64)

    def origin(self, t: int) -> np.ndarray:
        return self.position + t * self.velocity

    def basis(self, t: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(right, down, forward) unit vectors; image x follows right, image y follows down."""
        forward = self.target - self.origin(t)
        norm = np.linalg.norm(forward)
        if norm == 0:
            raise ValueError("camera sits on its look-at target")
        forward = forward / norm
        right = np.cross(forward, WORLD_UP)
        rn = np.linalg.norm(right)
        if rn < 1e-9:
            raise ValueError("camera looks straight up or down; basis undefined")
        right = right / rn
        down = np.cross(forward, right)
        return right, down, forward

    def center_pixel(self, h: int, w: int) -> tuple[float, float]:
        """(cx, cy) principal point in pixel coordinates."""
        if self.principal is not None:
            return float(self.principal[0]), float(self.principal[1])
        return (w - 1) / 2.0, (h - 1) / 2.0

    def project(self, points: np.ndarray, t: int, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
        """World points ``[..., 3]`` -> (col, row) pixel coordinates and camera-frame depth z."""
        right, down, forward = self.basis(t)
        q = points - self.origin(t)
        z = q @ forward
        cx, cy = self.center_pixel(h, w)
        with np.errstate(divide="ignore", invalid="ignore"):
            col = cx + self.focal * (q @ right) / z
            row = cy + self.focal * (q @ down) / z
        return np.stack([col, row], axis=-1), z


@dataclass
class SceneSpec:
    objects: list
    camera: CameraPath
    frame_count: int
    resolution: tuple
    regime: str = "c"
    ground_albedo: np.ndarray = field(default_factory=lambda: np.array([0.55, 0.55, 0.5]))
    sky_albedo: np.ndarray = field(default_factory=lambda: np.array([0.6, 0.75, 0.9]))

    def __post_init__(self):
        self.resolution = tuple(int(v) for v in self.resolution)
        if self.frame_count < 2:
            raise ValueError("a scene needs at least two frames")
        if self.camera.focal <= 0:
            raise ValueError("focal length must be positive")
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {sorted(REGIMES)}")
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ValueError("object ids must be unique")
        for t in range(self.frame_count):
            cam = self.camera.origin(t)
            if cam[2] <= 0 or np.linalg.norm(cam) >= DOME_RADIUS:
                raise ValueError(f"camera leaves the scene volume at frame {t}")
            for o in self.objects:
                if np.linalg.norm(cam - o.center(t)) <= o.bounding_radius():
                    raise ValueError(f"camera intersects object {o.id} at frame {t}")
