"""Vectorized ray casting: RGB, Euclidean depth, instance masks, and optical flow."""

from __future__ import annotations

import numpy as np

from .geometry import DOME_RADIUS, SceneSpec

LIGHT_DIR = np.array([-0.4, -0.3, 0.866])
LIGHT_DIR = LIGHT_DIR / np.linalg.norm(LIGHT_DIR)
AMBIENT = 0.35
T_MIN = 1e-6


def pixel_rays(scene: SceneSpec, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Camera origin ``[3]`` and unit ray directions ``[H, W, 3]`` through integer pixel centers."""
    h, w = scene.resolution
    cam = scene.camera
    if cam.focal <= 0:
        raise ValueError("focal length must be positive")
    right, down, forward = cam.basis(t)
    cx, cy = cam.center_pixel(h, w)
    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    d = (cam.focal * forward + (cols - cx)[..., None] * right + (rows - cy)[..., None] * down)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return cam.origin(t), d


def intersect_sphere(o: np.ndarray, d: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    """Nearest positive ray parameter per ray (``inf`` on miss); ``d`` unit length."""
    oc = o - center
    b = d @ oc
    c = oc @ oc - radius * radius
    disc = b * b - c
    hit = disc >= 0
    root = np.sqrt(np.where(hit, disc, 0.0))
    t0, t1 = -b - root, -b + root
    t = np.where(t0 > T_MIN, t0, np.where(t1 > T_MIN, t1, np.inf))
    return np.where(hit, t, np.inf)


def intersect_box(o: np.ndarray, d: np.ndarray, center: np.ndarray, half: np.ndarray) -> np.ndarray:
    """Slab test against an axis-aligned box."""
    lo, hi = center - half - o, center + half - o
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        a, b = lo * inv, hi * inv
    # rays parallel to a slab: inside -> unbounded, outside -> empty interval (miss)
    par = d == 0
    inside = (lo <= 0) & (hi >= 0)
    a = np.where(par, np.where(inside, -np.inf, np.inf), a)
    b = np.where(par, np.inf, b)
    tnear = np.max(np.minimum(a, b), axis=-1)
    tfar = np.min(np.maximum(a, b), axis=-1)
    hit = (tfar >= tnear) & (tfar > T_MIN)
    t = np.where(tnear > T_MIN, tnear, tfar)
    return np.where(hit, t, np.inf)


def box_normal(p: np.ndarray, center: np.ndarray, half: np.ndarray) -> np.ndarray:
    q = (p - center) / half
    axis = np.argmax(np.abs(q), axis=-1)
    n = np.zeros_like(p)
    np.put_along_axis(n, axis[..., None], np.sign(np.take_along_axis(q, axis[..., None], -1)), -1)
    return n


def cast(scene: SceneSpec, t: int) -> dict:
    """Nearest hit per pixel: distance, id (0 = background), world point, normal, albedo."""
    o, d = pixel_rays(scene, t)
    h, w = scene.resolution
    # backdrop: camera is inside the dome, so the far root always exists
    dist = intersect_sphere(o, d, np.zeros(3), DOME_RADIUS)
    ids = np.zeros((h, w), dtype=np.int32)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = np.where(d[..., 2] < 0, -o[2] / d[..., 2], np.inf)
    ground = t_ground < dist
    dist = np.where(ground, t_ground, dist)
    for obj in scene.objects:
        c = obj.center(t)
        if obj.shape == "sphere":
            to = intersect_sphere(o, d, c, float(obj.size[0]))
        else:
            to = intersect_box(o, d, c, obj.size)
        closer = to < dist
        dist = np.where(closer, to, dist)
        ids = np.where(closer, obj.id, ids)
        ground &= ~closer
    points = o + dist[..., None] * d
    normal = -points / DOME_RADIUS
    albedo = np.broadcast_to(scene.sky_albedo, (h, w, 3)).copy()
    normal[ground] = [0.0, 0.0, 1.0]
    albedo[ground] = scene.ground_albedo
    for obj in scene.objects:
        sel = ids == obj.id
        if not sel.any():
            continue
        c = obj.center(t)
        if obj.shape == "sphere":
            normal[sel] = (points[sel] - c) / obj.size[0]
        else:
            normal[sel] = box_normal(points[sel], c, obj.size)
        albedo[sel] = obj.albedo
    return {"dist": dist, "ids": ids, "points": points, "normal": normal, "albedo": albedo,
            "ground": ground}


def shade(hit: dict, sky_albedo) -> np.ndarray:
    lam = np.clip(hit["normal"] @ LIGHT_DIR, 0.0, 1.0)
    rgb = hit["albedo"] * (AMBIENT + (1.0 - AMBIENT) * lam[..., None])
    sky = (hit["ids"] == 0) & ~hit["ground"]
    rgb[sky] = sky_albedo
    return np.clip(rgb, 0.0, 1.0)


def render_frame(scene: SceneSpec, t: int):
    """(rgb ``[H, W, 3]`` in [0, 1], Euclidean depth ``[H, W]``, instance ids ``[H, W]``)."""
    if not 0 <= t < scene.frame_count:
        raise IndexError(f"frame {t} outside [0, {scene.frame_count})")
    hit = cast(scene, t)
    return shade(hit, scene.sky_albedo), hit["dist"], hit["ids"]


def flow_from_hits(scene: SceneSpec, hit: dict, t: int) -> np.ndarray:
    """Move every frame-``t`` hit point with its object, reproject at ``t + 1``: ``[H, W, 2]`` as (dx, dy)."""
    h, w = scene.resolution
    moved = hit["points"].copy()
    for obj in scene.objects:
        sel = hit["ids"] == obj.id
        moved[sel] += obj.velocity
    pix, z = scene.camera.project(moved, t + 1, h, w)
    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    flow = np.stack([pix[..., 0] - cols, pix[..., 1] - rows], axis=-1)
    # points that end up behind the next camera have no image-plane motion
    flow[z <= 0] = 0.0
    return flow


def compute_flow(scene: SceneSpec, t: int) -> np.ndarray:
    if not 0 <= t < scene.frame_count - 1:
        raise IndexError(f"flow needs 0 <= t < {scene.frame_count - 1}, got {t}")
    return flow_from_hits(scene, cast(scene, t), t)


def render_video(scene: SceneSpec) -> dict:
    """All frames: rgb, depth, masks, flow (last frame zero) and the per-frame flow validity flag."""
    h, w = scene.resolution
    n = scene.frame_count
    rgb = np.zeros((n, h, w, 3))
    depth = np.zeros((n, h, w))
    masks = np.zeros((n, h, w), dtype=np.int32)
    flow = np.zeros((n, h, w, 2))
    for t in range(n):
        hit = cast(scene, t)
        rgb[t] = shade(hit, scene.sky_albedo)
        depth[t] = hit["dist"]
        masks[t] = hit["ids"]
        if t < n - 1:
            flow[t] = flow_from_hits(scene, hit, t)
    flow_valid = np.ones(n, dtype=bool)
    flow_valid[-1] = False
    return {"rgb": rgb, "depth": depth, "masks": masks, "flow": flow, "flow_valid": flow_valid}
