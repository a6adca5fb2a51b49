"""Pinhole camera: grayscale raster of the street, projected boxes, noisy detector."""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .geometry import ray_box_entry
from .world import BaseStation, WorldState

INTENSITY = {
    "background": 0.0,
    "road": 0.1,
    "building": 0.3,
    "vehicle": 0.6,
    "user": 0.9,
}
NEAR_PLANE = 0.1


@dataclass(frozen=True)
class CameraConfig:
    height: int = 32
    width: int = 32
    hfov: float = np.deg2rad(75.0)
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    yaw: float = 0.0
    pitch: float = 0.0
    supersample: int = 1  # sub-samples per pixel side; >1 blends edge pixels

    def __post_init__(self):
        if self.height < 8 or self.width < 8:
            raise ValueError(f"image must be at least 8x8, got {self.height}x{self.width}")
        if not 0.0 < self.hfov < np.pi:
            raise ValueError(f"horizontal field of view must lie in (0, pi), got {self.hfov}")
        if self.supersample < 1:
            raise ValueError("supersample must be >= 1")

    def mounted_on(self, bs: BaseStation) -> "CameraConfig":
        return replace(self, position=tuple(bs.position), yaw=bs.yaw, pitch=bs.pitch)


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    label: str = "vehicle"

    def __post_init__(self):
        if not (0.0 <= self.x_min <= self.x_max <= 1.0 and 0.0 <= self.y_min <= self.y_max <= 1.0):
            raise ValueError(f"invalid normalised box {self}")

    def coords(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


def camera_basis(cam: CameraConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Forward, right, and up unit vectors; image x grows along ``right``."""
    cy, sy = np.cos(cam.yaw), np.sin(cam.yaw)
    cp, sp = np.cos(cam.pitch), np.sin(cam.pitch)
    forward = np.array([cy * cp, sy * cp, sp])
    right = np.array([sy, -cy, 0.0])
    up = np.cross(right, forward)
    return forward, right, up


def _half_extents(cam: CameraConfig) -> tuple[float, float]:
    tx = np.tan(cam.hfov / 2.0)
    return tx, tx * cam.height / cam.width


def _pixel_rays(cam: CameraConfig) -> np.ndarray:
    s = cam.supersample
    H, W = cam.height * s, cam.width * s
    tx, ty = _half_extents(cam)
    u = ((np.arange(W) + 0.5) / W * 2.0 - 1.0) * tx
    v = (1.0 - (np.arange(H) + 0.5) / H * 2.0) * ty
    forward, right, up = camera_basis(cam)
    vv, uu = np.meshgrid(v, u, indexing="ij")
    return forward[None] + uu.reshape(-1, 1) * right[None] + vv.reshape(-1, 1) * up[None]


def _scene_volumes(world: WorldState, highlight: int | None):
    los, his, values = [], [], []
    for b in world.static_occluders:
        los.append(b.lo)
        his.append(b.hi)
        values.append(INTENSITY["building"])
    for v in world.vehicles:
        lo, hi = world.vehicle_box(v)
        los.append(lo)
        his.append(hi)
        is_target = v.is_user if highlight is None else v.id == highlight
        values.append(INTENSITY["user" if is_target else "vehicle"])
    if not los:
        return np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0)
    return np.asarray(los, float), np.asarray(his, float), np.asarray(values)


def render_scene(world: WorldState, cam: CameraConfig, highlight: int | None = None) -> np.ndarray:
    """Ray-cast the world into an (H, W) image with per-class intensities.

    Each pixel shows the nearest surface along its ray (volumes, then the
    ground plane: road inside the street, background elsewhere).
    ``highlight`` selects the vehicle drawn as the tracked user; by default
    every vehicle flagged ``is_user`` is.
    """
    dirs = _pixel_rays(cam)
    origin = np.asarray(cam.position, dtype=np.float64)
    origins = np.broadcast_to(origin, dirs.shape)
    lo, hi, values = _scene_volumes(world, highlight)
    t_box = ray_box_entry(origins, dirs, lo, hi)
    pix = np.full(dirs.shape[0], INTENSITY["background"])

    st = world.street
    down = dirs[:, 2] < 0
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = np.where(down, -origin[2] / np.where(down, dirs[:, 2], -1.0), np.inf)
    gx = origin[0] + t_ground * dirs[:, 0]
    gy = origin[1] + t_ground * dirs[:, 1]
    on_road = down & (np.abs(gy) <= st.road_half_width) & (gx >= 0.0) & (gx <= st.length)
    pix[on_road] = INTENSITY["road"]

    if t_box.shape[1]:
        nearest = t_box.argmin(axis=1)
        t_near = t_box[np.arange(len(dirs)), nearest]
        box_first = np.isfinite(t_near) & (t_near < t_ground)
        pix[box_first] = values[nearest[box_first]]

    s = cam.supersample
    img = pix.reshape(cam.height, s, cam.width, s) if s > 1 else pix.reshape(cam.height, 1, cam.width, 1)
    return img.mean(axis=(1, 3))


def project_points(cam: CameraConfig, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Normalised image coordinates (u right, v down, both in [0,1] on screen) and depth."""
    forward, right, up = camera_basis(cam)
    rel = np.atleast_2d(points) - np.asarray(cam.position)[None]
    depth = rel @ forward
    tx, ty = _half_extents(cam)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = ((rel @ right) / depth / tx + 1.0) / 2.0
        v = (1.0 - (rel @ up) / depth / ty) / 2.0
    return u, v, depth


def _corners(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])


def ground_truth_boxes(world: WorldState, cam: CameraConfig, highlight: int | None = None) -> list[BoundingBox]:
    """Image-space extents of every vehicle lying wholly in front of the camera.

    Boxes are clipped to the frame; vehicles projecting entirely off-screen
    are skipped.
    """
    out = []
    for v in world.vehicles:
        lo, hi = world.vehicle_box(v)
        u, vv, depth = project_points(cam, _corners(lo, hi))
        if np.any(depth <= NEAR_PLANE):
            continue
        x0, x1 = u.min(), u.max()
        y0, y1 = vv.min(), vv.max()
        if x1 < 0 or x0 > 1 or y1 < 0 or y0 > 1:
            continue
        is_target = v.is_user if highlight is None else v.id == highlight
        out.append(BoundingBox(float(np.clip(x0, 0, 1)), float(np.clip(y0, 0, 1)),
                               float(np.clip(x1, 0, 1)), float(np.clip(y1, 0, 1)),
                               "user" if is_target else "vehicle"))
    return out


def noisy_detector(boxes: list[BoundingBox], miss_prob: float, jitter: float,
                   rng: np.random.Generator) -> list[BoundingBox]:
    """Drop each box with ``miss_prob``; shift surviving corners by U(-jitter, jitter)."""
    if not 0.0 <= miss_prob <= 1.0:
        raise ValueError(f"miss probability must lie in [0, 1], got {miss_prob}")
    if jitter < 0:
        raise ValueError(f"jitter must be non-negative, got {jitter}")
    out = []
    for b in boxes:
        if rng.random() < miss_prob:
            continue
        c = np.array(b.coords())
        if jitter > 0:
            c = np.clip(c + rng.uniform(-jitter, jitter, size=4), 0.0, 1.0)
        x0, x1 = sorted((c[0], c[2]))
        y0, y1 = sorted((c[1], c[3]))
        out.append(BoundingBox(float(x0), float(y0), float(x1), float(y1), b.label))
    return out


def save_pgm(image: np.ndarray, path) -> None:
    """Write an 8-bit binary PGM (P5)."""
    img = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    H, W = img.shape
    Path(path).write_bytes(f"P5\n{W} {H}\n255\n".encode() + img.tobytes())
