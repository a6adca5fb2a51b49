"""Segment/ray versus axis-aligned box tests and the LoS indicator."""
from __future__ import annotations

import numpy as np

from .world import WorldState


def _slab_interval(origin: np.ndarray, direction: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Entry/exit parameters of lines origin + t*direction through boxes.

    origin, direction: (P, 3); lo, hi: (B, 3). Returns (t_enter, t_exit),
    both (P, B); t_enter > t_exit means the line misses the box.
    """
    o = origin[:, None, :]
    d = direction[:, None, :]
    parallel = np.abs(d) < 1e-15
    safe = np.where(parallel, 1.0, d)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo[None] - o) / safe
        t2 = (hi[None] - o) / safe
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    inside = (o > lo[None]) & (o < hi[None])
    tmin = np.where(parallel, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(parallel, np.where(inside, np.inf, -np.inf), tmax)
    return tmin.max(axis=-1), tmax.min(axis=-1)


def segment_hits_boxes(p0, p1, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Boolean per box: does the closed segment p0-p1 pass through its interior?"""
    lo, hi = np.atleast_2d(lo), np.atleast_2d(hi)
    if lo.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    p0 = np.asarray(p0, dtype=np.float64)
    d = np.asarray(p1, dtype=np.float64) - p0
    enter, exit_ = _slab_interval(p0[None], d[None], lo, hi)
    enter, exit_ = enter[0], exit_[0]
    return (enter < exit_) & (exit_ > 0.0) & (enter < 1.0)


def ray_box_entry(origins: np.ndarray, directions: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Distance parameter of the first forward hit per (ray, box); inf on a miss."""
    if lo.shape[0] == 0:
        return np.full((origins.shape[0], 0), np.inf)
    enter, exit_ = _slab_interval(origins, directions, lo, hi)
    hit = (enter < exit_) & (exit_ > 0.0)
    return np.where(hit, np.maximum(enter, 0.0), np.inf)


def occluder_boxes(world: WorldState, exclude_id: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """All blocking volumes (static occluders plus vehicles other than ``exclude_id``)."""
    los, his = [], []
    for b in world.static_occluders:
        los.append(b.lo)
        his.append(b.hi)
    for v in world.vehicles:
        if v.id == exclude_id:
            continue
        lo, hi = world.vehicle_box(v)
        los.append(lo)
        his.append(hi)
    if not los:
        return np.zeros((0, 3)), np.zeros((0, 3))
    return np.asarray(los, dtype=np.float64), np.asarray(his, dtype=np.float64)


def los_state(world: WorldState, bs_index: int, user_id: int) -> int:
    """0 when the BS antenna sees the user's receiver directly, 1 when blocked."""
    user = world.vehicle(user_id)
    if not 0 <= bs_index < len(world.base_stations):
        raise IndexError(f"base station {bs_index} out of range (have {len(world.base_stations)})")
    tx = np.asarray(world.base_stations[bs_index].position, dtype=np.float64)
    rx = world.receiver_position(user)
    lo, hi = occluder_boxes(world, exclude_id=user.id)
    return int(segment_hits_boxes(tx, rx, lo, hi).any())
