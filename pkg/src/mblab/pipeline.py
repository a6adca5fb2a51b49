"""Scene simulation to per-stream observation records (image, beam, LoS, SNR, boxes)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import build_codebook, channel_response, received_snr, select_beam
from .config import ScenarioConfig
from .scenesim import BoundingBox, ground_truth_boxes, los_state, render_scene, step_world, synthesize_paths


@dataclass
class StreamRecord:
    """Time series for one (user, base station) pair."""
    user: int
    bs: int
    images: np.ndarray     # (T, H, W) float32
    beams: np.ndarray      # (T,) int64
    los: np.ndarray        # (T,) uint8, 1 = blocked
    snr_db: np.ndarray     # (T,) float64, best-beam SNR
    boxes: list[list[BoundingBox]] = field(default_factory=list)

    @property
    def length(self) -> int:
        return int(self.beams.shape[0])


def simulate(cfg: ScenarioConfig, n_steps: int | None = None) -> list[StreamRecord]:
    """Run the scenario for ``n_steps`` (default ``cfg.n_scenes``) and record every stream."""
    T = cfg.n_scenes if n_steps is None else n_steps
    world = cfg.initial_world()
    user_ids = [v.id for v in world.vehicles if v.is_user]
    codebook = build_codebook(cfg.codebook_config())
    ch = cfg.channel_config()
    prop = cfg.propagation_config()
    cam0 = cfg.camera_config()
    pairs = cfg.stream_pairs()
    cams = {b: cam0.mounted_on(world.base_stations[b]) for _, b in pairs}
    H, W = cam0.height, cam0.width

    out = {p: dict(images=np.zeros((T, H, W), np.float32), beams=np.zeros(T, np.int64),
                   los=np.zeros(T, np.uint8), snr=np.zeros(T), boxes=[]) for p in pairs}
    rng = np.random.default_rng([cfg.seed, 0])
    for t in range(T):
        for (u, b) in pairs:
            uid = user_ids[u]
            rec = out[(u, b)]
            paths = synthesize_paths(world, b, uid, prop, ch.max_paths)
            h = channel_response(paths, ch, codebook.config.n_antennas, codebook.config.spacing)
            beam, _ = select_beam(h, codebook)
            rec["beams"][t] = beam
            rec["snr"][t] = received_snr(h, codebook.vectors[beam], ch.noise_power)[1]
            rec["los"][t] = los_state(world, b, uid)
            rec["images"][t] = render_scene(world, cams[b], highlight=uid)
            rec["boxes"].append(ground_truth_boxes(world, cams[b], highlight=uid))
        if t + 1 < T:
            world = step_world(world, rng)
    return [StreamRecord(u, b, r["images"], r["beams"], r["los"], r["snr"], r["boxes"])
            for (u, b), r in out.items()]
