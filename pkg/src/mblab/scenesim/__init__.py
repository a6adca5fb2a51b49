"""Synthetic street scenes: motion, LoS geometry, path synthesis, rendering."""
from .camera import (
    INTENSITY,
    BoundingBox,
    CameraConfig,
    ground_truth_boxes,
    noisy_detector,
    project_points,
    render_scene,
    save_pgm,
)
from .geometry import los_state, ray_box_entry, segment_hits_boxes
from .paths import PropagationConfig, free_space_gain, synthesize_paths
from .world import BaseStation, Box, StreetConfig, Vehicle, WorldState, step_world

__all__ = [
    "INTENSITY", "BaseStation", "BoundingBox", "Box", "CameraConfig", "PropagationConfig",
    "StreetConfig", "Vehicle", "WorldState", "free_space_gain", "ground_truth_boxes",
    "los_state", "noisy_detector", "project_points", "ray_box_entry", "render_scene",
    "save_pgm", "segment_hits_boxes", "step_world", "synthesize_paths",
]
