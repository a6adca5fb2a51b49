"""Built-in scenarios: the periodic-occluder learnability scene, the handover scene, random streets."""
from __future__ import annotations

import numpy as np

from .config import ScenarioConfig, scenario_from_dict

# shared geometry: BS1 looks across the street at the user lane, BS2 sits 80 m
# down the street on the opposite side
_BS1 = dict(position=[100.0, -20.0, 8.0], yaw_deg=90.0, pitch_deg=-20.0)
_BS2 = dict(position=[180.0, 20.0, 8.0], yaw_deg=-167.0, pitch_deg=-5.0)
_BUILDINGS = [
    dict(lo=[55.0, -32.0, 0.0], hi=[88.0, -24.0, 12.0]),
    dict(lo=[112.0, -32.0, 0.0], hi=[150.0, -24.0, 12.0]),
    dict(lo=[60.0, 25.0, 0.0], hi=[95.0, 33.0, 15.0]),
    dict(lo=[105.0, 25.0, 0.0], hi=[140.0, 33.0, 10.0]),
]
_CAMERA = dict(height=32, width=32, hfov_deg=60.0, supersample=2)
_TRUCK = dict(lane=1, speed=12.0, length=10.0, width=2.5, height=3.5)


def periodic_occluder(seed: int = 7, n_scenes: int = 1000) -> ScenarioConfig:
    """Trucks keep crossing the BS1 corridors of two pedestrian users; cars drive the outer lanes.

    Each truck laps a 150 m loop and draws a fresh speed every lap, so a single
    frame does not reveal when the next blockage starts. The users stand right
    of the camera axis, so a truck is in view several steps before it blocks.
    Both are also recorded from BS2, whose view of the same trucks never blocks them.
    """
    trucks = [dict(_TRUCK, x=x, loop=[0.0, 150.0], lap_speeds=[4.0, 18.0]) for x in (10.0, 40.0, 70.0, 100.0, 130.0)]
    user = dict(lane=2, speed=2.0)
    return scenario_from_dict(dict(
        name="periodic_occluder", seed=seed, n_scenes=n_scenes,
        base_stations=[_BS1, _BS2], camera=_CAMERA,
        users=[dict(user, x=101.0, loop=[98.0, 104.0]), dict(user, x=107.0, loop=[104.0, 110.0])],
        scripted_vehicles=trucks,
        traffic=dict(lanes=[0, 3], per_lane=6),
        static_occluders=_BUILDINGS,
        streams=[[0, 0], [1, 0], [0, 1], [1, 1]],
    ))


def handover(seed: int = 7, n_scenes: int = 110) -> ScenarioConfig:
    """A truck convoy blocks BS1 from step 30 to step 81; BS2 stays clear.

    The user walks slowly near the centre of one BS1 beam so the unblocked SNR
    never falls into the gaps between neighbouring codebook beams.
    """
    # convoy nose reaches the corridor at step 30; 0.6 m gaps keep it opaque until step 81
    trucks = [dict(_TRUCK, x=63.4 - 10.6 * i, loop=[-200.0, 400.0]) for i in range(6)]
    return scenario_from_dict(dict(
        name="handover", seed=seed, n_scenes=n_scenes,
        street=dict(speed_noise=0.0),
        base_stations=[_BS1, _BS2], camera=_CAMERA,
        users=[dict(lane=2, x=104.5, speed=0.1, loop=[0.0, 200.0])],
        scripted_vehicles=trucks,
        traffic=dict(lanes=[0], per_lane=4),
        static_occluders=_BUILDINGS,
        streams=[[0, 0], [0, 1]],
    ))


def random_street(seed: int, n_scenes: int = 60) -> ScenarioConfig:
    """Randomised traffic (placement, sizes, speeds) on the shared geometry, for property tests."""
    rng = np.random.default_rng([seed, 2])
    trucks = [dict(_TRUCK, x=float(x), speed=float(rng.uniform(6, 14)), scripted=False)
              for x in np.sort(rng.uniform(0, 200, size=int(rng.integers(1, 5))))]
    return scenario_from_dict(dict(
        name=f"random_{seed}", seed=seed, n_scenes=n_scenes,
        base_stations=[_BS1, _BS2], camera=dict(_CAMERA, supersample=1),
        users=[dict(lane=int(rng.integers(2, 4)), x=float(rng.uniform(85, 115)), speed=float(rng.uniform(0.5, 3.0)),
                    loop=[80.0, 120.0])],
        scripted_vehicles=trucks,
        traffic=dict(lanes=[0, 3], per_lane=int(rng.integers(2, 8))),
        static_occluders=_BUILDINGS,
    ))


PRESETS = {
    "periodic_occluder": periodic_occluder,
    "handover": handover,
}
