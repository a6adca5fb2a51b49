"""Street world: lanes, vehicles, static occluders, base stations, and motion."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class StreetConfig:
    length: float = 200.0
    n_lanes: int = 4
    lane_width: float = 3.5
    dt: float = 0.1
    v_min: float = 5.0
    v_max: float = 15.0
    speed_noise: float = 0.5  # half-width of the uniform speed perturbation per step

    def lane_center(self, lane: int) -> float:
        return (lane - (self.n_lanes - 1) / 2.0) * self.lane_width

    def lane_direction(self, lane: int) -> int:
        """+1 for the first half of the lanes (driving towards +x), -1 otherwise."""
        return 1 if lane < self.n_lanes // 2 else -1

    @property
    def road_half_width(self) -> float:
        return self.n_lanes * self.lane_width / 2.0


@dataclass
class Vehicle:
    id: int
    lane: int
    x: float
    speed: float
    length: float = 4.5
    width: float = 1.8
    height: float = 1.5
    is_user: bool = False
    # scripted vehicles keep their speed and wrap periodically over ``loop``;
    # with ``lap_speeds`` set, each wrap redraws the speed uniformly from that range
    scripted: bool = False
    loop: tuple[float, float] | None = None
    lap_speeds: tuple[float, float] | None = None


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    kind: str = "building"


@dataclass(frozen=True)
class BaseStation:
    position: tuple[float, float, float]
    yaw: float  # camera optical axis azimuth, radians
    pitch: float = 0.0
    boresight: float | None = None  # antenna boresight azimuth; defaults to yaw

    @property
    def antenna_boresight(self) -> float:
        return self.yaw if self.boresight is None else self.boresight


@dataclass
class WorldState:
    street: StreetConfig
    vehicles: list[Vehicle]
    static_occluders: list[Box] = field(default_factory=list)
    base_stations: list[BaseStation] = field(default_factory=list)
    time_step: int = 0

    def vehicle(self, vehicle_id: int) -> Vehicle:
        for v in self.vehicles:
            if v.id == vehicle_id:
                return v
        raise KeyError(f"no vehicle with id {vehicle_id}")

    def vehicle_box(self, v: Vehicle) -> tuple[np.ndarray, np.ndarray]:
        y = self.street.lane_center(v.lane)
        lo = np.array([v.x - v.length / 2, y - v.width / 2, 0.0])
        hi = np.array([v.x + v.length / 2, y + v.width / 2, v.height])
        return lo, hi

    def receiver_position(self, v: Vehicle) -> np.ndarray:
        """Roof-centre antenna of a vehicle."""
        return np.array([v.x, self.street.lane_center(v.lane), v.height])


def step_world(world: WorldState, rng: np.random.Generator) -> WorldState:
    """Advance every vehicle by one time step and return the new world."""
    st = world.street
    new = copy.deepcopy(world)
    for v in new.vehicles:
        direction = st.lane_direction(v.lane)
        if v.scripted:
            v.x += direction * v.speed * st.dt
            lo, hi = v.loop if v.loop is not None else (0.0, st.length)
            span = hi - lo
            wrapped = v.x >= hi or v.x < lo
            if v.x >= hi:
                v.x -= span
            elif v.x < lo:
                v.x += span
            if wrapped and v.lap_speeds is not None:
                v.speed = float(rng.uniform(*v.lap_speeds))
            continue
        if st.speed_noise > 0:
            v.speed = float(np.clip(v.speed + rng.uniform(-st.speed_noise, st.speed_noise), st.v_min, st.v_max))
        v.x += direction * v.speed * st.dt
        if v.x > st.length or v.x < 0.0:
            v.x = 0.0 if direction > 0 else st.length
            v.speed = float(rng.uniform(st.v_min, st.v_max))
    new.time_step += 1
    return new
