"""Scenario configuration: nested dataclasses loaded from YAML with strict keys."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .channel import ChannelConfig, CodebookConfig, thermal_noise_power
from .scenesim import BaseStation, Box, CameraConfig, PropagationConfig, StreetConfig, Vehicle, WorldState


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))


@dataclass
class BaseStationSpec:
    position: list[float]
    yaw_deg: float
    pitch_deg: float = 0.0
    boresight_deg: float | None = None


@dataclass
class CameraSpec:
    height: int = 32
    width: int = 32
    hfov_deg: float = 75.0
    supersample: int = 2


@dataclass
class CodebookSpec:
    n_beams: int = 32
    n_antennas: int = 32
    spacing: float = 0.5


@dataclass
class ChannelSpec:
    n_subcarriers: int = 32
    n_taps: int = 256
    max_paths: int = 4
    bandwidth_hz: float = 0.2e9
    noise_figure_db: float = 7.0
    pulse: str = "impulse"
    rolloff: float = 0.25


@dataclass
class PropagationSpec:
    carrier_hz: float = 28e9
    tx_power_dbm: float = 20.0
    blockage_db: float = 30.0
    reflection_loss_db: float = 25.0


@dataclass
class StreetSpec:
    length: float = 200.0
    n_lanes: int = 4
    lane_width: float = 3.5
    dt: float = 0.1
    v_min: float = 5.0
    v_max: float = 15.0
    speed_noise: float = 0.5


@dataclass
class VehicleSpec:
    lane: int
    x: float
    speed: float
    length: float = 4.5
    width: float = 1.8
    height: float = 1.5
    scripted: bool = True
    loop: list[float] | None = None
    lap_speeds: list[float] | None = None


@dataclass
class TrafficSpec:
    """Randomly placed background vehicles (seeded)."""
    lanes: list[int] = field(default_factory=list)
    per_lane: int = 0
    length: list[float] = field(default_factory=lambda: [4.0, 5.0])
    height: list[float] = field(default_factory=lambda: [1.4, 1.7])


@dataclass
class OccluderSpec:
    lo: list[float]
    hi: list[float]
    kind: str = "building"


@dataclass
class WindowSpec:
    p: int = 8
    f: int = 3


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    seed: int = 0
    n_scenes: int = 1000
    street: StreetSpec = field(default_factory=StreetSpec)
    base_stations: list[BaseStationSpec] = field(default_factory=list)
    camera: CameraSpec = field(default_factory=CameraSpec)
    codebook: CodebookSpec = field(default_factory=CodebookSpec)
    channel: ChannelSpec = field(default_factory=ChannelSpec)
    propagation: PropagationSpec = field(default_factory=PropagationSpec)
    users: list[VehicleSpec] = field(default_factory=list)
    scripted_vehicles: list[VehicleSpec] = field(default_factory=list)
    traffic: TrafficSpec = field(default_factory=TrafficSpec)
    static_occluders: list[OccluderSpec] = field(default_factory=list)
    # (user index, base-station index) pairs; empty means every combination
    streams: list[list[int]] = field(default_factory=list)
    window: WindowSpec = field(default_factory=WindowSpec)
    split: list[float] = field(default_factory=lambda: [0.7, 0.15, 0.15])

    # -- derived objects -------------------------------------------------
    def street_config(self) -> StreetConfig:
        return StreetConfig(**dataclasses.asdict(self.street))

    def codebook_config(self) -> CodebookConfig:
        return CodebookConfig(self.codebook.n_beams, self.codebook.n_antennas, self.codebook.spacing,
                              299_792_458.0 / self.propagation.carrier_hz)

    def channel_config(self) -> ChannelConfig:
        c = self.channel
        return ChannelConfig(
            n_subcarriers=c.n_subcarriers, n_taps=c.n_taps, max_paths=c.max_paths,
            sampling_period=1.0 / c.bandwidth_hz,
            noise_power=thermal_noise_power(c.bandwidth_hz, c.noise_figure_db),
            pulse=c.pulse, rolloff=c.rolloff,
        )

    def propagation_config(self) -> PropagationConfig:
        return PropagationConfig(**dataclasses.asdict(self.propagation))

    def camera_config(self) -> CameraConfig:
        c = self.camera
        return CameraConfig(height=c.height, width=c.width, hfov=np.deg2rad(c.hfov_deg), supersample=c.supersample)

    def stream_pairs(self) -> list[tuple[int, int]]:
        if self.streams:
            return [(int(u), int(b)) for u, b in self.streams]
        return [(u, b) for u in range(len(self.users)) for b in range(len(self.base_stations))]

    def digest(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> None:
        problems = []
        if self.n_scenes < 1:
            problems.append(f"n_scenes: must be >= 1, got {self.n_scenes}")
        if not self.base_stations:
            problems.append("base_stations: at least one base station is required")
        if not self.users:
            problems.append("users: at least one tracked user is required")
        if self.window.p < 1 or self.window.f < 1:
            problems.append(f"window: p and f must be >= 1, got p={self.window.p}, f={self.window.f}")
        if len(self.split) != 3 or any(r <= 0 for r in self.split) or abs(sum(self.split) - 1.0) > 1e-9:
            problems.append(f"split: need three positive ratios summing to 1, got {self.split}")
        for i, v in enumerate(self.users + self.scripted_vehicles):
            if not 0 <= v.lane < self.street.n_lanes:
                problems.append(f"vehicle {i}: lane {v.lane} outside 0..{self.street.n_lanes - 1}")
        for lane in self.traffic.lanes:
            if not 0 <= lane < self.street.n_lanes:
                problems.append(f"traffic.lanes: lane {lane} outside 0..{self.street.n_lanes - 1}")
        for u, b in self.stream_pairs():
            if not (0 <= u < len(self.users) and 0 <= b < len(self.base_stations)):
                problems.append(f"streams: pair ({u}, {b}) refers to a missing user or base station")
        if self.camera.height % 1 or self.camera.height < 8 or self.camera.width < 8:
            problems.append("camera: height and width must be >= 8")
        if problems:
            raise ConfigError(problems)

    # -- world construction ---------------------------------------------
    def initial_world(self) -> WorldState:
        """Build the time-0 world; random traffic is drawn from ``seed``."""
        street = self.street_config()
        rng = np.random.default_rng([self.seed, 1])
        vehicles = []
        for spec in self.users:
            vehicles.append(_vehicle(len(vehicles), spec, is_user=True))
        for spec in self.scripted_vehicles:
            vehicles.append(_vehicle(len(vehicles), spec, is_user=False))
        for lane in self.traffic.lanes:
            slots = np.sort(rng.permutation(self.traffic.per_lane) + rng.uniform(0.1, 0.9, self.traffic.per_lane))
            for slot in slots:
                vehicles.append(Vehicle(
                    id=len(vehicles), lane=lane,
                    x=float(slot / max(self.traffic.per_lane, 1) * street.length),
                    speed=float(rng.uniform(street.v_min, street.v_max)),
                    length=float(rng.uniform(*self.traffic.length)),
                    height=float(rng.uniform(*self.traffic.height)),
                ))
        bss = [BaseStation(tuple(map(float, b.position)), np.deg2rad(b.yaw_deg), np.deg2rad(b.pitch_deg),
                           None if b.boresight_deg is None else np.deg2rad(b.boresight_deg))
               for b in self.base_stations]
        occ = [Box(tuple(map(float, o.lo)), tuple(map(float, o.hi)), o.kind) for o in self.static_occluders]
        return WorldState(street, vehicles, occ, bss, 0)


def _vehicle(vid: int, spec: VehicleSpec, is_user: bool) -> Vehicle:
    loop = tuple(spec.loop) if spec.loop is not None else None
    laps = tuple(spec.lap_speeds) if spec.lap_speeds is not None else None
    return Vehicle(vid, spec.lane, float(spec.x), float(spec.speed), spec.length, spec.width, spec.height,
                   is_user=is_user, scripted=spec.scripted, loop=loop, lap_speeds=laps)


# ---------------------------------------------------------------------------
# strict dict -> dataclass conversion
# ---------------------------------------------------------------------------

def _convert(tp, value, path: str, problems: list[str]):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or (origin is not None and str(origin) == "types.UnionType"):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(inner[0], value, path, problems)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            problems.append(f"{path}: expected a mapping, got {type(value).__name__}")
            return None
        return _build(tp, value, path, problems)
    if origin is list:
        if not isinstance(value, (list, tuple)):
            problems.append(f"{path}: expected a list, got {type(value).__name__}")
            return None
        return [_convert(args[0], v, f"{path}[{i}]", problems) for i, v in enumerate(value)] if args else list(value)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            problems.append(f"{path}: expected a number, got {value!r}")
            return None
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            problems.append(f"{path}: expected an integer, got {value!r}")
            return None
        return value
    if tp is bool:
        if not isinstance(value, bool):
            problems.append(f"{path}: expected true/false, got {value!r}")
            return None
        return value
    if tp is str:
        if not isinstance(value, str):
            problems.append(f"{path}: expected a string, got {value!r}")
            return None
        return value
    return value


def _build(cls, data: dict, path: str, problems: list[str]):
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in fields:
            problems.append(f"{path}{'.' if path else ''}{key}: unknown key")
    kwargs = {}
    for name, f in fields.items():
        sub = f"{path}{'.' if path else ''}{name}"
        if name in data:
            kwargs[name] = _convert(hints[name], data[name], sub, problems)
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            problems.append(f"{sub}: required key missing")
    try:
        return cls(**{k: v for k, v in kwargs.items() if v is not None or k in data})
    except TypeError:
        return None


def scenario_from_dict(data: dict) -> ScenarioConfig:
    problems: list[str] = []
    cfg = _build(ScenarioConfig, data or {}, "", problems)
    if problems:
        raise ConfigError(problems)
    cfg.validate()
    return cfg


def load_scenario(path) -> ScenarioConfig:
    data = yaml.safe_load(Path(path).read_text())
    if data is not None and not isinstance(data, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    return scenario_from_dict(data or {})


def dump_scenario(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
