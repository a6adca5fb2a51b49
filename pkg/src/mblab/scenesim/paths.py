"""Two-regime geometric path synthesis (free-space LoS plus first-order reflections)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..channel import SPEED_OF_LIGHT, PathSet
from .geometry import los_state
from .world import WorldState


@dataclass(frozen=True)
class PropagationConfig:
    carrier_hz: float = 28e9
    tx_power_dbm: float = 20.0
    blockage_db: float = 30.0
    reflection_loss_db: float = 25.0

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz


def _wrap(angle: float) -> float:
    return float((angle + np.pi) % (2.0 * np.pi) - np.pi)


def free_space_gain(distance: float, wavelength: float, tx_power_w: float = 1.0) -> complex:
    """Complex amplitude sqrt(P) * lambda / (4 pi r) * exp(-j 2 pi r / lambda)."""
    amp = np.sqrt(tx_power_w) * wavelength / (4.0 * np.pi * distance)
    return complex(amp * np.exp(-2j * np.pi * distance / wavelength))


def _reflections(world: WorldState, tx: np.ndarray, rx: np.ndarray):
    """Image-method specular reflections off the vertical faces of static occluders.

    Yields (path length, reflection point) for every geometrically valid face.
    """
    for box in world.static_occluders:
        lo, hi = np.asarray(box.lo, float), np.asarray(box.hi, float)
        for axis in (0, 1):
            other = 1 - axis
            for plane, outward in ((lo[axis], -1.0), (hi[axis], 1.0)):
                # both endpoints must sit on the outer side of this face
                if (tx[axis] - plane) * outward <= 0 or (rx[axis] - plane) * outward <= 0:
                    continue
                mirror = rx.copy()
                mirror[axis] = 2.0 * plane - rx[axis]
                s = (plane - tx[axis]) / (mirror[axis] - tx[axis])
                point = tx + s * (mirror - tx)
                if not (lo[other] <= point[other] <= hi[other] and lo[2] <= point[2] <= hi[2]):
                    continue
                yield float(np.linalg.norm(mirror - tx)), point


def synthesize_paths(world: WorldState, bs_index: int, user_id: int, prop: PropagationConfig,
                     max_paths: int) -> PathSet:
    """Paths from base station ``bs_index`` to the receiver of ``user_id``.

    The direct path follows free-space loss; when the LoS is blocked it is
    attenuated by ``prop.blockage_db``. Up to ``max_paths - 1`` of the
    strongest first-order reflections are appended, unaffected by blockage.
    """
    bs = world.base_stations[bs_index]
    user = world.vehicle(user_id)
    tx = np.asarray(bs.position, dtype=np.float64)
    rx = world.receiver_position(user)
    lam = prop.wavelength
    p_tx = 10.0 ** ((prop.tx_power_dbm - 30.0) / 10.0)
    boresight = bs.antenna_boresight

    def angles(target: np.ndarray) -> tuple[float, float]:
        v = target - tx
        az = _wrap(np.arctan2(v[1], v[0]) - boresight)
        el = float(np.arctan2(v[2], np.hypot(v[0], v[1])))
        return az, el

    if max_paths < 1:
        return PathSet.empty()
    r = float(np.linalg.norm(rx - tx))
    g = free_space_gain(r, lam, p_tx)
    if los_state(world, bs_index, user_id):
        g *= 10.0 ** (-prop.blockage_db / 20.0)
    az, el = angles(rx)
    gains, delays, azs, els = [g], [r / SPEED_OF_LIGHT], [az], [el]

    refl_amp = 10.0 ** (-prop.reflection_loss_db / 20.0)
    found = sorted(_reflections(world, tx, rx), key=lambda item: item[0])
    for length, point in found[: max_paths - 1]:
        gains.append(refl_amp * free_space_gain(length, lam, p_tx))
        delays.append(length / SPEED_OF_LIGHT)
        a, e = angles(point)
        azs.append(a)
        els.append(e)
    return PathSet(np.array(gains), np.array(delays), np.array(azs), np.array(els))
