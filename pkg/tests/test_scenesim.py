import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mblab import presets
from mblab.config import ConfigError, dump_scenario, load_scenario, scenario_from_dict
from mblab.eval import HandoverConfig
from mblab.pipeline import simulate
from mblab.scenesim import (
    INTENSITY, BaseStation, BoundingBox, Box, CameraConfig, PropagationConfig, StreetConfig, Vehicle, WorldState,
    ground_truth_boxes, los_state, noisy_detector, render_scene, save_pgm, segment_hits_boxes, step_world,
    synthesize_paths,
)
from mblab.scenesim.geometry import occluder_boxes


def clip_segment_oracle(p0, p1, lo, hi):
    """Liang-Barsky clipping written with scalar loops; True when a chord of positive length lies inside."""
    t0, t1 = 0.0, 1.0
    for a in range(3):
        d = p1[a] - p0[a]
        if d == 0.0:
            if not lo[a] < p0[a] < hi[a]:
                return False
            continue
        ta, tb = (lo[a] - p0[a]) / d, (hi[a] - p0[a]) / d
        if ta > tb:
            ta, tb = tb, ta
        t0, t1 = max(t0, ta), min(t1, tb)
        if t0 >= t1:
            return False
    return True


def sampled_inside(p0, p1, lo, hi, n=2000):
    t = np.linspace(0, 1, n)[:, None]
    pts = p0[None] + t * (p1 - p0)[None]
    return bool(np.any(np.all((pts > lo) & (pts < hi), axis=1)))


def _worlds(seed, steps=(0, 15, 40)):
    cfg = presets.random_street(seed, n_scenes=max(steps) + 1)
    world = cfg.initial_world()
    rng = np.random.default_rng([seed, 0])
    for t in range(max(steps) + 1):
        if t in steps:
            yield world
        world = step_world(world, rng)


@given(st.integers(0, 500))
def test_los_matches_clipping_and_sampling_oracles(seed):
    for world in _worlds(seed):
        user = next(v for v in world.vehicles if v.is_user)
        rx = world.receiver_position(user)
        lo, hi = occluder_boxes(world, exclude_id=user.id)
        for b, bs in enumerate(world.base_stations):
            tx = np.asarray(bs.position)
            expected = any(clip_segment_oracle(tx, rx, lo[i], hi[i]) for i in range(len(lo)))
            got = los_state(world, b, user.id)
            assert got == int(expected)
            if any(sampled_inside(tx, rx, lo[i], hi[i]) for i in range(len(lo))):
                assert got == 1


@given(st.lists(st.floats(-10, 10), min_size=6, max_size=6), st.lists(st.floats(0.1, 5), min_size=3, max_size=3))
def test_segment_box_matches_oracle(pts, size):
    p0, p1 = np.array(pts[:3]), np.array(pts[3:])
    lo = np.array([-1.0, -2.0, 0.0])
    hi = lo + np.array(size)
    assert segment_hits_boxes(p0, p1, lo, hi)[0] == clip_segment_oracle(p0, p1, lo, hi)


def test_segment_touching_face_is_not_blocked():
    lo, hi = np.zeros(3), np.ones(3)
    assert not segment_hits_boxes([-1, 1.0, 0.5], [2, 1.0, 0.5], lo, hi)[0]
    assert segment_hits_boxes([-1, 0.5, 0.5], [2, 0.5, 0.5], lo, hi)[0]
    assert not segment_hits_boxes([-1, 0.5, 0.5], [-0.5, 0.5, 0.5], lo, hi)[0]
    assert segment_hits_boxes([0.5, 0.5, 0.5], [0.6, 0.5, 0.5], lo, hi)[0]
    assert segment_hits_boxes([0, 0, 0], [1, 1, 1], np.zeros((0, 3)), np.zeros((0, 3))).shape == (0,)


def _simple_world(truck_x, bs=(0.0, -20.0, 8.0)):
    street = StreetConfig(speed_noise=0.0)
    user = Vehicle(0, lane=2, x=0.0, speed=0.0, is_user=True, scripted=True, loop=(-10.0, 10.0))
    truck = Vehicle(1, lane=1, x=truck_x, speed=10.0, length=10.0, width=2.5, height=3.5, scripted=True,
                    loop=(-100.0, 100.0))
    return WorldState(street, [user, truck], [], [BaseStation(bs, np.pi / 2, -0.3)])


def test_truck_between_bs_and_user_blocks():
    assert los_state(_simple_world(0.0), 0, 0) == 1
    assert los_state(_simple_world(30.0), 0, 0) == 0
    with pytest.raises(IndexError):
        los_state(_simple_world(0.0), 3, 0)


def test_scripted_motion_wraps_and_redraws_lap_speed():
    w = _simple_world(95.0)
    truck = w.vehicle(1)
    truck.lap_speeds = (6.0, 16.0)
    rng = np.random.default_rng(0)
    w2 = step_world(w, rng)
    assert w.vehicle(1).x == 95.0  # input untouched
    assert w2.vehicle(1).x == pytest.approx(95.0 + 10.0 * 0.1)
    assert w2.time_step == 1
    for _ in range(60):
        w2 = step_world(w2, rng)
        v = w2.vehicle(1)
        assert -100.0 <= v.x < 100.0
        assert 6.0 <= v.speed <= 16.0
    assert w2.vehicle(1).speed != 10.0


@given(st.integers(0, 200))
def test_random_traffic_stays_on_street_within_speed_limits(seed):
    cfg = presets.random_street(seed)
    world = cfg.initial_world()
    rng = np.random.default_rng(seed)
    st_ = world.street
    for _ in range(20):
        prev = {v.id: v.x for v in world.vehicles}
        world = step_world(world, rng)
        for v in world.vehicles:
            if v.scripted:
                continue
            assert st_.v_min <= v.speed <= st_.v_max
            assert 0.0 <= v.x <= st_.length
            moved = (v.x - prev[v.id]) * st_.lane_direction(v.lane)
            respawned = v.x in (0.0, st_.length)
            assert respawned or moved == pytest.approx(v.speed * st_.dt)


def test_render_shape_intensities_and_highlight():
    w = _simple_world(30.0)
    cam = CameraConfig(height=16, width=16, hfov=np.deg2rad(60)).mounted_on(w.base_stations[0])
    img = render_scene(w, cam)
    assert img.shape == (16, 16)
    assert set(np.unique(img)) <= set(INTENSITY.values())
    assert np.isclose(img, INTENSITY["user"]).any()
    # highlighting the truck instead swaps which pixels carry the user intensity
    swapped = render_scene(w, cam, highlight=1)
    assert not np.array_equal(swapped == INTENSITY["user"], img == INTENSITY["user"])
    np.testing.assert_array_equal(img, render_scene(w, cam))


def test_supersampling_blends_edges():
    w = _simple_world(30.0)
    cam = CameraConfig(height=16, width=16, hfov=np.deg2rad(60), supersample=3).mounted_on(w.base_stations[0])
    img = render_scene(w, cam)
    assert img.min() >= 0.0 and img.max() <= max(INTENSITY.values()) + 1e-12
    assert not set(np.unique(img)) <= set(INTENSITY.values())


def test_nearest_surface_wins():
    w = _simple_world(0.0)  # truck in front of the user
    cam = CameraConfig(height=16, width=16, hfov=np.deg2rad(30)).mounted_on(w.base_stations[0])
    centre = render_scene(w, cam)[8, 8]
    assert centre == INTENSITY["vehicle"]


def test_camera_config_validation():
    with pytest.raises(ValueError):
        CameraConfig(height=4)
    with pytest.raises(ValueError):
        CameraConfig(hfov=np.pi)


def test_ground_truth_boxes_normalised_and_labelled():
    w = _simple_world(5.0)
    cam = CameraConfig(hfov=np.deg2rad(60)).mounted_on(w.base_stations[0])
    boxes = ground_truth_boxes(w, cam)
    assert [b.label for b in boxes].count("user") == 1
    for b in boxes:
        assert 0 <= b.x_min <= b.x_max <= 1 and 0 <= b.y_min <= b.y_max <= 1
    with pytest.raises(ValueError):
        BoundingBox(0.5, 0.0, 0.4, 1.0)


@given(st.floats(0, 1), st.floats(0, 0.3), st.integers(0, 1000))
def test_noisy_detector_bounds(miss, jitter, seed):
    boxes = [BoundingBox(0.1, 0.2, 0.4, 0.6), BoundingBox(0.5, 0.5, 0.9, 0.8, "user")]
    out = noisy_detector(boxes, miss, jitter, np.random.default_rng(seed))
    assert len(out) <= len(boxes)
    for b in out:
        assert 0 <= b.x_min <= b.x_max <= 1


def test_noisy_detector_limits():
    boxes = [BoundingBox(0.1, 0.2, 0.4, 0.6)]
    rng = np.random.default_rng(0)
    assert noisy_detector(boxes, 0.0, 0.0, rng) == boxes
    assert noisy_detector(boxes, 1.0, 0.0, rng) == []
    jittered = noisy_detector(boxes, 0.0, 0.05, rng)[0]
    assert np.max(np.abs(np.subtract(jittered.coords(), boxes[0].coords()))) <= 0.05 + 1e-12
    with pytest.raises(ValueError):
        noisy_detector(boxes, 1.5, 0.0, rng)
    with pytest.raises(ValueError):
        noisy_detector(boxes, 0.5, -0.1, rng)


def test_direct_path_blockage_attenuation():
    prop = PropagationConfig()
    clear = synthesize_paths(_simple_world(30.0), 0, 0, prop, 4)
    blocked = synthesize_paths(_simple_world(0.0), 0, 0, prop, 4)
    ratio_db = 20 * np.log10(abs(clear.gain[0]) / abs(blocked.gain[0]))
    assert ratio_db == pytest.approx(prop.blockage_db)
    assert clear.delay[0] == pytest.approx(np.linalg.norm(np.array([0, 1.75, 1.5]) - np.array([0, -20, 8])) / 299_792_458)


def test_reflections_are_later_and_weaker_and_capped():
    w = presets.handover().initial_world()
    paths = synthesize_paths(w, 0, 0, PropagationConfig(), 4)
    assert 1 <= len(paths) <= 4
    assert np.all(paths.delay[1:] >= paths.delay[0])
    assert np.all(np.abs(paths.gain[1:]) < np.abs(paths.gain[0]))
    assert len(synthesize_paths(w, 0, 0, PropagationConfig(), 1)) == 1
    assert len(synthesize_paths(w, 0, 0, PropagationConfig(), 0)) == 0


def test_save_pgm(tmp_path):
    path = tmp_path / "x.pgm"
    save_pgm(np.full((3, 4), 0.5), path)
    data = path.read_bytes()
    assert data.startswith(b"P5\n4 3\n255\n") and len(data) == len(b"P5\n4 3\n255\n") + 12


# ---------------------------------------------------------------------------
# scenario configs and the simulation pipeline
# ---------------------------------------------------------------------------

def test_scenario_round_trip(tmp_path):
    cfg = presets.periodic_occluder()
    path = tmp_path / "s.yaml"
    dump_scenario(cfg, path)
    again = load_scenario(path)
    assert again == cfg and again.digest() == cfg.digest()
    assert dataclasses.replace(cfg, seed=8).digest() != cfg.digest()


def test_invalid_keys_listed_exhaustively():
    data = presets.periodic_occluder().to_dict()
    data["bogus"] = 1
    data["camera"]["zoom"] = 2
    data["users"][0]["colour"] = "red"
    data["n_scenes"] = "many"
    with pytest.raises(ConfigError) as info:
        scenario_from_dict(data)
    text = "\n".join(info.value.problems)
    for needle in ("bogus", "camera.zoom", "users[0].colour", "n_scenes"):
        assert needle in text
    assert len(info.value.problems) == 4


def test_semantic_validation():
    data = presets.periodic_occluder().to_dict()
    data["streams"] = [[0, 5]]
    data["split"] = [0.5, 0.5, 0.5]
    with pytest.raises(ConfigError) as info:
        scenario_from_dict(data)
    assert len(info.value.problems) == 2


def test_simulation_is_deterministic_and_shaped():
    cfg = presets.handover(n_scenes=12)
    a, b = simulate(cfg), simulate(cfg)
    assert [(r.user, r.bs) for r in a] == [(0, 0), (0, 1)]
    for ra, rb in zip(a, b):
        assert ra.images.shape == (12, 32, 32) and ra.images.dtype == np.float32
        assert ra.length == 12 and len(ra.boxes) == 12
        np.testing.assert_array_equal(ra.images, rb.images)
        np.testing.assert_array_equal(ra.beams, rb.beams)
        np.testing.assert_array_equal(ra.snr_db, rb.snr_db)
        assert ((ra.beams >= 0) & (ra.beams < 32)).all()


def test_handover_scene_blocks_bs1_only_in_a_window():
    recs = simulate(presets.handover())
    bs1, bs2 = sorted(recs, key=lambda r: r.bs)
    blocked = np.flatnonzero(bs1.los)
    assert blocked[0] == 30 and blocked[-1] == 81 and len(blocked) == 52
    assert not bs2.los.any()
    assert np.median(bs1.snr_db[bs1.los == 0]) - np.median(bs1.snr_db[bs1.los == 1]) >= 25.0
    # the default outage threshold splits blocked from unblocked steps on both links
    outage = HandoverConfig().outage_snr_db
    assert bs1.snr_db[bs1.los == 1].max() < outage < min(bs1.snr_db[bs1.los == 0].min(), bs2.snr_db.min())


def test_box_helper_kinds():
    assert Box((0, 0, 0), (1, 1, 1)).kind == "building"
