import numpy as np
import pytest

from followme.core import AgentClass, AgentTrack
from followme.dataio import read_manifest
from followme.exceptions import SimulationDiverged
from followme.simgen import (DEFAULT_N_DRIVERS, DriverParams, Operation, ScenarioSpec,
                             TrafficDensity, all_scenarios, build_route, generate_dataset,
                             generate_scene, sample_driver_params, simulate_ego,
                             simulate_lead, simulate_traffic)
from followme.simgen.route import _Arc, _Straight, RoutePlan

SPEC_L = ScenarioSpec(TrafficDensity.NO_TRAFFIC, 13.41, Operation.LEFT_TURN)
SPEC_S = ScenarioSpec(TrafficDensity.NO_TRAFFIC, 13.41, Operation.STRAIGHT)
SPEC_WT = ScenarioSpec(TrafficDensity.WITH_TRAFFIC, 17.88, Operation.RIGHT_TURN)


def test_factorial_design_is_twelve():
    specs = all_scenarios()
    assert len(specs) == 12
    assert len({s.tag for s in specs}) == 12
    assert DEFAULT_N_DRIVERS * len(specs) == 384


def test_route_structure():
    route = build_route(SPEC_S, rng_seed=4)
    assert len(route.markers) == 5
    ops = [m.operation for m in route.markers]
    assert ops.count(Operation.STRAIGHT) == 3
    assert ops.count(Operation.LEFT_TURN) == 1
    assert ops.count(Operation.RIGHT_TURN) == 1
    assert sum(m.evaluated for m in route.markers) == 1
    assert 1400.0 <= route.total_length <= 3200.0
    # straight-operation spec: the turn arcs belong to non-evaluated markers
    for m in route.markers:
        if m.operation is not Operation.STRAIGHT:
            assert not m.evaluated
    arcs = [s for s in route.segments if isinstance(s, _Arc)]
    assert len(arcs) == 2
    assert all(8.0 <= a.radius <= 15.0 for a in arcs)


def test_route_left_turn_marker_and_determinism():
    route = build_route(SPEC_L, rng_seed=9)
    lefts = [m for m in route.markers if m.operation is Operation.LEFT_TURN]
    assert len(lefts) == 1
    assert lefts[0].evaluated
    again = build_route(SPEC_L, rng_seed=9)
    np.testing.assert_array_equal(route.waypoints, again.waypoints)
    assert np.all(np.hypot(*np.diff(route.waypoints, axis=0).T) > 0)


def test_lead_speed_profile():
    route = build_route(SPEC_L, rng_seed=4)
    lead = simulate_lead(route, SPEC_L)
    dt = np.diff(lead.times)
    np.testing.assert_allclose(dt, 1.0 / 60.0, atol=1e-12)
    speed = np.hypot(*np.diff(lead.xy, axis=0).T) * 60.0
    # frames inside arc spans of the route
    arc_spans = []
    s_acc = 0.0
    for seg in route.segments:
        if isinstance(seg, _Arc):
            arc_spans.append((s_acc, s_acc + seg.length))
        s_acc += seg.length
    s_frames = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(lead.xy, axis=0).T))])
    in_arc = np.zeros(len(lead), dtype=bool)
    for lo, hi in arc_spans:
        in_arc |= (s_frames >= lo + 0.5) & (s_frames <= hi - 0.5)
    assert np.all(speed[in_arc[:-1]] <= 5.0 + 1e-6)
    # steady straight cruising hits the commanded speed exactly
    far_from_arc = ~in_arc.copy()
    for lo, hi in arc_spans:
        far_from_arc &= ~((s_frames >= lo - 90.0) & (s_frames <= hi + 90.0))
    steady = speed[far_from_arc[:-1] & (s_frames[:-1] > 30.0) & (s_frames[:-1] < s_frames[-1] - 90.0)]
    assert steady.size > 0
    np.testing.assert_allclose(steady, 13.41, atol=1e-6)


def _long_straight_route(length=2500.0, speed=13.41):
    return RoutePlan([_Straight((0.0, 0.0), (length, 0.0))], [], speed)


def test_ego_converges_to_lead_speed():
    route = _long_straight_route()
    lead = simulate_lead(route, SPEC_S)
    driver = DriverParams(lateral_noise_std=1e-12)
    ego = simulate_ego(lead, driver, rng_seed=0)
    v_ego = np.hypot(*np.diff(ego.xy, axis=0).T) * 60.0
    tail = v_ego[-1200:]
    assert np.max(np.abs(tail - 13.41)) < 1e-3


def test_ego_lateral_bias():
    route = _long_straight_route()
    lead = simulate_lead(route, SPEC_S)
    driver = DriverParams(lateral_offset_bias=0.5, lateral_noise_std=1e-12)
    ego = simulate_ego(lead, driver, rng_seed=0)
    offsets = ego.xy[2400:-600, 1]  # straight along +x: offset is just y
    assert abs(offsets.mean() - 0.5) < 0.05


def test_ego_gap_instruction_band():
    """Across both speed levels, the 50-200 ft instruction holds for >= 80%
    of steady-state (lead at cruise) frames under default parameters."""
    in_band = []
    for speed in (13.41, 17.88):
        spec = ScenarioSpec(TrafficDensity.NO_TRAFFIC, speed, Operation.LEFT_TURN)
        route = build_route(spec, rng_seed=21)
        lead = simulate_lead(route, spec)
        ego = simulate_ego(lead, DriverParams(), rng_seed=22)
        gap = np.hypot(*(lead.xy - ego.xy).T)
        v_lead = np.hypot(*np.diff(lead.xy, axis=0).T) * 60.0
        steady = np.abs(v_lead - speed) < 0.05 * speed
        in_band.append(((gap[:-1][steady] >= 15.24) & (gap[:-1][steady] <= 60.96)))
        # wider sanity envelope from the same drive
        assert np.mean((gap >= 10.0) & (gap <= 80.0)) >= 0.9
    frac = np.concatenate(in_band).mean()
    assert frac >= 0.8, f"only {frac:.2%} of steady-state frames inside 50-200 ft"


def test_ego_collision_raises():
    # lead brakes to a dead stop instantly; a sluggish, tailgating driver
    # with a long reaction delay cannot avoid closing within 1 m
    times = np.arange(1200) / 60.0
    x = np.where(times < 4.0, 13.41 * times, 13.41 * 4.0)
    lead = AgentTrack("lead", AgentClass.LEAD, times, np.stack([x, np.zeros_like(x)], 1))
    driver = DriverParams(idm_desired_gap_s=0.3, idm_min_spacing=2.0,
                          idm_comfort_decel=0.8, reaction_delay_s=1.0,
                          lateral_noise_std=1e-12)
    with pytest.raises(SimulationDiverged):
        simulate_ego(lead, driver, rng_seed=0)


def test_traffic_rules():
    route = build_route(SPEC_WT, rng_seed=13)
    assert simulate_traffic(route, SPEC_S, rng_seed=0, n_frames=100) == []
    tracks = simulate_traffic(route, SPEC_WT, rng_seed=5, n_frames=3000)
    assert 3 <= len(tracks) <= 6
    assert all(len(t) == 3000 for t in tracks)
    again = simulate_traffic(route, SPEC_WT, rng_seed=5, n_frames=3000)
    for a, b in zip(tracks, again):
        np.testing.assert_array_equal(a.xy, b.xy)


def test_generated_scene_sanity(mini_dataset):
    entries = read_manifest(mini_dataset / "manifest.csv")
    from followme.dataio import load_scene
    scene = load_scene(mini_dataset / entries[5].path)
    ego, lead = scene.ego_track, scene.lead_track
    for tr in scene.tracks:
        v = np.hypot(*np.diff(tr.xy, axis=0).T) * scene.sample_rate_hz
        assert v.max() <= 25.0
        acc = np.diff(tr.xy, n=2, axis=0) * scene.sample_rate_hz ** 2
        assert np.hypot(acc[:, 0], acc[:, 1]).max() <= 5.0
    assert np.hypot(*(ego.xy - lead.xy).T).min() >= 1.0
    for tr in scene.other_tracks:
        assert np.hypot(*(tr.xy - ego.xy).T).min() >= 1.5
        assert np.hypot(*(tr.xy - lead.xy).T).min() >= 1.5


def test_generate_dataset_one_driver(tmp_path):
    manifest = generate_dataset(n_drivers=1, out_dir=tmp_path, rng_seed=3)
    entries = read_manifest(manifest)
    assert len(entries) == 12
    assert all((tmp_path / e.path).is_file() for e in entries)


def test_generate_dataset_deterministic(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    generate_dataset(n_drivers=1, out_dir=a, rng_seed=8)
    generate_dataset(n_drivers=1, out_dir=b, rng_seed=8)
    assert (a / "manifest.csv").read_bytes() == (b / "manifest.csv").read_bytes()
    for e in read_manifest(a / "manifest.csv")[:3]:
        assert (a / e.path).read_bytes() == (b / e.path).read_bytes()


def test_scene_regeneration_determinism():
    driver = sample_driver_params(np.random.default_rng(2))
    s1 = generate_scene(SPEC_WT, driver, "sc", "d0", rng_seed=10)
    s2 = generate_scene(SPEC_WT, driver, "sc", "d0", rng_seed=10)
    for a, b in zip(s1.tracks, s2.tracks):
        np.testing.assert_array_equal(a.xy, b.xy)


def test_driver_params_validation():
    with pytest.raises(ValueError):
        DriverParams(idm_min_spacing=1.0)
    with pytest.raises(ValueError):
        DriverParams(idm_max_accel=-1.0)
    p = sample_driver_params(np.random.default_rng(0))
    assert p.idm_min_spacing >= 2.0


@pytest.mark.slow
def test_generate_default_dataset_is_384_scenes(tmp_path):
    manifest = generate_dataset(out_dir=tmp_path, rng_seed=0, jobs=4)
    assert len(read_manifest(manifest)) == 384
    assert len(list((tmp_path / "scenes").iterdir())) == 384
