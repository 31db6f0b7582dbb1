import numpy as np
import pytest

from followme.core import AgentClass, AgentTrack, ObservationWindow, EgoTarget, Scene
from followme.simgen import Operation, ScenarioSpec, TrafficDensity, generate_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_window(rng, t_obs=10, t_pred=30, n_max=8, n_valid=3, scale=20.0):
    """A structurally valid random window: proper one-hots, ego at origin."""
    feats = np.zeros((5, t_obs, n_max))
    for slot in range(n_valid):
        feats[0:2, :, slot] = rng.standard_normal((2, t_obs)) * scale
        feats[2 + min(slot, 2), :, slot] = 1.0
    feats[0:2, -1, 0] = 0.0
    mask = np.zeros(n_max, dtype=bool)
    mask[:n_valid] = True
    window = ObservationWindow(features=feats, mask=mask, ego_index=0, lead_index=1,
                               origin=(0.0, 0.0), horizon_frames=t_pred)
    target = EgoTarget(positions=rng.standard_normal((2, t_pred)) * scale)
    return window, target


@pytest.fixture
def window_factory():
    return make_window


def make_straight_scene(n_frames=240, rate_hz=10.0, n_other=1, speed=12.0,
                        ego_start=(0.0, 0.0)):
    """Hand-built constant-velocity scene on a shared grid (no simulation)."""
    times = np.arange(n_frames) / rate_hz
    def track(aid, cls, x0, y0, vx, vy):
        xy = np.stack([x0 + vx * times, y0 + vy * times], axis=1)
        return AgentTrack(aid, cls, times, xy)
    tracks = [
        track("ego", AgentClass.EGO, ego_start[0], ego_start[1], speed, 0.0),
        track("lead", AgentClass.LEAD, ego_start[0] + 30.0, ego_start[1], speed, 0.0),
    ]
    for i in range(n_other):
        tracks.append(track(f"other{i}", AgentClass.OTHER,
                            ego_start[0] - 20.0 * (i + 1), ego_start[1] + 3.5,
                            speed * 0.9, 0.0))
    spec = ScenarioSpec(TrafficDensity.NO_TRAFFIC, 13.41, Operation.STRAIGHT)
    return Scene("toy-scene", "d000", spec, rate_hz, tracks)


@pytest.fixture
def straight_scene():
    return make_straight_scene()


@pytest.fixture(scope="session")
def mini_dataset(tmp_path_factory):
    """Three drivers x 12 scenarios, generated once per session."""
    out = tmp_path_factory.mktemp("mini_dataset")
    generate_dataset(n_drivers=3, out_dir=str(out), rng_seed=77)
    return out
