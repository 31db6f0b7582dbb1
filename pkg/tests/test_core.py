import numpy as np
import pytest

from followme.core import (AgentClass, AgentTrack, ObservationWindow, Scene,
                           denormalize_prediction, normalize_window)
from followme.exceptions import MalformedScene, ShapeError, WindowOutOfRange
from conftest import make_straight_scene


def _stationary_scene(x=100.0, y=50.0):
    times = np.arange(60) / 10.0
    ego = AgentTrack("ego", AgentClass.EGO, times, np.tile([x, y], (60, 1)))
    lead_xy = np.stack([x + 25.0 + 12.0 * times, np.full(60, y)], axis=1)
    lead = AgentTrack("lead", AgentClass.LEAD, times, lead_xy)
    return Scene("s", "d0", None, 10.0, [ego, lead])


def test_stationary_ego_lands_at_origin():
    window, _ = normalize_window(_stationary_scene(), obs_end_frame=9, horizon_frames=30)
    assert np.all(window.features[0:2, -1, window.ego_index] == 0.0)
    assert window.origin == (100.0, 50.0)


def test_mask_counts_two_agents():
    window, _ = normalize_window(_stationary_scene(), 9, 30, n_max=8)
    assert window.mask.sum() == 2
    assert window.mask[window.ego_index] and window.mask[window.lead_index]
    assert window.ego_index != window.lead_index


def test_translation_equivariance_bit_identical():
    """Shifting the whole scene moves only the origin; features are bit-equal.

    The base coordinates are multiples of 2^-10 so +7/-3 incur no rounding.
    """
    rng = np.random.default_rng(0)
    times = np.arange(50) / 10.0
    def grid(vals):
        return np.round(vals * 1024.0) / 1024.0
    tracks = []
    for aid, cls, off in (("ego", AgentClass.EGO, 0.0), ("lead", AgentClass.LEAD, 30.0),
                          ("o1", AgentClass.OTHER, -15.0)):
        xy = grid(np.stack([off + 11.0 * times + rng.standard_normal(50) * 0.3,
                            rng.standard_normal(50) * 0.5], axis=1))
        tracks.append(AgentTrack(aid, cls, times, xy))
    scene = Scene("s", "d0", None, 10.0, tracks)
    shifted = Scene("s", "d0", None, 10.0, [
        AgentTrack(t.agent_id, t.cls, t.times, t.xy + np.array([7.0, -3.0]))
        for t in scene.tracks])
    w0, t0 = normalize_window(scene, 9, 30)
    w1, t1 = normalize_window(shifted, 9, 30)
    assert np.array_equal(w0.features, w1.features)
    assert np.array_equal(t0.positions, t1.positions)
    assert w1.origin == (w0.origin[0] + 7.0, w0.origin[1] - 3.0)


def test_farthest_other_agents_dropped_first():
    times = np.arange(60) / 10.0
    tracks = [
        AgentTrack("ego", AgentClass.EGO, times, np.tile([0.0, 0.0], (60, 1))),
        AgentTrack("lead", AgentClass.LEAD, times, np.tile([20.0, 0.0], (60, 1))),
    ]
    for i, dist in enumerate([5.0, 50.0, 12.0, 90.0]):
        tracks.append(AgentTrack(f"o{i}", AgentClass.OTHER, times,
                                 np.tile([0.0, dist], (60, 1))))
    scene = Scene("s", "d0", None, 10.0, tracks)
    window, _ = normalize_window(scene, 9, 30, n_max=4)
    # slots: ego, lead, then the two nearest others (5 m and 12 m)
    assert window.mask.sum() == 4
    kept_y = sorted(window.features[1, -1, 2:4])
    assert kept_y == [5.0, 12.0]


def test_window_out_of_range_and_malformed():
    scene = _stationary_scene()
    with pytest.raises(WindowOutOfRange):
        normalize_window(scene, 5, 30)          # not enough history
    with pytest.raises(WindowOutOfRange):
        normalize_window(scene, 9, 51)          # not enough future
    times = np.arange(60) / 10.0
    with pytest.raises(MalformedScene):
        Scene("s", "d0", None, 10.0,
              [AgentTrack("ego", AgentClass.EGO, times, np.tile([0.0, 0.0], (60, 1)))])


def test_denormalize_examples():
    pred = np.zeros((2, 30))
    out = denormalize_prediction(pred, (5.0, 5.0))
    assert np.all(out[0] == 5.0) and np.all(out[1] == 5.0)
    assert np.array_equal(denormalize_prediction(pred, (0.0, 0.0)), pred)
    with pytest.raises(ShapeError):
        denormalize_prediction(np.zeros((3, 30)), (0.0, 0.0))


def test_denormalize_inverts_normalize():
    scene = make_straight_scene()
    window, target = normalize_window(scene, 9, 30)
    world = denormalize_prediction(target.positions, window.origin)
    gt = scene.ego_track.xy[10:40].T
    assert np.max(np.abs(world - gt)) < 1e-9


def test_track_invariants():
    with pytest.raises(MalformedScene):
        AgentTrack("a", AgentClass.OTHER, [0.0], [(0.0, 0.0)])              # < 2 points
    with pytest.raises(MalformedScene):
        AgentTrack("a", AgentClass.OTHER, [0.0, 0.0], [(0, 0), (1, 1)])     # not increasing
    with pytest.raises(MalformedScene):
        AgentTrack("a", AgentClass.OTHER, [0.0, 0.1, 0.3], np.zeros((3, 2)))  # non-uniform
    with pytest.raises(MalformedScene):
        AgentTrack("a", AgentClass.OTHER, [0.0, 0.1], [(np.nan, 0), (1, 1)])


def test_window_validation_rules():
    feats = np.zeros((5, 10, 4))
    feats[2, :, 0] = 1.0
    feats[3, :, 1] = 1.0
    mask = np.array([True, True, False, False])
    ObservationWindow(features=feats, mask=mask, ego_index=0, lead_index=1,
                      origin=(0.0, 0.0), horizon_frames=30)
    bad = feats.copy()
    bad[0, -1, 0] = 1.0   # ego not at origin
    with pytest.raises(MalformedScene):
        ObservationWindow(features=bad, mask=mask, ego_index=0, lead_index=1,
                          origin=(0.0, 0.0), horizon_frames=30)
    with pytest.raises(MalformedScene):
        ObservationWindow(features=feats, mask=np.array([True, False, False, False]),
                          ego_index=0, lead_index=1, origin=(0.0, 0.0), horizon_frames=30)
