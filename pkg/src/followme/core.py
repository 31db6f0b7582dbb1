"""Domain types and coordinate conventions shared by every other module.

Conventions:
- Positions are meters in a fixed world frame; time is seconds.
- A model window is ego-anchored: all coordinates are translated so the ego
  vehicle's last observed position sits at the origin. No rotation is applied.
- Window feature layout is [F=5, T, N] with channels (x, y, onehot_ego,
  onehot_lead, onehot_other). Agent slot 0 is always ego, slot 1 always lead,
  remaining slots hold OTHER agents nearest-first, zero-padded up to n_max.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional

import numpy as np

from .exceptions import MalformedScene, ShapeError, WindowOutOfRange

if TYPE_CHECKING:
    from .simgen import ScenarioSpec

N_FEATURES = 5  # x, y, one-hot class of width 3
N_CLASSES = 3
DT_TOLERANCE = 1e-6


class AgentClass(enum.Enum):
    EGO = "ego"
    LEAD = "lead"
    OTHER = "other"


@dataclass(frozen=True)
class TrajectoryPoint:
    t: float
    x: float
    y: float


class AgentTrack:
    """A uniformly sampled 2D trajectory for one agent.

    Stored as numpy arrays for efficiency; `points` materializes the
    point-list view. Construction validates: at least two points, strictly
    increasing timestamps, uniform sampling interval (within 1e-6 s) and
    finite coordinates.
    """

    __slots__ = ("agent_id", "cls", "times", "xy")

    def __init__(self, agent_id: str, cls: AgentClass, times, xy):
        times = np.asarray(times, dtype=np.float64)
        xy = np.asarray(xy, dtype=np.float64)
        if times.ndim != 1 or xy.shape != (times.shape[0], 2):
            raise ShapeError(f"track arrays must be [T] and [T,2], got {times.shape}, {xy.shape}")
        if times.shape[0] < 2:
            raise MalformedScene(f"track {agent_id!r} needs >= 2 points")
        if not np.all(np.isfinite(times)) or not np.all(np.isfinite(xy)):
            raise MalformedScene(f"track {agent_id!r} has non-finite values")
        if times[0] < 0:
            raise MalformedScene(f"track {agent_id!r} has negative start time")
        dts = np.diff(times)
        if np.any(dts <= 0):
            raise MalformedScene(f"track {agent_id!r} timestamps not strictly increasing")
        if np.max(np.abs(dts - dts.mean())) > DT_TOLERANCE:
            raise MalformedScene(f"track {agent_id!r} sampling interval not uniform")
        self.agent_id = agent_id
        self.cls = cls
        self.times = times
        self.xy = xy
        self.times.setflags(write=False)
        self.xy.setflags(write=False)

    @classmethod
    def from_points(cls, agent_id: str, agent_cls: AgentClass, points) -> "AgentTrack":
        pts = list(points)
        times = [p.t for p in pts]
        xy = [(p.x, p.y) for p in pts]
        return cls(agent_id, agent_cls, times, xy)

    @property
    def points(self) -> list[TrajectoryPoint]:
        return [TrajectoryPoint(float(t), float(x), float(y))
                for t, (x, y) in zip(self.times, self.xy)]

    @property
    def dt(self) -> float:
        return float(np.mean(np.diff(self.times)))

    def __len__(self) -> int:
        return int(self.times.shape[0])

    def __repr__(self) -> str:
        return f"AgentTrack({self.agent_id!r}, {self.cls.value}, {len(self)} pts)"


class Scene:
    """One drive: ego, lead, and other-vehicle tracks on a shared time grid."""

    __slots__ = ("scene_id", "driver_id", "scenario", "sample_rate_hz", "tracks")

    def __init__(self, scene_id: str, driver_id: str, scenario: Optional["ScenarioSpec"],
                 sample_rate_hz: float, tracks: list[AgentTrack]):
        if sample_rate_hz <= 0:
            raise MalformedScene(f"sample rate must be positive, got {sample_rate_hz}")
        n_ego = sum(1 for t in tracks if t.cls is AgentClass.EGO)
        n_lead = sum(1 for t in tracks if t.cls is AgentClass.LEAD)
        if n_ego != 1 or n_lead != 1:
            raise MalformedScene(f"scene {scene_id!r} needs exactly one ego and one lead track "
                                 f"(got {n_ego} ego, {n_lead} lead)")
        ref = tracks[0].times
        dt = 1.0 / sample_rate_hz
        for tr in tracks:
            if len(tr) != len(tracks[0]) or np.max(np.abs(tr.times - ref)) > DT_TOLERANCE:
                raise MalformedScene(f"track {tr.agent_id!r} does not share the scene time grid")
            if abs(tr.dt - dt) > DT_TOLERANCE:
                raise MalformedScene(f"track {tr.agent_id!r} rate differs from scene rate")
        self.scene_id = scene_id
        self.driver_id = driver_id
        self.scenario = scenario
        self.sample_rate_hz = float(sample_rate_hz)
        self.tracks = list(tracks)

    @property
    def n_frames(self) -> int:
        return len(self.tracks[0])

    @property
    def times(self) -> np.ndarray:
        return self.tracks[0].times

    @property
    def ego_track(self) -> AgentTrack:
        return next(t for t in self.tracks if t.cls is AgentClass.EGO)

    @property
    def lead_track(self) -> AgentTrack:
        return next(t for t in self.tracks if t.cls is AgentClass.LEAD)

    @property
    def other_tracks(self) -> list[AgentTrack]:
        return [t for t in self.tracks if t.cls is AgentClass.OTHER]

    def __repr__(self) -> str:
        return (f"Scene({self.scene_id!r}, driver={self.driver_id!r}, "
                f"{len(self.tracks)} tracks x {self.n_frames} frames @ {self.sample_rate_hz} Hz)")


_CLASS_CHANNEL = {AgentClass.EGO: 2, AgentClass.LEAD: 3, AgentClass.OTHER: 4}


@dataclass(frozen=True)
class ObservationWindow:
    """Normalized model input: [5, T_o, N] features plus agent validity mask."""

    features: np.ndarray
    mask: np.ndarray
    ego_index: int
    lead_index: int
    origin: tuple[float, float]
    horizon_frames: int

    def __post_init__(self):
        f, m = self.features, self.mask
        if f.ndim != 3 or f.shape[0] != N_FEATURES:
            raise ShapeError(f"features must be [5, T_o, N], got {f.shape}")
        if m.shape != (f.shape[2],) or m.dtype != np.bool_:
            raise ShapeError(f"mask must be bool [N={f.shape[2]}], got {m.shape} {m.dtype}")
        if not np.all(np.isfinite(f)):
            raise ShapeError("window features contain non-finite values")
        if self.ego_index == self.lead_index:
            raise MalformedScene("ego and lead cannot share an agent slot")
        if not (m[self.ego_index] and m[self.lead_index]):
            raise MalformedScene("ego and lead slots must be valid")
        if np.max(np.abs(f[0:2, -1, self.ego_index])) > 1e-9:
            raise MalformedScene("ego last observed position must be the origin")
        onehot = f[2:, :, m]
        if np.max(np.abs(onehot.sum(axis=0) - 1.0)) > 1e-9:
            raise MalformedScene("one-hot class channels of valid agents must sum to 1")
        if np.any(f[:, :, ~m] != 0.0):
            raise MalformedScene("padded agent slots must carry zero features")
        self.features.setflags(write=False)
        self.mask.setflags(write=False)

    @property
    def t_obs(self) -> int:
        return int(self.features.shape[1])

    @property
    def n_agents(self) -> int:
        return int(self.features.shape[2])

    @property
    def n_valid(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class EgoTarget:
    """Ground-truth ego future, [2, T_p], in the window's normalized frame."""

    positions: np.ndarray

    def __post_init__(self):
        if self.positions.ndim != 2 or self.positions.shape[0] != 2:
            raise ShapeError(f"target must be [2, T_p], got {self.positions.shape}")
        if not np.all(np.isfinite(self.positions)):
            raise ShapeError("target contains non-finite values")
        self.positions.setflags(write=False)

    @property
    def horizon_frames(self) -> int:
        return int(self.positions.shape[1])


def normalize_window(scene: Scene, obs_end_frame: int, horizon_frames: int,
                     n_max: int = 8, obs_frames: int | None = None
                     ) -> tuple[ObservationWindow, EgoTarget]:
    """Cut one ego-anchored window out of a scene.

    Observation covers frames [obs_end_frame - obs_frames + 1, obs_end_frame];
    the target covers the next horizon_frames. obs_frames defaults to one
    second at the scene rate. All coordinates are translated so the ego's
    last observed position lands at (0, 0); excess OTHER agents beyond n_max
    are dropped farthest-from-ego first; remaining slots are zero-padded.
    """
    if obs_frames is None:
        obs_frames = int(round(scene.sample_rate_hz))
    if obs_frames < 1 or horizon_frames < 1:
        raise WindowOutOfRange("obs_frames and horizon_frames must be >= 1")
    start = obs_end_frame - obs_frames + 1
    end = obs_end_frame + horizon_frames
    if start < 0 or end > scene.n_frames - 1:
        raise WindowOutOfRange(
            f"window frames [{start}, {end}] not covered by scene of {scene.n_frames} frames")
    if n_max < 2:
        raise MalformedScene("n_max must admit at least ego and lead")

    ego = scene.ego_track
    lead = scene.lead_track
    origin = ego.xy[obs_end_frame].copy()

    others = scene.other_tracks
    ds = [float(np.hypot(*(tr.xy[obs_end_frame] - origin))) for tr in others]
    order = sorted(range(len(others)), key=lambda i: (ds[i], i))
    kept = [ego, lead] + [others[i] for i in order[: n_max - 2]]

    obs_slice = slice(start, obs_end_frame + 1)
    features = np.zeros((N_FEATURES, obs_frames, n_max))
    mask = np.zeros(n_max, dtype=bool)
    for slot, tr in enumerate(kept):
        features[0:2, :, slot] = (tr.xy[obs_slice] - origin).T
        features[_CLASS_CHANNEL[tr.cls], :, slot] = 1.0
        mask[slot] = True

    target = (ego.xy[obs_end_frame + 1 : end + 1] - origin).T
    window = ObservationWindow(features=features, mask=mask, ego_index=0, lead_index=1,
                               origin=(float(origin[0]), float(origin[1])),
                               horizon_frames=horizon_frames)
    return window, EgoTarget(positions=target)


def denormalize_prediction(pred: np.ndarray, origin: tuple[float, float]) -> np.ndarray:
    """Map a [2, T_p] prediction from the window frame back to world coordinates."""
    pred = np.asarray(pred, dtype=np.float64)
    if pred.ndim != 2 or pred.shape[0] != 2:
        raise ShapeError(f"prediction must be [2, T_p], got {pred.shape}")
    off = np.asarray(origin, dtype=np.float64)
    if off.shape != (2,):
        raise ShapeError(f"origin must be a pair, got {off.shape}")
    return pred + off[:, None]
