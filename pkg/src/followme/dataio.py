"""Scene persistence, resampling, window extraction, and driver-level splits.

Scene file format (one drive per file):
    #scene_id=<str>
    #driver_id=<str>
    #density=<NO_TRAFFIC|WITH_TRAFFIC>
    #lead_speed_mps=<13.41|17.88>
    #operation=<STRAIGHT|LEFT_TURN|RIGHT_TURN>
    #sample_rate_hz=<float>
    frame,agent_id,class,x,y          <- data rows, no column header line
Coordinates are meters with 6 decimal places; frames are contiguous integers
per agent and identical across agents.

The manifest is line-delimited CSV: path,driver_id,density,lead_speed_mps,operation.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .core import AgentClass, AgentTrack, EgoTarget, ObservationWindow, Scene, normalize_window
from .exceptions import ConfigError, MalformedScene, ParseError

MODEL_RATE_HZ = 10.0
HORIZONS_S = (3, 5, 8)

_HEADER_KEYS = ("scene_id", "driver_id", "density", "lead_speed_mps",
                "operation", "sample_rate_hz")


def save_scene(scene: Scene, path) -> None:
    """Write one scene; agents in deterministic order (ego, lead, others by id)."""
    tracks = [scene.ego_track, scene.lead_track]
    tracks += sorted(scene.other_tracks, key=lambda t: t.agent_id)
    spec = scene.scenario
    lines = [
        f"#scene_id={scene.scene_id}",
        f"#driver_id={scene.driver_id}",
        f"#density={spec.density.value}",
        f"#lead_speed_mps={spec.lead_speed_mps}",
        f"#operation={spec.operation.value}",
        f"#sample_rate_hz={scene.sample_rate_hz:g}",
    ]
    for tr in tracks:
        cls = tr.cls.value
        for frame, (x, y) in enumerate(tr.xy):
            lines.append(f"{frame},{tr.agent_id},{cls},{x:.6f},{y:.6f}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_scene(path) -> Scene:
    """Parse a scene file; raises ParseError (with line number) on bad input."""
    from .simgen.route import Operation, ScenarioSpec, TrafficDensity  # avoid import cycle

    headers: dict[str, str] = {}
    rows: dict[str, list] = {}
    order: list[str] = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if rows:
                    raise ParseError(f"{path}:{lineno}: header after data rows")
                if "=" not in line:
                    raise ParseError(f"{path}:{lineno}: malformed header {line!r}")
                key, value = line[1:].split("=", 1)
                headers[key.strip()] = value.strip()
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise ParseError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
            try:
                frame = int(parts[0])
                x, y = float(parts[3]), float(parts[4])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            agent_id, cls_name = parts[1], parts[2]
            if cls_name not in ("ego", "lead", "other"):
                raise ParseError(f"{path}:{lineno}: unknown class {cls_name!r}")
            if agent_id not in rows:
                rows[agent_id] = []
                order.append(agent_id)
            prev = rows[agent_id]
            if prev and frame != prev[-1][0] + 1:
                raise ParseError(f"{path}:{lineno}: frames of {agent_id!r} not contiguous")
            prev.append((frame, cls_name, x, y))

    missing = [k for k in _HEADER_KEYS if k not in headers]
    if missing:
        raise ParseError(f"{path}: missing header keys {missing}")
    if not rows:
        raise ParseError(f"{path}: no data rows")
    try:
        rate = float(headers["sample_rate_hz"])
        spec = ScenarioSpec(TrafficDensity(headers["density"]),
                            float(headers["lead_speed_mps"]),
                            Operation(headers["operation"]))
    except ValueError as exc:
        raise ParseError(f"{path}: bad header value: {exc}") from None

    tracks = []
    for agent_id in order:
        recs = rows[agent_id]
        cls = AgentClass(recs[0][1])
        times = np.array([r[0] for r in recs], dtype=float) / rate
        xy = np.array([(r[2], r[3]) for r in recs])
        try:
            tracks.append(AgentTrack(agent_id, cls, times, xy))
        except MalformedScene as exc:
            raise ParseError(f"{path}: {exc}") from None
    try:
        return Scene(headers["scene_id"], headers["driver_id"], spec, rate, tracks)
    except MalformedScene as exc:
        raise ParseError(f"{path}: {exc}") from None


def resample(scene: Scene, target_hz: float = MODEL_RATE_HZ) -> Scene:
    """Linear-interpolate every track onto a uniform target_hz grid."""
    if target_hz <= 0:
        raise ConfigError(f"target_hz must be positive, got {target_hz}")
    t0 = float(scene.times[0])
    span = float(scene.times[-1]) - t0
    m = int(math.floor(span * target_hz + 1e-9)) + 1
    new_t = t0 + np.arange(m) / target_hz
    tracks = []
    for tr in scene.tracks:
        x = np.interp(new_t, tr.times, tr.xy[:, 0])
        y = np.interp(new_t, tr.times, tr.xy[:, 1])
        tracks.append(AgentTrack(tr.agent_id, tr.cls, new_t, np.stack([x, y], axis=1)))
    return Scene(scene.scene_id, scene.driver_id, scene.scenario, target_hz, tracks)


def extract_windows(scene: Scene, horizon_s: int, stride_frames: int,
                    n_max: int = 8) -> list[tuple[ObservationWindow, EgoTarget]]:
    """Sliding ego-anchored windows: 1 s observed, horizon_s predicted.

    The scene must already be at the model rate. Scenes shorter than one
    window yield an empty list.
    """
    if horizon_s not in HORIZONS_S:
        raise ConfigError(f"horizon_s must be one of {HORIZONS_S}, got {horizon_s}")
    if stride_frames < 1:
        raise ConfigError("stride_frames must be >= 1")
    t_obs = int(round(scene.sample_rate_hz))
    t_pred = int(round(scene.sample_rate_hz * horizon_s))
    out = []
    obs_end = t_obs - 1
    while obs_end + t_pred <= scene.n_frames - 1:
        out.append(normalize_window(scene, obs_end, t_pred, n_max=n_max))
        obs_end += stride_frames
    return out


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    driver_id: str
    density: str
    lead_speed_mps: float
    operation: str


def write_manifest(entries: list[ManifestEntry], path) -> None:
    with open(path, "w") as fh:
        for e in entries:
            fh.write(f"{e.path},{e.driver_id},{e.density},{e.lead_speed_mps},{e.operation}\n")


def read_manifest(path) -> list[ManifestEntry]:
    entries = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise ParseError(f"{path}:{lineno}: expected 5 manifest fields")
            entries.append(ManifestEntry(parts[0], parts[1], parts[2], float(parts[3]), parts[4]))
    return entries


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint driver-id sets for train/val/test."""

    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]

    def __post_init__(self):
        groups = [set(self.train), set(self.val), set(self.test)]
        if sum(len(g) for g in groups) != len(set().union(*groups)):
            raise ConfigError("split driver sets must be disjoint")

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"train": list(self.train), "val": list(self.val),
                       "test": list(self.test)}, fh, indent=0, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "SplitSpec":
        with open(path) as fh:
            d = json.load(fh)
        return cls(tuple(d["train"]), tuple(d["val"]), tuple(d["test"]))


def split_by_driver(manifest: list[ManifestEntry], ratios=(0.7, 0.1, 0.2),
                    rng_seed: int = 0) -> SplitSpec:
    """Shuffle drivers deterministically, partition floor(train)/floor(val)/rest."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios}")
    drivers = sorted({e.driver_id for e in manifest})
    if len(drivers) < 3:
        raise ConfigError(f"need >= 3 drivers to split, got {len(drivers)}")
    rng = np.random.default_rng(rng_seed)
    perm = [drivers[i] for i in rng.permutation(len(drivers))]
    n_train = int(math.floor(ratios[0] * len(drivers)))
    n_val = int(math.floor(ratios[1] * len(drivers)))
    return SplitSpec(tuple(perm[:n_train]),
                     tuple(perm[n_train:n_train + n_val]),
                     tuple(perm[n_train + n_val:]))


class WindowSet:
    """Batched window arrays plus per-window scene metadata.

    The workhorse container produced by `prepare` and consumed by training
    and evaluation. Arrays: features [K,5,T_o,N], masks [K,N] bool, targets
    [K,2,T_p], origins [K,2]. Every window has ego at slot 0 and lead at 1.
    """

    def __init__(self, features, masks, targets, origins, scene_ids, driver_ids,
                 operations, densities, horizon_s, rate_hz=MODEL_RATE_HZ):
        self.features = np.asarray(features, dtype=np.float64)
        self.masks = np.asarray(masks, dtype=bool)
        self.targets = np.asarray(targets, dtype=np.float64)
        self.origins = np.asarray(origins, dtype=np.float64)
        self.scene_ids = list(scene_ids)
        self.driver_ids = list(driver_ids)
        self.operations = list(operations)
        self.densities = list(densities)
        self.horizon_s = int(horizon_s)
        self.rate_hz = float(rate_hz)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def t_obs(self) -> int:
        return self.features.shape[2]

    @property
    def t_pred(self) -> int:
        return self.targets.shape[2]

    def window(self, i: int) -> tuple[ObservationWindow, EgoTarget]:
        w = ObservationWindow(features=self.features[i].copy(), mask=self.masks[i].copy(),
                              ego_index=0, lead_index=1,
                              origin=(float(self.origins[i, 0]), float(self.origins[i, 1])),
                              horizon_frames=self.t_pred)
        return w, EgoTarget(positions=self.targets[i].copy())

    def subset(self, indices) -> "WindowSet":
        idx = np.asarray(indices, dtype=int)
        return WindowSet(self.features[idx], self.masks[idx], self.targets[idx],
                         self.origins[idx],
                         [self.scene_ids[i] for i in idx],
                         [self.driver_ids[i] for i in idx],
                         [self.operations[i] for i in idx],
                         [self.densities[i] for i in idx],
                         self.horizon_s, self.rate_hz)

    def save(self, path) -> None:
        np.savez_compressed(
            path, features=self.features, masks=self.masks, targets=self.targets,
            origins=self.origins, scene_ids=np.array(self.scene_ids),
            driver_ids=np.array(self.driver_ids), operations=np.array(self.operations),
            densities=np.array(self.densities),
            meta=np.array([self.horizon_s, self.rate_hz]))

    @classmethod
    def load(cls, path) -> "WindowSet":
        with np.load(path, allow_pickle=False) as z:
            return cls(z["features"], z["masks"], z["targets"], z["origins"],
                       [str(s) for s in z["scene_ids"]], [str(s) for s in z["driver_ids"]],
                       [str(s) for s in z["operations"]], [str(s) for s in z["densities"]],
                       int(z["meta"][0]), float(z["meta"][1]))


def build_window_set(scenes: list[Scene], horizon_s: int, stride_frames: int,
                     n_max: int = 8) -> WindowSet:
    """Extract and stack windows from already-resampled scenes."""
    feats, masks, targets, origins = [], [], [], []
    sids, dids, operations, densities = [], [], [], []
    rate = scenes[0].sample_rate_hz if scenes else MODEL_RATE_HZ
    for scene in scenes:
        for win, tgt in extract_windows(scene, horizon_s, stride_frames, n_max=n_max):
            feats.append(win.features)
            masks.append(win.mask)
            targets.append(tgt.positions)
            origins.append(win.origin)
            sids.append(scene.scene_id)
            dids.append(scene.driver_id)
            operations.append(scene.scenario.operation.value)
            densities.append(scene.scenario.density.value)
    k = len(feats)
    t_obs = int(round(rate))
    t_pred = int(round(rate * horizon_s))
    if k == 0:
        return WindowSet(np.zeros((0, 5, t_obs, n_max)), np.zeros((0, n_max), dtype=bool),
                         np.zeros((0, 2, t_pred)), np.zeros((0, 2)), [], [], [], [],
                         horizon_s, rate)
    return WindowSet(np.stack(feats), np.stack(masks), np.stack(targets),
                     np.array(origins), sids, dids, operations, densities, horizon_s, rate)


def prepare_dataset(data_dir, out_dir, horizon_s: int, rate_hz: float = MODEL_RATE_HZ,
                    stride_frames: int = 10, ratios=(0.7, 0.1, 0.2), rng_seed: int = 0,
                    n_max: int = 8) -> dict:
    """Full preparation pipeline: load manifest scenes, resample, window, split.

    Writes train/val/test WindowSet files plus split.json and meta.json into
    out_dir and returns a summary dict.
    """
    manifest = read_manifest(os.path.join(data_dir, "manifest.csv"))
    split = split_by_driver(manifest, ratios=ratios, rng_seed=rng_seed)
    os.makedirs(out_dir, exist_ok=True)
    by_split = {"train": [], "val": [], "test": []}
    member = {d: "train" for d in split.train}
    member.update({d: "val" for d in split.val})
    member.update({d: "test" for d in split.test})
    for entry in manifest:
        scene = load_scene(os.path.join(data_dir, entry.path))
        scene = resample(scene, rate_hz)
        by_split[member[scene.driver_id]].append(scene)
    summary = {"horizon_s": horizon_s, "rate_hz": rate_hz, "stride_frames": stride_frames,
               "n_max": n_max, "counts": {}}
    for name, scenes in by_split.items():
        ws = build_window_set(scenes, horizon_s, stride_frames, n_max=n_max)
        ws.save(os.path.join(out_dir, f"{name}.npz"))
        summary["counts"][name] = len(ws)
    split.save(os.path.join(out_dir, "split.json"))
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary
