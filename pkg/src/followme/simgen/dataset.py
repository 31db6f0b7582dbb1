"""Full synthetic dataset generation: drivers x the 12-scenario design."""

from __future__ import annotations

import os

import numpy as np

from ..core import Scene
from ..dataio import ManifestEntry, save_scene, write_manifest
from ..exceptions import DatasetWriteError, SimulationDiverged
from .route import ScenarioSpec, all_scenarios, build_route
from .vehicles import DriverParams, sample_driver_params, simulate_ego, simulate_lead, simulate_traffic

DEFAULT_N_DRIVERS = 32
MAX_SCENE_ATTEMPTS = 5


def generate_scene(spec: ScenarioSpec, driver: DriverParams, scene_id: str,
                   driver_id: str, rng_seed, rate_hz: float = 60.0) -> Scene:
    """Build one scene, retrying with fresh sub-seeds if the ego diverges."""
    base = rng_seed if isinstance(rng_seed, np.random.SeedSequence) \
        else np.random.SeedSequence(rng_seed)
    attempts = base.spawn(MAX_SCENE_ATTEMPTS)
    last_exc = None
    for attempt in attempts:
        route_ss, ego_ss, traffic_ss = attempt.spawn(3)
        route = build_route(spec, route_ss)
        lead = simulate_lead(route, spec, rate_hz=rate_hz)
        try:
            ego = simulate_ego(lead, driver, ego_ss)
        except SimulationDiverged as exc:
            last_exc = exc
            continue
        traffic = simulate_traffic(route, spec, traffic_ss, n_frames=len(lead), rate_hz=rate_hz)
        return Scene(scene_id, driver_id, spec, rate_hz, [ego, lead] + traffic)
    raise SimulationDiverged(f"scene {scene_id} failed after {MAX_SCENE_ATTEMPTS} attempts: {last_exc}")


def _generate_driver(args) -> None:
    """Worker: all 12 scenes of one driver (seeds re-derived, so picklable args)."""
    d, n_drivers, rng_seed, out_dir, rate_hz = args
    driver_id = f"d{d:03d}"
    subs = np.random.SeedSequence(rng_seed).spawn(n_drivers)[d].spawn(1 + 12)
    driver = sample_driver_params(np.random.default_rng(subs[0]))
    for j, spec in enumerate(all_scenarios()):
        scene_id = f"{driver_id}-{spec.tag}"
        scene = generate_scene(spec, driver, scene_id, driver_id, subs[1 + j], rate_hz)
        rel = os.path.join("scenes", f"{scene_id}.csv")
        try:
            save_scene(scene, os.path.join(out_dir, rel))
        except OSError as exc:
            raise DatasetWriteError(f"cannot write {rel}: {exc}") from exc


def generate_dataset(n_drivers: int = DEFAULT_N_DRIVERS, out_dir: str = ".",
                     rng_seed: int = 0, rate_hz: float = 60.0, jobs: int = 1) -> str:
    """Write n_drivers x 12 scenes plus a manifest; returns the manifest path.

    One DriverParams is sampled per driver and reused across that driver's 12
    scenarios. Generation is a pure function of (n_drivers, rng_seed): scene
    seeds form a per-driver tree, so the output is identical for any jobs
    count.
    """
    scenes_dir = os.path.join(out_dir, "scenes")
    try:
        os.makedirs(scenes_dir, exist_ok=True)
    except OSError as exc:
        raise DatasetWriteError(f"cannot create {scenes_dir}: {exc}") from exc

    tasks = [(d, n_drivers, rng_seed, out_dir, rate_hz) for d in range(n_drivers)]
    if jobs > 1 and n_drivers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(_generate_driver, tasks))
    else:
        for task in tasks:
            _generate_driver(task)

    entries = [
        ManifestEntry(os.path.join("scenes", f"d{d:03d}-{spec.tag}.csv"),
                      f"d{d:03d}", spec.density.value, spec.lead_speed_mps,
                      spec.operation.value)
        for d in range(n_drivers) for spec in all_scenarios()
    ]
    manifest_path = os.path.join(out_dir, "manifest.csv")
    try:
        write_manifest(entries, manifest_path)
    except OSError as exc:
        raise DatasetWriteError(f"cannot write manifest: {exc}") from exc
    return manifest_path
