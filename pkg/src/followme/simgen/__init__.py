"""Synthetic lead-following scenario generation."""

from .route import (
    IntersectionMarker,
    LEAD_SPEEDS_MPS,
    Operation,
    RoutePlan,
    ScenarioSpec,
    TrafficDensity,
    TURN_SPEED_MPS,
    all_scenarios,
    build_route,
    scenario_from_tag,
)
from .vehicles import (
    DriverParams,
    sample_driver_params,
    simulate_ego,
    simulate_lead,
    simulate_traffic,
)
from .dataset import DEFAULT_N_DRIVERS, generate_dataset, generate_scene

__all__ = [
    "IntersectionMarker",
    "LEAD_SPEEDS_MPS",
    "Operation",
    "RoutePlan",
    "ScenarioSpec",
    "TrafficDensity",
    "TURN_SPEED_MPS",
    "all_scenarios",
    "build_route",
    "scenario_from_tag",
    "DriverParams",
    "sample_driver_params",
    "simulate_ego",
    "simulate_lead",
    "simulate_traffic",
    "DEFAULT_N_DRIVERS",
    "generate_dataset",
    "generate_scene",
]
