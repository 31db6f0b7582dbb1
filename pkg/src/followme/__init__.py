"""Lead-vehicle-following ego trajectory prediction toolkit."""

__version__ = "0.1.0"

from . import exceptions
from .core import (
    AgentClass,
    AgentTrack,
    EgoTarget,
    ObservationWindow,
    Scene,
    TrajectoryPoint,
    denormalize_prediction,
    normalize_window,
)

__all__ = [
    "exceptions",
    "AgentClass",
    "AgentTrack",
    "EgoTarget",
    "ObservationWindow",
    "Scene",
    "TrajectoryPoint",
    "denormalize_prediction",
    "normalize_window",
]
