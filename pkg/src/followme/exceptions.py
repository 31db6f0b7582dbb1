"""Exception types shared across the package."""


class FollowMeError(Exception):
    """Base class for all package errors."""


class ShapeError(FollowMeError):
    """An array argument does not match its contracted shape."""


class MalformedScene(FollowMeError):
    """A scene violates structural invariants (missing ego/lead, ragged tracks)."""


class WindowOutOfRange(FollowMeError):
    """Requested observation/prediction window is not covered by the scene."""


class ParseError(FollowMeError):
    """A scene file could not be parsed; message carries the line number."""


class ConfigError(FollowMeError):
    """Invalid configuration value."""


class SimulationDiverged(FollowMeError):
    """Ego simulation produced a collision or unphysical state; retry with a new seed."""


class DatasetWriteError(FollowMeError):
    """Failed to write generated scenes or the manifest."""


class TrainingDiverged(FollowMeError):
    """Loss became non-finite during training."""


class EmptySplit(FollowMeError):
    """An operation requiring windows received an empty split."""


class NumericalError(FollowMeError):
    """A numerical routine failed despite regularization (singular covariance)."""


class InsufficientObservation(FollowMeError):
    """Too few observed frames to initialize a predictor."""


class PlotWriteError(FollowMeError):
    """Failed to write a plot image."""
