"""Constant-velocity Kalman filter baseline for ego prediction.

State (x, y, vx, vy); continuous white-noise acceleration of intensity q is
discretized into the process noise, measurements are positions with std r.
The filter consumes the observed ego frames of a window and then propagates
open loop over the horizon, yielding position means and marginal position
covariances per step. Initialization uses the first two observations
(position + finite-difference velocity), so exactly linear inputs are
predicted exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ObservationWindow
from .exceptions import InsufficientObservation

MODEL_RATE_HZ = 10.0


@dataclass(frozen=True)
class KalmanConfig:
    process_noise_q: float = 0.5      # m^2/s^3
    measurement_noise_r: float = 0.05  # meters (std)
    dt: float = 1.0 / MODEL_RATE_HZ

    def __post_init__(self):
        if self.process_noise_q <= 0 or self.measurement_noise_r <= 0 or self.dt <= 0:
            raise ValueError("q, r and dt must be positive")


def _matrices(cfg: KalmanConfig):
    dt, q = cfg.dt, cfg.process_noise_q
    f = np.eye(4)
    f[0, 2] = f[1, 3] = dt
    qq = np.zeros((4, 4))
    q11, q12, q22 = q * dt ** 3 / 3.0, q * dt ** 2 / 2.0, q * dt
    for i in (0, 1):
        qq[i, i] = q11
        qq[i, i + 2] = qq[i + 2, i] = q12
        qq[i + 2, i + 2] = q22
    h = np.zeros((2, 4))
    h[0, 0] = h[1, 1] = 1.0
    r = np.eye(2) * cfg.measurement_noise_r ** 2
    return f, qq, h, r


def kalman_filter_series(obs: np.ndarray, cfg: KalmanConfig):
    """Filter a [2, T] position series; returns the posterior (state, cov)."""
    t = obs.shape[1]
    if obs.ndim != 2 or obs.shape[0] != 2 or t < 2:
        raise InsufficientObservation(f"need >= 2 observed frames, got shape {obs.shape}")
    f, qq, h, r = _matrices(cfg)
    dt = cfg.dt
    rv = cfg.measurement_noise_r ** 2
    x = np.array([obs[0, 1], obs[1, 1],
                  (obs[0, 1] - obs[0, 0]) / dt, (obs[1, 1] - obs[1, 0]) / dt])
    p = np.zeros((4, 4))
    for i in (0, 1):
        p[i, i] = rv
        p[i + 2, i + 2] = 2.0 * rv / dt ** 2
        p[i, i + 2] = p[i + 2, i] = rv / dt
    for k in range(2, t):
        x = f @ x
        p = f @ p @ f.T + qq
        innov = obs[:, k] - h @ x
        s = h @ p @ h.T + r
        gain = p @ h.T @ np.linalg.inv(s)
        x = x + gain @ innov
        p = (np.eye(4) - gain @ h) @ p
    return x, p


def kalman_predict(window: ObservationWindow, horizon_frames: int | None = None,
                   config: KalmanConfig | None = None):
    """Open-loop constant-velocity forecast of the ego track.

    Returns (trajectory [2, T_p], covariances [T_p, 2, 2]) in the window's
    normalized frame.
    """
    cfg = config or KalmanConfig()
    t_p = horizon_frames or window.horizon_frames
    obs = window.features[0:2, :, window.ego_index]
    x, p = kalman_filter_series(obs, cfg)
    f, qq, h, _ = _matrices(cfg)
    traj = np.empty((2, t_p))
    covs = np.empty((t_p, 2, 2))
    for k in range(t_p):
        x = f @ x
        p = f @ p @ f.T + qq
        traj[:, k] = h @ x
        covs[k] = h @ p @ h.T
    return traj, covs


class KalmanPredictor:
    """Adapter exposing the Gaussian-predictor interface used by evaluate.

    Ego occupies slot 0 of every window by the normalization convention.
    """

    def __init__(self, config: KalmanConfig | None = None):
        self.config = config or KalmanConfig()

    def predict_gaussian(self, features, masks, horizon_frames: int):
        """Forecast every window of a batch: (means [B,2,T_p], covs [B,T_p,2,2])."""
        del masks
        cfg = self.config
        b = features.shape[0]
        means = np.empty((b, 2, horizon_frames))
        covs = np.empty((b, horizon_frames, 2, 2))
        f, qq, h, _ = _matrices(cfg)
        for i in range(b):
            x, p = kalman_filter_series(features[i, 0:2, :, 0], cfg)
            for k in range(horizon_frames):
                x = f @ x
                p = f @ p @ f.T + qq
                means[i, :, k] = h @ x
                covs[i, k] = h @ p @ h.T
        return means, covs
