"""Lead, ego, and ambient-traffic simulation.

The lead vehicle tracks the route centerline at the scenario speed with a
trapezoidal speed profile (+-2 m/s^2) that drops to 5 m/s through turn arcs.
The ego driver follows the lead's recorded path with IDM longitudinal control
and pure-pursuit steering toward a laterally offset lookahead point; the
offset is the driver's lane-position bias plus Ornstein-Uhlenbeck noise.
Traffic vehicles run the same profile machinery on laterally offset lanes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import AgentClass, AgentTrack
from ..exceptions import SimulationDiverged
from .route import RoutePlan, ScenarioSpec, TrafficDensity, TURN_SPEED_MPS

LEAD_ACCEL = 2.0            # m/s^2, lead trapezoidal profile
VEHICLE_LENGTH_M = 4.6
EGO_LATERAL_ACCEL = 3.0     # m/s^2, comfort bound used for ego curve speeds
EGO_DESIRED_SPEED_FACTOR = 1.35
EGO_HARD_DECEL = 4.0
PURSUIT_GAIN = 0.8          # lookahead = clip(gain * v, 4, 20) meters
CURVATURE_LIMIT = 0.18      # 1/m, steering command clamp
OU_TIME_CONSTANT_S = 2.0


@dataclass(frozen=True)
class DriverParams:
    """Per-driver car-following and lane-position parameters."""

    idm_desired_gap_s: float = 1.5
    idm_max_accel: float = 2.2
    idm_comfort_decel: float = 2.0
    idm_min_spacing: float = 3.0
    lateral_offset_bias: float = 0.0
    lateral_noise_std: float = 0.2
    reaction_delay_s: float = 0.4

    def __post_init__(self):
        for name in ("idm_desired_gap_s", "idm_max_accel", "idm_comfort_decel",
                     "idm_min_spacing", "lateral_noise_std", "reaction_delay_s"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.idm_min_spacing < 2.0:
            raise ValueError("idm_min_spacing must be >= 2 m")


def sample_driver_params(rng: np.random.Generator) -> DriverParams:
    """Draw one driver: log-normal spread around defaults, signed lane bias."""
    return DriverParams(
        idm_desired_gap_s=rng.lognormal(math.log(1.5), 0.12),
        idm_max_accel=rng.lognormal(math.log(2.2), 0.12),
        idm_comfort_decel=rng.lognormal(math.log(2.0), 0.12),
        idm_min_spacing=max(2.0, rng.lognormal(math.log(3.0), 0.15)),
        lateral_offset_bias=rng.normal(0.0, 0.18),
        lateral_noise_std=rng.lognormal(math.log(0.2), 0.3),
        reaction_delay_s=float(np.clip(rng.lognormal(math.log(0.4), 0.25), 0.1, 1.0)),
    )


class _Cursor1D:
    """Piecewise-linear interpolation with an amortized O(1) moving index."""

    __slots__ = ("s", "v", "i", "n")

    def __init__(self, s, v):
        self.s = np.asarray(s, dtype=float)
        self.v = np.asarray(v, dtype=float)
        self.n = len(self.s)
        self.i = 0

    def at(self, q: float) -> float:
        s, i = self.s, self.i
        if q <= s[0]:
            self.i = 0
            return float(self.v[0])
        if q >= s[-1]:
            self.i = self.n - 2
            return float(self.v[-1])
        while s[i + 1] < q:
            i += 1
        while s[i] > q:
            i -= 1
        self.i = i
        w = (q - s[i]) / (s[i + 1] - s[i])
        return float(self.v[i] * (1.0 - w) + self.v[i + 1] * w)


class _PathCursor:
    """Point/tangent lookup along a polyline, extrapolating at both ends."""

    __slots__ = ("s", "xy", "i", "n")

    def __init__(self, s, xy):
        self.s = np.asarray(s, dtype=float)
        self.xy = np.asarray(xy, dtype=float)
        self.n = len(self.s)
        self.i = 0

    def _seg(self, q: float) -> int:
        s, i = self.s, self.i
        i = min(max(i, 0), self.n - 2)
        while i < self.n - 2 and s[i + 1] < q:
            i += 1
        while i > 0 and s[i] > q:
            i -= 1
        self.i = i
        return i

    def point(self, q: float):
        i = self._seg(q)
        seg_len = self.s[i + 1] - self.s[i]
        w = (q - self.s[i]) / seg_len  # may fall outside [0,1]: extrapolates
        return self.xy[i] * (1.0 - w) + self.xy[i + 1] * w

    def tangent(self, q: float):
        i = self._seg(q)
        d = self.xy[i + 1] - self.xy[i]
        norm = math.hypot(d[0], d[1])
        return d / norm


def _smooth_speed_profile(s, vlim, accel, decel):
    """Limit a pointwise speed ceiling to reachable accel/decel transitions."""
    v = np.asarray(vlim, dtype=float).copy()
    ds = np.diff(s)
    for i in range(1, len(v)):
        v[i] = min(v[i], math.sqrt(v[i - 1] ** 2 + 2.0 * accel * ds[i - 1]))
    for i in range(len(v) - 2, -1, -1):
        v[i] = min(v[i], math.sqrt(v[i + 1] ** 2 + 2.0 * decel * ds[i]))
    return v


def _route_speed_grid(route: RoutePlan, ds: float = 0.5):
    """Per-arc-length speed ceiling on the centerline (exact at segment edges)."""
    ss, vv = [], []
    for k, seg in enumerate(route.segments):
        n = max(2, int(math.ceil(seg.length / ds)) + 1)
        local = np.linspace(0.0, seg.length, n)
        s_abs = route.seg_start[k] + local
        v = np.full(n, route.segment_speeds[k])
        if ss:
            # shared boundary point takes the more restrictive limit
            vv[-1][-1] = min(vv[-1][-1], v[0])
            s_abs, v = s_abs[1:], v[1:]
        ss.append(s_abs)
        vv.append(v)
    return np.concatenate(ss), np.concatenate(vv)


def simulate_lead(route: RoutePlan, spec: ScenarioSpec, rate_hz: float = 60.0) -> AgentTrack:
    """Drive the lead along the route centerline; sampled at rate_hz."""
    if rate_hz <= 0:
        raise ValueError("rate_hz must be positive")
    s_grid, vlim = _route_speed_grid(route)
    prof = _smooth_speed_profile(s_grid, vlim, LEAD_ACCEL, LEAD_ACCEL)
    cur = _Cursor1D(s_grid, prof)
    dt = 1.0 / rate_hz
    s = 0.0
    positions = []
    while True:
        positions.append(route.position_at(s))
        v = cur.at(s)
        s_next = s + v * dt
        if s_next > route.total_length:
            break
        s = s_next
    xy = np.asarray(positions)
    times = np.arange(len(xy)) * dt
    return AgentTrack("lead", AgentClass.LEAD, times, xy)


def _idm_accel(v, v_des, gap, dv, p: DriverParams):
    s_star = p.idm_min_spacing + max(
        0.0,
        v * p.idm_desired_gap_s
        + v * dv / (2.0 * math.sqrt(p.idm_max_accel * p.idm_comfort_decel)),
    )
    return p.idm_max_accel * (1.0 - (v / v_des) ** 4 - (s_star / max(gap, 0.5)) ** 2)


def _equilibrium_gap(v, v_des, p: DriverParams) -> float:
    s_star = p.idm_min_spacing + v * p.idm_desired_gap_s
    return s_star / math.sqrt(max(1.0 - (v / v_des) ** 4, 1e-6))


def _path_curvature_speeds(path_s, path_xy, v_des, p: DriverParams):
    """Curve-speed ceiling along a path, resampled at ~1 m and smoothed."""
    cursor = _PathCursor(path_s, path_xy)
    total = float(path_s[-1])
    n = max(4, int(total) + 1)
    grid = np.linspace(0.0, total, n)
    pts = np.array([cursor.point(q) for q in grid])
    d = np.diff(pts, axis=0)
    heading = np.unwrap(np.arctan2(d[:, 1], d[:, 0]))
    ds = grid[1] - grid[0]
    kappa = np.abs(np.gradient(heading, ds))
    kappa = np.convolve(kappa, np.ones(3) / 3.0, mode="same")
    kappa = np.append(kappa, kappa[-1])
    with np.errstate(divide="ignore"):
        v_curve = np.sqrt(EGO_LATERAL_ACCEL / np.maximum(kappa, 1e-9))
    vlim = np.minimum(v_des, v_curve)
    return grid, _smooth_speed_profile(grid, vlim, p.idm_max_accel, p.idm_comfort_decel)


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def simulate_ego(lead: AgentTrack, driver: DriverParams, rng_seed) -> AgentTrack:
    """Simulate the human-driven ego following the lead's recorded path.

    Longitudinal: IDM on the along-path gap to the (reaction-delayed) lead.
    Lateral: pure pursuit toward a lookahead point on the lead path, shifted
    left by the driver's bias plus OU noise. Starts converged (equilibrium
    gap, lead speed) on the backward extension of the lead's first heading.

    Raises SimulationDiverged if the ego closes within 1 m of the lead.
    """
    rng = np.random.default_rng(rng_seed)
    n = len(lead)
    dt = lead.dt
    path = lead.xy
    seg = np.diff(path, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    arc = np.concatenate([[0.0], np.cumsum(seg_len)])
    v_lead = np.append(seg_len / dt, seg_len[-1] / dt)
    v_des = min(EGO_DESIRED_SPEED_FACTOR * float(v_lead.max()), 24.5)

    allow_s, allow_v = _path_curvature_speeds(arc, path, v_des, driver)
    v_allow = _Cursor1D(allow_s, allow_v)
    look = _PathCursor(arc, path)

    delay_frames = int(round(driver.reaction_delay_s / dt))
    noise = rng.standard_normal(n)
    ou_step = driver.lateral_noise_std * math.sqrt(2.0 * dt / OU_TIME_CONSTANT_S)

    d0 = seg[0] / seg_len[0]
    n0 = np.array([-d0[1], d0[0]])
    v = float(v_lead[0])
    gap0 = _equilibrium_gap(v, v_des, driver) + VEHICLE_LENGTH_M
    pos = path[0] - gap0 * d0 + driver.lateral_offset_bias * n0
    psi = math.atan2(d0[1], d0[0])
    ou = 0.0
    proj_i = 0
    out = np.empty((n, 2))

    for i in range(n):
        out[i] = pos
        # project onto the lead path (signed before the path start)
        j = proj_i
        while True:
            rel = pos - path[j]
            t = (rel[0] * seg[j][0] + rel[1] * seg[j][1]) / (seg_len[j] ** 2)
            if t > 1.0 and j < n - 2:
                j += 1
                continue
            break
        proj_i = j
        t_eff = min(t, 1.0) if j == 0 else min(max(t, 0.0), 1.0)
        s_ego = arc[j] + t_eff * seg_len[j]

        i_d = max(0, i - delay_frames)
        gap_center = arc[i_d] - s_ego  # along-path distance to the delayed lead
        lead_now = path[i]
        if gap_center < 1.0 or math.hypot(pos[0] - lead_now[0], pos[1] - lead_now[1]) < 1.0:
            raise SimulationDiverged(f"ego reached within 1 m of lead at frame {i}")

        a_idm = _idm_accel(v, v_des, gap_center - VEHICLE_LENGTH_M,
                           v - float(v_lead[i_d]), driver)
        va = max(v_allow.at(max(s_ego, 0.0)), 0.5)
        a_gov = driver.idm_max_accel * (1.0 - (v / va) ** 4)
        a = min(a_idm, a_gov)
        a = min(max(a, -EGO_HARD_DECEL), driver.idm_max_accel)
        v = max(0.0, v + a * dt)

        ou += -(ou / OU_TIME_CONSTANT_S) * dt + ou_step * noise[i]
        offset = driver.lateral_offset_bias + ou

        ld = min(max(PURSUIT_GAIN * v, 4.0), 20.0)
        s_t = s_ego + ld
        tp = look.point(s_t)
        tv = look.tangent(s_t)
        target = tp + offset * np.array([-tv[1], tv[0]])
        alpha = _wrap_angle(math.atan2(target[1] - pos[1], target[0] - pos[0]) - psi)
        kappa = min(max(2.0 * math.sin(alpha) / ld, -CURVATURE_LIMIT), CURVATURE_LIMIT)
        psi = _wrap_angle(psi + v * kappa * dt)
        pos = pos + v * dt * np.array([math.cos(psi), math.sin(psi)])

    return AgentTrack("ego", AgentClass.EGO, lead.times.copy(), out)


def simulate_traffic(route: RoutePlan, spec: ScenarioSpec, rng_seed,
                     n_frames: int | None = None, rate_hz: float = 60.0) -> list[AgentTrack]:
    """Ambient vehicles on the adjacent (same-direction) and opposing lanes.

    NO_TRAFFIC yields an empty list; WITH_TRAFFIC yields 3-6 vehicles that
    run the lane's speed profile (slowing through arcs, parking at the lane
    end). Same-lane vehicles share one profile so orderings never cross.
    """
    if spec.density is TrafficDensity.NO_TRAFFIC:
        return []
    rng = np.random.default_rng(rng_seed)
    count = int(rng.integers(3, 7))
    if n_frames is None:
        n_frames = int(round((route.total_length / spec.lead_speed_mps + 40.0) * rate_hz))
    dt = 1.0 / rate_hz
    times = np.arange(n_frames) * dt

    lanes = []
    for offset, reversed_dir in ((3.5, False), (6.5, True)):
        s, xy, kappa = route.sample_offset(offset, ds=1.0)
        if reversed_dir:
            xy = xy[::-1].copy()
            kappa = kappa[::-1].copy()
            d = np.diff(xy, axis=0)
            s = np.concatenate([[0.0], np.cumsum(np.hypot(d[:, 0], d[:, 1]))])
        lane_speed = spec.lead_speed_mps * rng.uniform(0.85, 1.1)
        with np.errstate(divide="ignore"):
            v_curve = np.sqrt(EGO_LATERAL_ACCEL / np.maximum(np.abs(kappa), 1e-9))
        vlim = np.minimum(lane_speed, v_curve)
        vlim[-1] = 0.0  # park at the lane end
        prof = _smooth_speed_profile(s, vlim, 1.5, 2.0)
        lanes.append((s, xy, prof))

    lane_of = rng.integers(0, len(lanes), size=count)
    tracks = []
    for lane_idx in range(len(lanes)):
        member = np.flatnonzero(lane_of == lane_idx)
        if member.size == 0:
            continue
        s_grid, xy, prof = lanes[lane_idx]
        total = float(s_grid[-1])
        base = np.linspace(0.05 * total, 0.7 * total, member.size)
        starts = np.sort(base + rng.uniform(-10.0, 10.0, size=member.size))
        for v_idx, s0 in zip(member, starts):
            pcur = _PathCursor(s_grid, xy)
            vcur = _Cursor1D(s_grid, prof)
            s = float(s0)
            out = np.empty((n_frames, 2))
            for f in range(n_frames):
                out[f] = pcur.point(min(s, total))
                s += vcur.at(s) * dt
            tracks.append(AgentTrack(f"other{v_idx}", AgentClass.OTHER, times.copy(), out))
    return tracks
