"""Scenario definitions and route geometry.

Routes live on a suburban two-lane grid: long straight blocks joined by five
unsignalized intersections, three passed straight through, one left turn and
one right turn (every drive contains both turns; the scenario's operation
field marks which intersection is the evaluated one). Turns are circular
arcs; everything is parametrized by arc length so vehicles can be driven
along the centerline or along laterally offset lanes.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

LEAD_SPEEDS_MPS = (13.41, 17.88)  # 30 and 40 mph
TURN_SPEED_MPS = 5.0
TURN_RADIUS_RANGE = (8.0, 15.0)
BLOCK_LENGTH_RANGE = (250.0, 450.0)


class TrafficDensity(enum.Enum):
    NO_TRAFFIC = "NO_TRAFFIC"
    WITH_TRAFFIC = "WITH_TRAFFIC"


class Operation(enum.Enum):
    STRAIGHT = "STRAIGHT"
    LEFT_TURN = "LEFT_TURN"
    RIGHT_TURN = "RIGHT_TURN"


@dataclass(frozen=True)
class ScenarioSpec:
    """One cell of the 2 (density) x 2 (speed) x 3 (operation) design."""

    density: TrafficDensity
    lead_speed_mps: float
    operation: Operation

    def __post_init__(self):
        if self.lead_speed_mps not in LEAD_SPEEDS_MPS:
            raise ValueError(f"lead speed must be one of {LEAD_SPEEDS_MPS}, got {self.lead_speed_mps}")

    @property
    def tag(self) -> str:
        dens = "nt" if self.density is TrafficDensity.NO_TRAFFIC else "wt"
        speed = f"{int(round(self.lead_speed_mps / 0.44704))}"
        op = {"STRAIGHT": "st", "LEFT_TURN": "lt", "RIGHT_TURN": "rt"}[self.operation.value]
        return f"{dens}{speed}{op}"


def all_scenarios() -> list[ScenarioSpec]:
    """The full factorial design, in a fixed deterministic order (12 specs)."""
    return [
        ScenarioSpec(density, speed, op)
        for density in (TrafficDensity.NO_TRAFFIC, TrafficDensity.WITH_TRAFFIC)
        for speed in LEAD_SPEEDS_MPS
        for op in (Operation.STRAIGHT, Operation.LEFT_TURN, Operation.RIGHT_TURN)
    ]


def scenario_from_tag(tag: str) -> ScenarioSpec:
    for spec in all_scenarios():
        if spec.tag == tag:
            return spec
    raise ValueError(f"unknown scenario tag {tag!r}")


class _Straight:
    __slots__ = ("p0", "dirv", "length")

    def __init__(self, p0, p1):
        p0 = np.asarray(p0, dtype=float)
        p1 = np.asarray(p1, dtype=float)
        d = p1 - p0
        self.length = float(np.hypot(d[0], d[1]))
        self.p0 = p0
        self.dirv = d / self.length

    curvature = 0.0

    def point(self, s):
        return self.p0 + np.multiply.outer(np.asarray(s, dtype=float), self.dirv)

    def tangent(self, s):
        s = np.asarray(s, dtype=float)
        return np.broadcast_to(self.dirv, s.shape + (2,)).copy()


class _Arc:
    """Circular arc; dang > 0 turns left (ccw), < 0 turns right."""

    __slots__ = ("center", "radius", "ang0", "dang", "length", "curvature")

    def __init__(self, center, radius, ang0, dang):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.ang0 = float(ang0)
        self.dang = float(dang)
        self.length = self.radius * abs(self.dang)
        self.curvature = math.copysign(1.0 / self.radius, self.dang)

    def _angle(self, s):
        return self.ang0 + np.sign(self.dang) * np.asarray(s, dtype=float) / self.radius

    def point(self, s):
        a = self._angle(s)
        return self.center + self.radius * np.stack([np.cos(a), np.sin(a)], axis=-1)

    def tangent(self, s):
        a = self._angle(s)
        sgn = np.sign(self.dang)
        return np.stack([-sgn * np.sin(a), sgn * np.cos(a)], axis=-1)


@dataclass(frozen=True)
class IntersectionMarker:
    s: float                 # arc length along the route
    position: tuple[float, float]
    operation: Operation
    evaluated: bool


class RoutePlan:
    """A sequence of straight and arc segments with intersection markers."""

    def __init__(self, segments, markers, cruise_speed_mps: float):
        self.segments = list(segments)
        self.markers = list(markers)
        self.cruise_speed_mps = float(cruise_speed_mps)
        lengths = np.array([seg.length for seg in self.segments])
        self.seg_start = np.concatenate([[0.0], np.cumsum(lengths)])
        self.total_length = float(self.seg_start[-1])
        self.segment_speeds = [
            TURN_SPEED_MPS if isinstance(seg, _Arc) else self.cruise_speed_mps
            for seg in self.segments
        ]

    @property
    def waypoints(self) -> np.ndarray:
        """Densified route polyline (straight endpoints, arcs at <= 2 deg steps)."""
        pts = []
        for seg in self.segments:
            if isinstance(seg, _Straight):
                local = np.array([0.0, seg.length])
            else:
                n = max(2, int(math.ceil(abs(seg.dang) / math.radians(2.0))) + 1)
                local = np.linspace(0.0, seg.length, n)
            p = seg.point(local)
            if pts:
                p = p[1:]  # segment start duplicates previous end
            pts.append(p)
        return np.concatenate(pts, axis=0)

    def _locate(self, s: float) -> tuple[int, float]:
        idx = int(np.searchsorted(self.seg_start, s, side="right")) - 1
        idx = min(max(idx, 0), len(self.segments) - 1)
        return idx, s - self.seg_start[idx]

    def position_at(self, s: float) -> np.ndarray:
        """Centerline position; extrapolates linearly beyond either end."""
        if s < 0.0:
            seg = self.segments[0]
            return seg.point(0.0) + s * seg.tangent(0.0)
        if s > self.total_length:
            seg = self.segments[-1]
            return seg.point(seg.length) + (s - self.total_length) * seg.tangent(seg.length)
        idx, loc = self._locate(s)
        return self.segments[idx].point(loc)

    def tangent_at(self, s: float) -> np.ndarray:
        idx, loc = self._locate(min(max(s, 0.0), self.total_length))
        loc = min(max(loc, 0.0), self.segments[idx].length)
        return self.segments[idx].tangent(loc)

    def sample_offset(self, offset_left: float, ds: float = 0.5):
        """Sample the lane parallel to the centerline at a leftward offset.

        Returns (s, xy, kappa): arc length along the OFFSET path, positions,
        and signed curvature of the offset path. Requires the offset to keep
        all arc radii positive.
        """
        xs, ks = [], []
        for seg in self.segments:
            if isinstance(seg, _Straight):
                n = max(2, int(math.ceil(seg.length / ds)) + 1)
                local = np.linspace(0.0, seg.length, n)
                p = seg.point(local)
                t = seg.tangent(local)
                normal = np.stack([-t[:, 1], t[:, 0]], axis=-1)
                xs.append(p + offset_left * normal)
                ks.append(np.zeros(n))
            else:
                # left offset shrinks ccw arcs and widens cw arcs
                r_off = seg.radius - np.sign(seg.dang) * offset_left
                if r_off <= 0.5:
                    raise ValueError(f"offset {offset_left} degenerates arc of radius {seg.radius}")
                n = max(2, int(math.ceil(seg.length / ds)) + 1)
                ang = seg._angle(np.linspace(0.0, seg.length, n))
                xs.append(seg.center + r_off * np.stack([np.cos(ang), np.sin(ang)], axis=-1))
                ks.append(np.full(n, math.copysign(1.0 / r_off, seg.dang)))
        xy = np.concatenate([x if i == 0 else x[1:] for i, x in enumerate(xs)])
        kappa = np.concatenate([k if i == 0 else k[1:] for i, k in enumerate(ks)])
        d = np.diff(xy, axis=0)
        s = np.concatenate([[0.0], np.cumsum(np.hypot(d[:, 0], d[:, 1]))])
        return s, xy, kappa


def build_route(spec: ScenarioSpec, rng_seed: int) -> RoutePlan:
    """Lay out a five-intersection route for a scenario.

    The intersection operations are a seeded permutation of three straights
    plus one left and one right turn; the marker matching spec.operation is
    flagged as the evaluated intersection.
    """
    rng = np.random.default_rng(rng_seed)
    ops = [Operation.STRAIGHT, Operation.STRAIGHT, Operation.STRAIGHT,
           Operation.LEFT_TURN, Operation.RIGHT_TURN]
    order = rng.permutation(5)
    ops = [ops[i] for i in order]
    candidates = [i for i, op in enumerate(ops) if op is spec.operation]
    evaluated_idx = int(rng.choice(candidates))

    blocks = rng.uniform(*BLOCK_LENGTH_RANGE, size=6)
    radii = rng.uniform(*TURN_RADIUS_RANGE, size=5)

    segments: list = []
    markers: list[IntersectionMarker] = []
    pos = np.zeros(2)
    heading = 0.0
    s_done = 0.0
    for i, op in enumerate(ops):
        tangent = np.array([math.cos(heading), math.sin(heading)])
        end = pos + blocks[i] * tangent
        segments.append(_Straight(pos, end))
        s_done += blocks[i]
        pos = end
        if op is Operation.STRAIGHT:
            markers.append(IntersectionMarker(
                s=s_done, position=(float(pos[0]), float(pos[1])),
                operation=op, evaluated=(i == evaluated_idx)))
            continue
        r = radii[i]
        turn = math.pi / 2 if op is Operation.LEFT_TURN else -math.pi / 2
        if turn > 0:
            center = pos + r * np.array([-math.sin(heading), math.cos(heading)])
            ang0 = heading - math.pi / 2
        else:
            center = pos + r * np.array([math.sin(heading), -math.cos(heading)])
            ang0 = heading + math.pi / 2
        arc = _Arc(center, r, ang0, turn)
        segments.append(arc)
        mid = arc.point(arc.length / 2)
        markers.append(IntersectionMarker(
            s=s_done + arc.length / 2, position=(float(mid[0]), float(mid[1])),
            operation=op, evaluated=(i == evaluated_idx)))
        s_done += arc.length
        pos = arc.point(arc.length)
        heading += turn
    tangent = np.array([math.cos(heading), math.sin(heading)])
    segments.append(_Straight(pos, pos + blocks[5] * tangent))
    return RoutePlan(segments, markers, spec.lead_speed_mps)
