"""Digital-twin corridor: geometry, agent kinematics, zone and wall events.

The walkable area is an axis-aligned rectangle. Three square content
zones sit on the centerline of the long axis; entering one for the first
time, lingering inside it, approaching the current target zone, and
touching a wall are the events the reward code consumes. Stepping is
fully deterministic given the reset seed and the action sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

ZONE_COUNT = 3
OBS_DIM = 16


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(angle, 2.0 * math.pi)
    if a > math.pi:
        a -= 2.0 * math.pi
    elif a <= -math.pi:
        a += 2.0 * math.pi
    return a


@dataclass(frozen=True)
class EnvConfig:
    """Geometry and motion constants of the corridor twin.

    The rectangle dimensions must multiply out to `area` (within 0.01 m^2);
    zone squares each cover `zone_area` and are spaced `zone_spacing`
    apart along the centerline.
    """

    length: float = 35.955
    width: float = 5.8
    area: float = 208.54
    zone_area: float = 2.8
    zone_spacing: float = 8.0
    first_zone_x: float = 9.0
    performance_duration: float = 17.0
    spawn_x: float = 2.0
    spawn_y: float = 2.9
    spawn_jitter: float = 0.5
    exit_x: float = 33.0
    wall_margin: float = 0.3
    dt: float = 0.1
    v_max: float = 1.5
    omega_max: float = 2.0
    horizon: float = 240.0


@dataclass(frozen=True)
class ContentZone:
    """Square trigger region; `half_side` is half the edge length."""

    center: tuple[float, float]
    half_side: float
    index: int
    performance_duration: float = 17.0


@dataclass(frozen=True)
class FloorPlan:
    length: float
    width: float
    zones: tuple[ContentZone, ...]
    spawn_point: tuple[float, float]
    exit_x: float
    wall_margin: float


@dataclass(frozen=True)
class Action:
    """One control step: continuous locomotion plus a discrete idle sub-state.

    `idle_state` only tags the motion label of the step; it never moves
    the agent.
    """

    speed: float
    turn_rate: float
    idle_state: int = 0


@dataclass(frozen=True)
class StepEvents:
    """Everything rewardable that happened during one step."""

    entered_zone_first_time: Optional[int]
    inside_zone: Optional[int]
    dwell_credit: float
    moved_closer_to_target: bool
    wall_contact: bool
    all_zones_just_completed: bool
    dt: float


@dataclass
class AgentState:
    x: float
    y: float
    heading: float
    time: float = 0.0
    step_count: int = 0
    visited: list[bool] = field(default_factory=lambda: [False] * ZONE_COUNT)
    dwell_clock: list[float] = field(default_factory=lambda: [0.0] * ZONE_COUNT)
    done: bool = False


def zone_contains(zone: ContentZone, p: tuple[float, float]) -> bool:
    """Closed square containment test (boundary counts as inside)."""
    return (
        abs(p[0] - zone.center[0]) <= zone.half_side
        and abs(p[1] - zone.center[1]) <= zone.half_side
    )


def wall_clearance(plan: FloorPlan, p: tuple[float, float]) -> float:
    """Distance from p to the nearest of the four walls."""
    return min(p[0], plan.length - p[0], p[1], plan.width - p[1])


def wall_contact(plan: FloorPlan, p: tuple[float, float]) -> bool:
    return wall_clearance(plan, p) < plan.wall_margin


def build_floorplan(config: EnvConfig = EnvConfig()) -> FloorPlan:
    """Validate the configured geometry and assemble the floor plan.

    Raises ValueError when the rectangle does not match the configured
    area, when zones would overlap each other or stick out of the
    corridor, or when the spawn point lands inside a zone.
    """
    if config.area <= 0.0 or config.length <= 0.0 or config.width <= 0.0:
        raise ValueError("corridor dimensions and area must be positive")
    if abs(config.length * config.width - config.area) > 0.01:
        raise ValueError(
            f"corridor {config.length} x {config.width} does not match "
            f"configured area {config.area} m^2"
        )
    if config.zone_area <= 0.0:
        raise ValueError("zone_area must be positive")

    half_side = math.sqrt(config.zone_area) / 2.0
    center_y = config.width / 2.0
    zones = tuple(
        ContentZone(
            center=(config.first_zone_x + i * config.zone_spacing, center_y),
            half_side=half_side,
            index=i,
            performance_duration=config.performance_duration,
        )
        for i in range(ZONE_COUNT)
    )

    for z in zones:
        if not (
            z.center[0] - half_side >= 0.0
            and z.center[0] + half_side <= config.length
            and z.center[1] - half_side >= 0.0
            and z.center[1] + half_side <= config.width
        ):
            raise ValueError(f"zone {z.index} does not fit inside the corridor")
    for a in zones:
        for b in zones:
            if a.index < b.index:
                gap = max(
                    abs(a.center[0] - b.center[0]), abs(a.center[1] - b.center[1])
                )
                if gap <= 2.0 * half_side:
                    raise ValueError(f"zones {a.index} and {b.index} overlap")

    spawn = (config.spawn_x, config.spawn_y)
    if not (0.0 < spawn[0] < config.length and 0.0 < spawn[1] < config.width):
        raise ValueError("spawn point lies outside the corridor")
    for z in zones:
        if zone_contains(z, spawn):
            raise ValueError(f"spawn point lies inside zone {z.index}")
    if not (0.0 < config.exit_x < config.length):
        raise ValueError("exit_x lies outside the corridor")

    return FloorPlan(
        length=config.length,
        width=config.width,
        zones=zones,
        spawn_point=spawn,
        exit_x=config.exit_x,
        wall_margin=config.wall_margin,
    )


def observation(
    plan: FloorPlan,
    x: float,
    y: float,
    heading: float,
    time_s: float,
    visited: list[bool],
    horizon: float,
) -> np.ndarray:
    """16-entry observation vector, each component roughly in [-1, 1].

    Layout: normalized position (2), heading as cos/sin (2), per-zone
    offset rotated into the agent frame and scaled by corridor length
    (6), per-zone visited flags (3), scaled distances to the two side
    walls (2), episode time fraction (1).
    """
    cos_h = math.cos(heading)
    sin_h = math.sin(heading)
    obs = np.empty(OBS_DIM, dtype=np.float64)
    obs[0] = 2.0 * x / plan.length - 1.0
    obs[1] = 2.0 * y / plan.width - 1.0
    obs[2] = cos_h
    obs[3] = sin_h
    for i, z in enumerate(plan.zones):
        dx = z.center[0] - x
        dy = z.center[1] - y
        obs[4 + 2 * i] = (dx * cos_h + dy * sin_h) / plan.length
        obs[5 + 2 * i] = (-dx * sin_h + dy * cos_h) / plan.length
    for i in range(ZONE_COUNT):
        obs[10 + i] = 1.0 if visited[i] else 0.0
    obs[13] = 2.0 * y / plan.width - 1.0
    obs[14] = 2.0 * (plan.width - y) / plan.width - 1.0
    obs[15] = time_s / horizon
    return obs


class CorridorEnv:
    """Single-agent corridor episode with zone/wall event reporting.

    One instance is owned by one caller at a time; run many instances
    for parallelism. The only randomness is the reset jitter, so equal
    (seed, action sequence) pairs give bit-identical trajectories.
    """

    def __init__(
        self,
        plan: FloorPlan,
        dt: float = 0.1,
        v_max: float = 1.5,
        omega_max: float = 2.0,
        horizon: float = 240.0,
        spawn_jitter: float = 0.5,
    ):
        self.plan = plan
        self.dt = dt
        self.v_max = v_max
        self.omega_max = omega_max
        self.horizon = horizon
        self.spawn_jitter = spawn_jitter
        self.state: Optional[AgentState] = None

    @classmethod
    def from_config(cls, config: EnvConfig) -> "CorridorEnv":
        return cls(
            build_floorplan(config),
            dt=config.dt,
            v_max=config.v_max,
            omega_max=config.omega_max,
            horizon=config.horizon,
            spawn_jitter=config.spawn_jitter,
        )

    def reset(self, seed: int) -> np.ndarray:
        """Place the agent near the spawn point (uniform disk jitter)."""
        rng = np.random.default_rng(seed)
        radius = self.spawn_jitter * math.sqrt(rng.random())
        angle = 2.0 * math.pi * rng.random()
        x = self.plan.spawn_point[0] + radius * math.cos(angle)
        y = self.plan.spawn_point[1] + radius * math.sin(angle)
        x = min(max(x, 0.0), self.plan.length)
        y = min(max(y, 0.0), self.plan.width)
        heading = wrap_angle(rng.uniform(-math.pi, math.pi))
        self.state = AgentState(x=x, y=y, heading=heading)
        return self.observe()

    def observe(self) -> np.ndarray:
        s = self._require_state()
        return observation(
            self.plan, s.x, s.y, s.heading, s.time, s.visited, self.horizon
        )

    def step(self, action: Action) -> tuple[np.ndarray, StepEvents, bool]:
        """Integrate one dt: heading first, then displacement, then events.

        The position is clamped to the corridor, so no action sequence
        can leave it. Raises RuntimeError on a finished episode.
        """
        s = self._require_state()
        if s.done:
            raise RuntimeError("step() called on a finished episode")

        speed = min(max(action.speed, 0.0), self.v_max)
        turn = min(max(action.turn_rate, -self.omega_max), self.omega_max)

        target = self._nearest_unvisited(s.x, s.y, s.visited)
        dist_before = (
            math.hypot(
                self.plan.zones[target].center[0] - s.x,
                self.plan.zones[target].center[1] - s.y,
            )
            if target is not None
            else 0.0
        )

        s.heading = wrap_angle(s.heading + turn * self.dt)
        s.x = min(max(s.x + speed * self.dt * math.cos(s.heading), 0.0), self.plan.length)
        s.y = min(max(s.y + speed * self.dt * math.sin(s.heading), 0.0), self.plan.width)
        s.step_count += 1
        s.time = s.step_count * self.dt

        inside = None
        for z in self.plan.zones:
            if zone_contains(z, (s.x, s.y)):
                inside = z.index
                break

        entered = None
        if inside is not None and not s.visited[inside]:
            s.visited[inside] = True
            entered = inside

        dwell_credit = 0.0
        if inside is not None:
            cap = self.plan.zones[inside].performance_duration
            dwell_credit = min(self.dt, max(cap - s.dwell_clock[inside], 0.0))
            s.dwell_clock[inside] += dwell_credit

        moved_closer = False
        if target is not None:
            dist_after = math.hypot(
                self.plan.zones[target].center[0] - s.x,
                self.plan.zones[target].center[1] - s.y,
            )
            moved_closer = dist_after < dist_before

        completed = entered is not None and all(s.visited)
        s.done = s.time >= self.horizon or (all(s.visited) and s.x > self.plan.exit_x)

        events = StepEvents(
            entered_zone_first_time=entered,
            inside_zone=inside,
            dwell_credit=dwell_credit,
            moved_closer_to_target=moved_closer,
            wall_contact=wall_contact(self.plan, (s.x, s.y)),
            all_zones_just_completed=completed,
            dt=self.dt,
        )
        return self.observe(), events, s.done

    def _nearest_unvisited(
        self, x: float, y: float, visited: list[bool]
    ) -> Optional[int]:
        # Ties break toward the lower zone index.
        best = None
        best_dist = math.inf
        for z in self.plan.zones:
            if visited[z.index]:
                continue
            d = math.hypot(z.center[0] - x, z.center[1] - y)
            if d < best_dist:
                best = z.index
                best_dist = d
        return best

    def _require_state(self) -> AgentState:
        if self.state is None:
            raise RuntimeError("reset() must be called before use")
        return self.state
