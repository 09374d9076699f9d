"""Reward accounting: entry schedule, completion bonus, capped dwell,
proximity shaping, wall penalty.

`step_reward` consumes the event stream the environment emits;
`replay_rewards` independently recomputes every component from raw
positions so any episode can be audited against its online ledger.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .env import ZONE_COUNT, FloorPlan, StepEvents


@dataclass(frozen=True)
class RewardConfig:
    """Reward constants.

    `entry_rewards` pays the 1st/2nd/3rd zone entered in an episode, in
    that order; set `entry_by_zone_identity` to pay by physical zone
    index instead. Rates are per second, applied over each step's dt.
    """

    entry_rewards: tuple[float, float, float] = (48.2, 63.7, 85.5)
    completion_bonus: float = 41.0
    proximity_rate: float = 0.03
    wall_penalty_rate: float = 0.01
    dwell_rate: float = 1.0
    dwell_cap: float = 17.0
    entry_by_zone_identity: bool = False

    def __post_init__(self):
        values = (*self.entry_rewards, self.completion_bonus, self.proximity_rate,
                  self.wall_penalty_rate, self.dwell_rate, self.dwell_cap)
        if any(v < 0.0 for v in values):
            raise ValueError("reward constants must be non-negative")


@dataclass
class RewardLedger:
    """Per-episode accrual state and per-component totals."""

    entries_made: int = 0
    dwell_credited: list[float] = field(default_factory=lambda: [0.0] * ZONE_COUNT)
    entry_total: float = 0.0
    completion_total: float = 0.0
    dwell_total: float = 0.0
    shaping_total: float = 0.0
    penalty_total: float = 0.0
    cumulative_reward: float = 0.0

    def component_totals(self) -> dict[str, float]:
        return {
            "entry": self.entry_total,
            "completion": self.completion_total,
            "dwell": self.dwell_total,
            "shaping": self.shaping_total,
            "penalty": self.penalty_total,
        }


def step_reward(
    events: StepEvents, ledger: RewardLedger, cfg: RewardConfig
) -> float:
    """Score one step's events and fold them into the ledger.

    The ledger is updated in place and must belong to the same episode
    as the event stream; a fourth first-entry or over-cap dwell credit
    is rejected as a ledger/events mismatch.
    """
    reward = 0.0

    if events.entered_zone_first_time is not None:
        if ledger.entries_made >= ZONE_COUNT:
            raise ValueError("ledger/events mismatch: more than three first entries")
        if cfg.entry_by_zone_identity:
            pay = cfg.entry_rewards[events.entered_zone_first_time]
        else:
            pay = cfg.entry_rewards[ledger.entries_made]
        ledger.entries_made += 1
        ledger.entry_total += pay
        reward += pay

    if events.all_zones_just_completed:
        ledger.completion_total += cfg.completion_bonus
        reward += cfg.completion_bonus

    if events.dwell_credit > 0.0:
        zone = events.inside_zone
        if zone is None:
            raise ValueError("ledger/events mismatch: dwell credit outside any zone")
        if ledger.dwell_credited[zone] + events.dwell_credit > cfg.dwell_cap + 1e-9:
            raise ValueError("ledger/events mismatch: dwell credit exceeds the cap")
        ledger.dwell_credited[zone] += events.dwell_credit
        pay = cfg.dwell_rate * events.dwell_credit
        ledger.dwell_total += pay
        reward += pay

    if events.moved_closer_to_target:
        pay = cfg.proximity_rate * events.dt
        ledger.shaping_total += pay
        reward += pay

    if events.wall_contact:
        pay = cfg.wall_penalty_rate * events.dt
        ledger.penalty_total -= pay
        reward -= pay

    ledger.cumulative_reward += reward
    return reward


def fixed_component_max(cfg: RewardConfig) -> float:
    """Largest episodic total excluding shaping: entries, bonus, full dwell."""
    return (
        cfg.entry_rewards[0]
        + cfg.entry_rewards[1]
        + cfg.entry_rewards[2]
        + cfg.completion_bonus
        + ZONE_COUNT * cfg.dwell_rate * cfg.dwell_cap
    )


def replay_rewards(traj, plan: FloorPlan, cfg: RewardConfig) -> RewardLedger:
    """Recompute all reward components from raw positions alone.

    This is the audit oracle: it shares no state with the environment
    and re-derives containment, wall proximity, entry order, dwell
    clocks, and target distances from the position track. Sample 0 only
    seeds the pose; events are evaluated per transition, matching the
    end-of-step convention of the online path. Assumes cfg.dwell_cap
    equals the plan's performance duration, as in the default config.

    Raises ValueError on non-uniform timestamps.
    """
    t = np.asarray(traj.t, dtype=np.float64)
    xs = np.asarray(traj.xy, dtype=np.float64)
    if len(t) < 2:
        return RewardLedger()
    steps = np.diff(t)
    dt = float(t[1] - t[0])
    if np.max(np.abs(steps - dt)) > 1e-9:
        raise ValueError("replay requires uniformly spaced timestamps")

    half = plan.zones[0].half_side
    centers = [z.center for z in plan.zones]
    visited = [False] * ZONE_COUNT
    clocks = [0.0] * ZONE_COUNT
    ledger = RewardLedger()

    for k in range(1, len(t)):
        px, py = float(xs[k - 1, 0]), float(xs[k - 1, 1])
        qx, qy = float(xs[k, 0]), float(xs[k, 1])

        target = None
        best = math.inf
        for i, (cx, cy) in enumerate(centers):
            if visited[i]:
                continue
            d = math.hypot(cx - px, cy - py)
            if d < best:
                target = i
                best = d

        inside = None
        for i, (cx, cy) in enumerate(centers):
            if abs(qx - cx) <= half and abs(qy - cy) <= half:
                inside = i
                break

        if inside is not None and not visited[inside]:
            visited[inside] = True
            if cfg.entry_by_zone_identity:
                pay = cfg.entry_rewards[inside]
            else:
                pay = cfg.entry_rewards[ledger.entries_made]
            ledger.entries_made += 1
            ledger.entry_total += pay
            if all(visited):
                ledger.completion_total += cfg.completion_bonus

        if inside is not None:
            credit = min(dt, max(cfg.dwell_cap - clocks[inside], 0.0))
            if credit > 0.0:
                clocks[inside] += credit
                ledger.dwell_credited[inside] += credit
                ledger.dwell_total += cfg.dwell_rate * credit

        if target is not None:
            cx, cy = centers[target]
            if math.hypot(cx - qx, cy - qy) < best:
                ledger.shaping_total += cfg.proximity_rate * dt

        if min(qx, plan.length - qx, qy, plan.width - qy) < plan.wall_margin:
            ledger.penalty_total -= cfg.wall_penalty_rate * dt

    ledger.cumulative_reward = (
        ledger.entry_total
        + ledger.completion_total
        + ledger.dwell_total
        + ledger.shaping_total
        + ledger.penalty_total
    )
    return ledger
