"""Synthetic four-arm intersection scenarios for desk-scale experiments."""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.stats import truncnorm

from config import config
from exceptions import ValidationError
from utils.dynamics_utils import VehicleState, wrap_angle
from utils.potential_utils import GoalState, PotentialConfig, Scenario
from utils.scenario_utils import Approach, Maneuver, Movement

logger = logging.getLogger(__name__)

__all__: list[str] = ("SynthSpec", "synth_scenario", "parse_movement", "movement_path")

MAX_AGENTS = 6
QUEUE_SPACING = 8.0
MAX_DRAWS = 100

# counterclockwise rotation carrying the south approach onto each approach
_APPROACH_ANGLE = {Approach.S: 0.0, Approach.E: 0.5 * np.pi, Approach.N: np.pi, Approach.W: 1.5 * np.pi}


def parse_movement(text: str) -> Movement:
    """'S-Through', 'E-Left', ... into a Movement"""
    try:
        approach, maneuver = text.split("-")
        return Movement(Approach(approach.upper()), Maneuver(maneuver.capitalize()))
    except ValueError as e:
        raise ValidationError(f"Invalid movement {text!r}; expected e.g. 'S-Through'") from e


class SynthSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_agents: int = 2
    movements: Optional[tuple[str, ...]] = None
    dt: float = Field(default=config.dynamics.dt, gt=0)
    horizon: int = Field(default=config.dynamics.horizon, ge=1)
    history: int = Field(default=config.dynamics.history, ge=1)
    a_max: float = Field(default=config.dynamics.a_max, gt=0)
    speed_mean: float = config.synth.speed_mean
    speed_std: float = Field(default=config.synth.speed_std, gt=0)
    speed_min: float = Field(default=config.synth.speed_min, gt=0)
    speed_max: float = Field(default=config.synth.speed_max, gt=0)
    lane_offset: float = Field(default=config.synth.lane_offset, gt=0)
    turn_radius: float = Field(default=config.synth.turn_radius, gt=0)
    start_fraction_min: float = Field(default=config.synth.start_fraction_min, ge=0)
    start_fraction_max: float = Field(default=config.synth.start_fraction_max, gt=0)
    min_separation: float = Field(default=config.synth.min_separation, ge=0)

    @field_validator("movements")
    @classmethod
    def validate_movements(cls, value):
        if value is not None:
            for text in value:
                parse_movement(text)
        return value

    def resolved_movements(self, rng: np.random.Generator) -> list[Movement]:
        if not 1 <= self.n_agents <= MAX_AGENTS:
            raise ValidationError(f"Synthetic scenes need 1..{MAX_AGENTS} agents, got {self.n_agents}")
        if self.movements is not None:
            if len(self.movements) != self.n_agents:
                raise ValidationError(f"{len(self.movements)} movements given for {self.n_agents} agents")
            return [parse_movement(m) for m in self.movements]
        # draw indices: numpy would turn the str-enum members into plain strings
        approach_members, maneuver_members = list(Approach), list(Maneuver)
        approaches = [approach_members[k] for k in rng.permutation(len(approach_members))]
        picks = rng.choice(len(maneuver_members), size=self.n_agents, p=[0.5, 0.25, 0.25])
        return [Movement(approaches[k % 4], maneuver_members[picks[k]]) for k in range(self.n_agents)]


def movement_path(movement: Movement, s: np.ndarray, lane_offset: float, turn_radius: float) -> np.ndarray:
    """Points (x, y, heading) at arc lengths s along a movement's lane centerline.

    s = 0 is the start of the turn (the intersection center line for
    through traffic). Computed for the south approach, then rotated.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    w = lane_offset
    out = np.empty((s.size, 3))
    if movement.maneuver is Maneuver.THROUGH:
        out[:, 0] = w
        out[:, 1] = s
        out[:, 2] = 0.5 * np.pi
    else:
        left = movement.maneuver is Maneuver.LEFT
        radius = turn_radius + w if left else turn_radius
        y_a = w - radius if left else -w - radius
        arc = 0.5 * np.pi * radius
        before, during, after = s < 0, (s >= 0) & (s <= arc), s > arc
        out[before, 0] = w
        out[before, 1] = y_a + s[before]
        out[before, 2] = 0.5 * np.pi
        phi = s[during] / radius
        sign = 1.0 if left else -1.0
        cx = w - radius if left else w + radius
        out[during, 0] = cx + sign * radius * np.cos(phi)
        out[during, 1] = y_a + radius * np.sin(phi)
        out[during, 2] = 0.5 * np.pi + sign * phi
        exit_x = cx
        exit_y = y_a + radius
        out[after, 0] = exit_x - sign * (s[after] - arc)
        out[after, 1] = exit_y
        out[after, 2] = np.pi if left else 0.0

    angle = _APPROACH_ANGLE[movement.approach]
    c, si = np.cos(angle), np.sin(angle)
    x, y = out[:, 0].copy(), out[:, 1].copy()
    out[:, 0] = c * x - si * y
    out[:, 1] = si * x + c * y
    out[:, 2] = wrap_angle(out[:, 2] + angle)
    return out


def _states_along(movement: Movement, s: np.ndarray, speed: float, spec: SynthSpec) -> np.ndarray:
    path = movement_path(movement, s, spec.lane_offset, spec.turn_radius)
    return np.column_stack(
        [path[:, 0], path[:, 1], speed * np.cos(path[:, 2]), speed * np.sin(path[:, 2]), path[:, 2]]
    )


def _min_separation(extents: list[np.ndarray]) -> float:
    """Closest approach of any two agents over the shared steps"""
    if len(extents) < 2:
        return float("inf")
    points = np.stack(extents)
    offsets = points[:, None, :, :] - points[None, :, :, :]
    distances = np.linalg.norm(offsets, axis=-1)
    pairs = np.triu_indices(len(extents), k=1)
    return float(distances[pairs].min())


def _draw_agents(spec: SynthSpec, movements: list[Movement], rng: np.random.Generator):
    lower = (spec.speed_min - spec.speed_mean) / spec.speed_std
    upper = (spec.speed_max - spec.speed_mean) / spec.speed_std
    speeds = truncnorm.rvs(
        lower, upper, loc=spec.speed_mean, scale=spec.speed_std, size=len(movements), random_state=rng
    )
    fractions = rng.uniform(spec.start_fraction_min, spec.start_fraction_max, size=len(movements))

    span = spec.horizon * spec.dt
    states_by_agent = []
    queued: dict[Approach, int] = {}
    for movement, speed, fraction in zip(movements, speeds, fractions):
        position_in_queue = queued.get(movement.approach, 0)
        queued[movement.approach] = position_in_queue + 1
        s0 = -fraction * speed * span - QUEUE_SPACING * position_in_queue
        history_s = s0 - speed * spec.dt * np.arange(spec.history, 0, -1)
        future_s = s0 + speed * spec.dt * np.arange(1, spec.horizon + 1)
        states_by_agent.append(
            _states_along(movement, np.concatenate([history_s, [s0], future_s]), float(speed), spec)
        )
    return states_by_agent


def synth_scenario(
    spec: SynthSpec,
    seed: int,
    potential_config: Optional[PotentialConfig] = None,
) -> Scenario:
    """Deterministic per seed; ground truth is constant-speed lane following.

    Speeds and start offsets are redrawn until no two agents come closer
    than spec.min_separation anywhere on their recorded tracks.
    """
    rng = np.random.default_rng(seed)
    movements = spec.resolved_movements(rng)
    for _ in range(MAX_DRAWS):
        states_by_agent = _draw_agents(spec, movements, rng)
        separation = _min_separation([s[:, :2] for s in states_by_agent])
        if separation >= spec.min_separation:
            break
    else:
        raise ValidationError(
            f"Could not place {[str(m) for m in movements]} at least {spec.min_separation} m apart "
            f"in {MAX_DRAWS} draws (seed {seed})"
        )

    initial, goals, histories, truth = [], [], [], []
    for states in states_by_agent:
        histories.append(tuple(VehicleState.from_array(s) for s in states[: spec.history]))
        initial.append(VehicleState.from_array(states[spec.history]))
        goals.append(GoalState.from_state(VehicleState.from_array(states[-1])))
        truth.append(states[spec.history + 1 :, :2])

    points = np.concatenate([s[:, :2] for s in states_by_agent])
    diag = float(np.linalg.norm(points.max(axis=0) - points.min(axis=0)))
    scene_id = f"synth-{seed:06d}"
    logger.debug("generated %s with movements %s", scene_id, [str(m) for m in movements])
    return Scenario(
        initial_states=tuple(initial),
        goals=tuple(goals),
        histories=tuple(histories),
        dt=spec.dt,
        horizon=spec.horizon,
        a_max=spec.a_max,
        scene_diag=max(diag, config.data.scene_diag_floor),
        agent_ids=tuple(f"{k}:{m}" for k, m in enumerate(movements)),
        scene_id=scene_id,
        ground_truth=np.stack(truth),
        potential_config=potential_config,
        provenance={"source_file": "", "t0": 0, "scene_id": scene_id, "seed": int(seed)},
    )
