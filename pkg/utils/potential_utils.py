"""The shared potential of the intersection game and its per-agent costs.

The potential has four normalized terms: terminal goal error, control
smoothness, efficiency (entering with a minus sign) and a hinge-squared
pairwise safety penalty. Agent i's cost is w_i times the potential, so
any unilateral change moves J_i by exactly w_i times the potential change.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from config import config
from exceptions import AgentCountMismatchError, GoalMissingError, ValidationError
from utils.dynamics_utils import JointProfile, VehicleState, position_map, rollout_arrays, wrap_angle

logger = logging.getLogger(__name__)

__all__: list[str] = (
    "GoalState",
    "Scenario",
    "PotentialConfig",
    "AgentWeights",
    "Normalizers",
    "PotentialTerms",
    "normalizers",
    "potential_terms",
    "potential",
    "agent_cost",
    "grad_potential_agent",
)

DEFAULT_COMPONENT_SCALE: tuple[float, ...] = tuple(config.potential.goal_component_scale)
WEIGHT_INVARIANCE_NOTE = "agent weights scale each cost by a positive constant and never change a plan"


@dataclass(frozen=True)
class GoalState:
    x: float
    y: float
    vx: float
    vy: float
    theta: float
    component_scale: tuple[float, ...] = DEFAULT_COMPONENT_SCALE

    def __post_init__(self) -> None:
        scale = tuple(float(c) for c in self.component_scale)
        if len(scale) != 5 or any(c < 0 for c in scale):
            raise ValidationError(f"Goal component_scale must be 5 entries >= 0, got {scale}")
        object.__setattr__(self, "component_scale", scale)

    @classmethod
    def from_state(
        cls, state: VehicleState, component_scale: Sequence[float] = DEFAULT_COMPONENT_SCALE
    ) -> GoalState:
        return cls(state.x, state.y, state.vx, state.vy, state.theta, tuple(component_scale))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.vx, self.vy, self.theta])

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True, eq=False)
class Scenario:
    """One game instance: the agents' starting states, goals and histories."""

    initial_states: tuple[VehicleState, ...]
    goals: Optional[tuple[Optional[GoalState], ...]]
    histories: tuple[tuple[VehicleState, ...], ...]
    dt: float = config.dynamics.dt
    horizon: int = config.dynamics.horizon
    a_max: float = config.dynamics.a_max
    scene_diag: float = 1.0
    agent_ids: tuple[str, ...] = ()
    scene_id: str = "scene"
    ground_truth: Optional[np.ndarray] = None
    potential_config: Optional[PotentialConfig] = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        initial = tuple(self.initial_states)
        n = len(initial)
        if n < 1:
            raise ValidationError("A scenario needs at least one agent")
        if not self.dt > 0 or self.horizon < 1 or not self.a_max > 0:
            raise ValidationError("Scenario needs dt > 0, horizon >= 1 and a_max > 0")
        if not self.scene_diag > 0:
            raise ValidationError(f"scene_diag must be positive, got {self.scene_diag}")

        histories = tuple(tuple(h) for h in self.histories) if self.histories else tuple(() for _ in range(n))
        if len(histories) != n:
            raise AgentCountMismatchError(n, len(histories))
        if len({len(h) for h in histories}) > 1:
            raise ValidationError("All agent histories must have the same length")

        goals = self.goals
        if goals is not None:
            goals = tuple(goals)
            if len(goals) != n:
                raise AgentCountMismatchError(n, len(goals))

        agent_ids = tuple(self.agent_ids) if self.agent_ids else tuple(str(i) for i in range(n))
        if len(agent_ids) != n:
            raise AgentCountMismatchError(n, len(agent_ids))

        ground_truth = self.ground_truth
        if ground_truth is not None:
            ground_truth = np.array(ground_truth, dtype=float)
            if ground_truth.shape != (n, self.horizon, 2):
                raise ValidationError(
                    f"Ground truth must be shaped {(n, self.horizon, 2)}, got {ground_truth.shape}"
                )
            ground_truth.setflags(write=False)

        object.__setattr__(self, "initial_states", initial)
        object.__setattr__(self, "histories", histories)
        object.__setattr__(self, "goals", goals)
        object.__setattr__(self, "agent_ids", agent_ids)
        object.__setattr__(self, "ground_truth", ground_truth)

    @property
    def n_agents(self) -> int:
        return len(self.initial_states)

    @property
    def history_length(self) -> int:
        return len(self.histories[0])

    @property
    def initial_array(self) -> np.ndarray:
        return np.stack([s.as_array() for s in self.initial_states])

    @property
    def has_goals(self) -> bool:
        return self.goals is not None and all(g is not None for g in self.goals)

    def goal_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Goal states (N, 5) and component scales (N, 5)"""
        if not self.has_goals:
            raise GoalMissingError(f"Scenario {self.scene_id} has agents without goals")
        goals = np.stack([g.as_array() for g in self.goals])
        scales = np.stack([np.asarray(g.component_scale) for g in self.goals])
        return goals, scales


class PotentialConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    lambda_goal: float = Field(default=config.potential.lambda_goal, ge=0)
    lambda_smooth: float = Field(default=config.potential.lambda_smooth, ge=0)
    lambda_efficiency: float = Field(default=config.potential.lambda_efficiency, ge=0)
    lambda_safety: float = Field(default=config.potential.lambda_safety, ge=0)
    d_safe: float = Field(default=config.potential.d_safe, gt=0)
    safety_buffer: float = Field(default=config.potential.safety_buffer, ge=0)
    v_progress_target: float = Field(default=config.potential.v_progress_target, gt=0)
    normalizer_override: Optional[tuple[float, float, float, float]] = None
    prediction: bool = False
    pin_weights: bool = False

    @field_validator("normalizer_override")
    @classmethod
    def validate_normalizers(cls, value):
        if value is not None and any(v <= 0 for v in value):
            raise ValueError("normalizers must be positive")
        return value

    @property
    def safety_radius(self) -> float:
        """Distance below which the safety hinge is active"""
        return self.d_safe + self.safety_buffer

    @property
    def lambdas(self) -> np.ndarray:
        return np.array(
            [self.lambda_goal, self.lambda_smooth, self.lambda_efficiency, self.lambda_safety]
        )

    def with_lambdas(self, lambdas: Sequence[float]) -> PotentialConfig:
        goal, smooth, efficiency, safety = (float(v) for v in lambdas)
        return self.model_copy(
            update={
                "lambda_goal": 0.0 if self.prediction else goal,
                "lambda_smooth": smooth,
                "lambda_efficiency": efficiency,
                "lambda_safety": safety,
            }
        )

    def for_mode(self, mode: Literal["planning", "prediction"]) -> PotentialConfig:
        """Prediction mode drops the goal term and makes goals optional"""
        if mode == "prediction":
            return self.model_copy(update={"prediction": True, "lambda_goal": 0.0})
        return self.model_copy(update={"prediction": False})

    def with_ablation(self, ablation: Literal["none", "iw", "sc"]) -> PotentialConfig:
        """-SC keeps only goal and safety, -IW pins every agent weight to 1"""
        if ablation == "sc":
            return self.model_copy(update={"lambda_smooth": 0.0, "lambda_efficiency": 0.0})
        if ablation == "iw":
            return self.model_copy(update={"pin_weights": True})
        return self


class AgentWeights(BaseModel):
    model_config = ConfigDict(frozen=True)

    w: tuple[float, ...]
    w_min: float = config.potential.w_min
    w_max: float = config.potential.w_max

    @field_validator("w")
    @classmethod
    def validate_positive(cls, value):
        if len(value) < 1:
            raise ValueError("at least one agent weight is required")
        if any(not np.isfinite(v) or v <= 0 for v in value):
            raise ValueError("agent weights must be finite and positive")
        return value

    def model_post_init(self, __context) -> None:
        if not 0 < self.w_min <= self.w_max:
            raise ValidationError(f"Invalid weight clamp [{self.w_min}, {self.w_max}]")
        if any(v < self.w_min or v > self.w_max for v in self.w):
            raise ValidationError(f"Agent weights {self.w} outside [{self.w_min}, {self.w_max}]")

    @classmethod
    def ones(cls, n_agents: int) -> AgentWeights:
        return cls(w=(1.0,) * n_agents)

    @classmethod
    def clamped(
        cls,
        values: Sequence[float],
        w_min: float = config.potential.w_min,
        w_max: float = config.potential.w_max,
    ) -> AgentWeights:
        return cls(w=tuple(float(np.clip(v, w_min, w_max)) for v in values), w_min=w_min, w_max=w_max)

    def effective(self, cfg: PotentialConfig) -> AgentWeights:
        return AgentWeights.ones(len(self.w)) if cfg.pin_weights else self

    def __len__(self) -> int:
        return len(self.w)

    def __getitem__(self, i: int) -> float:
        return self.w[i]


@dataclass(frozen=True)
class Normalizers:
    goal: float
    smooth: float
    efficiency: float
    safety: float


@dataclass(frozen=True)
class PotentialTerms:
    goal: float
    smooth: float
    efficiency: float
    safety: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.goal, self.smooth, self.efficiency, self.safety)


def normalizers(scenario: Scenario, cfg: PotentialConfig) -> Normalizers:
    """Analytic maxima of each raw term over the feasible set.

    Vanished terms (one step, or a single agent) keep a unit denominator.
    """
    if cfg.normalizer_override is not None:
        return Normalizers(*cfg.normalizer_override)
    n, horizon, dt, a_max = scenario.n_agents, scenario.horizon, scenario.dt, scenario.a_max
    return Normalizers(
        goal=n * scenario.scene_diag**2,
        smooth=n * max(horizon - 1, 1) * (2.0 * a_max) ** 2,
        efficiency=n * horizon * (a_max * horizon * dt) ** 2,
        safety=n * max(n - 1, 1) * horizon * cfg.safety_radius**2,
    )


def _check_profile(scenario: Scenario, controls: np.ndarray) -> None:
    if controls.shape[0] != scenario.n_agents:
        raise AgentCountMismatchError(scenario.n_agents, controls.shape[0])
    if controls.shape[1] != scenario.horizon:
        raise ValidationError(
            f"Profile horizon {controls.shape[1]} does not match scenario horizon {scenario.horizon}"
        )


def _goal_errors(scenario: Scenario, final_states: np.ndarray) -> np.ndarray:
    """Scaled terminal errors (N, 5) with the heading error wrapped"""
    goals, scales = scenario.goal_arrays()
    errors = final_states - goals
    errors[:, 4] = wrap_angle(errors[:, 4])
    return scales * errors


def _hinge_distances(positions: np.ndarray, d_safe: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pairwise offsets, distances and hinge values over the controlled steps.

    positions is (N, T + 1, 2); results are indexed [i, j, t] for t = 1..T
    with the diagonal hinge forced to zero.
    """
    p = positions[:, 1:, :]
    offsets = p[:, None, :, :] - p[None, :, :, :]
    distances = np.linalg.norm(offsets, axis=-1)
    hinge = np.maximum(0.0, d_safe - distances)
    n = p.shape[0]
    hinge[np.arange(n), np.arange(n), :] = 0.0
    return offsets, distances, hinge


def raw_terms(scenario: Scenario, controls: np.ndarray, cfg: PotentialConfig) -> PotentialTerms:
    """Un-normalized goal, smoothness, efficiency and safety sums"""
    states = rollout_arrays(scenario.initial_array, controls, scenario.dt)
    if cfg.prediction:
        goal = 0.0
    else:
        goal = float(np.sum(_goal_errors(scenario, states[:, -1, :]) ** 2))
    smooth = float(np.sum(np.diff(controls, axis=1) ** 2))
    cumulative = scenario.dt * np.cumsum(controls, axis=1)
    efficiency = float(np.sum(cumulative**2))
    _, _, hinge = _hinge_distances(states[..., :2], cfg.safety_radius)
    safety = float(np.sum(hinge**2))
    return PotentialTerms(goal, smooth, efficiency, safety)


def terms_from_array(scenario: Scenario, controls: np.ndarray, cfg: PotentialConfig) -> PotentialTerms:
    controls = np.asarray(controls, dtype=float)
    _check_profile(scenario, controls)
    raw = raw_terms(scenario, controls, cfg)
    norm = normalizers(scenario, cfg)
    return PotentialTerms(
        raw.goal / norm.goal,
        raw.smooth / norm.smooth,
        raw.efficiency / norm.efficiency,
        raw.safety / norm.safety,
    )


def phi_from_array(scenario: Scenario, controls: np.ndarray, cfg: PotentialConfig) -> float:
    terms = terms_from_array(scenario, controls, cfg)
    return (
        cfg.lambda_goal * terms.goal
        + cfg.lambda_smooth * terms.smooth
        - cfg.lambda_efficiency * terms.efficiency
        + cfg.lambda_safety * terms.safety
    )


def potential_terms(scenario: Scenario, profile: JointProfile, cfg: PotentialConfig | None = None) -> PotentialTerms:
    """The four normalized terms; efficiency is returned as a positive magnitude"""
    return terms_from_array(scenario, profile.stack(), cfg or PotentialConfig())


def potential(scenario: Scenario, profile: JointProfile, cfg: PotentialConfig | None = None) -> float:
    return phi_from_array(scenario, profile.stack(), cfg or PotentialConfig())


def _check_agent(scenario: Scenario, i: int) -> None:
    if not 0 <= i < scenario.n_agents:
        raise ValidationError(f"Agent index {i} out of range for {scenario.n_agents} agents")


def agent_cost(
    scenario: Scenario,
    profile: JointProfile,
    cfg: PotentialConfig,
    weights: AgentWeights,
    i: int,
) -> float:
    _check_agent(scenario, i)
    if len(weights) != scenario.n_agents:
        raise AgentCountMismatchError(scenario.n_agents, len(weights))
    return weights.effective(cfg)[i] * potential(scenario, profile, cfg)


def heading_source_step(speeds: np.ndarray, v_heading_eps: float) -> int:
    """Last step (>= 1) whose speed set the terminal heading, 0 if none did"""
    moving = np.nonzero(speeds[1:] > v_heading_eps)[0]
    return int(moving[-1]) + 1 if moving.size else 0


def grad_from_array(
    scenario: Scenario,
    controls: np.ndarray,
    cfg: PotentialConfig,
    i: int,
    v_heading_eps: float = config.dynamics.v_heading_eps,
) -> np.ndarray:
    """Closed-form d(Phi)/d(a_i), shaped (T, 2)"""
    controls = np.asarray(controls, dtype=float)
    _check_profile(scenario, controls)
    _check_agent(scenario, i)
    dt, horizon = scenario.dt, scenario.horizon
    norm = normalizers(scenario, cfg)
    states = rollout_arrays(scenario.initial_array, controls, dt, v_heading_eps)
    pmap = position_map(horizon, dt)
    own = controls[i]
    grad = np.zeros((horizon, 2))

    if not cfg.prediction and cfg.lambda_goal > 0:
        goals, scales = scenario.goal_arrays()
        error = _goal_errors(scenario, states[:, -1, :])[i]
        weighted = 2.0 * scales[i] * error / norm.goal
        grad[:, 0] += weighted[0] * pmap[horizon] + weighted[2] * dt
        grad[:, 1] += weighted[1] * pmap[horizon] + weighted[3] * dt
        speeds = np.hypot(states[i, :, 2], states[i, :, 3])
        tau = heading_source_step(speeds, v_heading_eps)
        if tau > 0:
            vx, vy = states[i, tau, 2], states[i, tau, 3]
            speed_sq = vx * vx + vy * vy
            grad[:tau, 0] += weighted[4] * (-vy / speed_sq) * dt
            grad[:tau, 1] += weighted[4] * (vx / speed_sq) * dt
        grad *= cfg.lambda_goal

    if cfg.lambda_smooth > 0 and horizon > 1:
        diffs = np.diff(own, axis=0)
        smooth = np.zeros_like(own)
        smooth[1:] += 2.0 * diffs
        smooth[:-1] -= 2.0 * diffs
        grad += cfg.lambda_smooth * smooth / norm.smooth

    if cfg.lambda_efficiency > 0:
        cumulative = dt * np.cumsum(own, axis=0)
        tail = np.cumsum(cumulative[::-1], axis=0)[::-1]
        grad -= cfg.lambda_efficiency * 2.0 * dt * tail / norm.efficiency

    if cfg.lambda_safety > 0 and scenario.n_agents > 1:
        offsets, distances, hinge = _hinge_distances(states[..., :2], cfg.safety_radius)
        active = hinge[i] > 0
        if np.any(active):
            safe_dist = np.where(active, distances[i], 1.0)
            coeff = np.where(active & (distances[i] > 0), -4.0 * hinge[i] / safe_dist, 0.0)
            dp = np.sum(coeff[..., None] * offsets[i], axis=0)
            grad += cfg.lambda_safety * (pmap[1:].T @ dp) / norm.safety

    return grad


def grad_potential_agent(
    scenario: Scenario, profile: JointProfile, cfg: PotentialConfig, i: int
) -> np.ndarray:
    return grad_from_array(scenario, profile.stack(), cfg, i)
