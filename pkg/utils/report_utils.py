"""Versioned JSON documents for scenarios, solve reports, calibration results and run manifests."""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Any, Optional, Type, TypeVar

import numpy as np
import pydantic
from pydantic import BaseModel, Field

from exceptions import ArtifactIOError, ValidationError
from utils.calibration_utils import CalibrationResult
from utils.dynamics_utils import JointProfile, VehicleState, rollout_arrays
from utils.fictitious_play_utils import SolveReport
from utils.potential_utils import AgentWeights, GoalState, PotentialConfig, Scenario

logger = logging.getLogger(__name__)

__all__: list[str] = (
    "SCHEMA_VERSION",
    "AgentDocument",
    "ScenarioDocument",
    "SolveReportDocument",
    "CalibrationDocument",
    "RunManifest",
    "dump_json",
    "write_document",
    "read_document",
    "scenario_to_document",
    "document_to_scenario",
    "document_weights",
    "solve_report_document",
    "calibration_document",
)

SCHEMA_VERSION = 1

Document = TypeVar("Document", bound=BaseModel)


class AgentDocument(BaseModel):
    id: str
    initial_state: list[float] = Field(min_length=5, max_length=5)
    goal: Optional[list[float]] = Field(default=None, min_length=5, max_length=5)
    goal_component_scale: Optional[list[float]] = Field(default=None, min_length=5, max_length=5)
    history: list[list[float]] = Field(default_factory=list)
    weight: Optional[float] = None


class ScenarioDocument(BaseModel):
    schema_version: int = SCHEMA_VERSION
    scene_id: str
    agents: list[AgentDocument] = Field(min_length=1)
    dt: float
    horizon: int
    a_max: float
    scene_diag: float
    potential_config: Optional[dict[str, Any]] = None
    provenance: dict[str, Any] = Field(default_factory=dict)
    ground_truth: Optional[list[list[list[float]]]] = None


class SolveReportDocument(BaseModel):
    schema_version: int = SCHEMA_VERSION
    scene_id: str
    mode: str
    backend: str
    converged: bool
    stationarity: Optional[float] = None
    outer_iters: int
    start_index: int
    start_phis: list[Optional[float]]
    phi_trace: list[float]
    delta_trace: list[float]
    nash_gaps: list[float]
    phi_final: Optional[float]
    max_nash_gap: Optional[float]
    weights: list[float]
    potential_config: dict[str, Any]
    dt: float
    profile: list[list[list[float]]]
    trajectories: list[list[list[float]]]
    error: Optional[str] = None


class CalibrationDocument(BaseModel):
    schema_version: int = SCHEMA_VERSION
    lambdas: dict[str, Any]
    agent_weights: dict[str, list[float]]
    w_min: float
    w_max: float
    loss_trace: list[float]
    excluded: list[str] = Field(default_factory=list)
    seed: int


class RunManifest(BaseModel):
    schema_version: int = SCHEMA_VERSION
    command: str
    argv: list[str]
    artifact_version: str
    config_path: Optional[str]
    config_snapshot: dict[str, Any]
    seeds: dict[str, int] = Field(default_factory=dict)
    inputs: list[str] = Field(default_factory=list)
    outputs: list[str] = Field(default_factory=list)
    timings_s: dict[str, float] = Field(default_factory=dict)
    exit_code: int = 0


def _clean(value: Any) -> Any:
    """Non-finite floats become null; numpy scalars and arrays become plain Python"""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, np.generic):
        return _clean(value.item())
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def dump_json(document: BaseModel) -> str:
    # json writes floats with their shortest round-trip repr
    return json.dumps(_clean(document.model_dump(mode="python")), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_document(path: str | Path, document: BaseModel) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dump_json(document), encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(f"Could not write {path}: {e}") from e
    logger.debug("wrote %s", path)
    return path


def read_document(path: str | Path, model: Type[Document]) -> Document:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(f"Could not read {path}: {e}") from e
    try:
        document = model.model_validate_json(text)
    except pydantic.ValidationError as e:
        raise ValidationError(f"{path} is not a valid {model.__name__}: {e}") from e
    if document.schema_version != SCHEMA_VERSION:
        raise ValidationError(
            f"{path} has schema_version {document.schema_version}, expected {SCHEMA_VERSION}"
        )
    return document


def scenario_to_document(scenario: Scenario, weights: Optional[AgentWeights] = None) -> ScenarioDocument:
    agents = []
    for k in range(scenario.n_agents):
        goal = scenario.goals[k] if scenario.goals is not None else None
        agents.append(
            AgentDocument(
                id=scenario.agent_ids[k],
                initial_state=scenario.initial_states[k].as_array().tolist(),
                goal=None if goal is None else goal.as_array().tolist(),
                goal_component_scale=None if goal is None else list(goal.component_scale),
                history=[s.as_array().tolist() for s in scenario.histories[k]],
                weight=None if weights is None else weights[k],
            )
        )
    return ScenarioDocument(
        scene_id=scenario.scene_id,
        agents=agents,
        dt=scenario.dt,
        horizon=scenario.horizon,
        a_max=scenario.a_max,
        scene_diag=scenario.scene_diag,
        potential_config=None if scenario.potential_config is None else scenario.potential_config.model_dump(),
        provenance=_clean(scenario.provenance),
        ground_truth=None if scenario.ground_truth is None else scenario.ground_truth.tolist(),
    )


def document_to_scenario(document: ScenarioDocument) -> Scenario:
    """Rebuild the numeric scenario; domain validation errors propagate"""
    goals = []
    for agent in document.agents:
        if agent.goal is None:
            goals.append(None)
            continue
        scale = tuple(agent.goal_component_scale) if agent.goal_component_scale else None
        goal = GoalState(*agent.goal) if scale is None else GoalState(*agent.goal, component_scale=scale)
        goals.append(goal)
    try:
        potential_config = (
            None if document.potential_config is None else PotentialConfig(**document.potential_config)
        )
    except pydantic.ValidationError as e:
        raise ValidationError(f"Invalid potential_config in scene {document.scene_id}: {e}") from e
    return Scenario(
        initial_states=tuple(VehicleState.from_array(a.initial_state) for a in document.agents),
        goals=None if all(g is None for g in goals) else tuple(goals),
        histories=tuple(tuple(VehicleState.from_array(s) for s in a.history) for a in document.agents),
        dt=document.dt,
        horizon=document.horizon,
        a_max=document.a_max,
        scene_diag=document.scene_diag,
        agent_ids=tuple(a.id for a in document.agents),
        scene_id=document.scene_id,
        ground_truth=None if document.ground_truth is None else np.asarray(document.ground_truth, dtype=float),
        potential_config=potential_config,
        provenance=dict(document.provenance),
    )


def document_weights(document: ScenarioDocument) -> Optional[AgentWeights]:
    """Per-agent weights stored with a demonstration, if every agent carries one"""
    values = [a.weight for a in document.agents]
    if any(v is None for v in values):
        return None
    return AgentWeights(w=tuple(values))


def solve_report_document(
    scenario: Scenario,
    profile: JointProfile,
    report: SolveReport,
    cfg: PotentialConfig,
    weights: AgentWeights,
    mode: str,
    backend: str,
    error: Optional[str] = None,
) -> SolveReportDocument:
    trajectories = rollout_arrays(scenario.initial_array, profile.stack(), scenario.dt)
    return SolveReportDocument(
        scene_id=scenario.scene_id,
        mode=mode,
        backend=backend,
        converged=report.converged,
        stationarity=report.stationarity,
        outer_iters=report.outer_iters,
        start_index=report.start_index,
        start_phis=report.start_phis,
        phi_trace=report.phi_trace,
        delta_trace=report.delta_trace,
        nash_gaps=report.nash_gaps,
        phi_final=report.phi_final,
        max_nash_gap=report.max_nash_gap,
        weights=list(weights.w),
        potential_config=cfg.model_dump(),
        dt=profile.dt,
        profile=profile.stack().tolist(),
        trajectories=trajectories.tolist(),
        error=error,
    )


def calibration_document(result: CalibrationResult, seed: int) -> CalibrationDocument:
    first = next(iter(result.agent_weights.values()), None)
    return CalibrationDocument(
        lambdas=result.lambdas.model_dump(),
        agent_weights={sid: list(w.w) for sid, w in result.agent_weights.items()},
        w_min=first.w_min if first else AgentWeights.ones(1).w_min,
        w_max=first.w_max if first else AgentWeights.ones(1).w_max,
        loss_trace=result.loss_trace,
        excluded=result.excluded,
        seed=seed,
    )
