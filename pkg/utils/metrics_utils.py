"""Displacement and collision metrics, the IDM baseline and suite evaluation."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from config import config
from exceptions import SolverError, ValidationError
from utils.best_response_utils import SolverConfig
from utils.calibration_utils import rmse_positions
from utils.dynamics_utils import JointProfile, Trajectory, rollout_arrays
from utils.fictitious_play_utils import DfpConfig, SolveReport, multi_start_solve
from utils.potential_utils import WEIGHT_INVARIANCE_NOTE, AgentWeights, PotentialConfig, Scenario

logger = logging.getLogger(__name__)

__all__: list[str] = (
    "MetricsReport",
    "SuiteResult",
    "IDMParams",
    "ade_fde",
    "collision_check",
    "footprint_collision",
    "idm_accel",
    "idm_rollout",
    "scene_metrics",
    "evaluate_suite",
    "resolve_scene_config",
)

SCENE_COLUMNS = [
    "scene_id",
    "n_agents",
    "ade_m",
    "fde_m",
    "rmse_m",
    "collided",
    "min_pair_distance_m",
    "phi_final",
    "outer_iters",
    "max_nash_gap",
]

MIN_IDM_GAP = 0.1

# the solved (or oracle) joint positions for one scene, shaped (N, T, 2)
OracleHook = Callable[[Scenario], np.ndarray]


@dataclass
class MetricsReport:
    ade: float
    fde: float
    rmse: float
    collided: bool
    min_pair_distance: Optional[float]
    per_agent: list[dict] = field(default_factory=list)


@dataclass
class SuiteResult:
    ade: float
    fde: float
    rmse: float
    collision_rate: float
    n_scenes: int
    excluded: list[str]
    scenes: pd.DataFrame
    mode: str = "planning"
    baseline: str = "game"

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "baseline": self.baseline,
            "n_scenes": self.n_scenes,
            "n_excluded": len(self.excluded),
            "ade_m": self.ade,
            "fde_m": self.fde,
            "rmse_m": self.rmse,
            "collision_rate": self.collision_rate,
        }


def ade_fde(pred_positions: np.ndarray, truth_positions: np.ndarray) -> tuple[float, float]:
    pred = np.asarray(pred_positions, dtype=float)
    truth = np.asarray(truth_positions, dtype=float)
    if pred.shape != truth.shape:
        raise ValidationError(f"Prediction shaped {pred.shape} but ground truth shaped {truth.shape}")
    if pred.ndim != 2 or pred.shape[0] < 1 or pred.shape[1] != 2:
        raise ValidationError(f"Expected (T, 2) positions with T >= 1, got {pred.shape}")
    errors = np.linalg.norm(pred - truth, axis=1)
    return float(errors.mean()), float(errors[-1])


def _positions(trajectory: Trajectory | np.ndarray) -> np.ndarray:
    if isinstance(trajectory, Trajectory):
        return trajectory.positions
    return np.asarray(trajectory, dtype=float)[..., :2]


def collision_check(
    trajectories: Sequence[Trajectory | np.ndarray],
    threshold: float = config.metrics.collision_threshold,
) -> tuple[bool, Optional[float]]:
    """Any pairwise center distance strictly below threshold at a shared step.

    Returns (collided, min pair distance); the distance is None for a lone agent.
    """
    if len(trajectories) < 1:
        raise ValidationError("collision_check needs at least one trajectory")
    positions = np.stack([_positions(t) for t in trajectories])
    if len(trajectories) == 1:
        return False, None
    offsets = positions[:, None, :, :] - positions[None, :, :, :]
    distances = np.linalg.norm(offsets, axis=-1)
    pairs = np.triu_indices(len(trajectories), k=1)
    closest = float(distances[pairs].min())
    return closest < threshold, closest


def _corners(state: np.ndarray, length: float, width: float) -> np.ndarray:
    c, s = np.cos(state[4]), np.sin(state[4])
    half = np.array([[1, 1], [1, -1], [-1, -1], [-1, 1]]) * [0.5 * length, 0.5 * width]
    rotation = np.array([[c, -s], [s, c]])
    return state[:2] + half @ rotation.T


def _overlap(a: np.ndarray, b: np.ndarray) -> bool:
    for poly in (a, b):
        edges = np.roll(poly, -1, axis=0) - poly
        for nx, ny in edges:
            axis = np.array([-ny, nx])
            pa, pb = a @ axis, b @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def footprint_collision(states: np.ndarray, lengths: Sequence[float], widths: Sequence[float]) -> bool:
    """Oriented-rectangle overlap at any step (separating-axis test)"""
    states = np.asarray(states, dtype=float)
    n = states.shape[0]
    for t in range(states.shape[1]):
        boxes = [_corners(states[k, t], lengths[k], widths[k]) for k in range(n)]
        for i in range(n):
            for j in range(i + 1, n):
                if _overlap(boxes[i], boxes[j]):
                    return True
    return False


class IDMParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    v0: float = Field(default=config.idm.v0, gt=0)
    time_headway: float = Field(default=config.idm.time_headway, ge=0)
    s0: float = Field(default=config.idm.s0, ge=0)
    a_idm: float = Field(default=config.idm.a_idm, gt=0)
    b: float = Field(default=config.idm.b, gt=0)
    delta: int = Field(default=config.idm.delta, ge=1)
    lane_half_width: float = Field(default=config.idm.lane_half_width, gt=0)
    vehicle_length: float = Field(default=config.idm.vehicle_length, ge=0)
    free_gap: float = Field(default=config.idm.free_gap, gt=0)


def idm_accel(v: float, gap: float, lead_v: float, params: IDMParams | None = None) -> float:
    params = params or IDMParams()
    if not gap > 0:
        raise ValidationError(f"IDM gap must be positive, got {gap}")
    dv = v - lead_v
    desired = params.s0 + v * params.time_headway + v * dv / (2.0 * np.sqrt(params.a_idm * params.b))
    return float(params.a_idm * (1.0 - (v / params.v0) ** params.delta - (desired / gap) ** 2))


def _leader(k: int, states: np.ndarray, heading: np.ndarray, params: IDMParams) -> tuple[float, float]:
    ahead, lead_v = params.free_gap, float(np.hypot(*states[k, 2:4]))
    normal = np.array([-heading[1], heading[0]])
    for j in range(len(states)):
        if j == k:
            continue
        offset = states[j, :2] - states[k, :2]
        longitudinal = float(offset @ heading)
        if longitudinal <= 0 or abs(float(offset @ normal)) > params.lane_half_width:
            continue
        gap = max(longitudinal - params.vehicle_length, MIN_IDM_GAP)
        if gap < ahead:
            ahead, lead_v = gap, float(states[j, 2:4] @ heading)
    return ahead, lead_v


def idm_rollout(scenario: Scenario, params: IDMParams | None = None) -> np.ndarray:
    """Non-interactive baseline: each agent follows IDM along its initial heading.

    Returns the joint states shaped (N, T + 1, 5).
    """
    params = params or IDMParams()
    states = np.empty((scenario.n_agents, scenario.horizon + 1, 5))
    states[:, 0] = scenario.initial_array
    headings = np.column_stack([np.cos(states[:, 0, 4]), np.sin(states[:, 0, 4])])
    for t in range(scenario.horizon):
        current = states[:, t]
        accel = np.zeros((scenario.n_agents, 2))
        for k in range(scenario.n_agents):
            speed = max(float(current[k, 2:4] @ headings[k]), 0.0)
            gap, lead_v = _leader(k, current, headings[k], params)
            a = np.clip(idm_accel(speed, gap, lead_v, params), -scenario.a_max, scenario.a_max)
            a = max(a, -speed / scenario.dt)
            accel[k] = a * headings[k]
        states[:, t + 1] = rollout_arrays(current, accel[:, None, :], scenario.dt)[:, 1]
    return states


def scene_metrics(
    scenario: Scenario,
    predicted: np.ndarray,
    threshold: float = config.metrics.collision_threshold,
    footprint: bool = False,
) -> MetricsReport:
    """Metrics for one scene from predicted joint positions shaped (N, T, 2).

    With footprint set and track dimensions in the provenance, a collision
    also counts when the oriented vehicle rectangles overlap.
    """
    if scenario.ground_truth is None:
        raise ValidationError(f"Scene {scenario.scene_id} has no ground truth")
    per_agent = []
    for k, agent_id in enumerate(scenario.agent_ids):
        ade, fde = ade_fde(predicted[k], scenario.ground_truth[k])
        per_agent.append(
            {
                "agent_id": agent_id,
                "ade_m": ade,
                "fde_m": fde,
                "rmse_m": rmse_positions(predicted[k], scenario.ground_truth[k]),
            }
        )
    collided, closest = collision_check(list(predicted), threshold)
    dimensions = scenario.provenance.get("dimensions")
    if footprint and dimensions and not collided:
        collided = footprint_collision(_headed_states(scenario, predicted), *zip(*dimensions))
    return MetricsReport(
        ade=float(np.mean([a["ade_m"] for a in per_agent])),
        fde=float(np.mean([a["fde_m"] for a in per_agent])),
        rmse=float(np.mean([a["rmse_m"] for a in per_agent])),
        collided=collided,
        min_pair_distance=closest,
        per_agent=per_agent,
    )


def _headed_states(scenario: Scenario, predicted: np.ndarray) -> np.ndarray:
    """Positions with headings taken from the displacement between steps"""
    points = np.concatenate([scenario.initial_array[:, None, :2], predicted], axis=1)
    steps = np.diff(points, axis=1)
    headings = np.arctan2(steps[..., 1], steps[..., 0])
    still = np.linalg.norm(steps, axis=-1) < 1e-9
    headings[still] = scenario.initial_array[:, None, 4].repeat(predicted.shape[1], axis=1)[still]
    states = np.zeros(predicted.shape[:2] + (5,))
    states[..., :2] = predicted
    states[..., 4] = headings
    return states


def resolve_scene_config(
    scenario: Scenario,
    cfg: Optional[PotentialConfig] = None,
    lambdas: Optional[Sequence[float]] = None,
    mode: str = "planning",
    ablation: str = "none",
) -> PotentialConfig:
    """An explicit config, else the scene's embedded one, else the defaults; lambdas override the term weights"""
    base = cfg or scenario.potential_config or PotentialConfig()
    if lambdas is not None:
        base = base.with_lambdas(lambdas)
    return base.for_mode(mode).with_ablation(ablation)


def evaluate_suite(
    scenarios: Sequence[Scenario],
    cfg: Optional[PotentialConfig] = None,
    weights: Optional[Callable[[Scenario], AgentWeights]] = None,
    dfp: DfpConfig | None = None,
    solver: SolverConfig | None = None,
    mode: Literal["planning", "prediction"] = "planning",
    ablation: Literal["none", "iw", "sc"] = "none",
    baseline: Literal["game", "idm"] = "game",
    oracle: Optional[OracleHook] = None,
    threads: int = config.cli.threads,
    threshold: float = config.metrics.collision_threshold,
    footprint: bool = False,
    lambdas: Optional[Sequence[float]] = None,
) -> SuiteResult:
    """Solve every scene, score it against ground truth and aggregate.

    Unsolvable scenes are excluded and listed; the collision rate is the
    fraction of scored scenes with any collision.
    """
    if not scenarios:
        raise ValidationError("Cannot evaluate an empty suite")
    dfp = dfp or DfpConfig()
    solver = solver or SolverConfig()
    if ablation == "iw" and baseline == "game" and oracle is None:
        logger.warning("-IW ablation pins agent weights to 1; %s", WEIGHT_INVARIANCE_NOTE)

    def run(scenario: Scenario) -> Optional[dict]:
        report: Optional[SolveReport] = None
        try:
            if oracle is not None:
                predicted = np.asarray(oracle(scenario), dtype=float)
            elif baseline == "idm":
                predicted = idm_rollout(scenario)[:, 1:, :2]
            else:
                scene_cfg = resolve_scene_config(scenario, cfg, lambdas, mode, ablation)
                scene_weights = weights(scenario) if weights else AgentWeights.ones(scenario.n_agents)
                profile, report = multi_start_solve(scenario, scene_cfg, scene_weights, dfp, solver, threads=1)
                predicted = _rolled_positions(scenario, profile)
        except SolverError as e:
            logger.warning("scene %s excluded: %s", scenario.scene_id, e)
            return None
        metrics = scene_metrics(scenario, predicted, threshold, footprint)
        return {
            "scene_id": scenario.scene_id,
            "n_agents": scenario.n_agents,
            "ade_m": metrics.ade,
            "fde_m": metrics.fde,
            "rmse_m": metrics.rmse,
            "collided": metrics.collided,
            "min_pair_distance_m": metrics.min_pair_distance,
            "phi_final": report.phi_final if report else None,
            "outer_iters": report.outer_iters if report else None,
            "max_nash_gap": report.max_nash_gap if report else None,
        }

    if threads > 1 and len(scenarios) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run, scenarios))
    else:
        rows = [run(s) for s in scenarios]

    excluded = [s.scene_id for s, row in zip(scenarios, rows) if row is None]
    scored = [row for row in rows if row is not None]
    if not scored:
        raise SolverError(f"All {len(scenarios)} scenes failed to solve")
    table = pd.DataFrame(scored, columns=SCENE_COLUMNS)
    result = SuiteResult(
        ade=float(table["ade_m"].mean()),
        fde=float(table["fde_m"].mean()),
        rmse=float(table["rmse_m"].mean()),
        collision_rate=float(table["collided"].mean()),
        n_scenes=len(scored),
        excluded=excluded,
        scenes=table,
        mode=mode,
        baseline="oracle" if oracle is not None else baseline,
    )
    logger.info(
        "evaluated %d scenes (%d excluded): ADE %.4f m, FDE %.4f m, CL %.2f%%",
        result.n_scenes,
        len(excluded),
        result.ade,
        result.fde,
        100.0 * result.collision_rate,
    )
    return result


def _rolled_positions(scenario: Scenario, profile: JointProfile) -> np.ndarray:
    return rollout_arrays(scenario.initial_array, profile.stack(), scenario.dt)[:, 1:, :2]
