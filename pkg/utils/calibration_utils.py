"""Fit the global term weights to demonstrations.

Coordinate-wise finite differences through the full equilibrium solve,
with monotone acceptance on the mean replay RMSE. Per-agent weights stay
at w_init: each cost is w_i times the shared potential, so every best
response and every equilibrium is the same for any positive w and the
replay loss carries no signal about them.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.stats import spearmanr

from config import config
from exceptions import CalibrationError, SolverError, ValidationError
from utils.best_response_utils import SolverConfig
from utils.dynamics_utils import JointProfile, rollout_arrays
from utils.fictitious_play_utils import DfpConfig, multi_start_solve
from utils.potential_utils import WEIGHT_INVARIANCE_NOTE, AgentWeights, PotentialConfig, Scenario

logger = logging.getLogger(__name__)

__all__: list[str] = (
    "CalibrationConfig",
    "CalibrationResult",
    "rmse_positions",
    "replay_rmse",
    "calibrate",
    "make_demo",
    "weight_dynamics_report",
    "weight_speed_correlation",
)

SUMMARY_COLUMNS = ["scene_id", "agent_id", "w", "mean_speed_mps", "mean_accel_mps2"]


class CalibrationConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    max_epochs: int = Field(default=config.calibration.max_epochs, ge=0)
    fd_step: float = Field(default=config.calibration.fd_step, gt=0)
    fd_floor: float = Field(default=config.calibration.fd_floor, gt=0)
    learning_rate: float = Field(default=config.calibration.learning_rate, gt=0)
    lambda_init: float = Field(default=config.calibration.lambda_init, ge=0)
    w_init: float = Field(default=config.calibration.w_init, gt=0)
    w_min: float = Field(default=config.potential.w_min, gt=0)
    w_max: float = Field(default=config.potential.w_max, gt=0)
    seed: int = config.fictitious_play.rng_seed

    @model_validator(mode="after")
    def validate_clamp(self):
        if self.w_min > self.w_max:
            raise ValueError("w_min must not exceed w_max")
        if not self.w_min <= self.w_init <= self.w_max:
            raise ValueError("w_init must lie inside the clamp")
        return self


@dataclass
class CalibrationResult:
    lambdas: PotentialConfig
    agent_weights: dict[str, AgentWeights]
    loss_trace: list[float]
    excluded: list[str] = field(default_factory=list)
    summary: Optional[pd.DataFrame] = None

    @property
    def final_loss(self) -> float:
        return self.loss_trace[-1]


def rmse_positions(pred: np.ndarray, truth: np.ndarray) -> float:
    """sqrt of the mean squared Euclidean position error over the steps"""
    pred, truth = np.asarray(pred, dtype=float), np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValidationError(f"Position arrays differ in shape: {pred.shape} vs {truth.shape}")
    return float(np.sqrt(np.mean(np.sum((pred - truth) ** 2, axis=-1))))


def replay_rmse(scenario: Scenario, solved_profile: JointProfile, ground_truth_positions: np.ndarray) -> float:
    """Per-agent RMSE of the rolled-out plan against ground truth, averaged over agents"""
    truth = np.asarray(ground_truth_positions, dtype=float)
    if truth.shape != (scenario.n_agents, solved_profile.horizon, 2):
        raise ValidationError(
            f"Ground truth shaped {truth.shape}, expected {(scenario.n_agents, solved_profile.horizon, 2)}"
        )
    states = rollout_arrays(scenario.initial_array, solved_profile.stack(), scenario.dt)
    return float(np.mean([rmse_positions(states[k, 1:, :2], truth[k]) for k in range(scenario.n_agents)]))


def make_demo(
    scenario: Scenario,
    cfg: PotentialConfig,
    weights: AgentWeights,
    dfp: DfpConfig | None = None,
    solver: SolverConfig | None = None,
) -> Scenario:
    """The scenario with its ground truth replaced by the solved equilibrium"""
    profile, _ = multi_start_solve(scenario, cfg, weights, dfp, solver, certify=False)
    states = rollout_arrays(scenario.initial_array, profile.stack(), scenario.dt)
    return replace(scenario, ground_truth=states[:, 1:, :2])


class _Objective:
    def __init__(
        self,
        demos: Sequence[Scenario],
        base: PotentialConfig,
        dfp: DfpConfig,
        solver: SolverConfig,
        threads: int,
        cfg: CalibrationConfig,
    ) -> None:
        self.demos = list(demos)
        self.base = base
        self.dfp = dfp
        self.solver = solver
        self.threads = threads
        self.cfg = cfg

    def weights_for(self, demo: Scenario) -> AgentWeights:
        return AgentWeights(w=(self.cfg.w_init,) * demo.n_agents, w_min=self.cfg.w_min, w_max=self.cfg.w_max)

    def demo_loss(self, demo: Scenario, lambdas: np.ndarray) -> float:
        cfg = self.base.with_lambdas(lambdas)
        profile, _ = multi_start_solve(
            demo, cfg, self.weights_for(demo), self.dfp, self.solver, threads=1, certify=False
        )
        return replay_rmse(demo, profile, demo.ground_truth)

    def loss(self, lambdas: np.ndarray) -> float:
        def run(demo: Scenario) -> float:
            return self.demo_loss(demo, lambdas)

        if self.threads > 1 and len(self.demos) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                values = list(pool.map(run, self.demos))
        else:
            values = [run(d) for d in self.demos]
        return float(np.mean(values))


def _fd_step(value: float, cfg: CalibrationConfig) -> float:
    return max(cfg.fd_step * abs(value), cfg.fd_floor)


def calibrate(
    demos: Sequence[Scenario],
    cfg: CalibrationConfig | None = None,
    dfp: DfpConfig | None = None,
    solver: SolverConfig | None = None,
    base: PotentialConfig | None = None,
    threads: int = config.cli.threads,
) -> CalibrationResult:
    """Finite-difference descent of the term weights on the mean replay RMSE over the demonstrations"""
    cfg = cfg or CalibrationConfig()
    dfp = (dfp or DfpConfig()).model_copy(update={"rng_seed": cfg.seed})
    solver = solver or SolverConfig()
    base = base or PotentialConfig()
    if not demos:
        raise CalibrationError("Calibration needs at least one demonstration")

    lambdas = np.full(4, cfg.lambda_init)
    if base.prediction:
        lambdas[0] = 0.0
    usable: list[Scenario] = []
    excluded: list[str] = []
    for demo in demos:
        if demo.ground_truth is None:
            logger.warning("demo %s has no ground truth; excluded", demo.scene_id)
            excluded.append(demo.scene_id)
            continue
        try:
            _Objective([demo], base, dfp, solver, 1, cfg).demo_loss(demo, lambdas)
        except SolverError as e:
            logger.warning("demo %s is unsolvable and excluded: %s", demo.scene_id, e)
            excluded.append(demo.scene_id)
            continue
        usable.append(demo)
    if not usable:
        raise CalibrationError(f"All {len(demos)} demonstrations were excluded")

    objective = _Objective(usable, base, dfp, solver, threads, cfg)
    loss = objective.loss(lambdas)
    loss_trace = [loss]
    rate = cfg.learning_rate
    free = [k for k in range(4) if not (base.prediction and k == 0)]

    for epoch in range(1, cfg.max_epochs + 1):
        grad = np.zeros(4)
        for k in free:
            h = _fd_step(lambdas[k], cfg)
            bumped = lambdas.copy()
            bumped[k] += h
            grad[k] = (objective.loss(bumped) - loss) / h

        trial = np.maximum(lambdas - rate * grad, 0.0)
        if base.prediction:
            trial[0] = 0.0
        trial_loss = objective.loss(trial)
        if trial_loss < loss:
            lambdas, loss = trial, trial_loss
        else:
            rate *= 0.5
        loss_trace.append(loss)
        logger.info("epoch %d: mean replay RMSE %.6f m (rate %.3g)", epoch, loss, rate)

    result = CalibrationResult(
        lambdas=base.with_lambdas(lambdas),
        agent_weights={d.scene_id: objective.weights_for(d) for d in usable},
        loss_trace=loss_trace,
        excluded=excluded,
    )
    result.summary = weight_dynamics_report(result, usable)
    return result


def _history_dynamics(scenario: Scenario, k: int) -> tuple[float, float]:
    history = np.stack([s.as_array() for s in scenario.histories[k]]) if scenario.history_length else None
    if history is None:
        state = scenario.initial_states[k]
        return state.speed, 0.0
    velocities = history[:, 2:4]
    speed = float(np.mean(np.linalg.norm(velocities, axis=1)))
    if len(history) < 2:
        return speed, 0.0
    accel = float(np.mean(np.linalg.norm(np.diff(velocities, axis=0), axis=1) / scenario.dt))
    return speed, accel


def weight_dynamics_report(result: CalibrationResult, demos: Sequence[Scenario]) -> pd.DataFrame:
    """One row per calibrated agent: weight against its history's mean speed and acceleration"""
    rows = []
    for demo in demos:
        weights = result.agent_weights.get(demo.scene_id)
        if weights is None:
            continue
        for k, agent_id in enumerate(demo.agent_ids):
            speed, accel = _history_dynamics(demo, k)
            rows.append(
                {
                    "scene_id": demo.scene_id,
                    "agent_id": agent_id,
                    "w": weights[k],
                    "mean_speed_mps": speed,
                    "mean_accel_mps2": accel,
                }
            )
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def weight_speed_correlation(summary: pd.DataFrame) -> float:
    """Spearman rank correlation between weights and mean speeds (nan if undefined)"""
    if len(summary) >= 2 and summary["w"].nunique() < 2:
        logger.warning(
            "constant weights (%s) have no speed correlation; %s", summary["w"].iloc[0], WEIGHT_INVARIANCE_NOTE
        )
        return float("nan")
    if len(summary) < 2 or summary["mean_speed_mps"].nunique() < 2:
        return float("nan")
    return float(spearmanr(summary["w"], summary["mean_speed_mps"]).statistic)
