"""Cyclic best-response (fictitious play) outer loop and equilibrium checks."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from config import config
from exceptions import AgentCountMismatchError, AllStartsFailedError, SolverError, ValidationError
from utils.best_response_utils import Backend, SolverConfig, best_response
from utils.dynamics_utils import JointProfile, project_array
from utils.potential_utils import AgentWeights, PotentialConfig, Scenario, phi_from_array

logger = logging.getLogger(__name__)

__all__: list[str] = (
    "DfpConfig",
    "SolveReport",
    "dfp_solve",
    "nash_gap",
    "multi_start_solve",
    "warm_start_policy",
    "descent_violations",
)

DESCENT_SLACK = 1e-12


class DfpConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    max_outer_iters: int = Field(default=config.fictitious_play.max_outer_iters, ge=1)
    phi_tol: float = Field(default=config.fictitious_play.phi_tol, gt=0)
    control_tol: float = Field(default=config.fictitious_play.control_tol, gt=0)
    stationarity_tol: float = Field(default=config.fictitious_play.stationarity_tol, gt=0)
    n_starts: int = Field(default=config.fictitious_play.n_starts, ge=1)
    rng_seed: int = config.fictitious_play.rng_seed
    perturbation_sigma: float = Field(default=config.fictitious_play.perturbation_sigma, ge=0)
    order: Optional[tuple[int, ...]] = None

    def update_order(self, n_agents: int) -> tuple[int, ...]:
        if self.order is None:
            return tuple(range(n_agents))
        if sorted(self.order) != list(range(n_agents)):
            raise ValidationError(f"Update order {self.order} is not a permutation of {n_agents} agents")
        return self.order


@dataclass
class SolveReport:
    phi_trace: list[float] = field(default_factory=list)
    delta_trace: list[float] = field(default_factory=list)
    nash_gaps: list[float] = field(default_factory=list)
    outer_iters: int = 0
    converged: bool = False
    stationarity: float = float("nan")
    start_index: int = 0
    start_phis: list[Optional[float]] = field(default_factory=list)

    @property
    def phi_final(self) -> float:
        return self.phi_trace[-1] if self.phi_trace else float("nan")

    @property
    def max_nash_gap(self) -> float:
        return max(self.nash_gaps) if self.nash_gaps else float("nan")


def descent_violations(report: SolveReport, slack: float = DESCENT_SLACK) -> list[int]:
    """Outer iterations k where Phi(a^{k+1}) > Phi(a^k) + Delta_k"""
    return [
        k
        for k, delta in enumerate(report.delta_trace)
        if report.phi_trace[k + 1] > report.phi_trace[k] + delta + slack
    ]


def warm_start_policy(
    scenario: Scenario,
    prediction: bool = False,
) -> JointProfile:
    """Heuristic initial profile.

    Planning: per agent, the constant acceleration whose rollout lands on
    the goal position at the horizon, projected onto the feasible ball.
    Prediction: constant velocity (all-zero accelerations).
    """
    n, horizon, dt = scenario.n_agents, scenario.horizon, scenario.dt
    if prediction:
        return JointProfile.zeros(n, horizon, dt)
    goals, _ = scenario.goal_arrays()
    initial = scenario.initial_array
    span = horizon * dt
    drift = initial[:, :2] + span * initial[:, 2:4]
    accel = 2.0 * (goals[:, :2] - drift) / (span * span)
    controls = np.repeat(accel[:, None, :], horizon, axis=1)
    return JointProfile.from_array(project_array(controls, scenario.a_max), dt)


def _check_init(scenario: Scenario, init: JointProfile, weights: AgentWeights) -> None:
    if init.n_agents != scenario.n_agents:
        raise AgentCountMismatchError(scenario.n_agents, init.n_agents)
    if len(weights) != scenario.n_agents:
        raise AgentCountMismatchError(scenario.n_agents, len(weights))
    if init.horizon != scenario.horizon:
        raise ValidationError(f"Initial profile horizon {init.horizon} != scenario horizon {scenario.horizon}")


def dfp_solve(
    scenario: Scenario,
    cfg: PotentialConfig,
    weights: AgentWeights,
    init: JointProfile,
    dfp: DfpConfig | None = None,
    solver: SolverConfig | None = None,
    certify: bool = True,
) -> tuple[JointProfile, SolveReport]:
    """Gauss-Seidel best-response sweeps until Phi and the controls stall at a stationary point.

    Converged means the last sweep also left every agent's projected
    gradient on the potential below stationarity_tol.
    """
    dfp = dfp or DfpConfig()
    solver = solver or SolverConfig()
    _check_init(scenario, init, weights)
    order = dfp.update_order(scenario.n_agents)

    profile = init
    phi = phi_from_array(scenario, profile.stack(), cfg)
    report = SolveReport(phi_trace=[phi])

    for k in range(1, dfp.max_outer_iters + 1):
        previous = profile.stack()
        bounds: list[float] = []
        stationarity: list[float] = []
        for i in order:
            try:
                result = best_response(scenario, profile, cfg, weights, i, solver)
            except SolverError as e:
                e.report = report
                raise
            profile = profile.replace_agent(i, result.controls)
            bounds.append(result.suboptimality_bound)
            stationarity.append(result.stationarity)

        phi_new = phi_from_array(scenario, profile.stack(), cfg)
        change = float(np.max(np.abs(profile.stack() - previous)))
        report.phi_trace.append(phi_new)
        report.delta_trace.append(max(bounds))
        report.outer_iters = k
        report.stationarity = max(stationarity)
        logger.debug("sweep %d: phi %.8g, max control change %.3g, delta %.3g", k, phi_new, change, max(bounds))

        stalled = abs(phi_new - phi) < dfp.phi_tol
        phi = phi_new
        if change < dfp.control_tol and stalled and report.stationarity < dfp.stationarity_tol:
            report.converged = True
            break

    if certify:
        report.nash_gaps = nash_gap(scenario, profile, cfg, weights, solver)
    logger.info(
        "scene %s: phi %.6g after %d sweeps (converged=%s)",
        scenario.scene_id,
        report.phi_final,
        report.outer_iters,
        report.converged,
    )
    return profile, report


def nash_gap(
    scenario: Scenario,
    profile: JointProfile,
    cfg: PotentialConfig,
    weights: AgentWeights,
    solver: SolverConfig | None = None,
    budget_factor: int = config.solver.verify_budget_factor,
) -> list[float]:
    """Per-agent cost improvement from a fresh, larger-budget unilateral re-solve.

    Always re-solves with projected gradient on the potential as written so a
    surrogate optimum is never certified.
    """
    solver = (solver or SolverConfig()).scaled_budget(budget_factor)
    solver = solver.model_copy(update={"backend": Backend.PROJECTED_GRADIENT})
    if profile.n_agents != scenario.n_agents:
        raise AgentCountMismatchError(scenario.n_agents, profile.n_agents)
    effective = weights.effective(cfg)
    gaps = []
    for i in range(scenario.n_agents):
        result = best_response(scenario, profile, cfg, weights, i, solver)
        gap = effective[i] * (result.phi_before - result.phi_after)
        gaps.append(max(0.0, gap))
    return gaps


def _start_profiles(scenario: Scenario, cfg: PotentialConfig, dfp: DfpConfig) -> list[JointProfile]:
    warm = warm_start_policy(scenario, prediction=cfg.prediction)
    starts = [warm]
    base = warm.stack()
    for s in range(1, dfp.n_starts):
        rng = np.random.default_rng([dfp.rng_seed, s])
        noisy = base + rng.normal(0.0, dfp.perturbation_sigma, size=base.shape)
        starts.append(JointProfile.from_array(project_array(noisy, scenario.a_max), scenario.dt))
    return starts


def multi_start_solve(
    scenario: Scenario,
    cfg: PotentialConfig,
    weights: AgentWeights,
    dfp: DfpConfig | None = None,
    solver: SolverConfig | None = None,
    threads: int = config.cli.threads,
    certify: bool = True,
) -> tuple[JointProfile, SolveReport]:
    """Solve from the warm start plus seeded perturbations; keep the lowest final Phi"""
    dfp = dfp or DfpConfig()
    solver = solver or SolverConfig()
    starts = _start_profiles(scenario, cfg, dfp)

    def run(start: JointProfile):
        try:
            return dfp_solve(scenario, cfg, weights, start, dfp, solver, certify=False)
        except SolverError as e:
            logger.warning("scene %s: start failed: %s", scenario.scene_id, e)
            return None

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run, starts))
    else:
        outcomes = [run(s) for s in starts]

    start_phis = [None if o is None else o[1].phi_final for o in outcomes]
    candidates = [(o[1].phi_final, idx) for idx, o in enumerate(outcomes) if o is not None]
    if not candidates:
        raise AllStartsFailedError(f"All {len(starts)} starts failed for scene {scenario.scene_id}")
    _, best = min(candidates)
    profile, report = outcomes[best]
    report = replace(report, start_index=best, start_phis=start_phis)
    if certify:
        report.nash_gaps = nash_gap(scenario, profile, cfg, weights, solver)
    return profile, report
