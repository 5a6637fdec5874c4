"""Single-agent best responses with every other agent's controls frozen.

Two backends: a Levenberg-Marquardt solve on a least-squares surrogate
of the potential (efficiency as a hinge against a progress reference)
finished by projected-gradient descent on the true potential, and the
projected-gradient descent alone. Both only accept iterates that lower
the potential.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from config import config
from exceptions import SolverDivergenceError, ValidationError
from utils.dynamics_utils import ControlSequence, JointProfile, position_map, project_array, rollout_arrays
from utils.potential_utils import (
    AgentWeights,
    PotentialConfig,
    Scenario,
    _goal_errors,
    _hinge_distances,
    grad_from_array,
    heading_source_step,
    normalizers,
    phi_from_array,
)

logger = logging.getLogger(__name__)

__all__: list[str] = (
    "Backend",
    "SolverConfig",
    "BestResponseResult",
    "LMResiduals",
    "best_response",
    "lm_residuals",
    "projected_gradient_step",
)

SPECTRAL_STEP_MIN = 1e-10
SPECTRAL_STEP_MAX = 1e10
ARMIJO_FRACTION = 1e-4


class Backend(str, Enum):
    LEVENBERG_MARQUARDT = "lm"
    PROJECTED_GRADIENT = "pg"


class SolverConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    backend: Backend = Backend(config.solver.backend)
    step_size: float = Field(default=config.solver.step_size, gt=0)
    max_inner_iters: int = Field(default=config.solver.max_inner_iters, ge=1)
    grad_tol: float = Field(default=config.solver.grad_tol, gt=0)
    lm_damping_init: float = Field(default=config.solver.lm_damping_init, gt=0)
    max_halvings: int = Field(default=config.solver.max_halvings, ge=0)

    def scaled_budget(self, factor: int) -> SolverConfig:
        return self.model_copy(update={"max_inner_iters": self.max_inner_iters * factor})


@dataclass(frozen=True)
class BestResponseResult:
    controls: ControlSequence
    phi_before: float
    phi_after: float
    suboptimality_bound: float
    inner_iters: int
    stationarity: float


@dataclass(frozen=True)
class LMResiduals:
    residuals: np.ndarray
    jacobian: np.ndarray
    blocks: dict[str, slice]

    def block_sum_of_squares(self, name: str) -> float:
        return float(np.sum(self.residuals[self.blocks[name]] ** 2))


class _AgentProblem:
    """Agent i's slice of the potential with the other agents held fixed"""

    def __init__(self, scenario: Scenario, controls: np.ndarray, cfg: PotentialConfig, i: int) -> None:
        if not 0 <= i < scenario.n_agents:
            raise ValidationError(f"Agent index {i} out of range for {scenario.n_agents} agents")
        self.scenario = scenario
        self.cfg = cfg
        self.i = i
        self.base = np.array(controls, dtype=float)
        self.norm = normalizers(scenario, cfg)
        self.pmap = position_map(scenario.horizon, scenario.dt)
        self.others = [j for j in range(scenario.n_agents) if j != i]

    def joint(self, own: np.ndarray) -> np.ndarray:
        controls = self.base.copy()
        controls[self.i] = own
        return controls

    def phi(self, own: np.ndarray) -> float:
        return phi_from_array(self.scenario, self.joint(own), self.cfg)

    def grad(self, own: np.ndarray) -> np.ndarray:
        return grad_from_array(self.scenario, self.joint(own), self.cfg, self.i)

    def project(self, own: np.ndarray) -> np.ndarray:
        return project_array(own, self.scenario.a_max)

    def stationarity(self, own: np.ndarray, grad: np.ndarray) -> float:
        """Norm of the projected, infinity-normalized gradient step"""
        scaled = grad / max(1.0, float(np.max(np.abs(grad))))
        return float(np.linalg.norm(own - self.project(own - scaled)))

    def residuals(self, own: np.ndarray) -> LMResiduals:
        scenario, cfg, norm, i = self.scenario, self.cfg, self.norm, self.i
        dt, horizon = scenario.dt, scenario.horizon
        n_vars = 2 * horizon
        states = rollout_arrays(scenario.initial_array, self.joint(own), dt)
        rows: list[np.ndarray] = []
        jac: list[np.ndarray] = []
        blocks: dict[str, slice] = {}
        start = 0

        def add(name: str, r: np.ndarray, j: np.ndarray) -> None:
            nonlocal start
            rows.append(r)
            jac.append(j.reshape(len(r), n_vars))
            blocks[name] = slice(start, start + len(r))
            start += len(r)

        if not cfg.prediction and scenario.has_goals:
            _, scales = scenario.goal_arrays()
            coef = np.sqrt(cfg.lambda_goal / norm.goal)
            error = _goal_errors(scenario, states[:, -1, :])[i]
            j_goal = np.zeros((5, horizon, 2))
            j_goal[0, :, 0] = self.pmap[horizon]
            j_goal[1, :, 1] = self.pmap[horizon]
            j_goal[2, :, 0] = dt
            j_goal[3, :, 1] = dt
            speeds = np.hypot(states[i, :, 2], states[i, :, 3])
            tau = heading_source_step(speeds, config.dynamics.v_heading_eps)
            if tau > 0:
                vx, vy = states[i, tau, 2], states[i, tau, 3]
                speed_sq = vx * vx + vy * vy
                j_goal[4, :tau, 0] = -vy / speed_sq * dt
                j_goal[4, :tau, 1] = vx / speed_sq * dt
            add("goal", coef * error, coef * scales[i][:, None, None] * j_goal)

        if horizon > 1:
            coef = np.sqrt(cfg.lambda_smooth / norm.smooth)
            diffs = np.diff(own, axis=0)
            j_smooth = np.zeros((horizon - 1, 2, horizon, 2))
            steps = np.arange(horizon - 1)
            for d in range(2):
                j_smooth[steps, d, steps + 1, d] = 1.0
                j_smooth[steps, d, steps, d] = -1.0
            add("smooth", coef * diffs.reshape(-1), coef * j_smooth)

        if self.others:
            coef = np.sqrt(2.0 * cfg.lambda_safety / norm.safety)
            offsets, distances, hinge = _hinge_distances(states[..., :2], cfg.safety_radius)
            h = hinge[i, self.others]
            off = offsets[i, self.others]
            dist = distances[i, self.others]
            active = (h > 0) & (dist > 0)
            unit = np.where(active[..., None], off / np.where(dist > 0, dist, 1.0)[..., None], 0.0)
            # d(hinge)/d(a_k) = -unit(t) * M[t, k] for the controlled steps t = 1..T
            j_safety = -unit[:, :, None, :] * self.pmap[1:][None, :, :, None]
            add("safety", coef * h.reshape(-1), coef * j_safety)

        coef = np.sqrt(cfg.lambda_efficiency / norm.efficiency)
        cumulative = dt * np.cumsum(own, axis=0)
        magnitude = np.linalg.norm(cumulative, axis=1)
        reference = np.minimum(scenario.a_max * dt * np.arange(1, horizon + 1), cfg.v_progress_target)
        hinge_eff = np.maximum(0.0, reference - magnitude)
        theta0 = scenario.initial_states[i].theta
        fallback = np.array([np.cos(theta0), np.sin(theta0)])
        direction = np.where(
            (magnitude > 0)[:, None], cumulative / np.where(magnitude > 0, magnitude, 1.0)[:, None], fallback
        )
        lower = np.tril(np.ones((horizon, horizon)))
        active = hinge_eff > 0
        j_eff = -dt * (active[:, None, None] * lower[:, :, None] * direction[:, None, :])
        add("efficiency", coef * hinge_eff, coef * j_eff)

        return LMResiduals(np.concatenate(rows), np.concatenate(jac, axis=0), blocks)


def lm_residuals(scenario: Scenario, profile: JointProfile, cfg: PotentialConfig, i: int) -> LMResiduals:
    """Stacked, normalized least-squares residuals for agent i and their Jacobian.

    The Jacobian columns follow the row-major flattening of the (T, 2)
    control array.
    """
    problem = _AgentProblem(scenario, profile.stack(), cfg, i)
    return problem.residuals(problem.base[i])


def _pg_step(problem: _AgentProblem, own: np.ndarray, phi: float, grad: np.ndarray, step: float, max_halvings: int):
    scaled = grad / max(1.0, float(np.max(np.abs(grad))))
    if not np.any(scaled):
        return own, phi, False
    for _ in range(max_halvings + 1):
        candidate = problem.project(own - step * scaled)
        value = problem.phi(candidate)
        if np.isfinite(value) and value < phi:
            return candidate, value, True
        step *= 0.5
    return own, phi, False


def projected_gradient_step(
    scenario: Scenario,
    profile: JointProfile,
    cfg: PotentialConfig,
    i: int,
    gradient: np.ndarray,
    step: float,
    max_halvings: int = config.solver.max_halvings,
) -> ControlSequence:
    """One projected step on agent i with backtracking; unchanged if nothing decreases"""
    gradient = np.asarray(gradient, dtype=float)
    if gradient.shape != (scenario.horizon, 2):
        raise ValidationError(f"Gradient must be shaped {(scenario.horizon, 2)}, got {gradient.shape}")
    problem = _AgentProblem(scenario, profile.stack(), cfg, i)
    own = problem.base[i]
    new, _, _ = _pg_step(problem, own, problem.phi(own), gradient, step, max_halvings)
    return ControlSequence(new, scenario.dt)


def _solve_projected_gradient(problem: _AgentProblem, own: np.ndarray, phi: float, solver: SolverConfig):
    """Spectral projected gradient on the potential as written.

    The first trial step moves the largest control component by step_size,
    later ones take the Barzilai-Borwein ratio of the last accepted move.
    Trials back off by halves until the Armijo condition holds, so the
    potential decreases at every accepted iterate.
    """
    iters = 0
    grad = problem.grad(own)
    step = solver.step_size / max(float(np.max(np.abs(grad))), SPECTRAL_STEP_MIN)
    while iters < solver.max_inner_iters:
        if problem.stationarity(own, grad) < solver.grad_tol:
            break
        iters += 1
        # past the feasible diameter the projection pins every step to the boundary anyway
        trial = min(step, 2.0 * problem.scenario.a_max / max(float(np.max(np.abs(grad))), SPECTRAL_STEP_MIN))
        accepted = False
        for _ in range(solver.max_halvings + 1):
            candidate = problem.project(own - trial * grad)
            value = problem.phi(candidate)
            predicted = float(np.sum(grad * (candidate - own)))
            if np.isfinite(value) and value < phi and value <= phi + ARMIJO_FRACTION * predicted:
                accepted = True
                break
            trial *= 0.5
        if not accepted:
            break
        new_grad = problem.grad(candidate)
        s = (candidate - own).ravel()
        y = (new_grad - grad).ravel()
        curvature = float(s @ y)
        # the efficiency term is concave, so negative curvature is routine
        step = float(s @ s) / curvature if curvature > 0 else 4.0 * trial
        step = min(max(step, SPECTRAL_STEP_MIN), SPECTRAL_STEP_MAX)
        own, phi, grad = candidate, value, new_grad
    return own, phi, grad, iters


def _solve_levenberg_marquardt(problem: _AgentProblem, own: np.ndarray, phi: float, solver: SolverConfig):
    damping = solver.lm_damping_init
    n_vars = own.size
    iters = 0
    grad = problem.grad(own)
    while iters < solver.max_inner_iters:
        if problem.stationarity(own, grad) < solver.grad_tol:
            break
        lm = problem.residuals(own)
        surrogate_grad = lm.jacobian.T @ lm.residuals
        if np.max(np.abs(surrogate_grad), initial=0.0) < solver.grad_tol:
            break
        hessian = lm.jacobian.T @ lm.jacobian + damping * np.eye(n_vars)
        delta = -np.linalg.solve(hessian, surrogate_grad).reshape(own.shape)
        candidate = problem.project(own + solver.step_size * delta)
        value = problem.phi(candidate)
        iters += 1
        if not np.isfinite(value):
            raise SolverDivergenceError(
                f"Potential became non-finite for agent {problem.i}", last_iterate=own.copy()
            )
        if value < phi:
            own, phi = candidate, value
            damping = max(damping / 3.0, 1e-12)
            grad = problem.grad(own)
        else:
            damping *= 10.0
            if damping > 1e10:
                break
    return own, phi, grad, iters


def best_response(
    scenario: Scenario,
    profile: JointProfile,
    cfg: PotentialConfig,
    weights: AgentWeights,
    i: int,
    solver: SolverConfig | None = None,
) -> BestResponseResult:
    """Minimize J_i over agent i's controls with a_-i frozen.

    Iterates follow the potential gradient, which equals the gradient of
    J_i up to the positive factor w_i, so the returned controls do not
    depend on w_i.
    """
    solver = solver or SolverConfig()
    if len(weights) != scenario.n_agents:
        raise ValidationError(f"Expected {scenario.n_agents} weights, got {len(weights)}")
    if not weights[i] > 0:
        raise ValidationError(f"Agent weight must be positive, got {weights[i]}")
    problem = _AgentProblem(scenario, profile.stack(), cfg, i)
    start = problem.project(problem.base[i])
    phi_before = problem.phi(problem.base[i])
    if not np.isfinite(phi_before):
        raise SolverDivergenceError(f"Potential is non-finite at the start for agent {i}", last_iterate=start)
    phi_start = problem.phi(start)

    if solver.backend is Backend.LEVENBERG_MARQUARDT:
        own, phi, _, iters = _solve_levenberg_marquardt(problem, start, phi_start, solver)
        # LM stops at the surrogate optimum; finish on the potential itself
        own, phi, grad, polish = _solve_projected_gradient(problem, own, phi, solver)
        iters += polish
    else:
        own, phi, grad, iters = _solve_projected_gradient(problem, start, phi_start, solver)

    stationarity = problem.stationarity(own, grad)
    bound = solver.step_size * stationarity
    logger.debug("best response agent %d: phi %.6g -> %.6g in %d iters", i, phi_before, phi, iters)
    return BestResponseResult(
        controls=ControlSequence(own, scenario.dt),
        phi_before=phi_before,
        phi_after=phi,
        suboptimality_bound=bound,
        inner_iters=iters,
        stationarity=stationarity,
    )
