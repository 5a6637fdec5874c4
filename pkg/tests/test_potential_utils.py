from dataclasses import replace

import numpy as np
import pytest
from conftest import make_scenario, random_scenario

from exceptions import AgentCountMismatchError, GoalMissingError, ValidationError
from utils.dynamics_utils import JointProfile, rollout_arrays
from utils.potential_utils import (
    AgentWeights,
    PotentialConfig,
    agent_cost,
    grad_from_array,
    normalizers,
    phi_from_array,
    potential,
    potential_terms,
)


def central_difference(scenario, controls, cfg, i, h=1e-5):
    grad = np.zeros((scenario.horizon, 2))
    for t in range(scenario.horizon):
        for d in range(2):
            up, down = controls.copy(), controls.copy()
            up[i, t, d] += h
            down[i, t, d] -= h
            grad[t, d] = (phi_from_array(scenario, up, cfg) - phi_from_array(scenario, down, cfg)) / (2 * h)
    return grad


@pytest.mark.parametrize("n_agents", [1, 2, 3, 4])
def test_gradient_matches_finite_differences(n_agents):
    rng = np.random.default_rng(n_agents)
    cfg = PotentialConfig()
    for _ in range(25):
        scenario = random_scenario(rng, n_agents)
        controls = rng.uniform(-2.0, 2.0, size=(n_agents, scenario.horizon, 2))
        for i in range(n_agents):
            analytic = grad_from_array(scenario, controls, cfg, i)
            numeric = central_difference(scenario, controls, cfg, i)
            scale = max(np.max(np.abs(numeric)), 1e-8)
            assert np.max(np.abs(analytic - numeric)) / scale < 1e-4


def test_gradient_with_active_safety(crossing_scenario):
    cfg = PotentialConfig()
    controls = np.zeros((2, 5, 2))
    assert potential_terms(crossing_scenario, JointProfile.from_array(controls, 0.1), cfg).safety > 0
    for i in range(2):
        analytic = grad_from_array(crossing_scenario, controls, cfg, i)
        numeric = central_difference(crossing_scenario, controls, cfg, i)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-9)


def test_unilateral_change_scales_cost_by_weight(crossing_scenario):
    rng = np.random.default_rng(11)
    cfg = PotentialConfig()
    weights = AgentWeights(w=(0.3, 4.0))
    for _ in range(100):
        base = rng.uniform(-3.0, 3.0, size=(2, 5, 2))
        i = int(rng.integers(2))
        moved = base.copy()
        moved[i] = rng.uniform(-3.0, 3.0, size=(5, 2))
        a, b = JointProfile.from_array(base, 0.1), JointProfile.from_array(moved, 0.1)
        d_cost = agent_cost(crossing_scenario, b, cfg, weights, i) - agent_cost(crossing_scenario, a, cfg, weights, i)
        d_phi = potential(crossing_scenario, b, cfg) - potential(crossing_scenario, a, cfg)
        assert abs(d_cost - weights[i] * d_phi) < 1e-10


def test_normalizers_follow_closed_form():
    scenario = make_scenario(
        rows=[(0.0, 0.0, 1.0, 0.0, 0.0), (5.0, 5.0, 0.0, 1.0, 0.0)],
        goals=[(1.0, 0.0, 1.0, 0.0, 0.0), (5.0, 6.0, 0.0, 1.0, 0.0)],
        horizon=10,
    )
    norm = normalizers(scenario, PotentialConfig())
    assert norm.goal == pytest.approx(2 * 20.0**2)
    assert norm.smooth == pytest.approx(2 * 9 * (2 * 6.65) ** 2)
    assert norm.efficiency == pytest.approx(2 * 10 * (6.65 * 10 * 0.1) ** 2)
    assert norm.safety == pytest.approx(2 * 1 * 10 * (3.0 + 0.5) ** 2)


def test_vanished_terms_keep_unit_factors(lone_scenario):
    one_step = make_scenario(rows=[(0.0, 0.0, 1.0, 0.0, 0.0)], goals=[(0.1, 0.0, 1.0, 0.0, 0.0)], horizon=1)
    norm = normalizers(one_step, PotentialConfig())
    assert norm.smooth == pytest.approx((2 * 6.65) ** 2)
    assert norm.safety == pytest.approx(3.5**2)
    terms = potential_terms(lone_scenario, JointProfile.from_array(np.ones((1, 5, 2)), 0.1))
    assert terms.safety == 0.0


def test_zero_controls_have_no_smoothness_or_efficiency(crossing_scenario):
    terms = potential_terms(crossing_scenario, JointProfile.zeros(2, 5, 0.1))
    assert terms.smooth == 0.0
    assert terms.efficiency == 0.0
    assert terms.goal > 0.0


def test_normalizer_override():
    cfg = PotentialConfig(normalizer_override=(1.0, 2.0, 3.0, 4.0))
    scenario = make_scenario(rows=[(0.0, 0.0, 1.0, 0.0, 0.0)], goals=[(0.0, 0.0, 0.0, 0.0, 0.0)])
    assert normalizers(scenario, cfg).efficiency == 3.0
    with pytest.raises(ValueError):
        PotentialConfig(normalizer_override=(1.0, 0.0, 1.0, 1.0))


def test_planning_needs_goals():
    scenario = make_scenario(rows=[(0.0, 0.0, 1.0, 0.0, 0.0)])
    with pytest.raises(GoalMissingError):
        potential(scenario, JointProfile.zeros(1, 5, 0.1), PotentialConfig())


def test_prediction_mode_drops_goal_term():
    scenario = make_scenario(rows=[(0.0, 0.0, 1.0, 0.0, 0.0), (0.0, 2.0, 1.0, 0.0, 0.0)])
    cfg = PotentialConfig().for_mode("prediction")
    assert cfg.lambda_goal == 0.0
    terms = potential_terms(scenario, JointProfile.zeros(2, 5, 0.1), cfg)
    assert terms.goal == 0.0
    assert terms.safety > 0.0
    assert np.all(np.isfinite(grad_from_array(scenario, np.zeros((2, 5, 2)), cfg, 0)))
    assert cfg.with_lambdas((5.0, 1.0, 1.0, 1.0)).lambda_goal == 0.0


def test_ablations():
    cfg = PotentialConfig()
    sc = cfg.with_ablation("sc")
    assert (sc.lambda_smooth, sc.lambda_efficiency) == (0.0, 0.0)
    assert sc.lambda_goal == cfg.lambda_goal
    assert cfg.with_ablation("iw").pin_weights
    assert cfg.with_ablation("none") == cfg


def test_pinned_weights_make_cost_equal_potential(crossing_scenario):
    cfg = PotentialConfig().with_ablation("iw")
    profile = JointProfile.zeros(2, 5, 0.1)
    weights = AgentWeights(w=(0.5, 7.0))
    assert agent_cost(crossing_scenario, profile, cfg, weights, 1) == potential(crossing_scenario, profile, cfg)


def test_agent_weight_validation(crossing_scenario):
    with pytest.raises(ValidationError):
        AgentWeights(w=(0.5, 20.0))
    with pytest.raises(ValueError):
        AgentWeights(w=(1.0, -1.0))
    assert AgentWeights.clamped([0.0, 50.0]).w == (1e-4, 10.0)
    with pytest.raises(AgentCountMismatchError):
        agent_cost(crossing_scenario, JointProfile.zeros(2, 5, 0.1), PotentialConfig(), AgentWeights.ones(3), 0)
    with pytest.raises(ValidationError):
        agent_cost(crossing_scenario, JointProfile.zeros(2, 5, 0.1), PotentialConfig(), AgentWeights.ones(2), 2)


def test_profile_horizon_must_match(crossing_scenario):
    with pytest.raises(ValidationError):
        potential(crossing_scenario, JointProfile.zeros(2, 4, 0.1))


def test_safety_counts_each_pair_from_both_sides():
    rng = np.random.default_rng(7)
    cfg = PotentialConfig()
    for n_agents in (2, 3, 4):
        scenario = random_scenario(rng, n_agents)
        controls = rng.uniform(-2.0, 2.0, size=(n_agents, 5, 2))
        positions = rollout_arrays(scenario.initial_array, controls, scenario.dt)[:, 1:, :2]
        unordered = sum(
            np.sum(np.maximum(0.0, cfg.safety_radius - np.linalg.norm(positions[i] - positions[j], axis=-1)) ** 2)
            for i in range(n_agents)
            for j in range(i + 1, n_agents)
        )
        terms = potential_terms(scenario, JointProfile.from_array(controls, 0.1), cfg)
        assert terms.safety == pytest.approx(2.0 * unordered / normalizers(scenario, cfg).safety)


def test_potential_ignores_agent_order():
    rng = np.random.default_rng(8)
    scenario = random_scenario(rng, 3)
    controls = rng.uniform(-2.0, 2.0, size=(3, 5, 2))
    order = [2, 0, 1]
    shuffled = replace(
        scenario,
        initial_states=tuple(scenario.initial_states[k] for k in order),
        goals=tuple(scenario.goals[k] for k in order),
    )
    assert phi_from_array(shuffled, controls[order], PotentialConfig()) == pytest.approx(
        phi_from_array(scenario, controls, PotentialConfig())
    )
