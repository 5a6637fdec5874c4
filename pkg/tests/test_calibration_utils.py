import math

import numpy as np
import pandas as pd
import pytest
from conftest import make_scenario

from exceptions import CalibrationError, ValidationError
from utils.best_response_utils import SolverConfig
from utils.calibration_utils import (
    CalibrationConfig,
    CalibrationResult,
    calibrate,
    make_demo,
    replay_rmse,
    rmse_positions,
    weight_dynamics_report,
    weight_speed_correlation,
)
from utils.dynamics_utils import JointProfile, VehicleState
from utils.fictitious_play_utils import DfpConfig
from utils.potential_utils import AgentWeights, PotentialConfig

FAST_DFP = DfpConfig(max_outer_iters=5, n_starts=1)
FAST_SOLVER = SolverConfig(max_inner_iters=10)


def cruising_demo(scene_id="cruise", offset=(0.0, 0.0)):
    """Lone car at 5 m/s whose recorded future is constant velocity"""
    t = np.arange(1, 6)[:, None] * 0.1
    truth = np.array([0.0, 0.0]) + t * np.array([5.0, 0.0]) + np.asarray(offset)
    return make_scenario(
        rows=[(0.0, 0.0, 5.0, 0.0, 0.0)],
        goals=[(2.5, 0.0, 5.0, 0.0, 0.0)],
        ground_truth=truth[None],
        scene_id=scene_id,
    )


def test_rmse_examples():
    truth = np.zeros((10, 2))
    assert rmse_positions(truth, truth) == 0.0
    assert rmse_positions(truth + [0.3, 0.4], truth) == pytest.approx(0.5)
    last = truth.copy()
    last[-1] = [5.0, 0.0]
    assert rmse_positions(last, truth) == pytest.approx(math.sqrt(2.5))
    with pytest.raises(ValidationError):
        rmse_positions(np.zeros((3, 2)), np.zeros((4, 2)))


def test_replay_rmse_of_constant_velocity():
    demo = cruising_demo(offset=(0.3, 0.4))
    assert replay_rmse(demo, JointProfile.zeros(1, 5, 0.1), demo.ground_truth) == pytest.approx(0.5)
    with pytest.raises(ValidationError):
        replay_rmse(demo, JointProfile.zeros(1, 5, 0.1), np.zeros((1, 4, 2)))


def test_zero_epochs_returns_initial_weights():
    demo = cruising_demo()
    result = calibrate([demo], CalibrationConfig(max_epochs=0), FAST_DFP, FAST_SOLVER)
    assert tuple(result.lambdas.lambdas) == (1.0, 1.0, 1.0, 1.0)
    assert result.agent_weights["cruise"].w == (1.0,)
    assert len(result.loss_trace) == 1
    assert result.final_loss >= 0.0


def test_loss_never_increases():
    demos = [cruising_demo("a"), cruising_demo("b", offset=(0.0, 0.2))]
    result = calibrate(demos, CalibrationConfig(max_epochs=2), FAST_DFP, FAST_SOLVER)
    assert len(result.loss_trace) == 3
    assert all(later <= earlier for earlier, later in zip(result.loss_trace, result.loss_trace[1:]))
    assert all(1e-4 <= w <= 10.0 for weights in result.agent_weights.values() for w in weights.w)
    assert np.all(result.lambdas.lambdas >= 0.0)


def test_lone_agent_leaves_safety_weight_alone():
    result = calibrate([cruising_demo()], CalibrationConfig(max_epochs=1), FAST_DFP, FAST_SOLVER)
    assert result.lambdas.lambda_safety == pytest.approx(1.0, abs=1e-6)


def test_prediction_mode_keeps_goal_weight_at_zero():
    base = PotentialConfig().for_mode("prediction")
    result = calibrate([cruising_demo()], CalibrationConfig(max_epochs=1), FAST_DFP, FAST_SOLVER, base=base)
    assert result.lambdas.lambda_goal == 0.0


def test_demos_without_ground_truth_are_excluded():
    bare = make_scenario(rows=[(0.0, 0.0, 5.0, 0.0, 0.0)], goals=[(2.5, 0.0, 5.0, 0.0, 0.0)], scene_id="bare")
    with pytest.raises(CalibrationError):
        calibrate([bare], CalibrationConfig(max_epochs=0), FAST_DFP, FAST_SOLVER)
    with pytest.raises(CalibrationError):
        calibrate([], CalibrationConfig(max_epochs=0))
    result = calibrate([bare, cruising_demo()], CalibrationConfig(max_epochs=0), FAST_DFP, FAST_SOLVER)
    assert result.excluded == ["bare"]
    assert list(result.agent_weights) == ["cruise"]


def test_demos_from_unequal_weights_replay_after_calibration():
    scenes = [
        cruising_demo("lone"),
        make_scenario(
            rows=[(0.0, 0.0, 5.0, 0.0, 0.0), (0.0, 20.0, 4.0, 0.0, 0.0)],
            goals=[(2.5, 0.0, 5.0, 0.0, 0.0), (2.0, 20.0, 4.0, 0.0, 0.0)],
            scene_id="pair",
        ),
    ]
    cfg = PotentialConfig().with_lambdas((1.0, 1.0, 1.0, 1.0))
    demos = [
        make_demo(s, cfg, AgentWeights(w=tuple(np.linspace(0.2, 5.0, s.n_agents))), FAST_DFP, FAST_SOLVER)
        for s in scenes
    ]
    result = calibrate(demos, CalibrationConfig(max_epochs=2), FAST_DFP, FAST_SOLVER)
    assert result.final_loss < 0.05
    assert all(len(set(w.w)) == 1 for w in result.agent_weights.values())


def test_make_demo_replays_with_zero_error():
    scenario = cruising_demo()
    cfg = PotentialConfig()
    weights = AgentWeights.ones(1)
    demo = make_demo(scenario, cfg, weights, FAST_DFP, FAST_SOLVER)
    assert demo.ground_truth.shape == (1, 5, 2)
    result = calibrate([demo], CalibrationConfig(max_epochs=0), FAST_DFP, FAST_SOLVER)
    assert result.final_loss == pytest.approx(0.0, abs=1e-12)


def test_weight_dynamics_report_uses_history():
    history = tuple(VehicleState(-0.5 * (3 - k), 0.0, 3.0, 4.0, 0.9) for k in range(3))
    demo = make_scenario(
        rows=[(0.0, 0.0, 3.0, 4.0, 0.9)], goals=[(1.0, 1.0, 3.0, 4.0, 0.9)], histories=(history,), scene_id="h"
    )
    result = CalibrationResult(PotentialConfig(), {"h": AgentWeights(w=(2.0,))}, [0.1])
    summary = weight_dynamics_report(result, [demo])
    assert list(summary.columns) == ["scene_id", "agent_id", "w", "mean_speed_mps", "mean_accel_mps2"]
    row = summary.iloc[0]
    assert row["w"] == 2.0
    assert row["mean_speed_mps"] == pytest.approx(5.0)
    assert row["mean_accel_mps2"] == pytest.approx(0.0)


def test_weight_speed_correlation():
    summary = pd.DataFrame({"w": [1.0, 2.0, 3.0], "mean_speed_mps": [9.0, 6.0, 3.0]})
    assert weight_speed_correlation(summary) == pytest.approx(-1.0)
    assert math.isnan(weight_speed_correlation(summary.iloc[:1]))


def test_constant_weights_have_no_correlation(caplog):
    summary = pd.DataFrame({"w": [1.0, 1.0, 1.0], "mean_speed_mps": [9.0, 6.0, 3.0]})
    with caplog.at_level("WARNING"):
        assert math.isnan(weight_speed_correlation(summary))
    assert "never change a plan" in caplog.text


def test_calibration_config_clamp():
    with pytest.raises(ValueError):
        CalibrationConfig(w_min=2.0, w_max=1.0)
    with pytest.raises(ValueError):
        CalibrationConfig(w_init=20.0)
