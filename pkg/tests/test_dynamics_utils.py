import numpy as np
import pytest

from exceptions import AgentCountMismatchError, NonFiniteInputError, ValidationError
from utils.dynamics_utils import (
    ControlSequence,
    JointProfile,
    VehicleState,
    position_map,
    project_array,
    rollout,
    rollout_arrays,
    rollout_joint,
    wrap_angle,
)


def test_zero_controls_keep_constant_velocity():
    initial = np.array([[1.0, 2.0, 3.0, -1.0, 0.0]])
    states = rollout_arrays(initial, np.zeros((1, 10, 2)), 0.1)
    t = np.arange(11) * 0.1
    np.testing.assert_allclose(states[0, :, 0], 1.0 + 3.0 * t)
    np.testing.assert_allclose(states[0, :, 1], 2.0 - 1.0 * t)
    np.testing.assert_allclose(states[0, :, 2:4], np.tile([3.0, -1.0], (11, 1)))


def test_constant_acceleration_from_rest():
    trajectory = rollout(VehicleState(0.0, 0.0, 0.0, 0.0, 0.0), ControlSequence(np.tile([1.0, 0.0], (10, 1)), 0.1))
    final = trajectory[10]
    assert final.vx == pytest.approx(1.0)
    assert final.x == pytest.approx(0.5)
    assert final.y == 0.0


def test_position_map_matches_rollout():
    rng = np.random.default_rng(3)
    initial = rng.normal(size=(1, 5))
    controls = rng.normal(size=(1, 8, 2))
    dt = 0.1
    states = rollout_arrays(initial, controls, dt)
    t = np.arange(9)[:, None] * dt
    expected = initial[0, :2] + t * initial[0, 2:4] + position_map(8, dt) @ controls[0]
    np.testing.assert_allclose(states[0, :, :2], expected, atol=1e-12)


def test_heading_follows_velocity():
    states = rollout_arrays(np.array([[0.0, 0.0, 0.0, 5.0, 0.0]]), np.zeros((1, 3, 2)), 0.1)
    np.testing.assert_allclose(states[0, 1:, 4], np.pi / 2)


def test_heading_carried_over_at_standstill():
    states = rollout_arrays(np.array([[0.0, 0.0, 0.0, 0.0, 1.2]]), np.zeros((1, 4, 2)), 0.1)
    np.testing.assert_array_equal(states[0, :, 4], 1.2)


def test_non_finite_inputs_are_rejected():
    with pytest.raises(NonFiniteInputError):
        rollout_arrays(np.array([[0.0, np.nan, 0.0, 0.0, 0.0]]), np.zeros((1, 2, 2)), 0.1)
    with pytest.raises(NonFiniteInputError):
        rollout_arrays(np.zeros((1, 5)), np.array([[[np.inf, 0.0]]]), 0.1)
    with pytest.raises(NonFiniteInputError):
        VehicleState(0.0, 0.0, float("nan"), 0.0, 0.0)


def test_projection_is_idempotent_and_feasible():
    rng = np.random.default_rng(0)
    controls = rng.normal(scale=10.0, size=(3, 6, 2))
    once = project_array(controls, 6.65)
    np.testing.assert_array_equal(project_array(once, 6.65), once)
    assert np.all(np.linalg.norm(once, axis=-1) <= 6.65)
    inside = np.linalg.norm(controls, axis=-1) <= 6.65
    np.testing.assert_array_equal(once[inside], controls[inside])


def test_projection_needs_positive_bound():
    with pytest.raises(ValidationError):
        project_array(np.zeros((2, 2)), 0.0)


def test_theta_is_wrapped():
    assert VehicleState(0.0, 0.0, 0.0, 0.0, 3 * np.pi).theta == pytest.approx(np.pi)
    assert wrap_angle(-np.pi) == pytest.approx(np.pi)


def test_joint_profile_checks(crossing_scenario):
    with pytest.raises(ValidationError):
        JointProfile((ControlSequence.zeros(5, 0.1), ControlSequence.zeros(4, 0.1)))
    with pytest.raises(AgentCountMismatchError):
        rollout_joint(crossing_scenario, JointProfile.zeros(3, 5, 0.1))
    trajectories = rollout_joint(crossing_scenario, JointProfile.zeros(2, 5, 0.1))
    assert len(trajectories) == 2
    assert len(trajectories[0]) == 6
