import numpy as np
import pytest

from exceptions import ValidationError
from utils.scenario_utils import Approach, Maneuver, Movement
from utils.synth_utils import MAX_AGENTS, SynthSpec, movement_path, parse_movement, synth_scenario


def test_same_seed_same_scene():
    spec = SynthSpec(n_agents=3, horizon=5, history=4)
    a, b = synth_scenario(spec, 12), synth_scenario(spec, 12)
    np.testing.assert_array_equal(a.initial_array, b.initial_array)
    np.testing.assert_array_equal(a.ground_truth, b.ground_truth)
    assert a.agent_ids == b.agent_ids
    assert a.scene_id == "synth-000012"
    assert not np.array_equal(a.initial_array, synth_scenario(spec, 13).initial_array)


def test_scene_shapes():
    spec = SynthSpec(n_agents=2, horizon=6, history=3)
    scenario = synth_scenario(spec, 0)
    assert scenario.n_agents == 2
    assert scenario.history_length == 3
    assert scenario.ground_truth.shape == (2, 6, 2)
    assert scenario.has_goals
    assert scenario.scene_diag >= 6.0
    for k in range(2):
        np.testing.assert_allclose(scenario.goals[k].position, scenario.ground_truth[k, -1])


@pytest.mark.parametrize("n_agents", [0, MAX_AGENTS + 1])
def test_agent_count_bounds(n_agents):
    with pytest.raises(ValidationError):
        synth_scenario(SynthSpec(n_agents=n_agents), 0)


def test_explicit_movements():
    spec = SynthSpec(n_agents=2, movements=("S-Left", "N-Through"), horizon=5, history=2)
    scenario = synth_scenario(spec, 1)
    assert scenario.agent_ids == ("0:S-Left", "1:N-Through")
    with pytest.raises(ValidationError):
        synth_scenario(SynthSpec(n_agents=3, movements=("S-Left",)), 1)
    with pytest.raises(ValidationError):
        parse_movement("Q-Sideways")


def test_constant_speed_ground_truth():
    spec = SynthSpec(n_agents=1, movements=("E-Through",), horizon=5, history=2)
    scenario = synth_scenario(spec, 3)
    state = scenario.initial_states[0]
    steps = np.linalg.norm(np.diff(scenario.ground_truth[0], axis=0), axis=1)
    np.testing.assert_allclose(steps, state.speed * spec.dt)
    assert state.theta == pytest.approx(np.pi)


def test_left_turn_path_geometry():
    movement = Movement(Approach.S, Maneuver.LEFT)
    path = movement_path(movement, np.array([-10.0, 0.0, 40.0]), 1.75, 3.5)
    assert path[0, 2] == pytest.approx(np.pi / 2)
    assert path[0, 0] == pytest.approx(1.75)
    assert path[-1, 2] == pytest.approx(np.pi)
    assert path[-1, 0] < -20.0
    assert path[-1, 1] == pytest.approx(1.75)


def test_paths_rotate_with_the_approach():
    west = movement_path(Movement(Approach.W, Maneuver.THROUGH), np.array([-10.0]), 1.75, 3.5)[0]
    np.testing.assert_allclose(west, [-10.0, -1.75, 0.0], atol=1e-12)


def recorded_positions(scenario):
    tracks = []
    for k in range(scenario.n_agents):
        past = [s.as_array()[:2] for s in scenario.histories[k]]
        tracks.append(np.vstack([*past, scenario.initial_states[k].as_array()[:2], scenario.ground_truth[k]]))
    return np.stack(tracks)


@pytest.mark.parametrize("n_agents", [2, 3])
def test_ground_truth_keeps_agents_apart(n_agents):
    spec = SynthSpec(n_agents=n_agents, horizon=10, history=10)
    for seed in range(20):
        positions = recorded_positions(synth_scenario(spec, seed))
        for i in range(n_agents):
            for j in range(i + 1, n_agents):
                assert np.linalg.norm(positions[i] - positions[j], axis=1).min() >= spec.min_separation


def test_unplaceable_scene_is_rejected():
    spec = SynthSpec(n_agents=2, movements=("S-Through", "E-Through"), min_separation=1000.0)
    with pytest.raises(ValidationError):
        synth_scenario(spec, 0)


def test_drawn_movements_are_enum_members():
    spec = SynthSpec(n_agents=MAX_AGENTS)
    for seed in range(10):
        movements = spec.resolved_movements(np.random.default_rng(seed))
        assert all(type(m.approach) is Approach and type(m.maneuver) is Maneuver for m in movements)
        assert len({m.approach for m in movements[:4]}) == 4
