import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from exceptions import ArtifactIOError, ValidationError
from utils.dynamics_utils import rollout_arrays
from utils.fictitious_play_utils import SolveReport, warm_start_policy
from utils.potential_utils import AgentWeights, PotentialConfig
from utils.report_utils import (
    ScenarioDocument,
    SolveReportDocument,
    document_to_scenario,
    document_weights,
    dump_json,
    read_document,
    scenario_to_document,
    solve_report_document,
    write_document,
)
from utils.svg_utils import SVG_NS, render_scene, write_svg
from utils.synth_utils import SynthSpec, synth_scenario


@pytest.fixture
def synth():
    return synth_scenario(SynthSpec(n_agents=3, horizon=5, history=4), 21)


def test_scenario_document_round_trip(tmp_path, synth):
    path = write_document(tmp_path / "scene.json", scenario_to_document(synth, AgentWeights(w=(1.0, 2.0, 0.5))))
    document = read_document(path, ScenarioDocument)
    restored = document_to_scenario(document)
    np.testing.assert_allclose(restored.initial_array, synth.initial_array, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(restored.ground_truth, synth.ground_truth)
    assert restored.agent_ids == synth.agent_ids
    assert restored.history_length == 4
    assert restored.goals[2].component_scale == synth.goals[2].component_scale
    assert document_weights(document).w == (1.0, 2.0, 0.5)
    assert restored.provenance["seed"] == 21


def test_dump_is_deterministic_and_sorted(synth):
    first = dump_json(scenario_to_document(synth))
    assert first == dump_json(scenario_to_document(synth))
    keys = list(json.loads(first))
    assert keys == sorted(keys)
    assert first.endswith("\n")


def test_non_finite_values_become_null(crossing_scenario):
    profile = warm_start_policy(crossing_scenario)
    report = SolveReport(phi_trace=[0.5])
    document = solve_report_document(
        crossing_scenario, profile, report, PotentialConfig(), AgentWeights.ones(2), "planning", "lm"
    )
    payload = json.loads(dump_json(document))
    assert payload["max_nash_gap"] is None
    assert payload["phi_final"] == 0.5
    trajectories = rollout_arrays(crossing_scenario.initial_array, profile.stack(), crossing_scenario.dt)
    assert np.array(payload["trajectories"]).shape == trajectories.shape


def test_schema_version_mismatch(tmp_path, synth):
    payload = json.loads(dump_json(scenario_to_document(synth)))
    payload["schema_version"] = 99
    path = tmp_path / "future.json"
    path.write_text(json.dumps(payload))
    with pytest.raises(ValidationError):
        read_document(path, ScenarioDocument)


def test_malformed_documents(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"scene_id": "x"}')
    with pytest.raises(ValidationError):
        read_document(path, SolveReportDocument)
    with pytest.raises(ArtifactIOError):
        read_document(tmp_path / "missing.json", ScenarioDocument)


def test_svg_layers(tmp_path, synth):
    plan = rollout_arrays(synth.initial_array, warm_start_policy(synth).stack(), synth.dt)
    path = write_svg(render_scene(synth, plan), tmp_path / "scene.svg")
    root = ET.parse(path).getroot()
    assert root.tag == f"{{{SVG_NS}}}svg"
    for layer in ("history", "ground_truth", "plan"):
        group = root.find(f"{{{SVG_NS}}}g[@id='{layer}']")
        lines = group.findall(f"{{{SVG_NS}}}polyline")
        assert sorted(p.get("data-agent") for p in lines) == sorted(synth.agent_ids)
    markers = root.find(f"{{{SVG_NS}}}g[@id='markers']")
    assert len(markers.findall(f"{{{SVG_NS}}}polygon[@class='endpoint']")) == 3
    assert len(markers.findall(f"{{{SVG_NS}}}line[@class='goal']")) == 6


def test_svg_without_plan(synth):
    root = render_scene(synth).getroot()
    plan = root.find(f"{{{SVG_NS}}}g[@id='plan']")
    assert plan.findall(f"{{{SVG_NS}}}polyline") == []
    assert root.find(f"{{{SVG_NS}}}title").text == synth.scene_id
