import json
import shutil

import pandas as pd
import pytest

from main import run
from utils.metrics_utils import SCENE_COLUMNS
from utils.report_utils import (
    CalibrationDocument,
    RunManifest,
    ScenarioDocument,
    SolveReportDocument,
    read_document,
)

FAST = ["--starts", "1", "--max-outer", "5"]


def generate(out, *extra):
    return run(["generate", "--horizon", "5", "--history", "2", "--out", str(out), *extra])


@pytest.fixture
def lone_scene(tmp_path):
    assert generate(tmp_path / "scenes", "--n-scenes", "1", "--agents", "1", "--seed", "3") == 0
    return tmp_path / "scenes" / "synth-000003.json"


@pytest.fixture
def solved(tmp_path, lone_scene):
    report = tmp_path / "out" / "report.json"
    assert run(["solve", "--scenario", str(lone_scene), "--report", str(report), "--starts", "1"]) == 0
    return lone_scene, report


def test_generate_is_byte_identical(tmp_path):
    assert generate(tmp_path / "a", "--n-scenes", "3", "--seed", "7") == 0
    assert generate(tmp_path / "b", "--n-scenes", "3", "--seed", "7") == 0
    for name in ("synth-000007.json", "synth-000008.json", "synth-000009.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    document = read_document(tmp_path / "a" / "synth-000008.json", ScenarioDocument)
    assert len(document.agents) == 2
    assert document.provenance["seed"] == 8


def test_invalid_agent_count_exits_2(tmp_path, capsys):
    assert generate(tmp_path / "bad", "--agents", "7") == 2
    assert "validation" in capsys.readouterr().err.lower()
    assert not (tmp_path / "bad").exists()


def test_invalid_thread_count_exits_2(tmp_path):
    assert generate(tmp_path / "bad", "--threads", "0") == 2


def test_manifest_records_the_run(tmp_path):
    assert generate(tmp_path / "scenes", "--n-scenes", "2", "--seed", "5") == 0
    manifest = read_document(tmp_path / "scenes" / "manifest.json", RunManifest)
    assert manifest.command == "generate"
    assert manifest.exit_code == 0
    assert manifest.seeds == {"seed": 5}
    assert len(manifest.outputs) == 2
    assert manifest.config_snapshot["dynamics"]["dt"] == 0.1
    assert "generate" in manifest.timings_s


def test_solve_writes_report_and_svg(tmp_path, lone_scene):
    report_path = tmp_path / "out" / "report.json"
    svg_path = tmp_path / "out" / "scene.svg"
    argv = ["solve", "--scenario", str(lone_scene), "--report", str(report_path), "--svg", str(svg_path)]
    assert run([*argv, "--starts", "1"]) == 0
    report = read_document(report_path, SolveReportDocument)
    assert report.converged
    assert report.error is None
    assert len(report.profile) == 1
    assert len(report.profile[0]) == 5
    assert len(report.trajectories[0]) == 6
    assert all(b <= a + 1e-12 for a, b in zip(report.phi_trace, report.phi_trace[1:]))
    assert svg_path.read_text(encoding="utf-8").lstrip().startswith("<?xml")
    assert (tmp_path / "out" / "report.manifest.json").exists()


def test_solve_is_deterministic(tmp_path, lone_scene):
    paths = [tmp_path / "r1.json", tmp_path / "r2.json"]
    for path in paths:
        assert run(["solve", "--scenario", str(lone_scene), "--report", str(path), "--starts", "2"]) == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_missing_scenario_exits_4(tmp_path):
    code = run(["solve", "--scenario", str(tmp_path / "nope.json"), "--report", str(tmp_path / "r.json")])
    assert code == 4


def test_verify_certifies_a_solved_profile(tmp_path, solved):
    scene, report = solved
    gaps_path = tmp_path / "gaps.json"
    code = run(["verify", "--scenario", str(scene), "--profile", str(report), "--json", str(gaps_path)])
    gaps = json.loads(gaps_path.read_text())
    assert gaps["certified"] == (code == 0)
    assert gaps["max_nash_gap"] == max(gaps["nash_gaps"])

    at_threshold = ["--gap-threshold", repr(gaps["max_nash_gap"])]
    assert run(["verify", "--scenario", str(scene), "--profile", str(report), *at_threshold]) == 5


def test_verify_flags_a_perturbed_profile(tmp_path, solved):
    scene, report = solved
    baseline_path = tmp_path / "baseline.json"
    run(["verify", "--scenario", str(scene), "--profile", str(report), "--json", str(baseline_path)])

    payload = json.loads(report.read_text())
    # full-strength alternating braking and throttle: feasible but far from smooth
    payload["profile"][0] = [[6.0 if t % 2 == 0 else -6.0, 0.0] for t in range(5)]
    perturbed = tmp_path / "perturbed.json"
    perturbed.write_text(json.dumps(payload))
    gaps_path = tmp_path / "perturbed_gaps.json"
    code = run(["verify", "--scenario", str(scene), "--profile", str(perturbed), "--json", str(gaps_path)])
    assert code == 5
    gaps = json.loads(gaps_path.read_text())
    assert gaps["max_nash_gap"] > json.loads(baseline_path.read_text())["max_nash_gap"]


def test_verify_rejects_mismatched_agents(tmp_path, solved):
    scene, report = solved
    assert generate(tmp_path / "pair", "--n-scenes", "1", "--agents", "2", "--seed", "3") == 0
    code = run(["verify", "--scenario", str(tmp_path / "pair" / "synth-000003.json"), "--profile", str(report)])
    assert code == 2


def test_calibrate_with_zero_epochs(tmp_path, capsys):
    assert generate(tmp_path / "demos", "--n-scenes", "2", "--seed", "1") == 0
    out = tmp_path / "weights.json"
    summary = tmp_path / "weights.csv"
    argv = ["calibrate", "--demos", str(tmp_path / "demos"), "--epochs", "0", "--out", str(out)]
    assert run([*argv, "--summary", str(summary), *FAST]) == 0
    document = read_document(out, CalibrationDocument)
    names = ("lambda_goal", "lambda_smooth", "lambda_efficiency", "lambda_safety")
    assert [document.lambdas[k] for k in names] == [1.0, 1.0, 1.0, 1.0]
    assert all(w == [1.0, 1.0] for w in document.agent_weights.values())
    assert len(document.loss_trace) == 1
    table = pd.read_csv(summary)
    assert list(table.columns) == ["scene_id", "agent_id", "w", "mean_speed_mps", "mean_accel_mps2"]
    assert len(table) == 4
    assert "never change a plan" in capsys.readouterr().out


def test_evaluate_writes_metrics(tmp_path, capsys):
    assert generate(tmp_path / "scenes", "--n-scenes", "2", "--seed", "11") == 0
    out = tmp_path / "metrics.csv"
    assert run(["evaluate", "--scenes", str(tmp_path / "scenes"), "--out", str(out), *FAST]) == 0
    table = pd.read_csv(out)
    assert list(table.columns) == SCENE_COLUMNS
    assert len(table) == 2
    assert "ADE" in capsys.readouterr().out

    idm = tmp_path / "idm.csv"
    assert run(["evaluate", "--scenes", str(tmp_path / "scenes"), "--baseline", "idm", "--out", str(idm)]) == 0
    assert len(pd.read_csv(idm)) == 2

    ablated = tmp_path / "iw.csv"
    argv = ["evaluate", "--scenes", str(tmp_path / "scenes"), "--ablation", "iw", "--out", str(ablated)]
    assert run([*argv, *FAST]) == 0
    assert "never change a plan" in capsys.readouterr().out


def test_evaluate_empty_directory_exits_2(tmp_path):
    (tmp_path / "empty").mkdir()
    assert run(["evaluate", "--scenes", str(tmp_path / "empty"), "--out", str(tmp_path / "m.csv")]) == 2


def test_ingest_toy_csv(tmp_path, toy_csv, capsys):
    out = tmp_path / "ingested"
    assert run(["ingest", "--csv", str(toy_csv), "--out", str(out)]) == 0
    document = read_document(out / "1_at_1-50.json", ScenarioDocument)
    assert [a.id for a in document.agents] == ["1", "2"]
    assert len(document.ground_truth[0]) == 10
    assert "scenes=1" in capsys.readouterr().out


def test_ingest_bad_schema_exits_2(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("track_id,x,y\n1,0,0\n")
    assert run(["ingest", "--csv", str(path), "--out", str(tmp_path / "o")]) == 2


def test_replay_reproduces_outputs(tmp_path):
    scenes = tmp_path / "scenes"
    assert generate(scenes, "--n-scenes", "2", "--seed", "4") == 0
    original = {p.name: p.read_bytes() for p in scenes.glob("synth-*.json")}
    backup = tmp_path / "manifest.json"
    shutil.copy(scenes / "manifest.json", backup)
    shutil.rmtree(scenes)

    assert run(["replay", str(backup)]) == 0
    assert {p.name: p.read_bytes() for p in scenes.glob("synth-*.json")} == original


def test_replay_rejects_replay_manifests(tmp_path):
    path = tmp_path / "replay.json"
    manifest = RunManifest(
        command="replay", argv=["replay", "x"], artifact_version="1.0.0", config_path=None, config_snapshot={}
    )
    path.write_text(manifest.model_dump_json())
    assert run(["replay", str(path)]) == 2
