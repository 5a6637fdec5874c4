import argparse
import json
import logging
from pathlib import Path

import numpy as np

from config import config
from exceptions import AgentCountMismatchError, ArtifactIOError, ValidationError
from utils.best_response_utils import Backend, SolverConfig
from utils.dynamics_utils import JointProfile
from utils.fictitious_play_utils import nash_gap
from utils.potential_utils import AgentWeights, PotentialConfig
from utils.report_utils import ScenarioDocument, SolveReportDocument, document_to_scenario, read_document
from utils.run_utils import RunContext, common_options

logger = logging.getLogger(__name__)

EXIT_NOT_CERTIFIED = 5


def verify(args: argparse.Namespace, ctx: RunContext) -> int:
    ctx.default_manifest(args.json or args.profile.with_name(args.profile.stem + ".verify.json"))
    ctx.add_input(args.scenario)
    ctx.add_input(args.profile)
    scenario = document_to_scenario(read_document(args.scenario, ScenarioDocument))
    report = read_document(args.profile, SolveReportDocument)

    controls = np.asarray(report.profile, dtype=float)
    if controls.ndim != 3 or controls.shape[0] != scenario.n_agents:
        raise AgentCountMismatchError(scenario.n_agents, controls.shape[0] if controls.ndim == 3 else 0)
    if len(report.weights) != scenario.n_agents:
        raise AgentCountMismatchError(scenario.n_agents, len(report.weights))
    if report.scene_id != scenario.scene_id:
        logger.warning("report is for %s but the scenario is %s", report.scene_id, scenario.scene_id)
    if args.gap_threshold < 0:
        raise ValidationError(f"--gap-threshold must not be negative, got {args.gap_threshold}")

    profile = JointProfile.from_array(controls, scenario.dt)
    cfg = PotentialConfig(**report.potential_config)
    weights = AgentWeights(w=tuple(report.weights))
    solver = SolverConfig(backend=Backend(report.backend))
    with ctx.timed("verify"):
        gaps = nash_gap(scenario, profile, cfg, weights, solver, budget_factor=args.budget_factor)

    max_gap = max(gaps)
    certified = max_gap < args.gap_threshold
    print(f"{'agent':<24} {'nash gap':>14}")
    for agent_id, gap in zip(scenario.agent_ids, gaps):
        print(f"{agent_id:<24} {gap:>14.6g}")
    print(f"max gap {max_gap:.6g} {'<' if certified else '>='} threshold {args.gap_threshold:g}")

    if args.json:
        payload = {
            "scene_id": scenario.scene_id,
            "agent_ids": list(scenario.agent_ids),
            "nash_gaps": gaps,
            "max_nash_gap": max_gap,
            "gap_threshold": args.gap_threshold,
            "certified": certified,
        }
        try:
            args.json.parent.mkdir(parents=True, exist_ok=True)
            args.json.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        except OSError as e:
            raise ArtifactIOError(f"Could not write {args.json}: {e}") from e
        ctx.add_output(args.json)
    return 0 if certified else EXIT_NOT_CERTIFIED


def setup(subparsers) -> None:
    parser = subparsers.add_parser(
        "verify", parents=[common_options()], help="Re-check a solve report's Nash gaps"
    )
    parser.add_argument("--scenario", required=True, type=Path, help="Scenario JSON")
    parser.add_argument("--profile", required=True, type=Path, help="Solve report JSON")
    parser.add_argument("--gap-threshold", type=float, default=config.cli.gap_threshold)
    parser.add_argument("--budget-factor", type=int, default=config.solver.verify_budget_factor)
    parser.add_argument("--json", type=Path, default=None, help="Machine-readable gap table")
    parser.set_defaults(handler=verify)
