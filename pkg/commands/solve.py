import argparse
import logging
from pathlib import Path

from exceptions import SolverError
from utils.dynamics_utils import rollout_arrays
from utils.fictitious_play_utils import SolveReport, multi_start_solve, warm_start_policy
from utils.potential_utils import AgentWeights
from utils.report_utils import (
    ScenarioDocument,
    document_to_scenario,
    document_weights,
    read_document,
    solve_report_document,
    write_document,
)
from utils.run_utils import RunContext, build_dfp, build_solver, common_options, potential_for, solver_options
from utils.svg_utils import render_scene, write_svg

logger = logging.getLogger(__name__)


def solve(args: argparse.Namespace, ctx: RunContext) -> int:
    ctx.default_manifest(args.report)
    ctx.add_input(args.scenario)
    document = read_document(args.scenario, ScenarioDocument)
    scenario = document_to_scenario(document)
    cfg = potential_for(args, scenario)
    weights = document_weights(document) or AgentWeights.ones(scenario.n_agents)
    solver = build_solver(args)

    try:
        with ctx.timed("solve"):
            profile, report = multi_start_solve(
                scenario, cfg, weights, build_dfp(args, ctx), solver, threads=ctx.threads
            )
    except SolverError as e:
        partial = e.report if isinstance(e.report, SolveReport) else SolveReport()
        fallback = warm_start_policy(scenario, prediction=cfg.prediction)
        write_document(
            args.report,
            solve_report_document(scenario, fallback, partial, cfg, weights, args.mode, args.solver, error=str(e)),
        )
        ctx.add_output(args.report)
        raise

    write_document(args.report, solve_report_document(scenario, profile, report, cfg, weights, args.mode, args.solver))
    ctx.add_output(args.report)
    if args.svg:
        states = rollout_arrays(scenario.initial_array, profile.stack(), scenario.dt)
        write_svg(render_scene(scenario, states), args.svg)
        ctx.add_output(args.svg)

    print(
        f"{scenario.scene_id}: phi {report.phi_final:.6g} after {report.outer_iters} sweeps, "
        f"converged={report.converged}, max nash gap {report.max_nash_gap:.3g}"
    )
    return 0


def setup(subparsers) -> None:
    parser = subparsers.add_parser(
        "solve", parents=[common_options(), solver_options()], help="Solve one scenario for its equilibrium plan"
    )
    parser.add_argument("--scenario", required=True, type=Path, help="Scenario JSON")
    parser.add_argument("--report", required=True, type=Path, help="Solve report JSON to write")
    parser.add_argument("--svg", type=Path, default=None, help="Optional SVG rendering")
    parser.set_defaults(handler=solve)
