import argparse
import logging
from pathlib import Path

from exceptions import ArtifactIOError
from utils.metrics_utils import evaluate_suite
from utils.potential_utils import WEIGHT_INVARIANCE_NOTE, AgentWeights, PotentialConfig, Scenario
from utils.report_utils import CalibrationDocument, document_to_scenario, document_weights, read_document
from utils.run_utils import (
    RunContext,
    build_dfp,
    build_solver,
    common_options,
    load_scene_dir,
    parse_floats,
    solver_options,
)

logger = logging.getLogger(__name__)


def evaluate(args: argparse.Namespace, ctx: RunContext) -> int:
    ctx.default_manifest(args.out)
    scenarios: list[Scenario] = []
    stored: dict[str, AgentWeights] = {}
    for path, document in load_scene_dir(args.scenes):
        ctx.add_input(path)
        scenario = document_to_scenario(document)
        scenarios.append(scenario)
        weights = document_weights(document)
        if weights is not None:
            stored[scenario.scene_id] = weights

    cfg = None
    if args.weights:
        ctx.add_input(args.weights)
        calibration = read_document(args.weights, CalibrationDocument)
        cfg = PotentialConfig(**calibration.lambdas)
        for scene_id, values in calibration.agent_weights.items():
            stored[scene_id] = AgentWeights(w=tuple(values), w_min=calibration.w_min, w_max=calibration.w_max)
    lambdas = parse_floats(args.lambdas, 4) if args.lambdas else None

    def weights_for(scenario: Scenario) -> AgentWeights:
        weights = stored.get(scenario.scene_id)
        if weights is None or len(weights) != scenario.n_agents:
            return AgentWeights.ones(scenario.n_agents)
        return weights

    with ctx.timed("evaluate"):
        result = evaluate_suite(
            scenarios,
            cfg,
            weights_for,
            build_dfp(args, ctx),
            build_solver(args),
            mode=args.mode,
            ablation=args.ablation,
            baseline=args.baseline,
            threads=ctx.threads,
            footprint=args.footprint,
            lambdas=lambdas,
        )

    try:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        result.scenes.to_csv(args.out, index=False, float_format="%.17g")
    except OSError as e:
        raise ArtifactIOError(f"Could not write {args.out}: {e}") from e
    ctx.add_output(args.out)

    print(f"mode={result.mode} baseline={result.baseline} ablation={args.ablation}")
    print(f"scenes={result.n_scenes} excluded={len(result.excluded)}")
    print(f"ADE {result.ade:.4f} m  FDE {result.fde:.4f} m  CL {100.0 * result.collision_rate:.2f}%")
    if args.ablation == "iw":
        print(f"note: {WEIGHT_INVARIANCE_NOTE}")
    return 0


def setup(subparsers) -> None:
    parser = subparsers.add_parser(
        "evaluate", parents=[common_options(), solver_options()], help="Score a directory of scenes"
    )
    parser.add_argument("--scenes", required=True, type=Path, help="Directory of scenario JSON files")
    parser.add_argument("--ablation", choices=("none", "iw", "sc"), default="none")
    parser.add_argument("--baseline", choices=("game", "idm"), default="game")
    parser.add_argument("--weights", type=Path, default=None, help="Calibration result JSON")
    parser.add_argument("--footprint", action="store_true", help="Also test vehicle footprint overlap")
    parser.add_argument("--out", required=True, type=Path, help="Per-scene metrics CSV")
    parser.set_defaults(handler=evaluate)
