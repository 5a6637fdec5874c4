import argparse
import logging
import math
from pathlib import Path

from config import config
from exceptions import ArtifactIOError
from utils.calibration_utils import CalibrationConfig, calibrate, weight_speed_correlation
from utils.potential_utils import WEIGHT_INVARIANCE_NOTE
from utils.report_utils import calibration_document, document_to_scenario, write_document
from utils.run_utils import (
    RunContext,
    build_dfp,
    build_solver,
    common_options,
    load_scene_dir,
    potential_for,
    solver_options,
)

logger = logging.getLogger(__name__)


def calibrate_command(args: argparse.Namespace, ctx: RunContext) -> int:
    ctx.default_manifest(args.out)
    demos = []
    for path, document in load_scene_dir(args.demos):
        ctx.add_input(path)
        demos.append(document_to_scenario(document))

    cfg = CalibrationConfig(max_epochs=args.epochs, learning_rate=args.learning_rate, seed=ctx.seed)
    with ctx.timed("calibrate"):
        result = calibrate(
            demos,
            cfg,
            build_dfp(args, ctx),
            build_solver(args),
            base=potential_for(args),
            threads=ctx.threads,
        )

    write_document(args.out, calibration_document(result, ctx.seed))
    ctx.add_output(args.out)
    if args.summary:
        try:
            args.summary.parent.mkdir(parents=True, exist_ok=True)
            result.summary.to_csv(args.summary, index=False, float_format="%.17g")
        except OSError as e:
            raise ArtifactIOError(f"Could not write {args.summary}: {e}") from e
        ctx.add_output(args.summary)

    lambdas = result.lambdas
    print(
        f"lambdas goal={lambdas.lambda_goal:.6g} smooth={lambdas.lambda_smooth:.6g} "
        f"efficiency={lambdas.lambda_efficiency:.6g} safety={lambdas.lambda_safety:.6g}"
    )
    print(f"mean replay RMSE {result.loss_trace[0]:.6g} m -> {result.final_loss:.6g} m")
    rho = weight_speed_correlation(result.summary)
    if math.isnan(rho):
        print(f"agent weights stay at {cfg.w_init:g}: {WEIGHT_INVARIANCE_NOTE}")
    else:
        print(f"weight/speed rank correlation {rho:+.3f}")
    if result.excluded:
        print(f"excluded {len(result.excluded)} demos: {', '.join(result.excluded)}")
    return 0


def setup(subparsers) -> None:
    parser = subparsers.add_parser(
        "calibrate",
        parents=[common_options(), solver_options()],
        help="Fit term weights to demonstrations",
    )
    parser.add_argument("--demos", required=True, type=Path, help="Directory of demo scenario JSON files")
    parser.add_argument("--epochs", type=int, default=config.calibration.max_epochs)
    parser.add_argument("--learning-rate", type=float, default=config.calibration.learning_rate)
    parser.add_argument("--out", required=True, type=Path, help="Calibration result JSON")
    parser.add_argument("--summary", type=Path, default=None, help="Weight/dynamics CSV")
    parser.set_defaults(handler=calibrate_command)
