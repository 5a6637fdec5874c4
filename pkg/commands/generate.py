import argparse
import logging
from pathlib import Path

import numpy as np

from config import config
from exceptions import ValidationError
from utils.calibration_utils import make_demo
from utils.fictitious_play_utils import DfpConfig
from utils.potential_utils import AgentWeights, PotentialConfig
from utils.report_utils import scenario_to_document, write_document
from utils.run_utils import RunContext, common_options
from utils.synth_utils import MAX_AGENTS, SynthSpec, synth_scenario

logger = logging.getLogger(__name__)


def demo_weights(speeds: np.ndarray) -> AgentWeights:
    """Known weights for calibration demos: inversely proportional to speed"""
    raw = config.synth.speed_mean / np.maximum(speeds, config.synth.speed_min)
    return AgentWeights.clamped(raw)


def generate(args: argparse.Namespace, ctx: RunContext) -> int:
    if not 1 <= args.agents <= MAX_AGENTS:
        raise ValidationError(f"--agents must be between 1 and {MAX_AGENTS}, got {args.agents}")
    if args.n_scenes < 1:
        raise ValidationError(f"--n-scenes must be positive, got {args.n_scenes}")
    spec = SynthSpec(
        n_agents=args.agents,
        movements=tuple(args.movements.split(",")) if args.movements else None,
        horizon=args.horizon,
        history=args.history,
    )
    out = Path(args.out)
    ctx.default_manifest(out)
    dfp = DfpConfig(rng_seed=ctx.seed)

    with ctx.timed("generate"):
        for k in range(args.n_scenes):
            scenario = synth_scenario(spec, seed=ctx.seed + k)
            weights = None
            if args.demos:
                weights = demo_weights(np.array([s.speed for s in scenario.initial_states]))
                scenario = make_demo(scenario, PotentialConfig(), weights, dfp)
            path = out / f"{scenario.scene_id}.json"
            write_document(path, scenario_to_document(scenario, weights))
            ctx.add_output(path)

    print(f"wrote {args.n_scenes} scenes to {out}")
    logger.info("generated %d scenes with %d agents (seed %d)", args.n_scenes, args.agents, ctx.seed)
    return 0


def setup(subparsers) -> None:
    parser = subparsers.add_parser(
        "generate", parents=[common_options()], help="Generate synthetic intersection scenarios"
    )
    parser.add_argument("--n-scenes", type=int, default=10, help="Number of scenes")
    parser.add_argument("--agents", type=int, default=2, help="Agents per scene (1 to 6)")
    parser.add_argument("--movements", default=None, help="Comma-separated movements, e.g. S-Left,N-Through")
    parser.add_argument("--horizon", type=int, default=config.dynamics.horizon, help="Planning steps")
    parser.add_argument("--history", type=int, default=config.dynamics.history, help="History steps")
    parser.add_argument(
        "--demos",
        action="store_true",
        help="Replace ground truth with the equilibrium under known per-agent weights",
    )
    parser.add_argument("--out", required=True, help="Output directory")
    parser.set_defaults(handler=generate)
