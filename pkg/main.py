import argparse
import importlib
import logging
import os
import sys
from pathlib import Path

from config import ROOT_DIR, config
from utils.error_handler import report_error
from utils.run_utils import RunContext

COMMANDS_DIR: Path = ROOT_DIR / "commands"

LOG_LEVELS: dict[str, int] = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "warning": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}

logger = logging.getLogger("pdgplay")


def configure_logging() -> None:
    name = os.environ.get("PDGPLAY_LOG", "warn").lower()
    level = LOG_LEVELS.get(name)
    logging.basicConfig(
        level=level if level is not None else logging.WARNING,
        format="%(asctime)s %(levelname)-7s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if level is None:
        logger.warning("unknown PDGPLAY_LOG level %r, using warn", name)


def load(subparsers) -> None:
    for filename in sorted(os.listdir(COMMANDS_DIR)):
        if filename.endswith(".py") and not filename.startswith("_"):
            module = importlib.import_module(f"commands.{filename[:-3]}")
            module.setup(subparsers)
            logger.debug("%s command loaded", filename[:-3])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pdgplay",
        description="Equilibrium trajectory planning for unsignalized intersections",
    )
    parser.add_argument("--seed", type=int, default=config.fictitious_play.rng_seed, help="Random seed")
    parser.add_argument("--threads", type=int, default=config.cli.threads, help="Maximum worker threads")
    parser.add_argument("--manifest", type=Path, default=None, help="Where to write the run manifest")
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="command")
    load(subparsers)
    return parser


def run(argv: list[str]) -> int:
    args = build_parser().parse_args(argv)
    ctx = None
    try:
        ctx = RunContext(
            command=args.command, argv=list(argv), seed=args.seed, threads=args.threads, manifest_path=args.manifest
        )
        code = args.handler(args, ctx)
    except Exception as e:
        code = report_error(e, args.command)

    if ctx is not None and args.command != "replay":
        try:
            ctx.write_manifest(code)
        except Exception as e:
            failure = report_error(e, args.command)
            code = code or failure
    return code


def main() -> None:
    configure_logging()
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
