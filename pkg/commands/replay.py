import argparse
import logging
from pathlib import Path

from config import config
from exceptions import ValidationError
from utils.report_utils import RunManifest, read_document
from utils.run_utils import ARTIFACT_VERSION, RunContext

logger = logging.getLogger(__name__)


def replay(args: argparse.Namespace, ctx: RunContext) -> int:
    manifest = read_document(args.source, RunManifest)
    if manifest.command == "replay":
        raise ValidationError(f"{args.source} records a replay; replay the original manifest instead")
    if manifest.artifact_version != ARTIFACT_VERSION:
        logger.warning("manifest was written by version %s, running %s", manifest.artifact_version, ARTIFACT_VERSION)
    if manifest.config_snapshot != config.model_dump(exclude={"source_path"}):
        logger.warning("current configuration differs from the snapshot in %s", args.source)

    # deferred: main loads this module
    from main import run

    print(f"replaying: pdgplay {' '.join(manifest.argv)}")
    return run(manifest.argv)


def setup(subparsers) -> None:
    parser = subparsers.add_parser("replay", help="Re-run the command recorded in a run manifest")
    parser.add_argument("source", type=Path, help="Run manifest JSON")
    parser.set_defaults(handler=replay)
