import argparse
import logging
from pathlib import Path

from config import config
from exceptions import InsufficientFramesError, UnclassifiableTrackError
from utils.report_utils import scenario_to_document, write_document
from utils.run_utils import RunContext, common_options, parse_floats
from utils.scenario_utils import (
    BoundingBox,
    Diagnostics,
    IntersectionGeometry,
    classify_movement,
    extract_scenes,
    filter_eligible,
    load_tracks,
    scene_to_scenario,
    split_scenes,
)

logger = logging.getLogger(__name__)


def ingest(args: argparse.Namespace, ctx: RunContext) -> int:
    ctx.default_manifest(args.out)
    ctx.add_input(args.csv)
    region = BoundingBox.parse(args.region) if args.region else None
    if args.center:
        center = parse_floats(args.center, 2)
    else:
        center = region.center if region else (0.0, 0.0)
    geometry = IntersectionGeometry(center=center, core_half_width=args.core_half_width)
    diagnostics = Diagnostics()

    with ctx.timed("ingest"):
        tracks = load_tracks(args.csv, diagnostics=diagnostics)
        eligible = filter_eligible(tracks, min_frames=args.min_frames, region=region)
        kept = {t.track_id.split("#")[0] for t in eligible}
        diagnostics.excluded_tracks += len({t.track_id for t in tracks}) - len(kept)

        movements = {}
        for track in eligible:
            try:
                movements[track.track_id] = classify_movement(track, geometry)
            except UnclassifiableTrackError as e:
                diagnostics.excluded_tracks += 1
                diagnostics.note("unclassifiable", str(e))

        scenes = extract_scenes(eligible, movements)
        scenarios = []
        for scene in scenes:
            try:
                scenarios.append(scene_to_scenario(scene, eligible, source_file=str(args.csv)))
            except InsufficientFramesError as e:
                diagnostics.note("insufficient_frames", str(e))

    assignment = split_scenes([s.scene_id for s in scenarios], args.train_fraction) if args.split else {}
    for scenario in scenarios:
        directory = args.out / assignment[scenario.scene_id] if args.split else args.out
        path = directory / f"{scenario.scene_id.replace('@', '_at_')}.json"
        write_document(path, scenario_to_document(scenario))
        ctx.add_output(path)

    print(f"tracks={len(tracks)} eligible={len(eligible)} classified={len(movements)}")
    print(
        f"scenes={len(scenarios)} excluded_tracks={diagnostics.excluded_tracks} "
        f"dropped_rows={diagnostics.dropped_rows}"
    )
    for kind, count in sorted(diagnostics.counts.items()):
        print(f"  {kind}: {count}")
    if args.split:
        n_train = sum(1 for v in assignment.values() if v == "train")
        print(f"train={n_train} test={len(assignment) - n_train}")
    return 0


def setup(subparsers) -> None:
    parser = subparsers.add_parser(
        "ingest", parents=[common_options()], help="Cut a track CSV into interaction scenes"
    )
    parser.add_argument("--csv", required=True, type=Path, help="Track CSV file")
    parser.add_argument("--region", default=None, help="Bounding box x0,y0,x1,y1")
    parser.add_argument("--center", default=None, help="Intersection center x,y (default: region center)")
    parser.add_argument("--core-half-width", type=float, default=config.data.core_half_width)
    parser.add_argument("--min-frames", type=int, default=config.data.min_frames)
    parser.add_argument("--split", action="store_true", help="Write train/ and test/ subdirectories")
    parser.add_argument("--train-fraction", type=float, default=config.data.train_fraction)
    parser.add_argument("--out", required=True, type=Path, help="Output directory")
    parser.set_defaults(handler=ingest)
