"""Per-invocation bookkeeping shared by the command modules."""

from __future__ import annotations

import argparse
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

from config import config
from exceptions import ValidationError
from utils.best_response_utils import Backend, SolverConfig
from utils.fictitious_play_utils import DfpConfig
from utils.potential_utils import PotentialConfig, Scenario
from utils.report_utils import RunManifest, ScenarioDocument, read_document, write_document

logger = logging.getLogger(__name__)

__all__: list[str] = (
    "ARTIFACT_VERSION",
    "RunContext",
    "common_options",
    "solver_options",
    "build_dfp",
    "build_solver",
    "potential_for",
    "load_scene_dir",
    "parse_floats",
)

ARTIFACT_VERSION = "1.0.0"
SCENE_GLOB = "*.json"
MANIFEST_SUFFIX = ".manifest.json"


def common_options() -> argparse.ArgumentParser:
    """--seed and --threads, accepted after the subcommand as well as before it"""
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="Random seed")
    parent.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="Maximum worker threads")
    return parent


def parse_floats(text: str, count: int) -> tuple[float, ...]:
    try:
        values = tuple(float(v) for v in text.split(","))
    except ValueError as e:
        raise ValidationError(f"Expected {count} comma-separated numbers, got {text!r}") from e
    if len(values) != count:
        raise ValidationError(f"Expected {count} comma-separated numbers, got {len(values)}")
    return values


@dataclass
class RunContext:
    command: str
    argv: list[str]
    seed: int = config.fictitious_play.rng_seed
    threads: int = config.cli.threads
    manifest_path: Optional[Path] = None
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.threads < 1:
            raise ValidationError(f"--threads must be at least 1, got {self.threads}")

    def add_input(self, path: str | Path) -> None:
        self.inputs.append(str(path))

    def add_output(self, path: str | Path) -> Path:
        self.outputs.append(str(path))
        return Path(path)

    def default_manifest(self, beside: str | Path) -> None:
        """Place the manifest next to the primary output unless --manifest was given"""
        if self.manifest_path is not None:
            return
        beside = Path(beside)
        if beside.suffix:
            self.manifest_path = beside.with_name(beside.stem + MANIFEST_SUFFIX)
        else:
            self.manifest_path = beside / "manifest.json"

    @contextmanager
    def timed(self, label: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[label] = time.perf_counter() - start

    def manifest(self, exit_code: int) -> RunManifest:
        return RunManifest(
            command=self.command,
            argv=self.argv,
            artifact_version=ARTIFACT_VERSION,
            config_path=config.source_path,
            config_snapshot=config.model_dump(exclude={"source_path"}),
            seeds={"seed": self.seed},
            inputs=self.inputs,
            outputs=self.outputs,
            timings_s=self.timings,
            exit_code=exit_code,
        )

    def write_manifest(self, exit_code: int) -> Optional[Path]:
        if self.manifest_path is None:
            logger.debug("no manifest location for %s", self.command)
            return None
        return write_document(self.manifest_path, self.manifest(exit_code))


def load_scene_dir(directory: str | Path) -> list[tuple[Path, ScenarioDocument]]:
    """Every scenario document in a directory, in file-name order"""
    directory = Path(directory)
    if not directory.is_dir():
        raise ValidationError(f"{directory} is not a directory")
    paths = sorted(
        p for p in directory.glob(SCENE_GLOB) if not p.name.endswith(MANIFEST_SUFFIX) and p.name != "manifest.json"
    )
    if not paths:
        raise ValidationError(f"No scenario files in {directory}")
    return [(p, read_document(p, ScenarioDocument)) for p in paths]


def solver_options() -> argparse.ArgumentParser:
    """Flags shared by every command that runs the equilibrium solver"""
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--mode", choices=("planning", "prediction"), default="planning")
    parent.add_argument("--solver", choices=[b.value for b in Backend], default=config.solver.backend)
    parent.add_argument("--starts", type=int, default=config.fictitious_play.n_starts, help="Multi-start count")
    parent.add_argument("--max-outer", type=int, default=config.fictitious_play.max_outer_iters)
    parent.add_argument("--lambdas", default=None, help="goal,smooth,efficiency,safety term weights")
    return parent


def build_dfp(args: argparse.Namespace, ctx: RunContext) -> DfpConfig:
    return DfpConfig(n_starts=args.starts, max_outer_iters=args.max_outer, rng_seed=ctx.seed)


def build_solver(args: argparse.Namespace) -> SolverConfig:
    return SolverConfig(backend=Backend(args.solver))


def potential_for(args: argparse.Namespace, scenario: Optional[Scenario] = None) -> PotentialConfig:
    """CLI flags over the scenario's embedded config over the config file"""
    base = (scenario.potential_config if scenario is not None else None) or PotentialConfig()
    if args.lambdas:
        base = base.with_lambdas(parse_floats(args.lambdas, 4))
    return base.for_mode(args.mode)
