"""Trajectory CSV ingestion and interacting-scene extraction.

Tracks are classified by approach side and turn direction, paired through
a movement conflict table, and cut into scenes around turning vehicles.
"""

from __future__ import annotations

import hashlib
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from config import CsvColumns, config
from exceptions import (
    DuplicateFrameError,
    InsufficientFramesError,
    SchemaError,
    UnclassifiableTrackError,
    ValidationError,
)
from utils.dynamics_utils import VehicleState, wrap_angle
from utils.potential_utils import GoalState, PotentialConfig, Scenario

logger = logging.getLogger(__name__)

__all__: list[str] = (
    "Approach",
    "Maneuver",
    "Movement",
    "Track",
    "SceneSpec",
    "BoundingBox",
    "IntersectionGeometry",
    "Diagnostics",
    "load_tracks",
    "filter_eligible",
    "classify_movement",
    "conflicts",
    "conflict_table",
    "extract_scenes",
    "scene_to_scenario",
    "split_scenes",
)

FRAME_SPACING_MS = 100


class Approach(str, Enum):
    """Entry side; the declaration order is one counterclockwise quarter turn per step"""

    S = "S"
    E = "E"
    N = "N"
    W = "W"

    def rotated(self, steps: int) -> Approach:
        members = list(Approach)
        return members[(members.index(self) + steps) % 4]


class Maneuver(str, Enum):
    THROUGH = "Through"
    LEFT = "Left"
    RIGHT = "Right"


@dataclass(frozen=True)
class Movement:
    approach: Approach
    maneuver: Maneuver

    def rotated(self, steps: int) -> Movement:
        return Movement(self.approach.rotated(steps), self.maneuver)

    @property
    def turning(self) -> bool:
        return self.maneuver is not Maneuver.THROUGH

    def __str__(self) -> str:
        return f"{self.approach.value}-{self.maneuver.value}"


# Northbound through traffic (entering from the south) crosses through and
# left-turning traffic from east and west, and left turns from the north.
_NORTHBOUND_THROUGH = Movement(Approach.S, Maneuver.THROUGH)
_NORTHBOUND_CONFLICTS = (
    Movement(Approach.E, Maneuver.THROUGH),
    Movement(Approach.E, Maneuver.LEFT),
    Movement(Approach.W, Maneuver.THROUGH),
    Movement(Approach.W, Maneuver.LEFT),
    Movement(Approach.N, Maneuver.LEFT),
)


def conflict_table() -> frozenset[frozenset[Movement]]:
    """Unordered conflicting movement pairs: the northbound rule rotated to all approaches"""
    pairs = set()
    for steps in range(4):
        subject = _NORTHBOUND_THROUGH.rotated(steps)
        for other in _NORTHBOUND_CONFLICTS:
            pairs.add(frozenset((subject, other.rotated(steps))))
    return frozenset(pairs)


_CONFLICTS = conflict_table()


def conflicts(m1: Movement, m2: Movement) -> bool:
    if m1.approach is m2.approach:
        return False
    return frozenset((m1, m2)) in _CONFLICTS


@dataclass(frozen=True, eq=False)
class Track:
    track_id: str
    frame_ids: np.ndarray
    timestamps_ms: np.ndarray
    states: np.ndarray
    lengths: np.ndarray
    widths: np.ndarray

    def __post_init__(self) -> None:
        frames = np.asarray(self.frame_ids, dtype=np.int64)
        if frames.size > 1 and np.any(np.diff(frames) <= 0):
            raise DuplicateFrameError(f"Track {self.track_id} frame ids are not strictly increasing")
        object.__setattr__(self, "frame_ids", frames)
        object.__setattr__(self, "timestamps_ms", np.asarray(self.timestamps_ms, dtype=np.int64))
        object.__setattr__(self, "states", np.asarray(self.states, dtype=float).reshape(-1, 5))
        object.__setattr__(self, "lengths", np.asarray(self.lengths, dtype=float))
        object.__setattr__(self, "widths", np.asarray(self.widths, dtype=float))

    def __len__(self) -> int:
        return int(self.frame_ids.size)

    def slice(self, start: int, stop: int, track_id: Optional[str] = None) -> Track:
        return Track(
            track_id or self.track_id,
            self.frame_ids[start:stop],
            self.timestamps_ms[start:stop],
            self.states[start:stop],
            self.lengths[start:stop],
            self.widths[start:stop],
        )

    def index_of(self, frame: int) -> int:
        idx = int(np.searchsorted(self.frame_ids, frame))
        if idx >= len(self) or self.frame_ids[idx] != frame:
            raise InsufficientFramesError(f"Track {self.track_id} has no frame {frame}")
        return idx

    def state_at(self, frame: int) -> VehicleState:
        return VehicleState.from_array(self.states[self.index_of(frame)])

    @property
    def first_frame(self) -> int:
        return int(self.frame_ids[0])

    @property
    def last_frame(self) -> int:
        return int(self.frame_ids[-1])


@dataclass(frozen=True)
class SceneSpec:
    reference_track: str
    member_tracks: tuple[str, ...]
    window: tuple[int, int]

    @property
    def scene_id(self) -> str:
        return f"{self.reference_track}@{self.window[0]}-{self.window[1]}"


@dataclass(frozen=True)
class BoundingBox:
    x0: float
    y0: float
    x1: float
    y1: float

    @classmethod
    def parse(cls, text: str) -> BoundingBox:
        try:
            x0, y0, x1, y1 = (float(v) for v in text.split(","))
        except ValueError as e:
            raise SchemaError(f"Region must be 'x0,y0,x1,y1', got {text!r}") from e
        return cls(min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))

    def contains(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        return (
            (xy[..., 0] >= self.x0) & (xy[..., 0] <= self.x1) & (xy[..., 1] >= self.y0) & (xy[..., 1] <= self.y1)
        )

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))


@dataclass(frozen=True)
class IntersectionGeometry:
    center: tuple[float, float] = (0.0, 0.0)
    core_half_width: float = config.data.core_half_width
    turn_threshold_deg: float = config.data.turn_threshold_deg

    def in_core(self, xy: np.ndarray) -> bool:
        dx, dy = np.asarray(xy, dtype=float) - np.asarray(self.center)
        return bool(max(abs(dx), abs(dy)) < self.core_half_width)


@dataclass
class Diagnostics:
    dropped_rows: int = 0
    excluded_tracks: int = 0
    messages: list[str] = field(default_factory=list)
    counts: Counter = field(default_factory=Counter)

    def note(self, kind: str, message: str) -> None:
        self.counts[kind] += 1
        self.messages.append(message)
        logger.warning(message)


def load_tracks(
    path: str | Path,
    schema: CsvColumns = config.data.columns,
    diagnostics: Optional[Diagnostics] = None,
) -> list[Track]:
    """Read a track CSV, group rows by track id and sort them by frame"""
    diagnostics = diagnostics if diagnostics is not None else Diagnostics()
    frame = pd.read_csv(path)
    mapping = schema.model_dump()
    missing = [column for column in mapping.values() if column not in frame.columns]
    if missing:
        raise SchemaError(f"{path}: missing mandatory columns {missing}; found {list(frame.columns)}")
    frame = frame[list(mapping.values())].rename(columns={v: k for k, v in mapping.items()})
    if frame.empty:
        return []

    numeric = ["frame_id", "timestamp_ms", "x", "y", "vx", "vy", "psi_rad", "length", "width"]
    values = frame[numeric].apply(pd.to_numeric, errors="coerce")
    finite = np.isfinite(values.to_numpy(dtype=float)).all(axis=1)
    dropped = int((~finite).sum())
    if dropped:
        diagnostics.dropped_rows += dropped
        diagnostics.note("dropped_rows", f"{path}: dropped {dropped} rows with non-finite fields")
    frame = pd.concat([frame[["track_id"]], values], axis=1)[finite]
    frame["track_id"] = frame["track_id"].astype(str)

    duplicated = frame.duplicated(subset=["track_id", "frame_id"], keep=False)
    if duplicated.any():
        first = frame[duplicated].iloc[0]
        raise DuplicateFrameError(f"{path}: duplicate frame {int(first.frame_id)} for track {first.track_id}")

    tracks = []
    for track_id, rows in frame.groupby("track_id", sort=True):
        rows = rows.sort_values("frame_id")
        states = rows[["x", "y", "vx", "vy", "psi_rad"]].to_numpy(dtype=float)
        states[:, 4] = wrap_angle(states[:, 4])
        frames = rows["frame_id"].to_numpy(dtype=np.int64)
        stamps = rows["timestamp_ms"].to_numpy(dtype=np.int64)
        if np.any(np.diff(stamps) != FRAME_SPACING_MS * np.diff(frames)):
            diagnostics.note(
                "timestamp_spacing", f"{path}: track {track_id} timestamps are not {FRAME_SPACING_MS} ms apart"
            )
        tracks.append(
            Track(
                track_id=str(track_id),
                frame_ids=frames,
                timestamps_ms=stamps,
                states=states,
                lengths=rows["length"].to_numpy(dtype=float),
                widths=rows["width"].to_numpy(dtype=float),
            )
        )
    logger.info("loaded %d tracks from %s", len(tracks), path)
    return tracks


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Half-open index ranges of consecutive True entries"""
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(int)))
    return list(zip(edges[::2], edges[1::2]))


def filter_eligible(
    tracks: Iterable[Track],
    min_frames: int = config.data.min_frames,
    region: Optional[BoundingBox] = None,
) -> list[Track]:
    """Keep maximal runs of consecutive in-region frames at least min_frames long"""
    needed = config.dynamics.history + config.dynamics.horizon
    if min_frames < needed:
        raise ValidationError(f"min_frames must be at least {needed}")
    kept = []
    for track in tracks:
        inside = region.contains(track.states[:, :2]) if region is not None else np.ones(len(track), bool)
        # consecutive frame ids only; a frame gap breaks the run
        breaks = np.concatenate([[False], np.diff(track.frame_ids) != 1])
        runs = []
        for start, stop in _runs(inside):
            cut_points = [start] + [k for k in range(start + 1, stop) if breaks[k]] + [stop]
            runs.extend((a, b) for a, b in zip(cut_points[:-1], cut_points[1:]) if b - a >= min_frames)
        for k, (start, stop) in enumerate(runs):
            suffix = track.track_id if len(runs) == 1 else f"{track.track_id}#{k}"
            kept.append(track.slice(start, stop, suffix))
    return kept


def _side_of(dx: float, dy: float) -> Approach:
    if abs(dy) >= abs(dx):
        return Approach.S if dy < 0 else Approach.N
    return Approach.W if dx < 0 else Approach.E


def _track_heading(track: Track, index: int) -> float:
    vx, vy = track.states[index, 2:4]
    if np.hypot(vx, vy) > config.dynamics.v_heading_eps:
        return float(np.arctan2(vy, vx))
    return float(track.states[index, 4])


def classify_movement(track: Track, geometry: IntersectionGeometry = IntersectionGeometry()) -> Movement:
    """Approach from the entry side, maneuver from the signed heading change (CCW positive)"""
    entry, exit_ = track.states[0, :2], track.states[-1, :2]
    if geometry.in_core(entry) or geometry.in_core(exit_):
        raise UnclassifiableTrackError(
            f"Track {track.track_id} does not both enter and leave the intersection core", track.track_id
        )
    cx, cy = geometry.center
    approach = _side_of(entry[0] - cx, entry[1] - cy)
    turn = float(np.degrees(wrap_angle(_track_heading(track, -1) - _track_heading(track, 0))))
    if abs(turn) < geometry.turn_threshold_deg:
        maneuver = Maneuver.THROUGH
    elif turn > 0:
        maneuver = Maneuver.LEFT
    else:
        maneuver = Maneuver.RIGHT
    return Movement(approach, maneuver)


def extract_scenes(
    tracks: Sequence[Track],
    movements: dict[str, Movement],
    history: int = config.dynamics.history,
    horizon: int = config.dynamics.horizon,
) -> list[SceneSpec]:
    """One scene per turning track with at least one long-enough conflicting overlap"""
    by_id = {t.track_id: t for t in tracks}
    span = history + horizon
    scenes = []
    for reference in tracks:
        movement = movements.get(reference.track_id)
        if movement is None or not movement.turning:
            continue
        members = []
        for other in tracks:
            other_movement = movements.get(other.track_id)
            if other is reference or other_movement is None or not conflicts(movement, other_movement):
                continue
            start = max(reference.first_frame, other.first_frame)
            stop = min(reference.last_frame, other.last_frame)
            if stop - start >= span:
                members.append(other.track_id)
        if not members:
            continue
        window_start = max(reference.first_frame, *(by_id[m].first_frame for m in members))
        window_end = min(reference.last_frame, *(by_id[m].last_frame for m in members))
        if window_end - window_start < span:
            # keep the longest-overlapping partners when all of them cannot share a window
            members.sort(
                key=lambda m: min(reference.last_frame, by_id[m].last_frame)
                - max(reference.first_frame, by_id[m].first_frame),
                reverse=True,
            )
            kept = []
            for m in members:
                trial = kept + [m]
                lo = max(reference.first_frame, *(by_id[x].first_frame for x in trial))
                hi = min(reference.last_frame, *(by_id[x].last_frame for x in trial))
                if hi - lo >= span:
                    kept = trial
            members = kept
            window_start = max(reference.first_frame, *(by_id[m].first_frame for m in members))
            window_end = min(reference.last_frame, *(by_id[m].last_frame for m in members))
        scenes.append(SceneSpec(reference.track_id, (reference.track_id, *members), (window_start, window_end)))
    return scenes


def scene_to_scenario(
    scene: SceneSpec,
    tracks: Sequence[Track],
    t0: Optional[int] = None,
    history: int = config.dynamics.history,
    horizon: int = config.dynamics.horizon,
    dt: float = config.dynamics.dt,
    a_max: float = config.dynamics.a_max,
    potential_config: Optional[PotentialConfig] = None,
    source_file: str = "",
) -> Scenario:
    """Histories [t0 - T_h, t0), initial states at t0, goals and ground truth up to t0 + T_f"""
    by_id = {t.track_id: t for t in tracks}
    t0 = scene.window[0] + history if t0 is None else t0
    initial, goals, histories, truth, extents, dimensions = [], [], [], [], [], []
    for member in scene.member_tracks:
        track = by_id[member]
        if t0 - history < track.first_frame or t0 + horizon > track.last_frame:
            raise InsufficientFramesError(
                f"Track {member} lacks frames [{t0 - history}, {t0 + horizon}] for scene {scene.scene_id}"
            )
        start = track.index_of(t0 - history)
        stop = track.index_of(t0 + horizon) + 1
        if stop - start != history + horizon + 1:
            raise InsufficientFramesError(f"Track {member} has missing frames inside the scene window")
        states = track.states[start:stop]
        histories.append(tuple(VehicleState.from_array(s) for s in states[:history]))
        initial.append(VehicleState.from_array(states[history]))
        goals.append(GoalState.from_state(VehicleState.from_array(states[-1])))
        truth.append(states[history + 1 :, :2])
        extents.append(states[:, :2])
        at = start + history
        dimensions.append([float(track.lengths[at]), float(track.widths[at])])

    points = np.concatenate(extents)
    diag = float(np.linalg.norm(points.max(axis=0) - points.min(axis=0)))
    return Scenario(
        initial_states=tuple(initial),
        goals=tuple(goals),
        histories=tuple(histories),
        dt=dt,
        horizon=horizon,
        a_max=a_max,
        scene_diag=max(diag, config.data.scene_diag_floor),
        agent_ids=tuple(scene.member_tracks),
        scene_id=scene.scene_id,
        ground_truth=np.stack(truth),
        potential_config=potential_config,
        provenance={
            "source_file": source_file,
            "t0": int(t0),
            "scene_id": scene.scene_id,
            "dimensions": dimensions,
        },
    )


def split_scenes(scene_ids: Iterable[str], train_fraction: float = config.data.train_fraction) -> dict[str, str]:
    """Deterministic train/test assignment by hashed scene id"""
    assignment = {}
    for scene_id in scene_ids:
        digest = hashlib.sha256(scene_id.encode("utf-8")).digest()
        bucket = int.from_bytes(digest[:8], "big") / 2**64
        assignment[scene_id] = "train" if bucket < train_fraction else "test"
    return assignment
