from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pytest

from utils.best_response_utils import SolverConfig
from utils.dynamics_utils import VehicleState
from utils.fictitious_play_utils import DfpConfig
from utils.potential_utils import GoalState, Scenario

FIXTURES_DIR: Path = Path(__file__).parent / "fixtures"


def make_scenario(
    rows: Sequence[Sequence[float]],
    goals: Optional[Sequence[Sequence[float]]] = None,
    horizon: int = 5,
    dt: float = 0.1,
    scene_diag: float = 20.0,
    ground_truth: Optional[np.ndarray] = None,
    histories=(),
    scene_id: str = "test",
) -> Scenario:
    return Scenario(
        initial_states=tuple(VehicleState(*r) for r in rows),
        goals=None if goals is None else tuple(GoalState(*g) for g in goals),
        histories=histories,
        dt=dt,
        horizon=horizon,
        scene_diag=scene_diag,
        ground_truth=ground_truth,
        scene_id=scene_id,
    )


def random_scenario(rng: np.random.Generator, n_agents: int, horizon: int = 5) -> Scenario:
    rows, goals = [], []
    for _ in range(n_agents):
        x, y = rng.uniform(-4.0, 4.0, size=2)
        speed = rng.uniform(3.0, 8.0)
        heading = rng.uniform(-np.pi, np.pi)
        rows.append((x, y, speed * np.cos(heading), speed * np.sin(heading), heading))
        gx, gy = rng.uniform(-10.0, 10.0, size=2)
        goals.append((gx, gy, speed * np.cos(heading), speed * np.sin(heading), heading + rng.uniform(-1.0, 1.0)))
    return make_scenario(rows, goals, horizon=horizon)


@pytest.fixture
def crossing_scenario() -> Scenario:
    """Eastbound and northbound cars that come within the safety distance"""
    return make_scenario(
        rows=[(-4.0, 0.0, 6.0, 0.0, 0.0), (0.0, -4.0, 0.0, 6.0, np.pi / 2)],
        goals=[(-1.0, 0.0, 6.0, 0.0, 0.0), (0.0, -1.0, 0.0, 6.0, np.pi / 2)],
    )


@pytest.fixture
def lone_scenario() -> Scenario:
    return make_scenario(rows=[(0.0, 0.0, 5.0, 0.0, 0.0)], goals=[(3.0, 0.0, 6.0, 0.0, 0.0)])


@pytest.fixture
def small_dfp() -> DfpConfig:
    return DfpConfig(max_outer_iters=15, n_starts=1)


@pytest.fixture
def small_solver() -> SolverConfig:
    return SolverConfig(max_inner_iters=30)


@pytest.fixture
def toy_csv() -> Path:
    return FIXTURES_DIR / "toy_tracks.csv"
