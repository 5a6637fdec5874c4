"""Vehicle state, control and trajectory types plus the kinematic rollout.

Controls are planar accelerations integrated as a double integrator; the
heading is derived from the velocity vector and carried over while the
vehicle is (nearly) stationary.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from config import config
from exceptions import AgentCountMismatchError, NonFiniteInputError, ValidationError

if TYPE_CHECKING:
    from utils.potential_utils import Scenario

__all__: list[str] = (
    "VehicleState",
    "Control",
    "ControlSequence",
    "JointProfile",
    "Trajectory",
    "wrap_angle",
    "rollout",
    "rollout_joint",
    "rollout_arrays",
    "project_controls",
    "project_array",
    "position_map",
)

_PROJECTION_SHRINK = 1.0 - 1e-15


def wrap_angle(theta):
    """Wrap angles into (-pi, pi]"""
    return np.pi - np.mod(np.pi - np.asarray(theta, dtype=float), 2.0 * np.pi)


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    vx: float
    vy: float
    theta: float

    def __post_init__(self) -> None:
        values = (self.x, self.y, self.vx, self.vy, self.theta)
        if not np.all(np.isfinite(values)):
            raise NonFiniteInputError(f"Vehicle state has non-finite fields: {values}")
        for name, value in zip(("x", "y", "vx", "vy"), values[:4]):
            object.__setattr__(self, name, float(value))
        object.__setattr__(self, "theta", float(wrap_angle(self.theta)))

    @classmethod
    def from_array(cls, values: Sequence[float]) -> VehicleState:
        return cls(*(float(v) for v in values[:5]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.vx, self.vy, self.theta])

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def velocity(self) -> np.ndarray:
        return np.array([self.vx, self.vy])

    @property
    def speed(self) -> float:
        return float(np.hypot(self.vx, self.vy))


@dataclass(frozen=True)
class Control:
    ax: float
    ay: float

    def as_array(self) -> np.ndarray:
        return np.array([self.ax, self.ay])


@dataclass(frozen=True, eq=False)
class ControlSequence:
    controls: np.ndarray
    dt: float

    def __post_init__(self) -> None:
        controls = np.array(self.controls, dtype=float).reshape(-1, 2)
        if controls.shape[0] < 1:
            raise ValidationError("A control sequence needs at least one step")
        if not self.dt > 0:
            raise ValidationError(f"dt must be positive, got {self.dt}")
        controls.setflags(write=False)
        object.__setattr__(self, "controls", controls)
        object.__setattr__(self, "dt", float(self.dt))

    @classmethod
    def from_controls(cls, controls: Iterable[Control], dt: float) -> ControlSequence:
        return cls(np.array([c.as_array() for c in controls]), dt)

    @classmethod
    def zeros(cls, horizon: int, dt: float) -> ControlSequence:
        return cls(np.zeros((horizon, 2)), dt)

    def __len__(self) -> int:
        return self.controls.shape[0]

    def __getitem__(self, t: int) -> Control:
        ax, ay = self.controls[t]
        return Control(float(ax), float(ay))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ControlSequence):
            return NotImplemented
        return self.dt == other.dt and np.array_equal(self.controls, other.controls)

    @property
    def horizon(self) -> int:
        return len(self)


@dataclass(frozen=True, eq=False)
class JointProfile:
    sequences: tuple[ControlSequence, ...]

    def __post_init__(self) -> None:
        sequences = tuple(self.sequences)
        if not sequences:
            raise ValidationError("A joint profile needs at least one agent")
        horizon, dt = len(sequences[0]), sequences[0].dt
        for seq in sequences[1:]:
            if len(seq) != horizon or seq.dt != dt:
                raise ValidationError("All control sequences must share horizon and dt")
        object.__setattr__(self, "sequences", sequences)

    @classmethod
    def from_array(cls, controls: np.ndarray, dt: float) -> JointProfile:
        controls = np.asarray(controls, dtype=float)
        return cls(tuple(ControlSequence(c, dt) for c in controls))

    @classmethod
    def zeros(cls, n_agents: int, horizon: int, dt: float) -> JointProfile:
        return cls(tuple(ControlSequence.zeros(horizon, dt) for _ in range(n_agents)))

    def stack(self) -> np.ndarray:
        return np.stack([seq.controls for seq in self.sequences])

    def replace_agent(self, i: int, seq: ControlSequence) -> JointProfile:
        """Swap in one agent's sequence; the others are carried over as-is"""
        sequences = list(self.sequences)
        sequences[i] = seq
        return JointProfile(tuple(sequences))

    def __len__(self) -> int:
        return len(self.sequences)

    def __getitem__(self, i: int) -> ControlSequence:
        return self.sequences[i]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, JointProfile):
            return NotImplemented
        return len(self) == len(other) and all(
            a == b for a, b in zip(self.sequences, other.sequences)
        )

    @property
    def n_agents(self) -> int:
        return len(self.sequences)

    @property
    def horizon(self) -> int:
        return len(self.sequences[0])

    @property
    def dt(self) -> float:
        return self.sequences[0].dt


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray
    dt: float

    def __post_init__(self) -> None:
        states = np.array(self.states, dtype=float).reshape(-1, 5)
        states.setflags(write=False)
        object.__setattr__(self, "states", states)

    def __len__(self) -> int:
        return self.states.shape[0]

    def __getitem__(self, t: int) -> VehicleState:
        return VehicleState.from_array(self.states[t])

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, :2]

    @property
    def velocities(self) -> np.ndarray:
        return self.states[:, 2:4]


def position_map(horizon: int, dt: float) -> np.ndarray:
    """Linear map M with p(t) = p0 + t*dt*v0 + M[t] @ a for t = 0..horizon.

    Row t holds dt^2 * (t - k - 0.5) for k < t, zeros elsewhere.
    """
    t = np.arange(horizon + 1)[:, None]
    k = np.arange(horizon)[None, :]
    return np.where(k < t, dt * dt * (t - k - 0.5), 0.0)


def rollout_arrays(
    initial: np.ndarray,
    controls: np.ndarray,
    dt: float,
    v_heading_eps: float = config.dynamics.v_heading_eps,
) -> np.ndarray:
    """Vectorized rollout of (N, 5) initial states under (N, T, 2) controls.

    Returns states shaped (N, T + 1, 5).
    """
    initial = np.asarray(initial, dtype=float).reshape(-1, 5)
    controls = np.asarray(controls, dtype=float).reshape(initial.shape[0], -1, 2)
    if not (np.all(np.isfinite(initial)) and np.all(np.isfinite(controls))):
        raise NonFiniteInputError("Rollout inputs contain non-finite values")

    n, horizon, _ = controls.shape
    velocities = np.empty((n, horizon + 1, 2))
    velocities[:, 0] = initial[:, 2:4]
    velocities[:, 1:] = initial[:, None, 2:4] + dt * np.cumsum(controls, axis=1)

    steps = velocities[:, :-1] * dt + 0.5 * controls * dt * dt
    positions = np.empty((n, horizon + 1, 2))
    positions[:, 0] = initial[:, :2]
    positions[:, 1:] = initial[:, None, :2] + np.cumsum(steps, axis=1)

    headings = np.empty((n, horizon + 1))
    headings[:, 0] = wrap_angle(initial[:, 4])
    speeds = np.hypot(velocities[..., 0], velocities[..., 1])
    derived = np.arctan2(velocities[..., 1], velocities[..., 0])
    for t in range(1, horizon + 1):
        moving = speeds[:, t] > v_heading_eps
        headings[:, t] = np.where(moving, derived[:, t], headings[:, t - 1])

    states = np.concatenate([positions, velocities, headings[..., None]], axis=2)
    return states


def rollout(
    initial: VehicleState,
    seq: ControlSequence,
    v_heading_eps: float = config.dynamics.v_heading_eps,
) -> Trajectory:
    states = rollout_arrays(initial.as_array()[None], seq.controls[None], seq.dt, v_heading_eps)
    return Trajectory(states[0], seq.dt)


def rollout_joint(
    scenario: Scenario,
    profile: JointProfile,
    v_heading_eps: float = config.dynamics.v_heading_eps,
) -> list[Trajectory]:
    if profile.n_agents != scenario.n_agents:
        raise AgentCountMismatchError(scenario.n_agents, profile.n_agents)
    states = rollout_arrays(scenario.initial_array, profile.stack(), profile.dt, v_heading_eps)
    return [Trajectory(s, profile.dt) for s in states]


def project_array(controls: np.ndarray, a_max: float) -> np.ndarray:
    """Rescale every acceleration whose norm exceeds a_max back onto the ball"""
    if not a_max > 0:
        raise ValidationError(f"a_max must be positive, got {a_max}")
    controls = np.asarray(controls, dtype=float)
    norms = np.linalg.norm(controls, axis=-1, keepdims=True)
    over = norms > a_max
    scale = np.where(over, a_max * _PROJECTION_SHRINK / np.where(over, norms, 1.0), 1.0)
    return controls * scale


def project_controls(seq: ControlSequence, a_max: float = config.dynamics.a_max) -> ControlSequence:
    return ControlSequence(project_array(seq.controls, a_max), seq.dt)
