from dotenv import load_dotenv
from pydantic import BaseModel, Field, model_validator
import tomli
from typing import Dict, List, Literal, Optional
from pathlib import Path
import os

ROOT_DIR = Path(__file__).resolve().parent


class DynamicsConfig(BaseModel):
    dt: float = Field(gt=0)
    horizon: int = Field(ge=1)
    history: int = Field(ge=1)
    a_max: float = Field(gt=0)
    v_heading_eps: float = Field(ge=0)


class PotentialSettings(BaseModel):
    lambda_goal: float = Field(ge=0)
    lambda_smooth: float = Field(ge=0)
    lambda_efficiency: float = Field(ge=0)
    lambda_safety: float = Field(ge=0)
    d_safe: float = Field(gt=0)
    safety_buffer: float = Field(ge=0)
    goal_component_scale: List[float]
    w_min: float = Field(gt=0)
    w_max: float = Field(gt=0)
    v_progress_target: float = Field(gt=0)

    @model_validator(mode="after")
    def validate_scale(self):
        if len(self.goal_component_scale) != 5:
            raise ValueError("goal_component_scale must have 5 entries")
        if any(c < 0 for c in self.goal_component_scale):
            raise ValueError("goal_component_scale entries must be >= 0")
        return self


class SolverSettings(BaseModel):
    backend: Literal["lm", "pg"]
    step_size: float = Field(gt=0)
    max_inner_iters: int = Field(ge=1)
    grad_tol: float = Field(gt=0)
    lm_damping_init: float = Field(gt=0)
    max_halvings: int = Field(ge=0)
    verify_budget_factor: int = Field(ge=1)


class FictitiousPlaySettings(BaseModel):
    max_outer_iters: int = Field(ge=1)
    phi_tol: float = Field(gt=0)
    control_tol: float = Field(gt=0)
    stationarity_tol: float = Field(gt=0)
    n_starts: int = Field(ge=1)
    rng_seed: int
    perturbation_sigma: float = Field(ge=0)


class CalibrationSettings(BaseModel):
    max_epochs: int = Field(ge=0)
    fd_step: float = Field(gt=0)
    fd_floor: float = Field(gt=0)
    learning_rate: float = Field(gt=0)
    lambda_init: float = Field(ge=0)
    w_init: float = Field(gt=0)


class CsvColumns(BaseModel):
    track_id: str
    frame_id: str
    timestamp_ms: str
    x: str
    y: str
    vx: str
    vy: str
    psi_rad: str
    length: str
    width: str


class DataSettings(BaseModel):
    min_frames: int = Field(ge=1)
    turn_threshold_deg: float = Field(gt=0, lt=90)
    core_half_width: float = Field(gt=0)
    train_fraction: float = Field(gt=0, lt=1)
    scene_diag_floor: float = Field(gt=0)
    columns: CsvColumns


class SynthSettings(BaseModel):
    speed_mean: float
    speed_std: float = Field(gt=0)
    speed_min: float = Field(gt=0)
    speed_max: float = Field(gt=0)
    lane_offset: float = Field(gt=0)
    turn_radius: float = Field(gt=0)
    start_fraction_min: float = Field(ge=0)
    start_fraction_max: float = Field(gt=0)
    min_separation: float = Field(ge=0)


class IDMSettings(BaseModel):
    v0: float = Field(gt=0)
    time_headway: float = Field(ge=0)
    s0: float = Field(ge=0)
    a_idm: float = Field(gt=0)
    b: float = Field(gt=0)
    delta: int = Field(ge=1)
    lane_half_width: float = Field(gt=0)
    vehicle_length: float = Field(ge=0)
    free_gap: float = Field(gt=0)


class MetricsSettings(BaseModel):
    collision_threshold: float = Field(gt=0)


class CLISettings(BaseModel):
    gap_threshold: float = Field(gt=0)
    threads: int = Field(ge=1)


class UIConfig(BaseModel):
    error_messages: Dict[str, str]


class Config(BaseModel):
    dynamics: DynamicsConfig
    potential: PotentialSettings
    solver: SolverSettings
    fictitious_play: FictitiousPlaySettings
    calibration: CalibrationSettings
    data: DataSettings
    synth: SynthSettings
    idm: IDMSettings
    metrics: MetricsSettings
    cli: CLISettings
    ui: UIConfig
    source_path: Optional[str] = None

    @model_validator(mode="after")
    def validate_structure(self):
        if self.potential.w_min > self.potential.w_max:
            raise ValueError("potential.w_min must not exceed potential.w_max")
        if self.synth.speed_min > self.synth.speed_max:
            raise ValueError("synth.speed_min must not exceed synth.speed_max")
        needed = self.dynamics.history + self.dynamics.horizon + 1
        if self.data.min_frames < needed:
            raise ValueError(f"data.min_frames must be at least history + horizon + 1 ({needed})")
        required_messages = {"validation", "data", "solver", "io", "unknown"}
        if not required_messages <= self.ui.error_messages.keys():
            missing = required_messages - self.ui.error_messages.keys()
            raise ValueError(f"Missing required error messages: {missing}")
        return self


def default_config_path() -> Path:
    """Resolve the config file: $PDGPLAY_CONFIG, then config.toml, then the template"""
    override = os.environ.get("PDGPLAY_CONFIG")
    if override:
        return Path(override)
    local = ROOT_DIR / "config.toml"
    if local.exists():
        return local
    return ROOT_DIR / "config.template.toml"


def load_config(path: str | Path | None = None) -> Config:
    """Load and validate config from TOML file"""
    config_path = Path(path) if path is not None else default_config_path()
    if not config_path.exists():
        raise FileNotFoundError(f"Config file not found at {config_path}")

    with open(config_path, "rb") as f:
        config_data = tomli.load(f)

    return Config(**config_data, source_path=str(config_path))


# Load .env and config on import
load_dotenv()
try:
    config: Config = load_config()
except Exception as e:
    raise RuntimeError(f"Failed to load config: {e}") from e
