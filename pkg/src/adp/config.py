"""Configuration settings for experiments and the solver."""

import json
import math
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import NDArray
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeInt,
    PositiveInt,
    field_validator,
    model_validator,
)
from pydantic_settings import BaseSettings, SettingsConfigDict

from .dynamics import StageCost
from .errors import ConfigError
from .lp_builder import ObjectiveMoments, Pairing
from .sampling import BoxDistribution

Bounds = tuple[float, float]

# Rollouts are truncated once the discount weight falls below this value.
TRUNCATION_WEIGHT = 1e-6


class AdpSettings(BaseSettings):
    """Process-wide settings read from the environment and ``.env``."""

    model_config = SettingsConfigDict(
        env_prefix="ADP_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Logging Configuration
    log_level: str = Field(default="INFO", description="Logging level")
    log_file: str = Field(default="adp.log", description="Log file path, empty disables")

    # Output Configuration
    output_directory: str = Field(
        default="results", description="Default directory for experiment CSVs"
    )
    overwrite_existing: bool = Field(
        default=True, description="Overwrite CSV files left by an earlier run"
    )

    # Execution
    max_workers: int = Field(
        default=1, ge=1, description="Experiment runs executed concurrently"
    )

    # Solver defaults
    solver_feasibility_tol: float = Field(default=1e-8, gt=0.0)
    solver_gap_tol: float = Field(default=1e-8, gt=0.0)
    solver_max_iter: int = Field(default=200, ge=1)
    solver_divergence: float = Field(default=1e12, gt=0.0)


def get_config() -> AdpSettings:
    """Get the global configuration instance."""
    return AdpSettings()


class ExperimentConfig(BaseModel):
    """Parameters of one experiment; each experiment id has its own defaults."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    experiment_id: int = Field(ge=1, le=3)
    gamma: float = Field(gt=0.0, lt=1.0)

    # Either a full matrix or (state weight, input weight) for a diagonal one.
    stage_cost: list[list[float]] | None = None
    stage_cost_diag: tuple[float, float] = (1.0, 1e-4)
    objective_cov: list[list[float]] | None = None
    objective_cov_diag: tuple[float, float] = (1.0, 0.8)

    # Single-entry box lists broadcast over every coordinate.
    state_box: list[Bounds]
    input_box: list[Bounds]
    initial_box: list[Bounds] | None = None

    noise_var: float = Field(default=0.0, ge=0.0)
    noise_cov: list[list[float]] | None = None

    n_constraints: list[PositiveInt]
    state_dims: list[PositiveInt] = Field(default_factory=lambda: [2])
    input_dim: PositiveInt = 1
    mc_draws: PositiveInt = 100
    repetitions: PositiveInt = 10
    n_rollouts: PositiveInt = 10
    horizon: PositiveInt | None = None
    seed: int = Field(default=0, ge=0)
    pairing: Pairing = Pairing.EQUAL_SAMPLES
    # Cutting-plane rounds that re-impose each relaxed row at its minimizing w.
    refine_rounds: NonNegativeInt = 30
    # Replaces the solver iteration limit of the environment when set.
    solver_max_iter: PositiveInt | None = None
    record_times: bool = True
    output_dir: Path = Path("results")

    @field_validator("n_constraints", "state_dims")
    @classmethod
    def _non_empty(cls, value: list[int]) -> list[int]:
        if not value:
            raise ValueError("list must not be empty")
        return value

    @field_validator("state_box", "input_box", "initial_box")
    @classmethod
    def _ordered_bounds(cls, value: list[Bounds] | None) -> list[Bounds] | None:
        if value is None:
            return value
        if not value:
            raise ValueError("box must have at least one coordinate")
        for low, high in value:
            if low > high:
                raise ValueError(f"lower bound {low} exceeds upper bound {high}")
        return value

    @model_validator(mode="after")
    def _single_count_outside_sweep(self) -> "ExperimentConfig":
        if self.experiment_id != 1 and len(self.n_constraints) > 1:
            raise ValueError(
                f"experiment {self.experiment_id} uses one constraint count, "
                f"got {self.n_constraints}"
            )
        return self

    @classmethod
    def defaults(cls, experiment_id: int) -> "ExperimentConfig":
        """Return the default parameters of an experiment.

        Args:
            experiment_id: 1, 2 or 3

        Returns:
            Validated configuration

        Raises:
            ConfigError: Unknown experiment id
        """
        try:
            values = EXPERIMENT_DEFAULTS[experiment_id]
        except KeyError as e:
            raise ConfigError(f"Unknown experiment id: {experiment_id}") from e
        return cls.model_validate({"experiment_id": experiment_id, **values})

    @classmethod
    def from_file(cls, path: Path, experiment_id: int) -> "ExperimentConfig":
        """Load a JSON config file layered over the experiment defaults.

        Args:
            path: JSON file whose keys mirror the field names
            experiment_id: Experiment used when the file does not name one

        Returns:
            Validated configuration
        """
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"Config file {path} must contain a JSON object")
        base = cls.defaults(int(data.get("experiment_id", experiment_id)))
        return base.with_overrides(**data)

    def with_overrides(self, **updates: Any) -> "ExperimentConfig":
        """Return a re-validated copy; ``None`` values leave fields untouched."""
        changes = {key: value for key, value in updates.items() if value is not None}
        return self.model_validate(self.model_dump() | changes)

    def state_distribution(self, state_dim: int) -> BoxDistribution:
        """Distribution of sampled states."""
        return _box(self.state_box, state_dim)

    def input_distribution(self, input_dim: int) -> BoxDistribution:
        """Distribution of sampled inputs and comparison inputs."""
        return _box(self.input_box, input_dim)

    def initial_distribution(self, state_dim: int) -> BoxDistribution:
        """Initial-state distribution for rollouts, defaulting to the state box."""
        return _box(self.initial_box or self.state_box, state_dim)

    def cost(self, state_dim: int, input_dim: int) -> StageCost:
        """Stage cost for the given dimensions."""
        if self.stage_cost is not None:
            matrix = np.asarray(self.stage_cost, dtype=float)
        else:
            matrix = _block_diag(self.stage_cost_diag, state_dim, input_dim)
        return StageCost(matrix, state_dim)

    def objective(self, state_dim: int, input_dim: int) -> ObjectiveMoments:
        """Covariance of the objective measure for the given dimensions."""
        if self.objective_cov is not None:
            matrix = np.asarray(self.objective_cov, dtype=float)
        else:
            matrix = _block_diag(self.objective_cov_diag, state_dim, input_dim)
        return ObjectiveMoments(matrix)

    def noise(self, state_dim: int) -> NDArray[np.float64]:
        """Process-noise covariance."""
        if self.noise_cov is not None:
            cov = np.asarray(self.noise_cov, dtype=float)
            if cov.shape != (state_dim, state_dim):
                raise ConfigError(
                    f"noise_cov has shape {cov.shape}, expected ({state_dim}, {state_dim})"
                )
            return cov
        return self.noise_var * np.eye(state_dim)

    def rollout_horizon(self) -> int:
        """Rollout length, by default the smallest H with gamma**H <= 1e-6."""
        if self.horizon is not None:
            return self.horizon
        return math.ceil(math.log(TRUNCATION_WEIGHT) / math.log(self.gamma))


def _box(bounds: list[Bounds], dim: int) -> BoxDistribution:
    if len(bounds) == 1:
        bounds = bounds * dim
    if len(bounds) != dim:
        raise ConfigError(f"box has {len(bounds)} coordinates, expected {dim}")
    lower, upper = zip(*bounds, strict=True)
    return BoxDistribution(np.array(lower, dtype=float), np.array(upper, dtype=float))


def _block_diag(
    weights: tuple[float, float], state_dim: int, input_dim: int
) -> NDArray[np.float64]:
    diagonal = [weights[0]] * state_dim + [weights[1]] * input_dim
    return np.diag(np.asarray(diagonal, dtype=float))


EXPERIMENT_DEFAULTS: dict[int, dict[str, Any]] = {
    1: {
        "gamma": 0.95,
        "stage_cost": np.diag([1.0, 1.0, 1e-2]).tolist(),
        "objective_cov": np.diag([1.0, 1.0, 1e-1]).tolist(),
        "state_box": [(-3.0, 3.0)],
        "input_box": [(-1.0, 1.0)],
        "noise_var": 1e-6,
        "n_constraints": [500, 1000, 2000, 5000, 10000, 20000],
        "state_dims": [2],
        "input_dim": 1,
        "mc_draws": 100,
        "repetitions": 10,
    },
    2: {
        "gamma": 0.95,
        "stage_cost_diag": (1.0, 1e-4),
        "objective_cov_diag": (1.0, 0.8),
        "state_box": [(-0.5, 0.5)],
        "input_box": [(-3.0, 3.0)],
        "noise_var": 1e-4,
        "n_constraints": [50000],
        "state_dims": list(range(2, 11)),
        "input_dim": 2,
        "mc_draws": 100,
        "repetitions": 10,
    },
    3: {
        "gamma": 0.99,
        "stage_cost": np.diag([1.0, 1.0, 1e2, 10.0, 1e-3]).tolist(),
        "objective_cov": np.diag([1.0, 1.0, 1.0, 1.0, 0.8]).tolist(),
        "state_box": [(-3.0, 3.0), (-3.0, 3.0), (-1.0, 1.0), (-1.0, 1.0)],
        "input_box": [(-100.0, 100.0)],
        "initial_box": [(-1.0, 1.0), (-1.0, 1.0), (-0.5, 0.5), (-0.5, 0.5)],
        "noise_var": 1e-6,
        "n_constraints": [10000],
        "state_dims": [4],
        "input_dim": 1,
        "mc_draws": 1,
        "repetitions": 1,
        "n_rollouts": 10,
        "solver_max_iter": 1000,
    },
}
