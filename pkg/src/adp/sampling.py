"""Constraint sampling: roll-out datasets for the sampled linear programs."""

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from loguru import logger
from numpy.typing import ArrayLike, NDArray

from .dynamics import TransitionSource
from .errors import DimensionError

Array = NDArray[np.float64]


@dataclass(frozen=True)
class BoxDistribution:
    """Uniform distribution on a box.

    Attributes:
        lower: Per-coordinate lower bounds
        upper: Per-coordinate upper bounds
    """

    lower: Array
    upper: Array

    def __post_init__(self) -> None:
        """Validate bounds."""
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise DimensionError(f"bounds have shapes {lower.shape} and {upper.shape}")
        if np.any(lower > upper):
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def symmetric(cls, half_widths: ArrayLike) -> "BoxDistribution":
        """Box [-w, w] per coordinate."""
        widths = np.atleast_1d(np.asarray(half_widths, dtype=float))
        return cls(-widths, widths)

    @property
    def dim(self) -> int:
        """Number of coordinates."""
        return int(self.lower.shape[0])

    @property
    def mean(self) -> Array:
        """Box center."""
        return (self.lower + self.upper) / 2

    def second_moment(self) -> Array:
        """E[x x'] of the uniform distribution."""
        variance = (self.upper - self.lower) ** 2 / 12
        return np.diag(variance) + np.outer(self.mean, self.mean)

    def sample(self, rng: np.random.Generator, size: int | None = None) -> Array:
        """Draw one point (or ``size`` points)."""
        shape = (self.dim,) if size is None else (size, self.dim)
        return rng.uniform(self.lower, self.upper, shape)


@dataclass(frozen=True)
class ConstraintSample:
    """One roll-out record.

    Attributes:
        x: State
        u: Input
        cost: Measured stage cost l(x, u)
        next_states: Array (M, n_x) of i.i.d. next-state draws
        w: Comparison input of the relaxed constraint
    """

    x: Array
    u: Array
    cost: float
    next_states: Array
    w: Array

    def __post_init__(self) -> None:
        """Validate the record."""
        for name in ("x", "u", "w"):
            vector = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            object.__setattr__(self, name, vector)
        object.__setattr__(self, "cost", float(self.cost))
        next_states = np.atleast_2d(np.asarray(self.next_states, dtype=float))
        if next_states.shape[0] < 1 or next_states.shape[1] != self.x.shape[0]:
            raise DimensionError(
                f"next_states has shape {next_states.shape}, expected (M, {self.x.shape[0]})"
            )
        if self.u.shape != self.w.shape:
            raise DimensionError("u and w must have the same length")
        if self.cost < 0:
            raise ValueError(f"stage cost must be nonnegative, got {self.cost}")
        object.__setattr__(self, "next_states", next_states)

    @property
    def mc_draws(self) -> int:
        """Number of Monte Carlo draws M."""
        return int(self.next_states.shape[0])


@dataclass(frozen=True)
class DatasetMetadata:
    """How a dataset was produced."""

    state_dist: BoxDistribution
    input_dist: BoxDistribution
    mc_draws: int
    seed: int | None = None
    gamma: float | None = None


@dataclass(frozen=True)
class Dataset:
    """Immutable collection of constraint samples with stacked array views."""

    samples: tuple[ConstraintSample, ...]
    metadata: DatasetMetadata

    def __post_init__(self) -> None:
        """Check homogeneous dimensions."""
        if not self.samples:
            raise ValueError("dataset is empty")
        first = self.samples[0]
        shape = (first.x.shape, first.u.shape, first.next_states.shape)
        for sample in self.samples:
            if (sample.x.shape, sample.u.shape, sample.next_states.shape) != shape:
                raise DimensionError("samples have inconsistent dimensions")

    def __len__(self) -> int:
        """Number of samples."""
        return len(self.samples)

    @property
    def state_dim(self) -> int:
        """Number of states."""
        return int(self.samples[0].x.shape[0])

    @property
    def input_dim(self) -> int:
        """Number of inputs."""
        return int(self.samples[0].u.shape[0])

    @cached_property
    def states(self) -> Array:
        """Array (N, n_x)."""
        return np.vstack([s.x for s in self.samples])

    @cached_property
    def inputs(self) -> Array:
        """Array (N, n_u)."""
        return np.vstack([s.u for s in self.samples])

    @cached_property
    def comparison_inputs(self) -> Array:
        """Array (N, n_u) of w."""
        return np.vstack([s.w for s in self.samples])

    @cached_property
    def costs(self) -> Array:
        """Array (N,)."""
        return np.array([s.cost for s in self.samples])

    @cached_property
    def next_states(self) -> Array:
        """Array (N, M, n_x)."""
        return np.stack([s.next_states for s in self.samples])

    @cached_property
    def next_state_means(self) -> Array:
        """Array (N, n_x) of sample means of the next-state draws."""
        return self.next_states.mean(axis=1)

    @cached_property
    def next_state_moments(self) -> Array:
        """Array (N, n_x, n_x) of sample second moments of the next-state draws."""
        draws = self.next_states
        return np.einsum("nmi,nmj->nij", draws, draws) / draws.shape[1]

    def head(self, n: int) -> "Dataset":
        """Dataset made of the first ``n`` samples."""
        return Dataset(self.samples[:n], self.metadata)


def sample_dataset(
    source: TransitionSource,
    state_dist: BoxDistribution,
    input_dist: BoxDistribution,
    n_constraints: int,
    mc_draws: int,
    rng: np.random.Generator,
    seed: int | None = None,
    gamma: float | None = None,
) -> Dataset:
    """Draw (x, u, w) triples and query the source M times per pair.

    Args:
        source: Sampled-transition interface
        state_dist: Distribution of x
        input_dist: Distribution of u and, independently, w
        n_constraints: Number of samples N
        mc_draws: Monte Carlo draws M per pair
        rng: Stream for x, u and w
        seed: Recorded in the metadata
        gamma: Recorded in the metadata

    Returns:
        Dataset of N samples
    """
    if n_constraints < 1 or mc_draws < 1:
        raise ValueError("n_constraints and mc_draws must be positive")
    if state_dist.dim != source.state_dim or input_dist.dim != source.input_dim:
        raise DimensionError(
            f"distributions ({state_dist.dim}, {input_dist.dim}) do not match source "
            f"({source.state_dim}, {source.input_dim})"
        )
    samples = []
    for _ in range(n_constraints):
        x = state_dist.sample(rng)
        u = input_dist.sample(rng)
        w = input_dist.sample(rng)
        cost, next_states = source.query_many(x, u, mc_draws)
        samples.append(ConstraintSample(x, u, cost, next_states, w))
    logger.debug(f"Sampled {n_constraints} constraints with {mc_draws} draws each")
    metadata = DatasetMetadata(state_dist, input_dist, mc_draws, seed, gamma)
    return Dataset(tuple(samples), metadata)


def dataset_header(state_dim: int, input_dim: int) -> list[str]:
    """CSV header of the one-row-per-draw dataset format."""
    return (
        [f"x_{i}" for i in range(state_dim)]
        + [f"u_{i}" for i in range(input_dim)]
        + [f"w_{i}" for i in range(input_dim)]
        + ["cost", "mc_index"]
        + [f"xp_{i}" for i in range(state_dim)]
    )


def write_dataset_csv(data: Dataset, path: Path) -> None:
    """Write a dataset with one row per Monte Carlo draw."""
    with path.open("w", newline="", encoding="utf-8") as file:
        writer = csv.writer(file)
        writer.writerow(dataset_header(data.state_dim, data.input_dim))
        for sample in data.samples:
            prefix = [*map(repr, map(float, sample.x)), *map(repr, map(float, sample.u))]
            prefix += [*map(repr, map(float, sample.w)), repr(float(sample.cost))]
            for index, next_state in enumerate(sample.next_states):
                writer.writerow([*prefix, index, *map(repr, map(float, next_state))])
    logger.info(f"Wrote {len(data)} samples to {path}")


def read_dataset_csv(path: Path, metadata: DatasetMetadata) -> Dataset:
    """Read a dataset written by :func:`write_dataset_csv`.

    Args:
        path: CSV file
        metadata: Metadata to attach (not stored in the file)

    Returns:
        Dataset equal to the one written
    """
    with path.open(newline="", encoding="utf-8") as file:
        reader = csv.reader(file)
        header = next(reader)
        n_x = sum(1 for name in header if name.startswith("x_"))
        n_u = sum(1 for name in header if name.startswith("u_"))
        if header != dataset_header(n_x, n_u):
            raise ValueError(f"{path} does not have the dataset header")
        groups: list[list[list[float]]] = []
        for row in reader:
            values = [float(v) for v in row]
            if int(values[2 * n_u + n_x + 1]) == 0:
                groups.append([])
            groups[-1].append(values)
    samples = []
    for rows in groups:
        first = rows[0]
        x = np.array(first[:n_x])
        u = np.array(first[n_x : n_x + n_u])
        w = np.array(first[n_x + n_u : n_x + 2 * n_u])
        next_states = np.array([r[n_x + 2 * n_u + 2 :] for r in rows])
        samples.append(ConstraintSample(x, u, first[n_x + 2 * n_u], next_states, w))
    return Dataset(tuple(samples), metadata)

