"""Simulated environments and stage costs behind a sampled-transition interface."""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np
from loguru import logger
from numpy.typing import ArrayLike, NDArray
from tenacity import RetryError, Retrying, retry_if_exception_type, stop_after_attempt

from .errors import DimensionError, GenerationError

Array = NDArray[np.float64]

PSD_TOL = 1e-12
RANK_TOL = 1e-9
MAX_GENERATION_ATTEMPTS = 1000


def as_vector(value: ArrayLike, dim: int, name: str) -> Array:
    """Coerce ``value`` to a float vector of length ``dim``.

    Args:
        value: Scalar or array-like
        dim: Expected length
        name: Name used in the error message

    Returns:
        1-d float array

    Raises:
        DimensionError: Wrong number of entries
    """
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.ndim != 1 or arr.shape[0] != dim:
        raise DimensionError(f"{name} has shape {arr.shape}, expected ({dim},)")
    return arr


def _psd_factor(cov: Array) -> Array:
    """Return F with F @ F.T == cov for a symmetric PSD ``cov``."""
    if not np.any(cov):
        return np.zeros_like(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        # singular but PSD: fall back to a symmetric square root
        eigvals, eigvecs = np.linalg.eigh(cov)
        return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


def _check_psd(matrix: Array, name: str) -> None:
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {matrix.shape}")
    if not np.allclose(matrix, matrix.T, rtol=0.0, atol=PSD_TOL * max(1.0, np.abs(matrix).max())):
        raise ValueError(f"{name} is not symmetric")
    if matrix.size and np.linalg.eigvalsh(matrix).min() < -PSD_TOL * max(
        1.0, np.abs(matrix).max()
    ):
        raise ValueError(f"{name} is not positive semi-definite")


def gaussian_noise(cov: Array, rng: np.random.Generator, size: int | None = None) -> Array:
    """Draw zero-mean Gaussian vectors with covariance ``cov``.

    Args:
        cov: Symmetric PSD covariance, shape (n, n)
        rng: Random stream
        size: Number of draws; ``None`` returns a single vector

    Returns:
        Array of shape (n,) or (size, n)
    """
    return _scaled_normals(_psd_factor(cov), rng, size)


def _scaled_normals(factor: Array, rng: np.random.Generator, size: int | None) -> Array:
    n = factor.shape[0]
    shape = (n,) if size is None else (size, n)
    if not np.any(factor):
        return np.zeros(shape)
    return rng.standard_normal(shape) @ factor.T


@dataclass(frozen=True)
class LtiSystem:
    """Linear system x+ = A x + B u + xi with xi ~ N(0, noise_cov).

    Attributes:
        A: State matrix (n_x, n_x)
        B: Input matrix (n_x, n_u)
        noise_cov: Noise covariance (n_x, n_x)
    """

    A: Array
    B: Array
    noise_cov: Array
    noise_factor: Array = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        """Validate dimensions and cache the noise square root."""
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        cov = np.atleast_2d(np.asarray(self.noise_cov, dtype=float))
        n_x = A.shape[0]
        if A.shape != (n_x, n_x):
            raise DimensionError(f"A must be square, got shape {A.shape}")
        if B.shape[0] != n_x:
            raise DimensionError(f"B has {B.shape[0]} rows, expected {n_x}")
        if cov.shape != (n_x, n_x):
            raise DimensionError(f"noise_cov has shape {cov.shape}, expected ({n_x}, {n_x})")
        _check_psd(cov, "noise_cov")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "noise_cov", cov)
        object.__setattr__(self, "noise_factor", _psd_factor(cov))

    @property
    def state_dim(self) -> int:
        """Number of states n_x."""
        return int(self.A.shape[0])

    @property
    def input_dim(self) -> int:
        """Number of inputs n_u."""
        return int(self.B.shape[1])

    @property
    def noise_mean(self) -> Array:
        """Noise mean, always zero."""
        return np.zeros(self.state_dim)

    def with_noise(self, noise_cov: ArrayLike) -> "LtiSystem":
        """Copy of the system with a different noise covariance."""
        return LtiSystem(self.A, self.B, np.asarray(noise_cov, dtype=float))


@dataclass(frozen=True)
class CartPole:
    """Inverted pendulum on a cart with state (p, p_dot, theta, theta_dot).

    Attributes:
        cart_mass: M in kg
        pole_mass: m in kg
        pole_length: Pole length in m
        gravity: g in m/s^2
        dt: Forward-Euler step in s
        noise_cov: Additive noise covariance on the discrete update (4, 4)
    """

    state_dim: ClassVar[int] = 4
    input_dim: ClassVar[int] = 1

    cart_mass: float = 4.0
    pole_mass: float = 2.0
    pole_length: float = 1.0
    gravity: float = 9.8
    dt: float = 1e-3
    noise_cov: Array = field(default_factory=lambda: 1e-6 * np.eye(4))
    noise_factor: Array = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        """Validate physical parameters."""
        for name in ("cart_mass", "pole_mass", "pole_length", "dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        cov = np.atleast_2d(np.asarray(self.noise_cov, dtype=float))
        if cov.shape != (4, 4):
            raise DimensionError(f"noise_cov has shape {cov.shape}, expected (4, 4)")
        _check_psd(cov, "noise_cov")
        object.__setattr__(self, "noise_cov", cov)
        object.__setattr__(self, "noise_factor", _psd_factor(cov))


@dataclass(frozen=True)
class StageCost:
    """Quadratic stage cost l(x, u) = [x; u]' L [x; u].

    Attributes:
        L: Symmetric PSD weight (n_x + n_u, n_x + n_u) with L_uu positive definite
        state_dim: n_x, used to partition L
    """

    L: Array
    state_dim: int

    def __post_init__(self) -> None:
        """Validate symmetry, semi-definiteness and the input block."""
        L = np.atleast_2d(np.asarray(self.L, dtype=float))
        _check_psd(L, "L")
        if not 0 < self.state_dim < L.shape[0]:
            raise DimensionError(f"state_dim {self.state_dim} does not partition L {L.shape}")
        object.__setattr__(self, "L", L)
        if np.linalg.eigvalsh(self.L_uu).min() <= 0:
            raise ValueError("L_uu must be positive definite")

    @classmethod
    def diagonal(cls, state_weights: ArrayLike, input_weights: ArrayLike) -> "StageCost":
        """Build a block-diagonal cost from diagonal weights."""
        xs = np.atleast_1d(np.asarray(state_weights, dtype=float))
        us = np.atleast_1d(np.asarray(input_weights, dtype=float))
        return cls(np.diag(np.concatenate([xs, us])), xs.shape[0])

    @property
    def input_dim(self) -> int:
        """Number of inputs n_u."""
        return int(self.L.shape[0] - self.state_dim)

    @property
    def L_xx(self) -> Array:
        """State block."""
        return self.L[: self.state_dim, : self.state_dim]

    @property
    def L_xu(self) -> Array:
        """Cross block."""
        return self.L[: self.state_dim, self.state_dim :]

    @property
    def L_uu(self) -> Array:
        """Input block."""
        return self.L[self.state_dim :, self.state_dim :]


def lti_step(sys: LtiSystem, x: ArrayLike, u: ArrayLike, rng: np.random.Generator) -> Array:
    """Advance a linear system by one step.

    Args:
        sys: Linear system
        x: State, length n_x
        u: Input, length n_u
        rng: Noise stream

    Returns:
        Next state A x + B u + xi
    """
    x = as_vector(x, sys.state_dim, "x")
    u = as_vector(u, sys.input_dim, "u")
    return sys.A @ x + sys.B @ u + _scaled_normals(sys.noise_factor, rng, None)


def cartpole_accelerations(cp: CartPole, state: ArrayLike, u: float) -> tuple[float, float]:
    """Cart and pole accelerations from the reduced equations of motion."""
    _, _, theta, theta_dot = as_vector(state, 4, "state")
    m, M, length, g = cp.pole_mass, cp.cart_mass, cp.pole_length, cp.gravity
    sin, cos = math.sin(theta), math.cos(theta)
    p_ddot = (m * g * sin * cos - m * length * theta_dot**2 * sin + u) / (M + m * sin**2)
    theta_ddot = (g * sin + p_ddot * cos) / length
    return p_ddot, theta_ddot


def cartpole_step(cp: CartPole, state: ArrayLike, u: ArrayLike, rng: np.random.Generator) -> Array:
    """Advance the cart-pole by one forward-Euler step plus additive noise.

    Args:
        cp: Cart-pole parameters
        state: (p, p_dot, theta, theta_dot)
        u: Force on the cart in N
        rng: Noise stream

    Returns:
        Next state
    """
    state = as_vector(state, 4, "state")
    force = float(as_vector(u, 1, "u")[0])
    p_ddot, theta_ddot = cartpole_accelerations(cp, state, force)
    derivative = np.array([state[1], p_ddot, state[3], theta_ddot])
    next_state = state + cp.dt * derivative + _scaled_normals(cp.noise_factor, rng, None)
    if not np.all(np.isfinite(next_state)):
        logger.warning(f"Cart-pole state overflowed: {next_state}")
    return next_state


def stage_cost(L: StageCost, x: ArrayLike, u: ArrayLike) -> float:
    """Evaluate [x; u]' L [x; u]."""
    z = np.concatenate([as_vector(x, L.state_dim, "x"), as_vector(u, L.input_dim, "u")])
    return float(z @ L.L @ z)


def is_stabilizable(A: ArrayLike, B: ArrayLike, gamma: float) -> bool:
    """PBH test for stabilizability of (sqrt(gamma) A, sqrt(gamma) B).

    Args:
        A: State matrix (n_x, n_x)
        B: Input matrix (n_x, n_u)
        gamma: Discount factor in (0, 1)

    Returns:
        True iff every eigenvalue with modulus >= 1 is controllable
    """
    scale = math.sqrt(gamma)
    sA = scale * np.atleast_2d(np.asarray(A, dtype=float))
    sB = scale * np.asarray(B, dtype=float).reshape(sA.shape[0], -1)
    n_x = sA.shape[0]
    for lam in np.linalg.eigvals(sA):
        if abs(lam) < 1.0:
            continue
        pencil = np.hstack([lam * np.eye(n_x) - sA, sB.astype(complex)])
        singular_values = np.linalg.svd(pencil, compute_uv=False)
        if int(np.sum(singular_values > RANK_TOL)) < n_x:
            return False
    return True


class _UnstabilizableDraw(Exception):
    """Internal signal that a random draw must be regenerated."""


def _sparse_uniform(rng: np.random.Generator, shape: tuple[int, int]) -> Array:
    keep = rng.random(shape) >= 0.1
    values = rng.uniform(-0.1, 0.1, shape)
    return np.where(keep, values, 0.0)


def random_lti(
    n_x: int,
    rng: np.random.Generator,
    n_u: int = 2,
    gamma: float = 0.95,
    noise_cov: ArrayLike | None = None,
) -> LtiSystem:
    """Draw a random stabilizable system with A_ii = 0.5 and sparse small couplings.

    Args:
        n_x: Number of states, at least 2
        rng: Random stream
        n_u: Number of inputs
        gamma: Discount used in the stabilizability check
        noise_cov: Noise covariance, zero when omitted

    Returns:
        Random linear system

    Raises:
        GenerationError: No stabilizable draw within the attempt budget
    """
    if n_x < 2:
        raise ValueError(f"n_x must be at least 2, got {n_x}")
    cov = np.zeros((n_x, n_x)) if noise_cov is None else np.asarray(noise_cov, dtype=float)

    def draw() -> LtiSystem:
        A = _sparse_uniform(rng, (n_x, n_x))
        np.fill_diagonal(A, 0.5)
        B = _sparse_uniform(rng, (n_x, n_u))
        if not is_stabilizable(A, B, gamma):
            raise _UnstabilizableDraw
        return LtiSystem(A, B, cov)

    retrying = Retrying(
        stop=stop_after_attempt(MAX_GENERATION_ATTEMPTS),
        retry=retry_if_exception_type(_UnstabilizableDraw),
    )
    try:
        system = retrying(draw)
    except RetryError as e:
        raise GenerationError(
            f"No stabilizable system after {MAX_GENERATION_ATTEMPTS} attempts (n_x={n_x})"
        ) from e
    logger.debug(f"Generated random system with n_x={n_x}, n_u={n_u}")
    return system


class TransitionSource(ABC):
    """Black-box access to (cost, next state) for a queried state-input pair."""

    @property
    @abstractmethod
    def state_dim(self) -> int:
        """Number of states."""

    @property
    @abstractmethod
    def input_dim(self) -> int:
        """Number of inputs."""

    @abstractmethod
    def query(self, x: ArrayLike, u: ArrayLike) -> tuple[float, Array]:
        """Return the stage cost at (x, u) and one draw of the next state."""

    def query_many(self, x: ArrayLike, u: ArrayLike, draws: int) -> tuple[float, Array]:
        """Query (x, u) ``draws`` times.

        Args:
            x: State
            u: Input
            draws: Number of next-state draws

        Returns:
            The stage cost and an array (draws, n_x) of next states
        """
        cost, first = self.query(x, u)
        rest = [self.query(x, u)[1] for _ in range(draws - 1)]
        return cost, np.vstack([first, *rest])


class LtiSource(TransitionSource):
    """Noisy linear system with quadratic stage cost."""

    def __init__(self, system: LtiSystem, cost: StageCost, rng: np.random.Generator) -> None:
        """Bind a system, its cost and a noise stream.

        Args:
            system: Linear dynamics
            cost: Stage cost with matching dimensions
            rng: Noise stream
        """
        if (cost.state_dim, cost.input_dim) != (system.state_dim, system.input_dim):
            raise DimensionError("stage cost and system dimensions differ")
        self.system = system
        self.cost = cost
        self.rng = rng

    @property
    def state_dim(self) -> int:
        """Number of states."""
        return self.system.state_dim

    @property
    def input_dim(self) -> int:
        """Number of inputs."""
        return self.system.input_dim

    def query(self, x: ArrayLike, u: ArrayLike) -> tuple[float, Array]:
        """Stage cost and one next-state draw."""
        return stage_cost(self.cost, x, u), lti_step(self.system, x, u, self.rng)

    def query_many(self, x: ArrayLike, u: ArrayLike, draws: int) -> tuple[float, Array]:
        """Vectorized draws; consumes the stream exactly like repeated queries."""
        x = as_vector(x, self.state_dim, "x")
        u = as_vector(u, self.input_dim, "u")
        mean = self.system.A @ x + self.system.B @ u
        noise = _scaled_normals(self.system.noise_factor, self.rng, draws)
        return stage_cost(self.cost, x, u), mean + noise


class CartPoleSource(TransitionSource):
    """Stochastic cart-pole with quadratic stage cost."""

    def __init__(self, cartpole: CartPole, cost: StageCost, rng: np.random.Generator) -> None:
        """Bind the cart-pole, its cost and a noise stream."""
        if (cost.state_dim, cost.input_dim) != (4, 1):
            raise DimensionError("cart-pole cost must be 5x5 with state_dim 4")
        self.cartpole = cartpole
        self.cost = cost
        self.rng = rng

    @property
    def state_dim(self) -> int:
        """Number of states."""
        return 4

    @property
    def input_dim(self) -> int:
        """Number of inputs."""
        return 1

    def query(self, x: ArrayLike, u: ArrayLike) -> tuple[float, Array]:
        """Stage cost and one next-state draw."""
        return stage_cost(self.cost, x, u), cartpole_step(self.cartpole, x, u, self.rng)
