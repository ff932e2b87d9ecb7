"""Ground truth for the linear-quadratic case: Riccati solution, q*, gain and offsets."""

import math
from dataclasses import dataclass

import numpy as np
from loguru import logger
from numpy.typing import ArrayLike, NDArray

from .dynamics import CartPole, LtiSystem, StageCost, as_vector
from .errors import DivergenceError, IllPosedError
from .qbasis import PD_TOL, QuadraticQ
from .sampling import BoxDistribution

Array = NDArray[np.float64]

DARE_TOL = 1e-10
DARE_MAX_ITER = 100_000


def _smallest_eig(matrix: Array) -> float:
    return float(np.linalg.eigvalsh((matrix + matrix.T) / 2).min())


def _as_matrices(A: ArrayLike, B: ArrayLike) -> tuple[Array, Array]:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    return A, B


def solve_dare(
    A: ArrayLike,
    B: ArrayLike,
    L: StageCost,
    gamma: float,
    tol: float = DARE_TOL,
    max_iter: int = DARE_MAX_ITER,
) -> Array:
    """Solve the discounted Riccati equation by value iteration.

    Iterates P <- L_xx + g A'PA - (L_xu + g A'PB)(L_uu + g B'PB)^-1 (.)' from
    P = L_xx until the max-norm update is below ``tol`` relative to the scale
    of P.

    Args:
        A: State matrix
        B: Input matrix
        L: Stage cost
        gamma: Discount factor in (0, 1)
        tol: Relative stopping tolerance
        max_iter: Iteration budget

    Returns:
        Symmetric Riccati kernel P

    Raises:
        DivergenceError: No convergence within ``max_iter``
        IllPosedError: The input block lost positive definiteness
    """
    A, B = _as_matrices(A, B)
    P = L.L_xx.copy()
    for iteration in range(1, max_iter + 1):
        cross = L.L_xu + gamma * A.T @ P @ B
        inner = L.L_uu + gamma * B.T @ P @ B
        if _smallest_eig(inner) <= PD_TOL:
            raise IllPosedError(f"input block lost positive definiteness at iteration {iteration}")
        update = L.L_xx + gamma * A.T @ P @ A - cross @ np.linalg.solve(inner, cross.T)
        update = (update + update.T) / 2
        step = float(np.abs(update - P).max())
        P = update
        if not np.all(np.isfinite(P)):
            raise DivergenceError(f"Riccati iteration overflowed at iteration {iteration}")
        if step <= tol * max(1.0, float(np.abs(P).max())):
            logger.debug(f"Riccati iteration converged after {iteration} iterations")
            break
    else:
        raise DivergenceError(f"Riccati iteration did not converge in {max_iter} iterations")
    if _smallest_eig(P) <= 0:
        logger.warning("Riccati kernel is only positive semi-definite")
    return P


@dataclass(frozen=True)
class RiccatiSolution:
    """Optimal LQ objects.

    Attributes:
        P: Value-function kernel
        Qstar: Kernel of q*
        e_star: Offset of q*, gamma Tr(P Sigma) / (1 - gamma)
        K: Optimal gain, u = K x
        delta_e: Up-shift of the relaxed fixed point over q*
        state_dim: n_x
    """

    P: Array
    Qstar: Array
    e_star: float
    K: Array
    delta_e: float
    state_dim: int

    @property
    def q_xx(self) -> Array:
        """State block of Q*."""
        return self.Qstar[: self.state_dim, : self.state_dim]

    @property
    def q_xu(self) -> Array:
        """Cross block of Q*."""
        return self.Qstar[: self.state_dim, self.state_dim :]

    @property
    def q_uu(self) -> Array:
        """Input block of Q*."""
        return self.Qstar[self.state_dim :, self.state_dim :]

    @property
    def e_hat(self) -> float:
        """Offset of the relaxed fixed point."""
        return self.e_star + self.delta_e

    def as_quadratic_q(self, relaxed: bool = False) -> QuadraticQ:
        """q* as a QuadraticQ, or the relaxed fixed point when ``relaxed``."""
        return QuadraticQ(self.Qstar, self.e_hat if relaxed else self.e_star, self.state_dim)

    def schur_residual(self) -> float:
        """Max-norm of P - (q_xx - q_xu q_uu^-1 q_xu')."""
        schur = self.q_xx - self.q_xu @ np.linalg.solve(self.q_uu, self.q_xu.T)
        return float(np.abs(self.P - schur).max())


def build_qstar(
    A: ArrayLike,
    B: ArrayLike,
    L: StageCost,
    gamma: float,
    P: Array,
    noise_cov: ArrayLike,
) -> RiccatiSolution:
    """Assemble Q*, e*, the optimal gain and the relaxed offset from P.

    Raises:
        IllPosedError: q*_uu is not positive definite
    """
    A, B = _as_matrices(A, B)
    sigma = np.atleast_2d(np.asarray(noise_cov, dtype=float))
    q_xx = L.L_xx + gamma * A.T @ P @ A
    q_xu = L.L_xu + gamma * A.T @ P @ B
    q_uu = L.L_uu + gamma * B.T @ P @ B
    if _smallest_eig(q_uu) <= PD_TOL:
        raise IllPosedError("q*_uu is not positive definite")
    Qstar = np.block([[q_xx, q_xu], [q_xu.T, q_uu]])
    Qstar = (Qstar + Qstar.T) / 2
    e_star = gamma * float(np.trace(P @ sigma)) / (1 - gamma)
    reduced = q_xu @ np.linalg.solve(q_uu, q_xu.T)
    # the trace of a PSD product is nonnegative up to rounding
    delta_e = max(0.0, gamma * float(np.trace(reduced @ sigma)) / (1 - gamma))
    K = -np.linalg.solve(q_uu, q_xu.T)
    return RiccatiSolution(P, Qstar, e_star, K, delta_e, A.shape[0])


def riccati_solution(system: LtiSystem, L: StageCost, gamma: float) -> RiccatiSolution:
    """solve_dare followed by build_qstar for a linear system."""
    P = solve_dare(system.A, system.B, L, gamma)
    return build_qstar(system.A, system.B, L, gamma, P, system.noise_cov)


def linearize_cartpole(cp: CartPole) -> LtiSystem:
    """Forward-Euler discretization of the cart-pole linearized about the origin."""
    M, m, length, g = cp.cart_mass, cp.pole_mass, cp.pole_length, cp.gravity
    Ac = np.zeros((4, 4))
    Ac[0, 1] = 1.0
    Ac[1, 2] = m * g / M
    Ac[2, 3] = 1.0
    Ac[3, 2] = (M + m) * g / (M * length)
    Bc = np.array([[0.0], [1.0 / M], [0.0], [1.0 / (M * length)]])
    return LtiSystem(np.eye(4) + cp.dt * Ac, cp.dt * Bc, cp.noise_cov.copy())


def lqr_baseline(cp: CartPole, L: StageCost, gamma: float) -> tuple[LtiSystem, RiccatiSolution]:
    """Model-based LQR for the cart-pole linearized about the upright position."""
    system = linearize_cartpole(cp)
    solution = riccati_solution(system, L, gamma)
    radius = closed_loop_radius(system.A, system.B, solution.K, gamma)
    logger.info(f"LQR baseline gain {solution.K.ravel()} (discounted radius {radius:.6f})")
    return system, solution


def closed_loop_radius(A: ArrayLike, B: ArrayLike, K: ArrayLike, gamma: float) -> float:
    """Spectral radius of sqrt(gamma) (A + B K)."""
    A, B = _as_matrices(A, B)
    closed = A + B @ np.atleast_2d(np.asarray(K, dtype=float))
    return float(np.abs(np.linalg.eigvals(math.sqrt(gamma) * closed)).max())


def expected_lq_cost(
    P: Array, noise_cov: ArrayLike, gamma: float, initial: BoxDistribution
) -> float:
    """Discounted cost of the optimal policy averaged over a box of initial states."""
    sigma = np.atleast_2d(np.asarray(noise_cov, dtype=float))
    start = float(np.trace(P @ initial.second_moment()))
    return start + gamma * float(np.trace(P @ sigma)) / (1 - gamma)


def relaxed_operator_mc(
    system: LtiSystem,
    L: StageCost,
    gamma: float,
    q: QuadraticQ,
    x: ArrayLike,
    u: ArrayLike,
    rng: np.random.Generator,
    n_draws: int,
) -> tuple[float, float]:
    """Monte Carlo estimate of the relaxed Bellman operator applied to a quadratic q.

    The inner minimization over the comparison input uses the closed form
    w = -q_uu^-1 q_xu' mean(x+) of the sample-mean objective.

    Args:
        system: Linear dynamics with Gaussian noise
        L: Stage cost
        gamma: Discount factor
        q: Quadratic q with positive definite q_uu
        x: State
        u: Input
        rng: Noise stream
        n_draws: Number of next-state draws

    Returns:
        Estimate and its standard error
    """
    x = as_vector(x, system.state_dim, "x")
    u = as_vector(u, system.input_dim, "u")
    z = np.concatenate([x, u])
    cost = float(z @ L.L @ z)
    noise = rng.standard_normal((n_draws, system.state_dim)) @ system.noise_factor.T
    next_states = system.A @ x + system.B @ u + noise
    w = -np.linalg.solve(q.q_uu, q.q_xu.T @ next_states.mean(axis=0))
    joint = np.hstack([next_states, np.broadcast_to(w, (n_draws, w.shape[0]))])
    values = np.einsum("ni,ij,nj->n", joint, q.Qmat, joint) + q.e
    estimate = cost + gamma * float(values.mean())
    std_err = gamma * float(values.std(ddof=1)) / math.sqrt(n_draws) if n_draws > 1 else 0.0
    return estimate, std_err
