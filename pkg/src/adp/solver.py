"""Dense primal-dual interior-point solver for maximize c'theta subject to G theta <= h.

The solver runs Mehrotra's predictor-corrector on the homogeneous self-dual
embedding of the inequality form, with Ruiz equilibration of G. Newton
systems are reduced to the normal equations G'WG of size n_vars.
"""

import time
from collections.abc import Callable
from dataclasses import dataclass
from enum import StrEnum

import numpy as np
import scipy.linalg
from loguru import logger
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field

from .config import get_config
from .lp_builder import LpProblem

Array = NDArray[np.float64]

STEP_FRACTION = 0.99
MIN_STEP = 1e-12
RUIZ_PASSES = 20


class LpStatus(StrEnum):
    """Outcome of a solve."""

    OPTIMAL = "optimal"
    UNBOUNDED = "unbounded"
    INFEASIBLE = "infeasible"
    ITERATION_LIMIT = "iteration_limit"


class SolverSettings(BaseModel):
    """Tolerances and limits of the interior-point method."""

    model_config = ConfigDict(frozen=True)

    feasibility_tol: float = Field(default=1e-8, gt=0.0)
    gap_tol: float = Field(default=1e-8, gt=0.0)
    max_iter: int = Field(default=200, ge=1)
    divergence: float = Field(default=1e12, gt=0.0)

    @classmethod
    def from_config(cls) -> "SolverSettings":
        """Build settings from the process-wide configuration."""
        config = get_config()
        return cls(
            feasibility_tol=config.solver_feasibility_tol,
            gap_tol=config.solver_gap_tol,
            max_iter=config.solver_max_iter,
            divergence=config.solver_divergence,
        )


@dataclass(frozen=True)
class LpSolution:
    """Result of :func:`solve_lp`.

    Attributes:
        status: Outcome
        theta: Primal solution, present iff optimal
        objective: c'theta when optimal, +inf when unbounded, -inf when infeasible
        duals: Multipliers y >= 0 with G'y = c, present iff optimal
        ray: Normalized direction d with G d <= 0 and c'd > 0 when unbounded
        farkas: Normalized y >= 0 with G'y = 0 and h'y < 0 when infeasible
        iterations: Interior-point iterations used
        solve_time: Wall-clock seconds
        message: Diagnostic text
    """

    status: LpStatus
    theta: Array | None
    objective: float
    duals: Array | None
    iterations: int
    solve_time: float
    ray: Array | None = None
    farkas: Array | None = None
    message: str = ""

    @property
    def is_optimal(self) -> bool:
        """Whether the solve reached an optimal point."""
        return self.status is LpStatus.OPTIMAL


@dataclass(frozen=True)
class _Scaling:
    row: Array
    col: Array
    h_scale: float
    c_scale: float


def _equilibrate(G: Array, passes: int = RUIZ_PASSES) -> tuple[Array, Array, Array]:
    """Ruiz scaling: returns R G D and the diagonals R, D."""
    scaled = G.copy()
    row = np.ones(G.shape[0])
    col = np.ones(G.shape[1])
    for _ in range(passes):
        row_norm = np.sqrt(np.abs(scaled).max(axis=1, initial=0.0))
        col_norm = np.sqrt(np.abs(scaled).max(axis=0, initial=0.0))
        row_norm[row_norm == 0] = 1.0
        col_norm[col_norm == 0] = 1.0
        scaled /= row_norm[:, None]
        scaled /= col_norm[None, :]
        row /= row_norm
        col /= col_norm
        if np.abs(1 - row_norm).max(initial=0.0) < 1e-3 and np.abs(1 - col_norm).max(
            initial=0.0
        ) < 1e-3:
            break
    return scaled, row, col


def _factor(M: Array) -> tuple[Callable[[Array], Array], bool]:
    """Return a solver for M x = r and whether the Cholesky path failed."""
    try:
        factor = scipy.linalg.cho_factor(M, check_finite=False)
    except np.linalg.LinAlgError:
        return lambda r: scipy.linalg.lstsq(M, r, check_finite=False)[0], True

    def solve(r: Array) -> Array:
        return scipy.linalg.cho_solve(factor, r, check_finite=False)

    return solve, False


def _max_step(values: Array, steps: Array) -> float:
    negative = steps < 0
    if not np.any(negative):
        return np.inf
    return float(np.min(-values[negative] / steps[negative]))


def solve_lp(problem: LpProblem, settings: SolverSettings | None = None) -> LpSolution:
    """Solve maximize c'theta subject to G theta <= h.

    Args:
        problem: Dense inequality-form problem
        settings: Tolerances; defaults when omitted

    Returns:
        Solution whose status is optimal, unbounded, infeasible or
        iteration_limit (which also covers numerical breakdown)
    """
    settings = settings or SolverSettings()
    start = time.perf_counter()
    solver = _HsdSolver(problem, settings)
    solution = solver.run()
    solution = LpSolution(
        status=solution.status,
        theta=solution.theta,
        objective=solution.objective,
        duals=solution.duals,
        iterations=solution.iterations,
        solve_time=time.perf_counter() - start,
        ray=solution.ray,
        farkas=solution.farkas,
        message=solution.message,
    )
    if solution.is_optimal:
        logger.debug(
            f"Solved {problem.kind} ({problem.n_rows}x{problem.n_vars}) in "
            f"{solution.iterations} iterations, objective {solution.objective:.10g}"
        )
    else:
        logger.warning(
            f"{problem.kind} ({problem.n_rows}x{problem.n_vars}) ended with status "
            f"{solution.status}: {solution.message}"
        )
    return solution


class _HsdSolver:
    """State of one homogeneous self-dual interior-point solve (minimization form)."""

    def __init__(self, problem: LpProblem, settings: SolverSettings) -> None:
        self.problem = problem
        self.settings = settings
        G, row, col = _equilibrate(problem.G)
        h = row * problem.h
        c = col * problem.objective
        h_scale = max(1.0, float(np.abs(h).max(initial=0.0)))
        c_scale = max(1.0, float(np.abs(c).max(initial=0.0)))
        self.scaling = _Scaling(row, col, h_scale, c_scale)
        self.G = G
        self.h = h / h_scale
        # minimize -c'theta
        self.c = -c / c_scale
        self.h_norm = float(np.abs(problem.h).max(initial=0.0))
        self.c_norm = float(np.abs(problem.objective).max(initial=0.0))
        self.warned_fallback = False

    def _starting_point(self) -> tuple[Array, Array, Array]:
        theta = scipy.linalg.lstsq(self.G, self.h, check_finite=False)[0]
        s = self.h - self.G @ theta
        z = scipy.linalg.lstsq(self.G.T, -self.c, check_finite=False)[0]
        return theta, np.maximum(s, 1.0), np.maximum(z, 1.0)

    def _unscaled(self, theta: Array, z: Array, tau: float) -> tuple[Array, Array]:
        scale = self.scaling
        return (
            scale.col * theta * scale.h_scale / tau,
            scale.row * z * scale.c_scale / tau,
        )

    def _converged(self, theta: Array, y: Array) -> bool:
        tol, gap_tol = self.settings.feasibility_tol, self.settings.gap_tol
        p = self.problem
        slack = p.h - p.G @ theta
        objective = float(p.objective @ theta)
        dual_objective = float(p.h @ y)
        gap_scale = gap_tol * (1 + abs(objective))
        return (
            float(np.maximum(-slack, 0.0).max(initial=0.0)) <= tol * (1 + self.h_norm)
            and float(np.abs(p.G.T @ y - p.objective).max(initial=0.0)) <= tol * (1 + self.c_norm)
            and abs(objective - dual_objective) <= gap_scale
            and float(y @ slack) <= gap_scale
        )

    def _certificate(self, theta: Array, z: Array, iteration: int) -> LpSolution | None:
        tol = self.settings.feasibility_tol
        p = self.problem
        direction = self.scaling.col * theta
        growth = float(p.objective @ direction)
        violation = float(np.maximum(p.G @ direction, 0.0).max(initial=0.0))
        if growth > tol and violation <= tol * growth:
            ray = direction / np.abs(direction).max()
            return self._ending(LpStatus.UNBOUNDED, iteration, "certified ray", ray=ray)
        multipliers = self.scaling.row * z
        bound = float(p.h @ multipliers)
        if bound < 0 and float(np.abs(p.G.T @ multipliers).max(initial=0.0)) <= tol * -bound:
            farkas = multipliers / np.abs(multipliers).max()
            return self._ending(
                LpStatus.INFEASIBLE, iteration, "certified Farkas multipliers", farkas=farkas
            )
        return None

    def _ending(
        self,
        status: LpStatus,
        iteration: int,
        message: str,
        ray: Array | None = None,
        farkas: Array | None = None,
    ) -> LpSolution:
        objective = {
            LpStatus.UNBOUNDED: np.inf,
            LpStatus.INFEASIBLE: -np.inf,
        }.get(status, np.nan)
        return LpSolution(status, None, objective, None, iteration, 0.0, ray, farkas, message)

    def _solve_normal(self, M: Array) -> Callable[[Array], Array]:
        solve, fallback = _factor(M)
        if fallback and not self.warned_fallback:
            logger.warning("Normal equations lost definiteness, using least squares")
            self.warned_fallback = True
        return solve

    def run(self) -> LpSolution:
        G, h, c = self.G, self.h, self.c
        m = G.shape[0]
        theta, s, z = self._starting_point()
        tau = kappa = 1.0

        for iteration in range(self.settings.max_iter):
            theta_u, y_u = self._unscaled(theta, z, tau)
            if self._converged(theta_u, y_u):
                return self._optimal(theta_u, y_u, iteration)
            if tau < kappa:
                certificate = self._certificate(theta, z, iteration)
                if certificate is not None:
                    return certificate
            if self._diverged(theta_u, y_u):
                ray = theta_u / np.abs(theta_u).max()
                return self._ending(LpStatus.UNBOUNDED, iteration, "iterates diverged", ray=ray)

            point = _Iterate(theta, s, z, tau, kappa)
            mu = (s @ z + tau * kappa) / (m + 1)
            try:
                newton = _NewtonSystem(G, h, c, point, self._solve_normal)
                # predictor
                ds_a, dz_a, dtau_a, dkappa_a = newton.direction(-s * z, -tau * kappa, 1.0)[1:]
                alpha_a = min(1.0, point.max_step(ds_a, dz_a, dtau_a, dkappa_a))
                mu_aff = (
                    (s + alpha_a * ds_a) @ (z + alpha_a * dz_a)
                    + (tau + alpha_a * dtau_a) * (kappa + alpha_a * dkappa_a)
                ) / (m + 1)
                sigma = float(np.clip(mu_aff / mu, 0.0, 1.0)) ** 3
                # corrector
                r_sz = sigma * mu - s * z - ds_a * dz_a
                r_tk = sigma * mu - tau * kappa - dtau_a * dkappa_a
                d_theta, d_s, d_z, d_tau, d_kappa = newton.direction(r_sz, r_tk, 1.0 - sigma)
            except (np.linalg.LinAlgError, ValueError) as e:
                return self._ending(
                    LpStatus.ITERATION_LIMIT, iteration, f"singular Newton system: {e}"
                )

            steps = (d_theta, d_s, d_z, np.array([d_tau, d_kappa]))
            if not all(np.all(np.isfinite(v)) for v in steps):
                return self._ending(
                    LpStatus.ITERATION_LIMIT, iteration, "non-finite Newton direction"
                )
            alpha = min(1.0, STEP_FRACTION * point.max_step(d_s, d_z, d_tau, d_kappa))
            if alpha < MIN_STEP:
                return self._ending(LpStatus.ITERATION_LIMIT, iteration, "step length stalled")
            theta = theta + alpha * d_theta
            s = s + alpha * d_s
            z = z + alpha * d_z
            tau = tau + alpha * d_tau
            kappa = kappa + alpha * d_kappa

        theta_u, y_u = self._unscaled(theta, z, tau)
        if self._converged(theta_u, y_u):
            return self._optimal(theta_u, y_u, self.settings.max_iter)
        return self._ending(
            LpStatus.ITERATION_LIMIT,
            self.settings.max_iter,
            f"no convergence in {self.settings.max_iter} iterations",
        )

    def _optimal(self, theta: Array, y: Array, iteration: int) -> LpSolution:
        objective = float(self.problem.objective @ theta)
        return LpSolution(LpStatus.OPTIMAL, theta, objective, y, iteration, 0.0, message="optimal")

    def _diverged(self, theta: Array, y: Array) -> bool:
        p = self.problem
        dual_residual = float(np.abs(p.G.T @ y - p.objective).max(initial=0.0))
        return (
            float(np.abs(theta).max(initial=0.0)) > self.settings.divergence
            and float(p.objective @ theta) > 0
            and dual_residual > self.settings.feasibility_tol * (1 + self.c_norm)
        )


@dataclass(frozen=True)
class _Iterate:
    theta: Array
    s: Array
    z: Array
    tau: float
    kappa: float

    def max_step(self, d_s: Array, d_z: Array, d_tau: float, d_kappa: float) -> float:
        """Largest step keeping s, z, tau and kappa nonnegative."""
        return min(
            _max_step(self.s, d_s),
            _max_step(self.z, d_z),
            _max_step(np.array([self.tau, self.kappa]), np.array([d_tau, d_kappa])),
        )


class _NewtonSystem:
    """Reduced Newton equations of the embedding at one iterate.

    Eliminating ds and dkappa leaves the normal matrix G'WG with W = z / s.
    The tau column is solved once and reused by predictor and corrector.
    """

    def __init__(
        self,
        G: Array,
        h: Array,
        c: Array,
        point: _Iterate,
        factor: Callable[[Array], Callable[[Array], Array]],
    ) -> None:
        self.G, self.h, self.c, self.point = G, h, c, point
        theta, s, z, tau, kappa = point.theta, point.s, point.z, point.tau, point.kappa
        self.r_x = G.T @ z + c * tau
        self.r_z = G @ theta + s - h * tau
        self.r_tau = kappa + c @ theta + h @ z
        self.W = z / s
        self.solve = factor(G.T @ (self.W[:, None] * G))
        self.q = self.solve(G.T @ (self.W * h) - c)
        self.dz1 = self.W * (G @ self.q - h)
        self.denominator = float(c @ self.q + h @ self.dz1 - kappa / tau)

    def direction(
        self, r_sz: Array, r_tk: float, eta: float
    ) -> tuple[Array, Array, Array, float, float]:
        """Search direction targeting s*z = r_sz + s*z and residuals scaled by 1 - eta."""
        G, h, c, W = self.G, self.h, self.c, self.W
        s, z, tau, kappa = self.point.s, self.point.z, self.point.tau, self.point.kappa
        b = eta * self.r_z + r_sz / z
        p = self.solve(-eta * self.r_x - G.T @ (W * b))
        dz0 = W * (G @ p + b)
        d_tau = float((-eta * self.r_tau - c @ p - h @ dz0 - r_tk / tau) / self.denominator)
        d_theta = p + self.q * d_tau
        d_z = dz0 + self.dz1 * d_tau
        d_s = (r_sz - s * d_z) / z
        d_kappa = (r_tk - kappa * d_tau) / tau
        return d_theta, d_s, d_z, d_tau, d_kappa
