"""Tests for the interior-point LP solver."""

import itertools
import sys
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError
from scipy.optimize import linprog

# Add src to path for testing
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from adp.lp_builder import LpProblem
from adp.solver import LpStatus, SolverSettings, solve_lp


def problem(c: list[float], G: list[list[float]], h: list[float]) -> LpProblem:
    return LpProblem(np.array(c), np.array(G), np.array(h))


def random_bounded_lp(rng: np.random.Generator, n_vars: int, n_extra: int) -> LpProblem:
    """Box of half-width 10 plus random rows that keep the origin feasible."""
    box = np.vstack([np.eye(n_vars), -np.eye(n_vars)])
    extra = rng.normal(size=(n_extra, n_vars))
    G = np.vstack([box, extra])
    h = np.concatenate([np.full(2 * n_vars, 10.0), rng.uniform(0.5, 5.0, n_extra)])
    return LpProblem(rng.normal(size=n_vars), G, h)


def vertex_optimum(lp: LpProblem) -> float:
    """Best objective over all basic feasible points."""
    best = -np.inf
    for rows in itertools.combinations(range(lp.n_rows), lp.n_vars):
        basis = lp.G[list(rows)]
        if abs(np.linalg.det(basis)) < 1e-9:
            continue
        point = np.linalg.solve(basis, lp.h[list(rows)])
        if np.all(lp.G @ point <= lp.h + 1e-9):
            best = max(best, float(lp.objective @ point))
    return best


class TestSmallPrograms:
    """Hand-checked programs."""

    def test_single_bound(self) -> None:
        """max x s.t. x <= 1."""
        solution = solve_lp(problem([1.0], [[1.0]], [1.0]))
        assert solution.status is LpStatus.OPTIMAL
        assert solution.is_optimal
        assert solution.theta is not None and solution.theta[0] == pytest.approx(1.0, abs=1e-7)
        assert solution.objective == pytest.approx(1.0, abs=1e-7)
        assert solution.duals is not None and solution.duals[0] == pytest.approx(1.0, abs=1e-7)

    def test_unbounded(self) -> None:
        """max x s.t. -x <= 1 has the ray +1."""
        solution = solve_lp(problem([1.0], [[-1.0]], [1.0]))
        assert solution.status is LpStatus.UNBOUNDED
        assert solution.objective == np.inf
        assert solution.theta is None
        assert solution.ray is not None and solution.ray[0] == pytest.approx(1.0)

    def test_tied_optimum(self) -> None:
        """A face of optimal points still gives the optimal value."""
        lp = problem(
            [1.0, 1.0],
            [[1.0, 1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]],
            [2.5, 2.0, 2.0, 0.0, 0.0],
        )
        solution = solve_lp(lp)
        assert solution.is_optimal
        assert solution.objective == pytest.approx(2.5, abs=1e-7)
        assert solution.theta is not None
        assert np.all(lp.G @ solution.theta <= lp.h + 1e-7)

    def test_infeasible(self) -> None:
        """x <= -1 and -x <= 0 is certified by Farkas multipliers."""
        lp = problem([1.0], [[1.0], [-1.0]], [-1.0, 0.0])
        solution = solve_lp(lp)
        assert solution.status is LpStatus.INFEASIBLE
        assert solution.objective == -np.inf
        farkas = solution.farkas
        assert farkas is not None
        assert np.all(farkas >= -1e-8)
        assert np.abs(lp.G.T @ farkas).max() <= 1e-6
        assert lp.h @ farkas < 0

    def test_iteration_limit(self) -> None:
        """A single iteration is not enough; the objective is NaN."""
        lp = random_bounded_lp(np.random.default_rng(0), 3, 4)
        solution = solve_lp(lp, SolverSettings(max_iter=1))
        assert solution.status is LpStatus.ITERATION_LIMIT
        assert np.isnan(solution.objective)
        assert solution.theta is None
        assert solution.message


class TestRandomPrograms:
    """Agreement with independent optima."""

    def test_against_vertex_enumeration(self) -> None:
        """50 random bounded programs with up to three variables."""
        rng = np.random.default_rng(1)
        for _ in range(50):
            n_vars = int(rng.integers(1, 4))
            lp = random_bounded_lp(rng, n_vars, int(rng.integers(0, 5)))
            solution = solve_lp(lp)
            assert solution.is_optimal
            expected = vertex_optimum(lp)
            assert solution.objective == pytest.approx(expected, abs=1e-6 * (1 + abs(expected)))

    def test_against_scipy(self) -> None:
        """Larger programs match HiGHS."""
        rng = np.random.default_rng(2)
        for _ in range(5):
            lp = random_bounded_lp(rng, 10, 60)
            solution = solve_lp(lp)
            reference = linprog(
                -lp.objective, A_ub=lp.G, b_ub=lp.h, bounds=(None, None), method="highs"
            )
            assert reference.status == 0
            assert solution.is_optimal
            assert solution.objective == pytest.approx(-reference.fun, rel=1e-6, abs=1e-6)

    def test_dual_certificate(self) -> None:
        """y >= 0, G'y = c and h'y equals the objective."""
        lp = random_bounded_lp(np.random.default_rng(3), 6, 20)
        solution = solve_lp(lp)
        assert solution.is_optimal
        assert solution.duals is not None and solution.theta is not None
        assert np.all(solution.duals >= -1e-8)
        np.testing.assert_allclose(lp.G.T @ solution.duals, lp.objective, atol=1e-6)
        assert lp.h @ solution.duals == pytest.approx(solution.objective, rel=1e-6, abs=1e-6)
        assert np.all(lp.G @ solution.theta <= lp.h + 1e-6)

    def test_badly_scaled_rows(self) -> None:
        """Rows spanning many orders of magnitude are equilibrated."""
        rng = np.random.default_rng(4)
        lp = random_bounded_lp(rng, 4, 12)
        scales = 10.0 ** rng.uniform(-4, 4, lp.n_rows)
        scaled = LpProblem(lp.objective, scales[:, None] * lp.G, scales * lp.h)
        first, second = solve_lp(lp), solve_lp(scaled)
        assert first.is_optimal and second.is_optimal
        assert second.objective == pytest.approx(first.objective, rel=1e-6, abs=1e-6)

    def test_deterministic(self) -> None:
        """Repeated solves give bitwise identical results."""
        lp = random_bounded_lp(np.random.default_rng(5), 5, 15)
        first, again = solve_lp(lp), solve_lp(lp)
        assert first.theta is not None and again.theta is not None
        np.testing.assert_array_equal(first.theta, again.theta)
        assert first.iterations == again.iterations


class TestSolverSettings:
    """Tolerances and limits."""

    def test_defaults(self) -> None:
        """Defaults match the documented values."""
        settings = SolverSettings()
        assert settings.feasibility_tol == 1e-8
        assert settings.gap_tol == 1e-8
        assert settings.max_iter == 200

    def test_validation(self) -> None:
        """Non-positive limits are rejected."""
        with pytest.raises(ValidationError):
            SolverSettings(max_iter=0)
        with pytest.raises(ValidationError):
            SolverSettings(feasibility_tol=0.0)

    def test_from_config(self, monkeypatch: pytest.MonkeyPatch) -> None:
        """Environment variables reach the solver."""
        monkeypatch.setenv("ADP_SOLVER_MAX_ITER", "17")
        monkeypatch.setenv("ADP_SOLVER_GAP_TOL", "1e-6")
        settings = SolverSettings.from_config()
        assert settings.max_iter == 17
        assert settings.gap_tol == 1e-6
