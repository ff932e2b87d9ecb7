"""Tabular laboratory: exact Bellman and relaxed Bellman operators on finite MDPs."""

import csv
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from loguru import logger
from numpy.typing import NDArray
from rich.table import Table

from .errors import DimensionError, DivergenceError
from .lp_builder import LpProblem
from .solver import SolverSettings, solve_lp

Array = NDArray[np.float64]
QTable = NDArray[np.float64]
Policy = NDArray[np.intp]
Operator = Callable[["FiniteMdp", QTable], QTable]

STOCHASTIC_TOL = 1e-12
FIXED_POINT_TOL = 1e-10
FIXED_POINT_MAX_ITER = 100_000
ORDER_SLACK = 1e-12


@dataclass(frozen=True)
class FiniteMdp:
    """Finite MDP with costs l[s, a] and transitions P[s, a, s'].

    Attributes:
        cost: Nonnegative table (n_s, n_a)
        P: Row-stochastic tensor (n_s, n_a, n_s)
        gamma: Discount factor in [0, 1)
    """

    cost: Array
    P: Array
    gamma: float

    def __post_init__(self) -> None:
        """Validate shapes, stochasticity and signs."""
        cost = np.atleast_2d(np.asarray(self.cost, dtype=float))
        P = np.asarray(self.P, dtype=float)
        n_s, n_a = cost.shape
        if P.shape != (n_s, n_a, n_s):
            raise DimensionError(f"P has shape {P.shape}, expected ({n_s}, {n_a}, {n_s})")
        if np.any(P < 0) or np.abs(P.sum(axis=2) - 1).max() > STOCHASTIC_TOL:
            raise ValueError("P rows must be probability vectors")
        if np.any(cost < 0):
            raise ValueError("costs must be nonnegative")
        if not 0 <= self.gamma < 1:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        object.__setattr__(self, "cost", cost)
        object.__setattr__(self, "P", P)

    @property
    def n_states(self) -> int:
        """Number of states."""
        return int(self.cost.shape[0])

    @property
    def n_actions(self) -> int:
        """Number of actions."""
        return int(self.cost.shape[1])


def _check_table(m: FiniteMdp, q: QTable) -> QTable:
    q = np.asarray(q, dtype=float)
    if q.shape != m.cost.shape:
        raise DimensionError(f"q has shape {q.shape}, expected {m.cost.shape}")
    if not np.all(np.isfinite(q)):
        raise ValueError("q has non-finite entries")
    return q


def op_f(m: FiniteMdp, q: QTable) -> QTable:
    """Bellman operator: l + gamma E[min_b q(s', b)]."""
    q = _check_table(m, q)
    return m.cost + m.gamma * np.einsum("sat,t->sa", m.P, q.min(axis=1))


def op_f_hat(m: FiniteMdp, q: QTable) -> QTable:
    """Relaxed Bellman operator: l + gamma min_b E[q(s', b)]."""
    q = _check_table(m, q)
    return m.cost + m.gamma * np.einsum("sat,tb->sab", m.P, q).min(axis=2)


def fixed_point(
    m: FiniteMdp,
    op: Operator,
    q0: QTable,
    tol: float = FIXED_POINT_TOL,
    max_iter: int = FIXED_POINT_MAX_ITER,
) -> QTable:
    """Iterate ``op`` until the contraction bound certifies ``tol`` accuracy.

    Args:
        m: Finite MDP
        op: ``op_f`` or ``op_f_hat``
        q0: Starting table
        tol: Sup-norm distance to the fixed point on return
        max_iter: Iteration budget

    Returns:
        Approximate fixed point

    Raises:
        DivergenceError: ``max_iter`` exceeded
    """
    threshold = math.inf if m.gamma == 0 else tol * (1 - m.gamma) / m.gamma
    q = _check_table(m, q0)
    for _ in range(max_iter):
        updated = op(m, q)
        step = float(np.abs(updated - q).max())
        q = updated
        if step <= threshold:
            return q
    raise DivergenceError(f"fixed-point iteration did not converge in {max_iter} iterations")


def random_mdp(
    n_states: int,
    n_actions: int,
    gamma: float,
    rng: np.random.Generator,
    deterministic: bool = False,
) -> FiniteMdp:
    """Random MDP with Dirichlet(1, ..., 1) (or one-hot) rows and U[0, 1] costs."""
    if deterministic:
        targets = rng.integers(0, n_states, size=(n_states, n_actions))
        P = np.eye(n_states)[targets]
    else:
        P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
        P /= P.sum(axis=2, keepdims=True)
    cost = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    return FiniteMdp(cost, P, gamma)


def greedy_policy(q: QTable) -> Policy:
    """Index of the minimizing action per state (first one on ties)."""
    return np.argmin(np.asarray(q), axis=1)


def policy_value(m: FiniteMdp, policy: Policy) -> Array:
    """Infinite-horizon discounted cost of a stationary deterministic policy."""
    states = np.arange(m.n_states)
    cost = m.cost[states, policy]
    P = m.P[states, policy, :]
    return np.linalg.solve(np.eye(m.n_states) - m.gamma * P, cost)


def tabular_lp(m: FiniteMdp) -> LpProblem:
    """Classical q-LP over [q (n_s n_a, row-major), v (n_s)] with unit weights on q."""
    n_s, n_a = m.n_states, m.n_actions
    n_q = n_s * n_a
    family_a = np.zeros((n_q, n_q + n_s))
    family_a[:, :n_q] = np.eye(n_q)
    family_a[:, n_q:] = -m.gamma * m.P.reshape(n_q, n_s)
    family_b = np.zeros((n_q, n_q + n_s))
    family_b[:, :n_q] = -np.eye(n_q)
    family_b[:, n_q:] = np.repeat(np.eye(n_s), n_a, axis=0)
    objective = np.concatenate([np.ones(n_q), np.zeros(n_s)])
    h = np.concatenate([m.cost.ravel(), np.zeros(n_q)])
    return LpProblem(objective, np.vstack([family_a, family_b]), h, None, "tabular-lp")


def tabular_rlp(m: FiniteMdp) -> LpProblem:
    """Relaxed LP over q: one row per (s, a, b) with unit weights on q."""
    n_s, n_a = m.n_states, m.n_actions
    n_q = n_s * n_a
    # rows indexed by (s, a, b); column (t, b') gets -gamma P[s, a, t] when b' == b
    expected = np.einsum("sat,bc->sabtc", m.P, np.eye(n_a)).reshape(n_q * n_a, n_q)
    own = np.repeat(np.eye(n_q), n_a, axis=0)
    h = np.repeat(m.cost.ravel(), n_a)
    return LpProblem(np.ones(n_q), own - m.gamma * expected, h, None, "tabular-rlp")


@dataclass
class PropertyCheck:
    """Worst observed statistic of an asserted property against its limit."""

    name: str
    limit: float
    cases: int = 0
    worst: float = -math.inf

    @property
    def passed(self) -> bool:
        """Whether every case stayed within the limit."""
        return self.cases > 0 and self.worst <= self.limit

    def record(self, value: float) -> None:
        """Add one case."""
        self.cases += 1
        self.worst = max(self.worst, value)


@dataclass
class PropertyReport:
    """Outcome of :func:`run_property_suite`."""

    seed: int
    n_mdps: int
    checks: list[PropertyCheck] = field(default_factory=list)
    greedy_agreement: float = math.nan
    cost_ratio: float = math.nan

    @property
    def passed(self) -> bool:
        """Whether all asserted properties hold."""
        return all(check.passed for check in self.checks)

    def write_csv(self, path: Path) -> None:
        """Write one row per check plus the reported (unasserted) metrics."""
        with path.open("w", newline="", encoding="utf-8") as file:
            writer = csv.writer(file)
            writer.writerow(["check", "kind", "passed", "cases", "value", "limit"])
            for check in self.checks:
                writer.writerow(
                    [
                        check.name,
                        "asserted",
                        str(check.passed).lower(),
                        check.cases,
                        repr(check.worst),
                        repr(check.limit),
                    ]
                )
            for name, value in (
                ("greedy_agreement", self.greedy_agreement),
                ("greedy_cost_ratio", self.cost_ratio),
            ):
                writer.writerow([name, "reported", "", self.n_mdps, repr(value), ""])

    def render(self) -> str:
        """Plain-text report."""
        lines = [f"Operator property suite: {self.n_mdps} MDPs, seed {self.seed}"]
        for check in self.checks:
            verdict = "PASS" if check.passed else "FAIL"
            lines.append(
                f"  {verdict}  {check.name:<28} cases={check.cases:<6} "
                f"worst={check.worst:.3e} limit={check.limit:.1e}"
            )
        lines.append(f"  greedy agreement (reported): {self.greedy_agreement:.4f}")
        lines.append(f"  greedy cost ratio q_hat/q_star (reported): {self.cost_ratio:.6f}")
        lines.append("RESULT: " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines)

    def to_table(self) -> Table:
        """Rich table of the checks."""
        table = Table(title="Operator properties")
        table.add_column("Check", style="cyan")
        table.add_column("Cases", justify="right")
        table.add_column("Worst", justify="right")
        table.add_column("Limit", justify="right")
        table.add_column("Result")
        for check in self.checks:
            result = "[green]pass[/green]" if check.passed else "[red]FAIL[/red]"
            table.add_row(
                check.name, str(check.cases), f"{check.worst:.3e}", f"{check.limit:.1e}", result
            )
        return table


def run_property_suite(
    n_mdps: int = 100,
    n_pairs: int = 100,
    seed: int = 0,
    tol: float = FIXED_POINT_TOL,
    max_states: int = 8,
    max_actions: int = 4,
    settings: SolverSettings | None = None,
) -> PropertyReport:
    """Check monotonicity, contraction, ordering and fixed-point claims on random MDPs.

    Args:
        n_mdps: Number of random MDPs
        n_pairs: Random table pairs per MDP
        seed: Master seed
        tol: Fixed-point accuracy
        max_states: Largest state count drawn
        max_actions: Largest action count drawn
        settings: Solver settings for the tabular LP checks

    Returns:
        Report with per-property outcomes and the greedy-policy metrics
    """
    checks = {
        name: PropertyCheck(name, limit)
        for name, limit in [
            ("monotone_f", ORDER_SLACK),
            ("monotone_f_hat", ORDER_SLACK),
            ("contraction_f", ORDER_SLACK),
            ("contraction_f_hat", ORDER_SLACK),
            ("order_f_le_f_hat", ORDER_SLACK),
            ("unique_fixed_point_f", 2 * tol),
            ("unique_fixed_point_f_hat", 2 * tol),
            ("q_star_le_q_hat", 1e-10),
            ("deterministic_collapse", 2 * tol),
            ("tabular_lp_recovers_q_star", 0.0),
            ("tabular_rlp_recovers_q_hat", 0.0),
        ]
    }
    agreements: list[float] = []
    ratios: list[float] = []
    for child in np.random.SeedSequence(seed).spawn(n_mdps):
        rng = np.random.default_rng(child)
        n_s = int(rng.integers(2, max_states + 1))
        n_a = int(rng.integers(1, max_actions + 1))
        gamma = float(rng.uniform(0.5, 0.9))
        m = random_mdp(n_s, n_a, gamma, rng)

        for _ in range(n_pairs):
            q1 = rng.normal(0.0, 5.0, size=(n_s, n_a))
            q2 = rng.normal(0.0, 5.0, size=(n_s, n_a))
            upper = q1 + rng.uniform(0.0, 2.0, size=(n_s, n_a))
            distance = float(np.abs(q1 - q2).max())
            for suffix, op in (("f", op_f), ("f_hat", op_f_hat)):
                checks[f"monotone_{suffix}"].record(float((op(m, q1) - op(m, upper)).max()))
                ratio = float(np.abs(op(m, q1) - op(m, q2)).max()) / distance
                checks[f"contraction_{suffix}"].record(ratio - gamma)
            checks["order_f_le_f_hat"].record(float((op_f(m, q1) - op_f_hat(m, q1)).max()))

        far = np.full((n_s, n_a), 1e6)
        q_star = fixed_point(m, op_f, np.zeros((n_s, n_a)), tol)
        q_hat = fixed_point(m, op_f_hat, np.zeros((n_s, n_a)), tol)
        checks["unique_fixed_point_f"].record(
            float(np.abs(q_star - fixed_point(m, op_f, far, tol)).max())
        )
        checks["unique_fixed_point_f_hat"].record(
            float(np.abs(q_hat - fixed_point(m, op_f_hat, far, tol)).max())
        )
        checks["q_star_le_q_hat"].record(float((q_star - q_hat).max()))

        det = random_mdp(n_s, n_a, gamma, rng, deterministic=True)
        det_star = fixed_point(det, op_f, np.zeros((n_s, n_a)), tol)
        det_hat = fixed_point(det, op_f_hat, np.zeros((n_s, n_a)), tol)
        checks["deterministic_collapse"].record(float(np.abs(det_star - det_hat).max()))

        checks["tabular_lp_recovers_q_star"].record(
            _recovery_error(tabular_lp(m), q_star, settings)
        )
        checks["tabular_rlp_recovers_q_hat"].record(
            _recovery_error(tabular_rlp(m), q_hat, settings)
        )

        star_policy, hat_policy = greedy_policy(q_star), greedy_policy(q_hat)
        agreements.append(float(np.mean(star_policy == hat_policy)))
        ratios.append(
            float(policy_value(m, hat_policy).mean() / policy_value(m, star_policy).mean())
        )

    report = PropertyReport(seed, n_mdps, list(checks.values()))
    report.greedy_agreement = float(np.mean(agreements)) if agreements else math.nan
    report.cost_ratio = float(np.mean(ratios)) if ratios else math.nan
    logger.info(f"Property suite over {n_mdps} MDPs: {'pass' if report.passed else 'FAIL'}")
    return report


def _recovery_error(problem: LpProblem, truth: QTable, settings: SolverSettings | None) -> float:
    """Excess of the LP's q-part error over 1e-5 (1 + max|q|); +inf when not optimal."""
    solution = solve_lp(problem, settings)
    if not solution.is_optimal or solution.theta is None:
        return math.inf
    recovered = solution.theta[: truth.size].reshape(truth.shape)
    error = float(np.abs(recovered - truth).max())
    return error - 1e-5 * (1 + float(np.abs(truth).max()))
