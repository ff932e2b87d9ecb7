"""Batch experiments: learn q-functions from sampled LPs, score them, write CSVs."""

import asyncio
import csv
import json
import math
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field, replace
from enum import StrEnum
from functools import partial
from pathlib import Path
from typing import Any

import numpy as np
from loguru import logger
from numpy.typing import NDArray
from rich.console import Console
from rich.progress import Progress, TaskID
from rich.table import Table

from . import __version__
from .config import TRUNCATION_WEIGHT, ExperimentConfig, get_config
from .dynamics import CartPole, CartPoleSource, LtiSource, LtiSystem, TransitionSource, random_lti
from .errors import ConfigError, NotExtractableError
from .lp_builder import (
    LpProblem,
    ObjectiveMoments,
    Pairing,
    build_lp,
    build_rlp,
    comparison_minimizers,
    relaxed_residuals,
    relaxed_std_errors,
    split_solution,
)
from .lq_oracle import RiccatiSolution, lqr_baseline, riccati_solution
from .qbasis import LinearPolicy, QuadraticQ, extract_policy, write_q_csv
from .sampling import BoxDistribution, Dataset, sample_dataset
from .solver import LpSolution, SolverSettings, solve_lp

Array = NDArray[np.float64]

EXP1_A = np.array([[1.0, 0.1], [0.5, -0.5]])
EXP1_B = np.array([[1.0], [0.5]])
DIVERGENCE_NORM = 1e6
REFINE_ROUNDS = 30
# Relative violation above which a relaxed row is re-imposed.
REFINE_TOL = 1e-7

EXP1_HEADER = ["method", "run", "n_constraints", "gap", "e_error", "solve_time_s", "status"]
EXP2_HEADER = ["method", "run", "n_x", "gap", "e_error", "solve_time_s", "status"]
EXP3_SUMMARY_HEADER = ["method", "mean_cost", "std_err", "n_diverged", "solve_time_s"]
EXP3_TRAJ_HEADER = ["method", "rollout", "t", "p", "pdot", "theta", "thetadot", "u"]


class Method(StrEnum):
    """Source of a policy."""

    LP = "LP"
    RLP = "RLP"
    LQR = "LQR"


METHOD_ORDER = {Method.RLP: 0, Method.LP: 1, Method.LQR: 2}


@dataclass(frozen=True)
class RunRecord:
    """Outcome of one method on one sampled dataset.

    Attributes:
        method: LP, RLP or LQR
        run: Repetition index
        n_constraints: Sampled constraints N
        n_x: Number of states
        gap: Debiased relative Frobenius error of Q, when a truth is known
        e_error: |e - e_target| with e_target = e* + delta_e (RLP) or e* (LP)
        solve_time: Solver wall-clock seconds
        status: Solver status, or ``not_extractable``
        K: Extracted gain
        e: Recovered offset
        q: Recovered q-function
        e_std_error: Monte Carlo standard error of e (RLP only)
    """

    method: Method
    run: int
    n_constraints: int
    n_x: int
    gap: float | None
    e_error: float | None
    solve_time: float | None
    status: str
    K: Array | None = None
    e: float | None = None
    q: QuadraticQ | None = None
    e_std_error: float | None = None

    @property
    def key(self) -> tuple[int, int, int, int]:
        """Sort key independent of completion order."""
        return (self.n_x, self.n_constraints, self.run, METHOD_ORDER[self.method])


@dataclass(frozen=True)
class RolloutResult:
    """Closed-loop Monte Carlo evaluation of a policy.

    Attributes:
        costs: Discounted cost per rollout (NaN when diverged)
        diverged: Divergence flag per rollout
        states: Array (n_rollouts, H + 1, n_x), NaN after divergence
        inputs: Array (n_rollouts, H, n_u), NaN after divergence
    """

    costs: Array
    diverged: NDArray[np.bool_]
    states: Array
    inputs: Array

    @property
    def n_diverged(self) -> int:
        """Number of diverged rollouts."""
        return int(self.diverged.sum())

    @property
    def mean_cost(self) -> float:
        """Mean over the rollouts that did not diverge."""
        kept = self.costs[~self.diverged]
        return float(kept.mean()) if kept.size else math.nan

    @property
    def std_err(self) -> float:
        """Standard error of :attr:`mean_cost`."""
        kept = self.costs[~self.diverged]
        if kept.size < 2:
            return 0.0 if kept.size else math.nan
        return float(kept.std(ddof=1) / math.sqrt(kept.size))

    @classmethod
    def combine(cls, results: list["RolloutResult"]) -> "RolloutResult":
        """Pool rollouts from several runs."""
        return cls(
            np.concatenate([r.costs for r in results]),
            np.concatenate([r.diverged for r in results]),
            np.concatenate([r.states for r in results]),
            np.concatenate([r.inputs for r in results]),
        )


@dataclass(frozen=True)
class RunOutcome:
    """What a job returns: a record and, for closed-loop experiments, its rollouts."""

    record: RunRecord
    rollouts: RolloutResult | None = None


@dataclass
class ExperimentResult:
    """Records of an experiment and the files written.

    ``rollouts`` holds an entry for every method of a closed-loop experiment, None
    when none of its runs produced a controller.
    """

    experiment_id: int
    records: list[RunRecord]
    rollouts: dict[Method, RolloutResult | None] = field(default_factory=dict)
    files: list[Path] = field(default_factory=list)


def optimality_gap(qhat: QuadraticQ, truth: RiccatiSolution) -> float:
    """||Q - Q*||_F / ||Q*||_F; the offset is excluded."""
    if qhat.Qmat.shape != truth.Qstar.shape:
        raise ValueError(f"q has shape {qhat.Qmat.shape}, truth has {truth.Qstar.shape}")
    return float(np.linalg.norm(qhat.Qmat - truth.Qstar) / np.linalg.norm(truth.Qstar))


def rollout_cost(
    source: TransitionSource,
    policy: LinearPolicy,
    initial: BoxDistribution,
    gamma: float,
    horizon: int,
    n_rollouts: int,
    rng: np.random.Generator,
) -> RolloutResult:
    """Discounted closed-loop cost of u = K x from random initial states.

    Args:
        source: Simulated system; its own stream drives the noise
        policy: Linear state feedback
        initial: Distribution of x_0
        gamma: Discount factor
        horizon: Truncation horizon H with gamma**H <= 1e-6
        n_rollouts: Number of rollouts
        rng: Stream for the initial states

    Returns:
        Per-rollout costs, divergence flags and trajectories

    Raises:
        ConfigError: Horizon too short or no rollouts requested
    """
    if n_rollouts < 1:
        raise ConfigError("n_rollouts must be positive")
    if gamma**horizon > TRUNCATION_WEIGHT * (1 + 1e-12):
        raise ConfigError(f"horizon {horizon} leaves discount weight {gamma**horizon:.2e}")
    n_x, n_u = source.state_dim, source.input_dim
    costs = np.zeros(n_rollouts)
    diverged = np.zeros(n_rollouts, dtype=bool)
    states = np.full((n_rollouts, horizon + 1, n_x), np.nan)
    inputs = np.full((n_rollouts, horizon, n_u), np.nan)
    for k in range(n_rollouts):
        x = initial.sample(rng)
        states[k, 0] = x
        total, weight = 0.0, 1.0
        for t in range(horizon):
            u = policy.action(x)
            cost, x = source.query(x, u)
            total += weight * cost
            weight *= gamma
            inputs[k, t] = u
            if not np.all(np.isfinite(x)) or float(np.linalg.norm(x)) > DIVERGENCE_NORM:
                diverged[k] = True
                break
            states[k, t + 1] = x
        costs[k] = np.nan if diverged[k] else total
    result = RolloutResult(costs, diverged, states, inputs)
    if result.n_diverged:
        logger.warning(f"{result.n_diverged} of {n_rollouts} rollouts diverged")
    return result


def fit_q(
    method: Method,
    data: Dataset,
    gamma: float,
    C: ObjectiveMoments,
    pairing: Pairing,
    settings: SolverSettings,
    refine_rounds: int = REFINE_ROUNDS,
) -> tuple[LpSolution, QuadraticQ | None]:
    """Build and solve the RLP or the classical LP on a dataset.

    The RLP is refined by cutting planes: each round re-imposes the row of
    every violated sample at the comparison input minimizing the current
    q at its successors, then solves again. The true relaxed fixed point
    satisfies every such row, so the rounds only remove the slack left by
    the sampled w. The returned solve time covers all rounds.
    """
    if method is not Method.RLP:
        problem = build_lp(data, gamma, C, pairing)
        solution = solve_lp(problem, settings)
        if not solution.is_optimal or solution.theta is None:
            return solution, None
        return solution, split_solution(problem, solution.theta)[0]

    base = build_rlp(data, gamma, C)
    problem, solution = base, solve_lp(base, settings)
    if not solution.is_optimal or solution.theta is None:
        return solution, None
    elapsed = solution.solve_time
    q = split_solution(problem, solution.theta)[0]
    comparison = np.zeros((len(data), data.input_dim))
    refined = np.zeros(len(data), dtype=bool)
    tol = REFINE_TOL * (1 + float(np.abs(data.costs).max()))
    for round_index in range(1, refine_rounds + 1):
        w = comparison_minimizers(q, data)
        stale = relaxed_residuals(q, data, gamma, w) > tol
        if not stale.any():
            logger.debug(f"RLP refinement settled after {round_index - 1} rounds")
            break
        comparison[stale] = w[stale]
        refined |= stale
        cuts = build_rlp(data, gamma, C, comparison)
        candidate = LpProblem(
            base.objective,
            np.vstack([base.G, cuts.G[refined]]),
            np.concatenate([base.h, cuts.h[refined]]),
            base.layout,
            "rlp",
        )
        attempt = solve_lp(candidate, settings)
        elapsed += attempt.solve_time
        if not attempt.is_optimal or attempt.theta is None:
            logger.warning(f"RLP refinement round {round_index} ended with {attempt.status}")
            break
        problem, solution = candidate, attempt
        q = split_solution(problem, solution.theta)[0]
    else:
        if refine_rounds:
            logger.warning(f"RLP refinement stopped after {refine_rounds} rounds")
    return replace(solution, solve_time=elapsed), q


def offset_std_error(q: QuadraticQ, data: Dataset, gamma: float) -> float:
    """Monte Carlo standard error of a relaxed solution's offset.

    Noise in the sampled mean of one relaxed row moves the offset by that
    noise divided by 1 - gamma; the largest row standard error is used.
    """
    errors = relaxed_std_errors(q, data, gamma, comparison_minimizers(q, data))
    return float(errors.max() / (1 - gamma))


def _record(
    method: Method,
    run: int,
    data: Dataset,
    gamma: float,
    solution: LpSolution,
    q: QuadraticQ | None,
    truth: RiccatiSolution | None,
) -> RunRecord:
    status = str(solution.status)
    gap = e_error = e_std_error = None
    K = None
    if q is not None:
        if method is Method.RLP:
            e_std_error = offset_std_error(q, data, gamma)
        if truth is not None:
            gap = optimality_gap(q, truth)
            target = truth.e_hat if method is Method.RLP else truth.e_star
            e_error = abs(q.e - target)
        try:
            K = extract_policy(q).K
        except NotExtractableError as e:
            logger.warning(f"{method} run {run}: {e}")
            status = "not_extractable"
    return RunRecord(
        method,
        run,
        len(data),
        data.state_dim,
        gap,
        e_error,
        solution.solve_time,
        status,
        K,
        None if q is None else q.e,
        q,
        e_std_error,
    )


def _learn_both(
    data: Dataset,
    cfg: ExperimentConfig,
    C: ObjectiveMoments,
    settings: SolverSettings,
    run: int,
    truth: RiccatiSolution | None,
) -> list[RunRecord]:
    records = []
    for method in (Method.RLP, Method.LP):
        solution, q = fit_q(
            method, data, cfg.gamma, C, cfg.pairing, settings, cfg.refine_rounds
        )
        records.append(_record(method, run, data, cfg.gamma, solution, q, truth))
    return records


def _lq_job(
    cfg: ExperimentConfig,
    system: LtiSystem,
    truth: RiccatiSolution,
    n_constraints: int,
    run: int,
    seed: np.random.SeedSequence,
    settings: SolverSettings,
) -> list[RunOutcome]:
    n_x, n_u = system.state_dim, system.input_dim
    sample_seed, noise_seed = seed.spawn(2)
    source = LtiSource(system, cfg.cost(n_x, n_u), np.random.default_rng(noise_seed))
    data = sample_dataset(
        source,
        cfg.state_distribution(n_x),
        cfg.input_distribution(n_u),
        n_constraints,
        cfg.mc_draws,
        np.random.default_rng(sample_seed),
        seed=cfg.seed,
        gamma=cfg.gamma,
    )
    records = _learn_both(data, cfg, cfg.objective(n_x, n_u), settings, run, truth)
    return [RunOutcome(record) for record in records]


def _cartpole_job(
    cfg: ExperimentConfig,
    cartpole: CartPole,
    lqr: RiccatiSolution,
    n_constraints: int,
    run: int,
    seed: np.random.SeedSequence,
    settings: SolverSettings,
) -> list[RunOutcome]:
    sample_seed, noise_seed, initial_seed, rollout_noise_seed = seed.spawn(4)
    cost = cfg.cost(4, 1)
    source = CartPoleSource(cartpole, cost, np.random.default_rng(noise_seed))
    data = sample_dataset(
        source,
        cfg.state_distribution(4),
        cfg.input_distribution(1),
        n_constraints,
        cfg.mc_draws,
        np.random.default_rng(sample_seed),
        seed=cfg.seed,
        gamma=cfg.gamma,
    )
    records = _learn_both(data, cfg, cfg.objective(4, 1), settings, run, None)
    records.append(
        RunRecord(Method.LQR, run, n_constraints, 4, None, None, None, "optimal", lqr.K)
    )
    outcomes = []
    for record in records:
        if record.K is None:
            outcomes.append(RunOutcome(record))
            continue
        # identical initial states and noise for every method
        rollouts = rollout_cost(
            CartPoleSource(cartpole, cost, np.random.default_rng(rollout_noise_seed)),
            LinearPolicy(record.K),
            cfg.initial_distribution(4),
            cfg.gamma,
            cfg.rollout_horizon(),
            cfg.n_rollouts,
            np.random.default_rng(initial_seed),
        )
        outcomes.append(RunOutcome(record, rollouts))
    return outcomes


def _point_seeds(seed: int, point: int, repetitions: int) -> list[np.random.SeedSequence]:
    """Seed 0 is reserved for per-point systems; 1..repetitions for runs."""
    return np.random.SeedSequence(entropy=seed, spawn_key=(point,)).spawn(repetitions + 1)


Job = Callable[[], list[RunOutcome]]


class ExperimentRunner:
    """Run an experiment's jobs concurrently and write its result files."""

    def __init__(
        self,
        config: ExperimentConfig,
        settings: SolverSettings | None = None,
        max_workers: int | None = None,
        console: Console | None = None,
    ) -> None:
        """Initialize the runner.

        Args:
            config: Validated experiment configuration
            settings: Solver settings, defaults from the environment with the
                experiment's iteration limit applied
            max_workers: Concurrent jobs, defaults from the environment
            console: Console used for progress output
        """
        app_config = get_config()
        self.config = config
        if settings is None:
            settings = SolverSettings.from_config()
            if config.solver_max_iter is not None:
                settings = settings.model_copy(update={"max_iter": config.solver_max_iter})
        self.settings = settings
        self.max_workers = max_workers or app_config.max_workers
        self.overwrite = app_config.overwrite_existing
        self.console = console or Console()

    def output_files(self) -> list[Path]:
        """Files this experiment writes."""
        n, out = self.config.experiment_id, self.config.output_dir
        names = {
            1: ["exp1.csv"],
            2: ["exp2.csv"],
            3: ["exp3_summary.csv", "exp3_traj.csv"],
        }[n]
        return [out / name for name in [*names, f"exp{n}_q.csv", "metadata.json"]]

    def run(self) -> ExperimentResult:
        """Execute all jobs and write the result files.

        Raises:
            ConfigError: Existing outputs and overwriting disabled
        """
        cfg = self.config
        existing = [path for path in self.output_files() if path.exists()]
        if existing and not self.overwrite:
            raise ConfigError(f"Refusing to overwrite existing outputs: {existing[0]}")
        logger.info(f"Starting experiment {cfg.experiment_id} (seed {cfg.seed})")
        jobs = {1: self._exp1_jobs, 2: self._exp2_jobs, 3: self._exp3_jobs}[cfg.experiment_id]()
        outcomes = asyncio.run(self._execute(jobs))
        outcomes.sort(key=lambda outcome: outcome.record.key)
        result = ExperimentResult(cfg.experiment_id, [o.record for o in outcomes])
        if cfg.experiment_id == 3:
            result.rollouts = self._pool_rollouts(outcomes)
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        result.files = self._write(result)
        logger.info(f"Experiment {cfg.experiment_id} finished with {len(result.records)} records")
        return result

    async def _execute(self, jobs: list[Job]) -> list[RunOutcome]:
        semaphore = asyncio.Semaphore(self.max_workers)

        with Progress(console=self.console, transient=True) as progress:
            task = progress.add_task(
                f"Experiment {self.config.experiment_id}", total=len(jobs)
            )

            async def run_job(job: Job, task_id: TaskID) -> list[RunOutcome]:
                async with semaphore:
                    outcome = await asyncio.to_thread(job)
                    progress.update(task_id, advance=1)
                    return outcome

            batches = await asyncio.gather(*(run_job(job, task) for job in jobs))
        return [outcome for batch in batches for outcome in batch]

    def _exp1_jobs(self) -> list[Job]:
        cfg = self.config
        n_x, n_u = 2, 1
        system = LtiSystem(EXP1_A, EXP1_B, cfg.noise(n_x))
        truth = riccati_solution(system, cfg.cost(n_x, n_u), cfg.gamma)
        jobs: list[Job] = []
        for point, n_constraints in enumerate(cfg.n_constraints):
            seeds = _point_seeds(cfg.seed, point, cfg.repetitions)
            jobs += self._lq_jobs(system, truth, n_constraints, seeds)
        return jobs

    def _exp2_jobs(self) -> list[Job]:
        cfg = self.config
        (n_constraints,) = cfg.n_constraints
        jobs: list[Job] = []
        for point, n_x in enumerate(cfg.state_dims):
            seeds = _point_seeds(cfg.seed, point, cfg.repetitions)
            system = random_lti(
                n_x,
                np.random.default_rng(seeds[0]),
                n_u=cfg.input_dim,
                gamma=cfg.gamma,
                noise_cov=cfg.noise(n_x),
            )
            truth = riccati_solution(system, cfg.cost(n_x, cfg.input_dim), cfg.gamma)
            jobs += self._lq_jobs(system, truth, n_constraints, seeds)
        return jobs

    def _lq_jobs(
        self,
        system: LtiSystem,
        truth: RiccatiSolution,
        n_constraints: int,
        seeds: list[np.random.SeedSequence],
    ) -> list[Job]:
        return [
            partial(
                _lq_job,
                self.config,
                system,
                truth,
                n_constraints,
                run,
                seeds[run + 1],
                self.settings,
            )
            for run in range(self.config.repetitions)
        ]

    def _exp3_jobs(self) -> list[Job]:
        cfg = self.config
        cartpole = CartPole(noise_cov=cfg.noise(4))
        _, lqr = lqr_baseline(cartpole, cfg.cost(4, 1), cfg.gamma)
        seeds = _point_seeds(cfg.seed, 0, cfg.repetitions)
        return [
            partial(
                _cartpole_job,
                cfg,
                cartpole,
                lqr,
                cfg.n_constraints[0],
                run,
                seeds[run + 1],
                self.settings,
            )
            for run in range(cfg.repetitions)
        ]

    @staticmethod
    def _pool_rollouts(outcomes: Iterable[RunOutcome]) -> dict[Method, RolloutResult | None]:
        grouped: dict[Method, list[RolloutResult]] = {}
        for outcome in outcomes:
            results = grouped.setdefault(outcome.record.method, [])
            if outcome.rollouts is not None:
                results.append(outcome.rollouts)
        pooled: dict[Method, RolloutResult | None] = {}
        for method, results in grouped.items():
            if not results:
                logger.warning(f"{method} produced no controller in any run")
            pooled[method] = RolloutResult.combine(results) if results else None
        return pooled

    def _write(self, result: ExperimentResult) -> list[Path]:
        cfg = self.config
        out = cfg.output_dir
        files = self.output_files()
        if cfg.experiment_id in (1, 2):
            self._write_records(files[0], result.records)
        else:
            self._write_summary(files[0], result)
            self._write_trajectories(files[1], result.rollouts)
        write_q_csv(
            out / f"exp{cfg.experiment_id}_q.csv",
            (
                (
                    {
                        "method": str(r.method),
                        "run": r.run,
                        "n_constraints": r.n_constraints,
                        "n_x": r.n_x,
                    },
                    r.q,
                )
                for r in result.records
                if r.q is not None
            ),
        )
        (out / "metadata.json").write_text(
            json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        for path in files:
            logger.info(f"Wrote {path}")
        return files

    def _time(self, seconds: float | None) -> str:
        return _fmt(seconds) if self.config.record_times else ""

    def _write_records(self, path: Path, records: list[RunRecord]) -> None:
        exp1 = self.config.experiment_id == 1
        with path.open("w", newline="", encoding="utf-8") as file:
            writer = csv.writer(file)
            writer.writerow(EXP1_HEADER if exp1 else EXP2_HEADER)
            for r in records:
                writer.writerow(
                    [
                        r.method,
                        r.run,
                        r.n_constraints if exp1 else r.n_x,
                        _fmt(r.gap),
                        _fmt(r.e_error),
                        self._time(r.solve_time),
                        r.status,
                    ]
                )

    def _write_summary(self, path: Path, result: ExperimentResult) -> None:
        with path.open("w", newline="", encoding="utf-8") as file:
            writer = csv.writer(file)
            writer.writerow(EXP3_SUMMARY_HEADER)
            for method in (Method.RLP, Method.LP, Method.LQR):
                times = [
                    r.solve_time
                    for r in result.records
                    if r.method is method and r.solve_time is not None
                ]
                solve_time = float(np.mean(times)) if times else None
                rollouts = result.rollouts.get(method)
                if rollouts is None:
                    writer.writerow([method, "", "", "", self._time(solve_time)])
                    continue
                writer.writerow(
                    [
                        method,
                        _fmt(rollouts.mean_cost),
                        _fmt(rollouts.std_err),
                        rollouts.n_diverged,
                        self._time(solve_time),
                    ]
                )

    @staticmethod
    def _write_trajectories(path: Path, rollouts: dict[Method, RolloutResult | None]) -> None:
        with path.open("w", newline="", encoding="utf-8") as file:
            writer = csv.writer(file)
            writer.writerow(EXP3_TRAJ_HEADER)
            for method in (Method.RLP, Method.LP, Method.LQR):
                result = rollouts.get(method)
                if result is None:
                    continue
                horizon = result.inputs.shape[1]
                for k in range(result.states.shape[0]):
                    for t in range(horizon + 1):
                        state = result.states[k, t]
                        if np.isnan(state).all():
                            break
                        u = _fmt(result.inputs[k, t, 0]) if t < horizon else ""
                        writer.writerow([method, k, t, *map(_fmt, state), u])

    def metadata(self) -> dict[str, Any]:
        """Configuration and labelled modelling decisions written next to the CSVs."""
        cfg = self.config
        return {
            "version": __version__,
            "config": cfg.model_dump(mode="json"),
            "decisions": {
                "gap_metric": "debiased relative Frobenius error ||Q - Q*||_F / ||Q*||_F",
                "e_error": "absolute |e - target|, target e*+delta_e for RLP and e* for LP",
                "horizon_rule": "given" if cfg.horizon else "smallest H with gamma**H <= 1e-6",
                "horizon": cfg.rollout_horizon(),
                "pairing": str(cfg.pairing),
                "comparison_input": (
                    "w drawn from the input distribution, violated rows re-imposed at "
                    f"the minimizing w for up to {cfg.refine_rounds} rounds"
                ),
                "solver_max_iter": self.settings.max_iter,
                "solve_time": "recorded" if cfg.record_times else "omitted",
            },
        }

    def summary_table(self, result: ExperimentResult) -> Table:
        """Rich table with per-method medians (experiments 1-2) or costs (experiment 3)."""
        if result.experiment_id == 3:
            table = Table(title="Closed-loop discounted cost")
            for column in ("Method", "Mean cost", "Std err", "Diverged"):
                table.add_column(column)
            for method, rollouts in result.rollouts.items():
                if rollouts is None:
                    table.add_row(str(method), "-", "-", "-")
                    continue
                table.add_row(
                    str(method),
                    f"{rollouts.mean_cost:.4g}",
                    f"{rollouts.std_err:.3g}",
                    str(rollouts.n_diverged),
                )
            return table
        exp1 = result.experiment_id == 1
        table = Table(title=f"Experiment {result.experiment_id}: median optimality gap")
        table.add_column("N" if exp1 else "n_x", justify="right")
        table.add_column("Method")
        table.add_column("Median gap", justify="right")
        table.add_column("Optimal runs", justify="right")
        groups: dict[tuple[int, Method], list[RunRecord]] = {}
        for r in result.records:
            groups.setdefault((r.n_constraints if exp1 else r.n_x, r.method), []).append(r)
        for (point, method), records in groups.items():
            gaps = [r.gap for r in records if r.gap is not None]
            median = f"{float(np.median(gaps)):.3e}" if gaps else "-"
            optimal = sum(r.status == "optimal" for r in records)
            table.add_row(str(point), str(method), median, f"{optimal}/{len(records)}")
        return table


def _fmt(value: float | None) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return repr(float(value))


def run_experiment(
    cfg: ExperimentConfig,
    settings: SolverSettings | None = None,
    max_workers: int | None = None,
) -> ExperimentResult:
    """Run one experiment and write its CSV files into ``cfg.output_dir``."""
    return ExperimentRunner(cfg, settings, max_workers).run()
