"""Tests for experiment configuration, scoring, rollouts and the experiment runs."""

import csv
import json
import math
import sys
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

# Add src to path for testing
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from adp.config import ExperimentConfig
from adp.dynamics import LtiSource, LtiSystem, StageCost
from adp.errors import ConfigError
from adp.experiments import (
    EXP1_A,
    EXP1_B,
    EXP1_HEADER,
    EXP3_SUMMARY_HEADER,
    EXP3_TRAJ_HEADER,
    ExperimentResult,
    ExperimentRunner,
    Method,
    RolloutResult,
    RunOutcome,
    RunRecord,
    fit_q,
    offset_std_error,
    optimality_gap,
    rollout_cost,
    run_experiment,
)
from adp.lp_builder import (
    ObjectiveMoments,
    Pairing,
    comparison_minimizers,
    relaxed_residuals,
)
from adp.lq_oracle import expected_lq_cost, riccati_solution
from adp.qbasis import LinearPolicy, QuadraticQ, extract_policy
from adp.sampling import BoxDistribution, sample_dataset
from adp.solver import SolverSettings

EXP1_COST = StageCost.diagonal([1.0, 1.0], [1e-2])


def read_rows(path: Path) -> list[dict[str, str]]:
    with path.open(newline="", encoding="utf-8") as file:
        return list(csv.DictReader(file))


def small_exp1(out: Path, **overrides: object) -> ExperimentConfig:
    values: dict[str, object] = {
        "n_constraints": [40, 80],
        "repetitions": 2,
        "mc_draws": 5,
        "record_times": False,
        "output_dir": out,
    }
    values.update(overrides)
    return ExperimentConfig.defaults(1).with_overrides(**values)


class TestExperimentConfig:
    """Defaults, overrides and files."""

    def test_experiment_1_defaults(self) -> None:
        """Benchmark parameters of the fixed linear system."""
        cfg = ExperimentConfig.defaults(1)
        assert cfg.gamma == 0.95
        np.testing.assert_array_equal(cfg.cost(2, 1).L, np.diag([1.0, 1.0, 1e-2]))
        np.testing.assert_array_equal(cfg.objective(2, 1).C, np.diag([1.0, 1.0, 0.1]))
        np.testing.assert_array_equal(cfg.state_distribution(2).upper, [3.0, 3.0])
        np.testing.assert_array_equal(cfg.input_distribution(1).lower, [-1.0])
        np.testing.assert_array_equal(cfg.noise(2), 1e-6 * np.eye(2))
        assert cfg.n_constraints[-1] == 20000
        assert cfg.mc_draws == 100
        assert cfg.repetitions == 10
        assert cfg.pairing is Pairing.EQUAL_SAMPLES

    def test_experiment_3_defaults(self) -> None:
        """Cart-pole parameters."""
        cfg = ExperimentConfig.defaults(3)
        assert cfg.gamma == 0.99
        np.testing.assert_array_equal(
            np.diag(cfg.cost(4, 1).L), [1.0, 1.0, 100.0, 10.0, 1e-3]
        )
        np.testing.assert_array_equal(np.diag(cfg.objective(4, 1).C), [1.0, 1.0, 1.0, 1.0, 0.8])
        np.testing.assert_array_equal(cfg.input_distribution(1).upper, [100.0])
        np.testing.assert_array_equal(cfg.initial_distribution(4).upper, [1.0, 1.0, 0.5, 0.5])
        assert cfg.n_constraints == [10000]
        assert cfg.mc_draws == 1
        assert cfg.n_rollouts == 10
        assert cfg.solver_max_iter == 1000
        assert cfg.refine_rounds == 30

    def test_horizons(self) -> None:
        """Smallest H with gamma**H <= 1e-6."""
        assert ExperimentConfig.defaults(1).rollout_horizon() == 270
        assert ExperimentConfig.defaults(3).rollout_horizon() == 1375
        assert ExperimentConfig.defaults(3).with_overrides(horizon=50).rollout_horizon() == 50

    def test_overrides(self) -> None:
        """None leaves a field alone; values are re-validated."""
        cfg = ExperimentConfig.defaults(2)
        assert cfg.with_overrides(seed=None) == cfg
        assert cfg.with_overrides(repetitions=3).repetitions == 3
        with pytest.raises(ValidationError):
            cfg.with_overrides(gamma=1.5)
        with pytest.raises(ValidationError):
            cfg.with_overrides(state_box=[(1.0, -1.0)])

    @pytest.mark.parametrize("experiment_id", [2, 3])
    def test_single_count_outside_sweep(self, experiment_id: int) -> None:
        """Only the constraint sweep accepts several counts."""
        cfg = ExperimentConfig.defaults(experiment_id)
        with pytest.raises(ValidationError, match="one constraint count"):
            cfg.with_overrides(n_constraints=[100, 200])
        assert cfg.with_overrides(n_constraints=[100]).n_constraints == [100]

    def test_solver_limit_reaches_runner(self, tmp_path: Path) -> None:
        """The experiment's iteration limit replaces the environment default."""
        cfg = ExperimentConfig.defaults(3).with_overrides(output_dir=tmp_path)
        assert ExperimentRunner(cfg).settings.max_iter == 1000
        assert ExperimentRunner(small_exp1(tmp_path)).settings.max_iter == 200
        explicit = SolverSettings(max_iter=7)
        assert ExperimentRunner(cfg, explicit).settings is explicit

    def test_unknown_experiment(self) -> None:
        """Only experiments 1 to 3 exist."""
        with pytest.raises(ConfigError, match="Unknown experiment"):
            ExperimentConfig.defaults(4)

    def test_from_file(self, tmp_path: Path) -> None:
        """A JSON file is layered over the defaults of the experiment it names."""
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"experiment_id": 2, "repetitions": 2}), encoding="utf-8")
        cfg = ExperimentConfig.from_file(path, 1)
        assert cfg.experiment_id == 2
        assert cfg.repetitions == 2
        assert cfg.state_dims == ExperimentConfig.defaults(2).state_dims

    def test_bad_files(self, tmp_path: Path) -> None:
        """Invalid JSON and non-objects are configuration errors."""
        path = tmp_path / "cfg.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ConfigError, match="not valid JSON"):
            ExperimentConfig.from_file(path, 1)
        path.write_text("[1, 2]", encoding="utf-8")
        with pytest.raises(ConfigError, match="JSON object"):
            ExperimentConfig.from_file(path, 1)

    def test_noise_shape(self) -> None:
        """An explicit covariance must match the state dimension."""
        cfg = ExperimentConfig.defaults(1).with_overrides(noise_cov=np.eye(3).tolist())
        with pytest.raises(ConfigError, match="noise_cov"):
            cfg.noise(2)


class TestOptimalityGap:
    """Relative Frobenius error of Q."""

    def test_values(self) -> None:
        """Zero at the truth, one at the zero kernel."""
        truth = riccati_solution(LtiSystem(EXP1_A, EXP1_B, 1e-6 * np.eye(2)), EXP1_COST, 0.95)
        assert optimality_gap(truth.as_quadratic_q(), truth) == 0.0
        assert optimality_gap(truth.as_quadratic_q(relaxed=True), truth) == 0.0
        assert optimality_gap(QuadraticQ(np.zeros((3, 3)), 0.0, 2), truth) == pytest.approx(1.0)

    def test_shape_mismatch(self) -> None:
        """Kernels of other dimensions are rejected."""
        truth = riccati_solution(LtiSystem(EXP1_A, EXP1_B, 1e-6 * np.eye(2)), EXP1_COST, 0.95)
        with pytest.raises(ValueError, match="shape"):
            optimality_gap(QuadraticQ(np.eye(2), 0.0, 1), truth)


class TestRolloutCost:
    """Closed-loop Monte Carlo evaluation."""

    def test_resting_at_origin(self) -> None:
        """No noise and x0 = 0 cost nothing."""
        source = LtiSource(
            LtiSystem(EXP1_A, EXP1_B, np.zeros((2, 2))), EXP1_COST, np.random.default_rng(0)
        )
        origin = BoxDistribution(np.zeros(2), np.zeros(2))
        result = rollout_cost(
            source, LinearPolicy(np.zeros((1, 2))), origin, 0.95, 270, 3, np.random.default_rng(1)
        )
        np.testing.assert_array_equal(result.costs, 0.0)
        assert result.mean_cost == 0.0
        assert result.n_diverged == 0
        assert result.states.shape == (3, 271, 2)
        assert result.inputs.shape == (3, 270, 1)

    def test_matches_closed_form(self) -> None:
        """The optimal policy's mean cost matches the Riccati value within 4 standard errors."""
        gamma, noise = 0.5, 0.1 * np.eye(2)
        system = LtiSystem(EXP1_A, EXP1_B, noise)
        truth = riccati_solution(system, EXP1_COST, gamma)
        initial = BoxDistribution.symmetric([1.0, 1.0])
        source = LtiSource(system, EXP1_COST, np.random.default_rng(2))
        horizon = math.ceil(math.log(1e-6) / math.log(gamma))
        result = rollout_cost(
            source,
            LinearPolicy(truth.K),
            initial,
            gamma,
            horizon,
            2000,
            np.random.default_rng(3),
        )
        expected = expected_lq_cost(truth.P, noise, gamma, initial)
        assert abs(result.mean_cost - expected) <= 4 * result.std_err

    def test_divergence_is_flagged(self) -> None:
        """Unstable closed loops are excluded from the mean."""
        system = LtiSystem(10.0 * np.eye(2), EXP1_B, np.zeros((2, 2)))
        source = LtiSource(system, EXP1_COST, np.random.default_rng(4))
        result = rollout_cost(
            source,
            LinearPolicy(np.zeros((1, 2))),
            BoxDistribution.symmetric([1.0, 1.0]),
            0.5,
            20,
            4,
            np.random.default_rng(5),
        )
        assert result.n_diverged == 4
        assert math.isnan(result.mean_cost)
        assert np.isnan(result.states[:, -1]).all()

    def test_preconditions(self) -> None:
        """Short horizons and empty batches are configuration errors."""
        source = LtiSource(
            LtiSystem(EXP1_A, EXP1_B, np.zeros((2, 2))), EXP1_COST, np.random.default_rng(0)
        )
        box = BoxDistribution.symmetric([1.0, 1.0])
        policy = LinearPolicy(np.zeros((1, 2)))
        rng = np.random.default_rng(0)
        with pytest.raises(ConfigError, match="horizon"):
            rollout_cost(source, policy, box, 0.95, 10, 1, rng)
        with pytest.raises(ConfigError, match="n_rollouts"):
            rollout_cost(source, policy, box, 0.95, 270, 0, rng)


class TestFitQ:
    """Learning on a fixed dataset."""

    def test_deterministic_reduction(self) -> None:
        """Without noise the RLP recovers Q* and K* almost exactly."""
        system = LtiSystem(EXP1_A, EXP1_B, np.zeros((2, 2)))
        truth = riccati_solution(system, EXP1_COST, 0.95)
        source = LtiSource(system, EXP1_COST, np.random.default_rng(6))
        data = sample_dataset(
            source,
            BoxDistribution.symmetric([3.0, 3.0]),
            BoxDistribution.symmetric([1.0]),
            5000,
            1,
            np.random.default_rng(7),
        )
        C = ObjectiveMoments(np.diag([1.0, 1.0, 0.1]))
        solution, q = fit_q(Method.RLP, data, 0.95, C, Pairing.EQUAL_SAMPLES, SolverSettings())
        assert solution.is_optimal and q is not None
        assert optimality_gap(q, truth) <= 1e-4
        K = extract_policy(q).K
        assert np.abs(K - truth.K).max() <= 1e-5
        residuals = relaxed_residuals(q, data, 0.95, comparison_minimizers(q, data))
        assert residuals.max() <= 1e-5 * (1 + data.costs.max())

    def test_sampled_comparison_inputs_leave_slack(self) -> None:
        """Without refinement the random w rows are loose and Q is far from Q*."""
        system = LtiSystem(EXP1_A, EXP1_B, np.zeros((2, 2)))
        truth = riccati_solution(system, EXP1_COST, 0.95)
        source = LtiSource(system, EXP1_COST, np.random.default_rng(6))
        data = sample_dataset(
            source,
            BoxDistribution.symmetric([3.0, 3.0]),
            BoxDistribution.symmetric([1.0]),
            2000,
            1,
            np.random.default_rng(7),
        )
        C = ObjectiveMoments(np.diag([1.0, 1.0, 0.1]))
        settings = SolverSettings()
        _, loose = fit_q(Method.RLP, data, 0.95, C, Pairing.EQUAL_SAMPLES, settings, 0)
        _, tight = fit_q(Method.RLP, data, 0.95, C, Pairing.EQUAL_SAMPLES, settings)
        assert loose is not None and tight is not None
        assert optimality_gap(tight, truth) < optimality_gap(loose, truth)
        assert relaxed_residuals(loose, data, 0.95, comparison_minimizers(loose, data)).max() > 0

    def test_offset_standard_error(self) -> None:
        """Positive under noise, zero with a single draw per pair."""
        system = LtiSystem(EXP1_A, EXP1_B, 1e-2 * np.eye(2))
        source = LtiSource(system, EXP1_COST, np.random.default_rng(8))
        data = sample_dataset(
            source,
            BoxDistribution.symmetric([3.0, 3.0]),
            BoxDistribution.symmetric([1.0]),
            200,
            20,
            np.random.default_rng(9),
        )
        truth = riccati_solution(system, EXP1_COST, 0.95)
        assert offset_std_error(truth.as_quadratic_q(relaxed=True), data, 0.95) > 0
        single = sample_dataset(
            source,
            BoxDistribution.symmetric([3.0, 3.0]),
            BoxDistribution.symmetric([1.0]),
            10,
            1,
            np.random.default_rng(10),
        )
        assert offset_std_error(truth.as_quadratic_q(relaxed=True), single, 0.95) == 0.0


class TestExperimentRuns:
    """Small end-to-end experiment runs."""

    def test_missing_controllers_are_recorded(self, tmp_path: Path) -> None:
        """A method without a controller in any run keeps an explicit empty entry."""
        rollout = RolloutResult(
            np.array([1.0]), np.array([False]), np.zeros((1, 2, 4)), np.zeros((1, 1, 1))
        )
        outcomes = [
            RunOutcome(RunRecord(Method.RLP, 0, 10, 4, None, None, None, "not_extractable")),
            RunOutcome(RunRecord(Method.LP, 0, 10, 4, None, None, None, "optimal"), rollout),
            RunOutcome(RunRecord(Method.LP, 1, 10, 4, None, None, None, "optimal"), rollout),
        ]
        pooled = ExperimentRunner._pool_rollouts(outcomes)
        assert pooled[Method.RLP] is None
        lp = pooled[Method.LP]
        assert lp is not None and lp.costs.shape == (2,)
        cfg = ExperimentConfig.defaults(3).with_overrides(output_dir=tmp_path)
        table = ExperimentRunner(cfg).summary_table(ExperimentResult(3, [], pooled))
        assert table.row_count == 2

    def test_exp1_files(self, tmp_path: Path) -> None:
        """CSV headers, row counts and metadata."""
        cfg = small_exp1(tmp_path / "out")
        result = run_experiment(cfg, max_workers=1)
        out = tmp_path / "out"
        assert [path.name for path in result.files] == ["exp1.csv", "exp1_q.csv", "metadata.json"]
        lines = (out / "exp1.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0] == ",".join(EXP1_HEADER)
        rows = read_rows(out / "exp1.csv")
        assert len(rows) == 2 * 2 * 2
        assert [row["method"] for row in rows[:2]] == ["RLP", "LP"]
        assert [int(row["n_constraints"]) for row in rows] == [40] * 4 + [80] * 4
        assert all(row["solve_time_s"] == "" for row in rows)
        metadata = json.loads((out / "metadata.json").read_text(encoding="utf-8"))
        assert metadata["decisions"]["horizon"] == 270
        assert metadata["config"]["experiment_id"] == 1

    def test_worker_count_does_not_change_output(self, tmp_path: Path) -> None:
        """Concurrent runs write byte-identical files."""
        serial = run_experiment(small_exp1(tmp_path / "serial"), max_workers=1)
        parallel = run_experiment(small_exp1(tmp_path / "parallel"), max_workers=2)
        for first, second in zip(serial.files[:2], parallel.files[:2], strict=True):
            assert first.read_bytes() == second.read_bytes()

    def test_seed_changes_output(self, tmp_path: Path) -> None:
        """Different seeds sample different data."""
        first = run_experiment(small_exp1(tmp_path / "a", seed=1), max_workers=1)
        second = run_experiment(small_exp1(tmp_path / "b", seed=2), max_workers=1)
        assert first.files[1].read_bytes() != second.files[1].read_bytes()

    def test_refuses_to_overwrite(self, tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
        """Existing outputs are kept when overwriting is disabled."""
        monkeypatch.setenv("ADP_OVERWRITE_EXISTING", "false")
        out = tmp_path / "out"
        out.mkdir()
        (out / "exp1.csv").write_text("keep\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="overwrite"):
            ExperimentRunner(small_exp1(out)).run()
        assert (out / "exp1.csv").read_text(encoding="utf-8") == "keep\n"

    def test_exp3_files(self, tmp_path: Path) -> None:
        """Summary and trajectory files of a short cart-pole run."""
        cfg = ExperimentConfig.defaults(3).with_overrides(
            n_constraints=[300], n_rollouts=2, output_dir=tmp_path, record_times=False
        )
        result = run_experiment(cfg, max_workers=1)
        summary = read_rows(tmp_path / "exp3_summary.csv")
        assert list(summary[0]) == EXP3_SUMMARY_HEADER
        assert [row["method"] for row in summary] == ["RLP", "LP", "LQR"]
        assert set(result.rollouts) == {Method.RLP, Method.LP, Method.LQR}
        lqr = result.rollouts[Method.LQR]
        assert lqr is not None
        assert lqr.costs.shape == (2,)
        for method, row in zip((Method.RLP, Method.LP), summary[:2], strict=True):
            if result.rollouts[method] is None:
                assert row["mean_cost"] == ""
        traj = (tmp_path / "exp3_traj.csv").read_text(encoding="utf-8").splitlines()
        assert traj[0] == ",".join(EXP3_TRAJ_HEADER)
        assert len(traj) > 1


@pytest.mark.slow
class TestAcceptance:
    """Full-size runs with the default parameters."""

    def test_linear_recovery(self, tmp_path: Path) -> None:
        """Gaps shrink with N and reach small values at 2e4 constraints."""
        cfg = ExperimentConfig.defaults(1).with_overrides(
            n_constraints=[500, 2000, 5000, 20000], output_dir=tmp_path
        )
        result = run_experiment(cfg)
        truth = riccati_solution(
            LtiSystem(EXP1_A, EXP1_B, cfg.noise(2)), cfg.cost(2, 1), cfg.gamma
        )

        def median_gap(method: Method, n: int) -> float:
            gaps = [
                r.gap
                for r in result.records
                if r.method is method and r.n_constraints == n and r.gap is not None
            ]
            return float(np.median(gaps))

        medians = [median_gap(Method.RLP, n) for n in cfg.n_constraints]
        inversions = sum(later > earlier for earlier, later in zip(medians, medians[1:]))
        assert inversions <= 1
        assert medians[-1] <= 0.05
        assert median_gap(Method.LP, 20000) <= 0.10
        gains = [
            r.K for r in result.records if r.method is Method.RLP and r.n_constraints == 20000
        ]
        errors = [np.abs(K - truth.K).max() for K in gains if K is not None]
        assert float(np.median(errors)) <= 0.02
        offsets = [
            r for r in result.records if r.method is Method.RLP and r.n_constraints == 20000
        ]
        for r in offsets:
            assert r.e is not None and r.e_std_error is not None
            assert abs(r.e - truth.e_hat) <= 0.05 * truth.e_hat + 3 * r.e_std_error
        assert all(r.solve_time is not None for r in result.records)

    def test_cartpole_policies(self, tmp_path: Path) -> None:
        """Both learned policies stabilize the pole from the initial box."""
        cfg = ExperimentConfig.defaults(3).with_overrides(output_dir=tmp_path)
        result = run_experiment(cfg)
        costs = {}
        for method in (Method.RLP, Method.LP):
            rollouts = result.rollouts[method]
            assert rollouts is not None, f"{method} produced no controller"
            theta = rollouts.states[:, :, 2]
            final = rollouts.states[:, -1, :]
            upright = np.all(np.abs(theta) < np.pi / 2, axis=1)
            settled = np.abs(final).max(axis=1) < 0.1
            assert int(np.sum(upright & settled & ~rollouts.diverged)) >= 9
            costs[method] = rollouts.mean_cost
        ratio = costs[Method.RLP] / costs[Method.LP]
        assert 1 / 1.5 <= ratio <= 1.5
        lqr = result.rollouts[Method.LQR]
        assert lqr is not None and math.isfinite(lqr.mean_cost)
