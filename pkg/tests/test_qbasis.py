"""Tests for the quadratic parameterization and policy extraction."""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to path for testing
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from adp.dynamics import LtiSystem, StageCost
from adp.errors import DimensionError, NotExtractableError
from adp.lq_oracle import riccati_solution
from adp.qbasis import (
    LinearPolicy,
    QuadraticQ,
    QuadraticV,
    ThetaLayout,
    eval_q,
    extract_policy,
    features,
    matrix_to_slots,
    read_q_csv,
    slots_to_matrix,
    write_q_csv,
)

EXP1_A = np.array([[1.0, 0.1], [0.5, -0.5]])
EXP1_B = np.array([[1.0], [0.5]])


def random_symmetric(dim: int, rng: np.random.Generator) -> np.ndarray:
    matrix = rng.normal(size=(dim, dim))
    return (matrix + matrix.T) / 2


class TestFeatures:
    """Quadratic feature map."""

    def test_worked_example(self) -> None:
        """z = (1, 2) against Q = [[1, 0.5], [0.5, 3]]."""
        Q = np.array([[1.0, 0.5], [0.5, 3.0]])
        phi = features([1.0, 2.0], 2)
        np.testing.assert_array_equal(phi, [1.0, 4.0, 4.0])
        np.testing.assert_array_equal(matrix_to_slots(Q), [1.0, 3.0, 0.5])
        assert phi @ matrix_to_slots(Q) == pytest.approx(15.0)

    def test_zero_vector(self) -> None:
        """phi(0) = 0."""
        np.testing.assert_array_equal(features(np.zeros(4), 4), np.zeros(10))

    def test_matches_quadratic_form(self) -> None:
        """phi(z) . slots(Q) = z'Qz for random pairs."""
        rng = np.random.default_rng(0)
        for _ in range(100):
            dim = int(rng.integers(1, 8))
            z = rng.normal(size=dim)
            Q = random_symmetric(dim, rng)
            assert features(z, dim) @ matrix_to_slots(Q) == pytest.approx(z @ Q @ z, abs=1e-12)

    def test_dimension_mismatch(self) -> None:
        """The vector length must equal dim."""
        with pytest.raises(DimensionError):
            features([1.0, 2.0], 3)


class TestThetaLayout:
    """Flat coefficient layout."""

    def test_counts(self) -> None:
        """Slot counts with and without the value block."""
        rlp = ThetaLayout(2, 1)
        lp = ThetaLayout(2, 1, with_value=True)
        assert rlp.n_vars == 7
        assert lp.n_vars == 7 + 3 + 1
        assert lp.column_names()[:4] == ["q_0_0", "q_1_1", "q_2_2", "q_0_1"]
        assert lp.column_names()[6:] == ["e", "v_0_0", "v_1_1", "v_0_1", "e_v"]

    def test_round_trip(self) -> None:
        """matrix -> flat -> matrix is the identity."""
        rng = np.random.default_rng(1)
        layout = ThetaLayout(3, 2, with_value=True)
        q = QuadraticQ(random_symmetric(5, rng), 1.5, 3)
        v = QuadraticV(random_symmetric(3, rng), -0.5)
        q_back, v_back = layout.from_flat(layout.to_flat(q, v))
        assert v_back is not None
        np.testing.assert_array_equal(q_back.Qmat, q.Qmat)
        np.testing.assert_array_equal(v_back.Vmat, v.Vmat)
        assert (q_back.e, v_back.e_v) == (1.5, -0.5)
        np.testing.assert_array_equal(slots_to_matrix(matrix_to_slots(q.Qmat), 5), q.Qmat)

    def test_value_block_required(self) -> None:
        """Layouts with a value block need v."""
        q = QuadraticQ(np.eye(3), 0.0, 2)
        with pytest.raises(ValueError, match="v is required"):
            ThetaLayout(2, 1, with_value=True).to_flat(q)
        with pytest.raises(IndexError):
            _ = ThetaLayout(2, 1).e_v_index


class TestEvalQ:
    """Evaluation of quadratic q-functions."""

    def test_identity_kernel(self) -> None:
        """Qmat = I and e = 2 at x = (1, 2), u = 3."""
        assert eval_q(QuadraticQ(np.eye(3), 2.0, 2), [1.0, 2.0], [3.0]) == pytest.approx(16.0)

    def test_offset_shift(self) -> None:
        """Raising e raises q by the same amount."""
        q = QuadraticQ(np.diag([1.0, 2.0, 3.0]), 0.5, 2)
        x, u = [0.3, -1.0], [2.0]
        assert eval_q(q.shifted(4.0), x, u) == pytest.approx(eval_q(q, x, u) + 4.0)

    def test_matches_closed_form_qstar(self) -> None:
        """q* evaluates to l + gamma (E x+'P x+ + e*)."""
        gamma = 0.95
        cost = StageCost.diagonal([1.0, 1.0], [1e-2])
        system = LtiSystem(EXP1_A, EXP1_B, 1e-2 * np.eye(2))
        solution = riccati_solution(system, cost, gamma)
        q = solution.as_quadratic_q()
        rng = np.random.default_rng(2)
        for _ in range(100):
            x, u = rng.uniform(-3, 3, 2), rng.uniform(-1, 1, 1)
            mean = EXP1_A @ x + EXP1_B @ u
            expected_next = mean @ solution.P @ mean + np.trace(solution.P @ system.noise_cov)
            closed_form = (
                cost.L_xx[0, 0] * x[0] ** 2
                + cost.L_xx[1, 1] * x[1] ** 2
                + cost.L_uu[0, 0] * u[0] ** 2
                + gamma * (expected_next + solution.e_star)
            )
            assert eval_q(q, x, u) == pytest.approx(closed_form, rel=1e-10, abs=1e-10)

    def test_validation(self) -> None:
        """Non-symmetric kernels and bad partitions are rejected."""
        with pytest.raises(ValueError, match="symmetric"):
            QuadraticQ(np.array([[1.0, 2.0], [0.0, 1.0]]), 0.0, 1)
        with pytest.raises(DimensionError):
            QuadraticQ(np.eye(2), 0.0, 2)
        with pytest.raises(DimensionError):
            eval_q(QuadraticQ(np.eye(3), 0.0, 2), [1.0], [1.0, 2.0])


class TestExtractPolicy:
    """Greedy linear policies."""

    def test_scalar_riccati_gain(self) -> None:
        """K = -q_xu / q_uu."""
        q = QuadraticQ(np.array([[2.5236, 1.5236], [1.5236, 2.5236]]), 0.0, 1)
        assert extract_policy(q).K[0, 0] == pytest.approx(-1.5236 / 2.5236)

    def test_no_cross_term(self) -> None:
        """q_xu = 0 gives the zero gain."""
        K = extract_policy(QuadraticQ(np.diag([1.0, 2.0, 3.0]), 0.0, 2)).K
        np.testing.assert_array_equal(K, np.zeros((1, 2)))

    def test_argmin_property(self) -> None:
        """u = K x beats random inputs."""
        rng = np.random.default_rng(3)
        factor = rng.normal(size=(4, 4))
        q = QuadraticQ(factor @ factor.T + 0.1 * np.eye(4), 0.0, 2)
        policy = extract_policy(q)
        for _ in range(10):
            x = rng.normal(size=2)
            best = eval_q(q, x, policy.action(x))
            candidates = rng.normal(scale=5.0, size=(1000, 2))
            assert all(best <= eval_q(q, x, u) + 1e-12 for u in candidates)

    def test_offset_invariance(self) -> None:
        """The gain does not depend on e."""
        Q = np.array([[2.0, 0.3, 0.4], [0.3, 1.0, 0.2], [0.4, 0.2, 1.5]])
        K1 = extract_policy(QuadraticQ(Q, 0.0, 2)).K
        K2 = extract_policy(QuadraticQ(Q, 123.0, 2)).K
        np.testing.assert_array_equal(K1, K2)

    def test_not_extractable(self) -> None:
        """An indefinite q_uu is surfaced."""
        with pytest.raises(NotExtractableError):
            extract_policy(QuadraticQ(np.diag([1.0, 1.0, -1.0]), 0.0, 2))
        with pytest.raises(NotExtractableError):
            extract_policy(QuadraticQ(np.diag([1.0, 1.0, 0.0]), 0.0, 2))

    def test_non_finite_gain(self) -> None:
        """LinearPolicy rejects NaN entries."""
        with pytest.raises(ValueError, match="non-finite"):
            LinearPolicy(np.array([[np.nan, 1.0]]))


class TestQCsv:
    """Long-format q files."""

    def test_round_trip(self, tmp_path: Path) -> None:
        """Written q-functions read back with their keys."""
        rng = np.random.default_rng(4)
        entries = [
            ({"method": "RLP", "run": 0}, QuadraticQ(random_symmetric(3, rng), 0.25, 2)),
            ({"method": "LP", "run": 0}, QuadraticQ(random_symmetric(3, rng), -1.0, 2)),
        ]
        path = tmp_path / "q.csv"
        write_q_csv(path, entries)
        header = path.read_text(encoding="utf-8").splitlines()[0]
        assert header == "method,run,state_dim,slot,value"
        loaded = read_q_csv(path)
        assert [keys for keys, _ in loaded] == [
            {"method": "RLP", "run": "0"},
            {"method": "LP", "run": "0"},
        ]
        for (_, original), (_, q) in zip(entries, loaded, strict=True):
            np.testing.assert_array_equal(q.Qmat, original.Qmat)
            assert q.e == original.e

    def test_inconsistent_keys(self, tmp_path: Path) -> None:
        """Every entry must carry the same key columns."""
        q = QuadraticQ(np.eye(3), 0.0, 2)
        with pytest.raises(ValueError, match="inconsistent"):
            write_q_csv(tmp_path / "q.csv", [({"run": 0}, q), ({"seed": 0}, q)])
