"""Dense inequality-form linear programs built from sampled constraints."""

import itertools
import math
from dataclasses import dataclass
from enum import StrEnum
from pathlib import Path

import numpy as np
from loguru import logger
from numpy.typing import ArrayLike, NDArray

from .errors import DimensionError
from .qbasis import (
    PD_TOL,
    QuadraticQ,
    QuadraticV,
    ThetaLayout,
    feature_matrix,
    matrix_to_slots,
    moment_features,
)
from .sampling import Dataset

Array = NDArray[np.float64]

LP_TEXT_MAGIC = "adp-lp 1"


class Pairing(StrEnum):
    """How many samples the classical LP receives relative to the RLP."""

    EQUAL_SAMPLES = "equal-samples"
    EQUAL_ROWS = "equal-rows"


@dataclass(frozen=True)
class ObjectiveMoments:
    """Second moments C of the objective measure, so that E_c q = Tr(Q C) + e."""

    C: Array

    def __post_init__(self) -> None:
        """Validate symmetry and semi-definiteness."""
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        if C.shape[0] != C.shape[1]:
            raise DimensionError(f"C must be square, got shape {C.shape}")
        scale = max(1.0, float(np.abs(C).max()))
        if not np.allclose(C, C.T, rtol=0.0, atol=1e-12 * scale):
            raise ValueError("C is not symmetric")
        if np.linalg.eigvalsh(C).min() < -1e-12 * scale:
            raise ValueError("C is not positive semi-definite")
        object.__setattr__(self, "C", C)

    @property
    def dim(self) -> int:
        """Joint dimension n_x + n_u."""
        return int(self.C.shape[0])


@dataclass(frozen=True)
class LpProblem:
    """maximize objective' theta subject to G theta <= h.

    Attributes:
        objective: Coefficients of the maximized objective
        G: Constraint matrix (n_rows, n_vars)
        h: Right-hand side (n_rows,)
        layout: Meaning of theta for quadratic programs, ``None`` for tabular ones
        kind: Short label such as ``rlp`` or ``lp``
    """

    objective: Array
    G: Array
    h: Array
    layout: ThetaLayout | None = None
    kind: str = "lp"

    def __post_init__(self) -> None:
        """Validate shapes and finiteness."""
        objective = np.asarray(self.objective, dtype=float).ravel()
        G = np.atleast_2d(np.asarray(self.G, dtype=float))
        h = np.asarray(self.h, dtype=float).ravel()
        if G.shape != (h.shape[0], objective.shape[0]):
            raise DimensionError(
                f"G has shape {G.shape}, expected ({h.shape[0]}, {objective.shape[0]})"
            )
        if self.layout is not None and self.layout.n_vars != objective.shape[0]:
            raise DimensionError("layout does not match the number of variables")
        for name, arr in (("objective", objective), ("G", G), ("h", h)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
        object.__setattr__(self, "objective", objective)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)

    @property
    def n_vars(self) -> int:
        """Number of decision variables."""
        return int(self.G.shape[1])

    @property
    def n_rows(self) -> int:
        """Number of inequality rows."""
        return int(self.G.shape[0])


def objective_vector(C: ObjectiveMoments, layout: ThetaLayout) -> Array:
    """Coefficients c with c' theta = Tr(Q C) + e; value-function slots get zero weight."""
    if C.dim != layout.dim:
        raise DimensionError(f"C has dimension {C.dim}, layout expects {layout.dim}")
    vector = np.zeros(layout.n_vars)
    vector[: layout.n_q] = moment_features(C.C)
    vector[layout.e_index] = 1.0
    return vector


def _check_inputs(data: Dataset, gamma: float, C: ObjectiveMoments) -> None:
    if len(data) == 0:
        raise ValueError("dataset is empty")
    if not 0 <= gamma < 1:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    if C.dim != data.state_dim + data.input_dim:
        raise DimensionError(
            f"C has dimension {C.dim}, dataset has {data.state_dim + data.input_dim}"
        )


def _joint_moments(means: Array, seconds: Array, w: Array) -> Array:
    """Second moments of [x+; w] with w fixed and x+ random."""
    cross = means[:, :, None] * w[:, None, :]
    top = np.concatenate([seconds, cross], axis=2)
    bottom = np.concatenate([cross.transpose(0, 2, 1), w[:, :, None] * w[:, None, :]], axis=2)
    return np.concatenate([top, bottom], axis=1)


def _relaxed_slots(data: Dataset, gamma: float, w: Array) -> Array:
    """Q-slot coefficients of q(x,u) - gamma mean_i q(x+_i, w), one row per sample."""
    current = feature_matrix(np.hstack([data.states, data.inputs]))
    following = moment_features(
        _joint_moments(data.next_state_means, data.next_state_moments, w)
    )
    return current - gamma * following


def _comparison(data: Dataset, comparison: ArrayLike | None) -> Array:
    if comparison is None:
        return data.comparison_inputs
    w = np.asarray(comparison, dtype=float).reshape(len(data), -1)
    if w.shape[1] != data.input_dim:
        raise DimensionError(
            f"comparison inputs have shape {w.shape}, expected (N, {data.input_dim})"
        )
    return w


def build_rlp(
    data: Dataset, gamma: float, C: ObjectiveMoments, comparison: ArrayLike | None = None
) -> LpProblem:
    """Relaxed LP: one row q(x,u) <= l(x,u) + gamma mean_i q(x+_i, w) per sample.

    Args:
        data: Sampled constraints
        gamma: Discount factor
        C: Objective moments
        comparison: Array (N, n_u) of comparison inputs replacing the sampled w

    Returns:
        Problem over [Q slots, e] with one row per sample
    """
    _check_inputs(data, gamma, C)
    layout = ThetaLayout(data.state_dim, data.input_dim)
    G = np.empty((len(data), layout.n_vars))
    G[:, : layout.n_q] = _relaxed_slots(data, gamma, _comparison(data, comparison))
    G[:, layout.e_index] = 1 - gamma
    logger.debug(f"Built RLP with {G.shape[0]} rows and {G.shape[1]} variables")
    return LpProblem(objective_vector(C, layout), G, data.costs.copy(), layout, "rlp")


def comparison_minimizers(q: QuadraticQ, data: Dataset) -> Array:
    """Per sample, the comparison input w minimizing the sampled mean of q(x+_i, w).

    With q_uu positive definite this is -q_uu^-1 q_xu' mean_i x+_i. Otherwise
    the mean is unbounded below in w and the cheapest vertex of the input box
    is returned instead.

    Returns:
        Array (N, n_u)
    """
    if q.state_dim != data.state_dim or q.input_dim != data.input_dim:
        raise DimensionError("q does not match the dataset dimensions")
    means = data.next_state_means
    if np.linalg.eigvalsh(q.q_uu).min() > PD_TOL:
        return -np.linalg.solve(q.q_uu, q.q_xu.T @ means.T).T
    box = data.metadata.input_dist
    vertices = np.array(list(itertools.product(*zip(box.lower, box.upper, strict=True))))
    # terms of the sampled mean that depend on w
    quadratic = np.einsum("vi,ij,vj->v", vertices, q.q_uu, vertices)
    values = 2 * means @ q.q_xu @ vertices.T + quadratic
    return vertices[values.argmin(axis=1)]


def relaxed_residuals(
    q: QuadraticQ, data: Dataset, gamma: float, comparison: ArrayLike | None = None
) -> Array:
    """q(x,u) - l(x,u) - gamma mean_i q(x+_i, w) per sample; positive entries are violations."""
    if q.state_dim != data.state_dim or q.input_dim != data.input_dim:
        raise DimensionError("q does not match the dataset dimensions")
    if not 0 <= gamma < 1:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    rows = _relaxed_slots(data, gamma, _comparison(data, comparison))
    return rows @ matrix_to_slots(q.Qmat) + (1 - gamma) * q.e - data.costs


def relaxed_std_errors(
    q: QuadraticQ, data: Dataset, gamma: float, comparison: ArrayLike | None = None
) -> Array:
    """Monte Carlo standard error of gamma mean_i q(x+_i, w) in each relaxed row.

    Zero for every row when M = 1 or the draws coincide.
    """
    if q.state_dim != data.state_dim or q.input_dim != data.input_dim:
        raise DimensionError("q does not match the dataset dimensions")
    w = _comparison(data, comparison)
    draws = data.next_states
    M = draws.shape[1]
    if M < 2:
        return np.zeros(len(data))
    # w' q_uu w is constant within a row
    linear = 2 * w @ q.q_xu.T
    values = np.einsum("nmi,ij,nmj->nm", draws, q.q_xx, draws)
    values += np.einsum("nmi,ni->nm", draws, linear)
    return gamma * values.std(axis=1, ddof=1) / math.sqrt(M)


def build_lp(
    data: Dataset,
    gamma: float,
    C: ObjectiveMoments,
    pairing: Pairing = Pairing.EQUAL_SAMPLES,
    chained: bool = False,
) -> LpProblem:
    """Classical q-LP over (q, v).

    Family A rows q(x,u) - gamma mean_i v(x+_i) <= l(x,u) come first, then
    family B rows v(x) - q(x,u) <= 0 at the same samples. With ``chained``,
    family B is also imposed at every (x+_i, w).

    Args:
        data: Sampled constraints
        gamma: Discount factor
        C: Objective moments
        pairing: ``equal-rows`` imposes family A at the first ceil(N/2) samples and
            family B at the first floor(N/2), giving N rows in total
        chained: Add family-B rows at the next-state draws

    Returns:
        Problem over [Q slots, e, V slots, e_v]
    """
    _check_inputs(data, gamma, C)
    n_value = len(data)
    if pairing is Pairing.EQUAL_ROWS:
        n_value = len(data) // 2
        data = data.head(math.ceil(len(data) / 2))
    layout = ThetaLayout(data.state_dim, data.input_dim, with_value=True)
    n, n_q = len(data), layout.n_q
    seconds = data.next_state_moments
    current = feature_matrix(np.hstack([data.states, data.inputs]))

    family_a = np.zeros((n, layout.n_vars))
    family_a[:, :n_q] = current
    family_a[:, layout.e_index] = 1.0
    family_a[:, layout.v_slice] = -gamma * moment_features(seconds)
    family_a[:, layout.e_v_index] = -gamma

    blocks = [family_a, _value_rows(layout, data.states[:n_value], current[:n_value])]
    rhs = [data.costs, np.zeros(n_value)]
    if chained:
        draws = data.next_states.reshape(-1, data.state_dim)
        w = np.repeat(data.comparison_inputs, data.samples[0].mc_draws, axis=0)
        blocks.append(_value_rows(layout, draws, feature_matrix(np.hstack([draws, w]))))
        rhs.append(np.zeros(draws.shape[0]))
    G = np.vstack(blocks)
    logger.debug(f"Built LP with {G.shape[0]} rows and {G.shape[1]} variables")
    return LpProblem(objective_vector(C, layout), G, np.concatenate(rhs), layout, "lp")


def _value_rows(layout: ThetaLayout, states: Array, q_features: Array) -> Array:
    """Rows v(x) - q(x, u) <= 0."""
    rows = np.zeros((states.shape[0], layout.n_vars))
    rows[:, : layout.n_q] = -q_features
    rows[:, layout.e_index] = -1.0
    rows[:, layout.v_slice] = feature_matrix(states)
    rows[:, layout.e_v_index] = 1.0
    return rows


def split_solution(problem: LpProblem, theta: ArrayLike) -> tuple[QuadraticQ, QuadraticV | None]:
    """Rebuild q (and v) from a solution vector of a quadratic program."""
    if problem.layout is None:
        raise ValueError(f"{problem.kind} problem has no quadratic layout")
    return problem.layout.from_flat(theta)


def write_lp_text(problem: LpProblem, path: Path) -> None:
    """Export a problem in the plain-text interchange format.

    The file holds a header, the objective on a ``c`` line and one ``r`` line
    per row with the right-hand side first. Floats are written with ``repr``
    so reading back is exact.
    """
    layout = problem.layout
    lines = [LP_TEXT_MAGIC, f"kind {problem.kind}"]
    if layout is None:
        lines.append("layout none")
    else:
        lines.append(f"layout {layout.state_dim} {layout.input_dim} {int(layout.with_value)}")
    lines += [f"vars {problem.n_vars}", f"rows {problem.n_rows}", "maximize"]
    lines.append("c " + " ".join(repr(float(v)) for v in problem.objective))
    for rhs, row in zip(problem.h, problem.G, strict=True):
        lines.append("r " + " ".join(repr(float(v)) for v in (rhs, *row)))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"Wrote {problem.kind} problem ({problem.n_rows} rows) to {path}")


def read_lp_text(path: Path) -> LpProblem:
    """Read a problem written by :func:`write_lp_text`.

    Raises:
        ValueError: Malformed file
    """
    lines = path.read_text(encoding="utf-8").splitlines()
    if len(lines) < 7 or lines[0] != LP_TEXT_MAGIC or lines[5] != "maximize":
        raise ValueError(f"{path} is not an LP text file")
    try:
        kind = lines[1].split(maxsplit=1)[1]
        layout_fields = lines[2].split()[1:]
        n_vars = int(lines[3].split()[1])
        n_rows = int(lines[4].split()[1])
        objective = np.array([float(v) for v in lines[6].split()[1:]])
        rows = [[float(v) for v in line.split()[1:]] for line in lines[7 : 7 + n_rows]]
    except (IndexError, ValueError) as e:
        raise ValueError(f"{path} is malformed: {e}") from e
    layout = None
    if layout_fields != ["none"]:
        n_x, n_u, with_value = (int(v) for v in layout_fields)
        layout = ThetaLayout(n_x, n_u, bool(with_value))
    table = np.array(rows).reshape(n_rows, n_vars + 1)
    return LpProblem(objective, table[:, 1:], table[:, 0], layout, kind)
