"""Quadratic q- and value-function parameterization and policy extraction."""

import csv
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .dynamics import as_vector
from .errors import DimensionError, NotExtractableError

Array = NDArray[np.float64]

SYMMETRY_TOL = 1e-12
PD_TOL = 1e-10


def slot_indices(dim: int) -> tuple[NDArray[np.intp], NDArray[np.intp]]:
    """Row/column indices of the coefficient slots of a symmetric matrix.

    Diagonal entries come first, then upper-triangular off-diagonals in
    row-major order.
    """
    diag = np.arange(dim)
    rows, cols = np.triu_indices(dim, k=1)
    return np.concatenate([diag, rows]), np.concatenate([diag, cols])


def n_slots(dim: int) -> int:
    """Number of free coefficients of a symmetric dim x dim matrix."""
    return dim * (dim + 1) // 2


def matrix_to_slots(matrix: Array) -> Array:
    """Coefficients of a symmetric matrix in slot order."""
    rows, cols = slot_indices(matrix.shape[0])
    return np.asarray(matrix[rows, cols], dtype=float)


def slots_to_matrix(coeffs: Array, dim: int) -> Array:
    """Inverse of :func:`matrix_to_slots`."""
    if coeffs.shape != (n_slots(dim),):
        raise DimensionError(f"expected {n_slots(dim)} coefficients, got {coeffs.shape}")
    rows, cols = slot_indices(dim)
    matrix = np.zeros((dim, dim))
    matrix[rows, cols] = coeffs
    matrix[cols, rows] = coeffs
    return matrix


def moment_features(moments: Array) -> Array:
    """Features of second-moment matrices.

    Args:
        moments: Array (..., d, d) of symmetric matrices E[z z']

    Returns:
        Array (..., d(d+1)/2) with diagonal slots E[z_i^2] and off-diagonal
        slots 2 E[z_i z_j], so that E[z' Q z] = features . slots(Q)
    """
    dim = moments.shape[-1]
    rows, cols = slot_indices(dim)
    weights = np.where(rows == cols, 1.0, 2.0)
    return moments[..., rows, cols] * weights


def feature_matrix(points: Array) -> Array:
    """Row-wise :func:`features` for an (N, d) array of joint vectors."""
    return moment_features(points[:, :, None] * points[:, None, :])


def features(z: ArrayLike, dim: int) -> Array:
    """Quadratic features phi(z) with z' Q z = phi(z) . slots(Q).

    Args:
        z: Joint vector of length ``dim``
        dim: Expected length

    Returns:
        Feature vector of length dim(dim+1)/2
    """
    z = as_vector(z, dim, "z")
    return moment_features(np.outer(z, z))


@dataclass(frozen=True)
class ThetaLayout:
    """Index map between quadratic functions and a flat LP variable vector.

    Q slots, then e; for the classical LP also V slots, then e_v.

    Attributes:
        state_dim: n_x
        input_dim: n_u
        with_value: Whether the value-function block is present
    """

    state_dim: int
    input_dim: int
    with_value: bool = False

    @property
    def dim(self) -> int:
        """Joint dimension n_x + n_u."""
        return self.state_dim + self.input_dim

    @property
    def n_q(self) -> int:
        """Number of Q slots."""
        return n_slots(self.dim)

    @property
    def n_v(self) -> int:
        """Number of V slots (zero without the value block)."""
        return n_slots(self.state_dim) if self.with_value else 0

    @property
    def e_index(self) -> int:
        """Position of the q offset."""
        return self.n_q

    @property
    def v_slice(self) -> slice:
        """Positions of the V slots."""
        return slice(self.n_q + 1, self.n_q + 1 + self.n_v)

    @property
    def e_v_index(self) -> int:
        """Position of the value offset."""
        if not self.with_value:
            raise IndexError("layout has no value block")
        return self.n_q + 1 + self.n_v

    @property
    def n_vars(self) -> int:
        """Length of the flat vector."""
        return self.n_q + 1 + (self.n_v + 1 if self.with_value else 0)

    def column_names(self) -> list[str]:
        """Human-readable names of the flat coordinates."""
        rows, cols = slot_indices(self.dim)
        names = [f"q_{i}_{j}" for i, j in zip(rows, cols, strict=True)] + ["e"]
        if self.with_value:
            rows, cols = slot_indices(self.state_dim)
            names += [f"v_{i}_{j}" for i, j in zip(rows, cols, strict=True)] + ["e_v"]
        return names

    def to_flat(self, q: "QuadraticQ", v: "QuadraticV | None" = None) -> Array:
        """Flatten q (and v for layouts with a value block)."""
        if q.dim != self.dim:
            raise DimensionError(f"q has dimension {q.dim}, layout expects {self.dim}")
        parts = [matrix_to_slots(q.Qmat), [q.e]]
        if self.with_value:
            if v is None:
                raise ValueError("layout has a value block, v is required")
            parts += [matrix_to_slots(v.Vmat), [v.e_v]]
        return np.concatenate(parts)

    def from_flat(self, theta: ArrayLike) -> tuple["QuadraticQ", "QuadraticV | None"]:
        """Rebuild q (and v) from a flat vector."""
        theta = as_vector(theta, self.n_vars, "theta")
        q = QuadraticQ(
            slots_to_matrix(theta[: self.n_q], self.dim), float(theta[self.e_index]), self.state_dim
        )
        if not self.with_value:
            return q, None
        v = QuadraticV(
            slots_to_matrix(theta[self.v_slice], self.state_dim), float(theta[self.e_v_index])
        )
        return q, v


def _symmetric(matrix: ArrayLike, name: str) -> Array:
    arr = np.atleast_2d(np.asarray(matrix, dtype=float))
    if arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {arr.shape}")
    if np.abs(arr - arr.T).max(initial=0.0) > SYMMETRY_TOL * max(1.0, np.abs(arr).max(initial=0.0)):
        raise ValueError(f"{name} is not symmetric")
    return arr


@dataclass(frozen=True)
class QuadraticQ:
    """q(x, u) = [x; u]' Qmat [x; u] + e.

    Attributes:
        Qmat: Symmetric (n_x + n_u) square matrix
        e: Constant offset
        state_dim: n_x
    """

    Qmat: Array
    e: float
    state_dim: int

    def __post_init__(self) -> None:
        """Validate symmetry and the partition."""
        Qmat = _symmetric(self.Qmat, "Qmat")
        if not 0 < self.state_dim < Qmat.shape[0]:
            raise DimensionError(f"state_dim {self.state_dim} does not partition {Qmat.shape}")
        object.__setattr__(self, "Qmat", Qmat)
        object.__setattr__(self, "e", float(self.e))

    @property
    def dim(self) -> int:
        """Joint dimension."""
        return int(self.Qmat.shape[0])

    @property
    def input_dim(self) -> int:
        """Number of inputs."""
        return self.dim - self.state_dim

    @property
    def q_xx(self) -> Array:
        """State block."""
        return self.Qmat[: self.state_dim, : self.state_dim]

    @property
    def q_xu(self) -> Array:
        """Cross block."""
        return self.Qmat[: self.state_dim, self.state_dim :]

    @property
    def q_uu(self) -> Array:
        """Input block."""
        return self.Qmat[self.state_dim :, self.state_dim :]

    @cached_property
    def layout(self) -> ThetaLayout:
        """Layout of this q alone."""
        return ThetaLayout(self.state_dim, self.input_dim)

    def shifted(self, offset: float) -> "QuadraticQ":
        """Same kernel, offset increased by ``offset``."""
        return QuadraticQ(self.Qmat, self.e + offset, self.state_dim)


@dataclass(frozen=True)
class QuadraticV:
    """v(x) = x' Vmat x + e_v."""

    Vmat: Array
    e_v: float

    def __post_init__(self) -> None:
        """Validate symmetry."""
        object.__setattr__(self, "Vmat", _symmetric(self.Vmat, "Vmat"))
        object.__setattr__(self, "e_v", float(self.e_v))

    def __call__(self, x: ArrayLike) -> float:
        """Evaluate v at a state."""
        x = as_vector(x, self.Vmat.shape[0], "x")
        return float(x @ self.Vmat @ x + self.e_v)


@dataclass(frozen=True)
class LinearPolicy:
    """State feedback u = K x."""

    K: Array

    def __post_init__(self) -> None:
        """Validate the gain."""
        K = np.atleast_2d(np.asarray(self.K, dtype=float))
        if not np.all(np.isfinite(K)):
            raise ValueError("gain has non-finite entries")
        object.__setattr__(self, "K", K)

    def action(self, x: ArrayLike) -> Array:
        """Input prescribed at state x."""
        return self.K @ as_vector(x, self.K.shape[1], "x")


def eval_q(q: QuadraticQ, x: ArrayLike, u: ArrayLike) -> float:
    """Evaluate [x; u]' Qmat [x; u] + e."""
    z = np.concatenate([as_vector(x, q.state_dim, "x"), as_vector(u, q.input_dim, "u")])
    return float(z @ q.Qmat @ z + q.e)


def extract_policy(q: QuadraticQ) -> LinearPolicy:
    """Greedy linear policy K = -q_uu^-1 q_xu' of a quadratic q.

    Args:
        q: Quadratic q-function

    Returns:
        Minimizing linear policy; the offset e plays no role

    Raises:
        NotExtractableError: q_uu is not positive definite
    """
    smallest = float(np.linalg.eigvalsh(q.q_uu).min())
    if smallest <= PD_TOL:
        raise NotExtractableError(
            f"q_uu is not positive definite (smallest eigenvalue {smallest:.3e})"
        )
    return LinearPolicy(-np.linalg.solve(q.q_uu, q.q_xu.T))


QKey = Mapping[str, str | int]


def write_q_csv(path: Path, entries: Iterable[tuple[QKey, QuadraticQ]]) -> None:
    """Write quadratic q-functions in long format, one row per coefficient.

    Args:
        path: Output file
        entries: Pairs of identifying key columns and q; every entry must use
            the same key names
    """
    rows: list[list[str | int]] = []
    key_names: list[str] | None = None
    for keys, q in entries:
        if key_names is None:
            key_names = list(keys)
        elif list(keys) != key_names:
            raise ValueError(f"inconsistent key columns {list(keys)} vs {key_names}")
        flat = q.layout.to_flat(q)
        for name, value in zip(q.layout.column_names(), flat, strict=True):
            rows.append([*keys.values(), q.state_dim, name, repr(float(value))])
    with path.open("w", newline="", encoding="utf-8") as file:
        writer = csv.writer(file)
        writer.writerow([*(key_names or []), "state_dim", "slot", "value"])
        writer.writerows(rows)


def read_q_csv(path: Path) -> list[tuple[dict[str, str], QuadraticQ]]:
    """Read q-functions written by :func:`write_q_csv`, in file order."""
    groups: dict[tuple[str, ...], dict[str, float]] = {}
    state_dims: dict[tuple[str, ...], int] = {}
    with path.open(newline="", encoding="utf-8") as file:
        reader = csv.reader(file)
        header = next(reader)
        key_names = header[:-3]
        for row in reader:
            key = tuple(row[: len(key_names)])
            state_dims[key] = int(row[-3])
            groups.setdefault(key, {})[row[-2]] = float(row[-1])
    result = []
    for key, values in groups.items():
        n_q = len(values) - 1
        dim = round((math.sqrt(8 * n_q + 1) - 1) / 2)
        layout = ThetaLayout(state_dims[key], dim - state_dims[key])
        theta = np.array([values[name] for name in layout.column_names()])
        q, _ = layout.from_flat(theta)
        result.append((dict(zip(key_names, key, strict=True)), q))
    return result
