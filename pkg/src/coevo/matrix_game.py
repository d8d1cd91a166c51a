"""Empirical zero-sum game between a policy population and a level archive.

Rows are policies, columns are levels, entries are success rates in [0, 1].
The row player maximizes its worst-case expected payoff over columns; the
equilibrium is found by linear programming (HiGHS through scipy) followed by a
lexicographic refinement so that degenerate games resolve to one canonical
vertex of the optimal face.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linprog

from .errors import (
    DimensionMismatch,
    DuplicateId,
    EmptyMatrix,
    NonFiniteEntry,
    OutOfRangeEntry,
    ParseError,
    ZeroRows,
)

LP_TOL = 1e-9
CERT_TOL = 1e-6
SUPPORT_EPS = 1e-9
RANGE_SLACK = 1e-9

_HIGHS_OPTIONS = {
    "presolve": True,
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}


def _check_entries(values: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise NonFiniteEntry("payoff entries must be finite")
    if values.size and (values.min() < -RANGE_SLACK or values.max() > 1.0 + RANGE_SLACK):
        bad = values[(values < -RANGE_SLACK) | (values > 1.0 + RANGE_SLACK)][0]
        raise OutOfRangeEntry(f"payoff entry {bad!r} outside [0, 1]")
    return np.clip(values, 0.0, 1.0)


def _check_ids(ids: Sequence[str], axis: str) -> tuple[str, ...]:
    ids = tuple(str(i) for i in ids)
    if len(set(ids)) != len(ids):
        seen = set()
        dup = next(i for i in ids if i in seen or seen.add(i))
        raise DuplicateId(f"duplicate {axis} id {dup!r}")
    return ids


@dataclass(frozen=True)
class PayoffMatrix:
    """Policies x levels success-rate matrix. Instances are immutable."""

    row_ids: tuple[str, ...]
    col_ids: tuple[str, ...]
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim != 2:
            values = values.reshape(len(self.row_ids), len(self.col_ids))
        row_ids = _check_ids(self.row_ids, "row")
        col_ids = _check_ids(self.col_ids, "column")
        if values.shape != (len(row_ids), len(col_ids)):
            raise DimensionMismatch(
                f"values shape {values.shape} does not match "
                f"{len(row_ids)} row ids x {len(col_ids)} column ids"
            )
        values = _check_entries(values)
        values.flags.writeable = False
        object.__setattr__(self, "row_ids", row_ids)
        object.__setattr__(self, "col_ids", col_ids)
        object.__setattr__(self, "values", values)

    @classmethod
    def empty(cls) -> "PayoffMatrix":
        return cls((), (), np.zeros((0, 0)))

    @classmethod
    def from_rows(cls, rows, row_ids=None, col_ids=None) -> "PayoffMatrix":
        values = np.asarray(rows, dtype=float)
        if values.ndim != 2:
            raise DimensionMismatch("rows must form a 2-D array")
        r, t = values.shape
        row_ids = row_ids if row_ids is not None else [f"r{i}" for i in range(r)]
        col_ids = col_ids if col_ids is not None else [f"c{j}" for j in range(t)]
        return cls(tuple(row_ids), tuple(col_ids), values)

    @property
    def rows(self) -> int:
        return len(self.row_ids)

    @property
    def cols(self) -> int:
        return len(self.col_ids)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def entry(self, i: int, j: int) -> float:
        return float(self.values[i, j])

    def append_row(self, row_id: str, values: Iterable[float]) -> "PayoffMatrix":
        return append_row(self, row_id, values)

    def append_column(self, col_id: str, values: Iterable[float]) -> "PayoffMatrix":
        return append_column(self, col_id, values)

    def submatrix(self, rows: int, cols: int) -> "PayoffMatrix":
        """Leading ``rows`` x ``cols`` block."""
        return PayoffMatrix(self.row_ids[:rows], self.col_ids[:cols], self.values[:rows, :cols])

    def __eq__(self, other):
        if not isinstance(other, PayoffMatrix):
            return NotImplemented
        return (
            self.row_ids == other.row_ids
            and self.col_ids == other.col_ids
            and np.array_equal(self.values, other.values)
        )

    def __hash__(self):
        return hash((self.row_ids, self.col_ids, self.values.tobytes()))


@dataclass(frozen=True)
class MixedStrategy:
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float, copy=True).reshape(-1)
        if w.size == 0:
            raise ZeroRows("a mixed strategy needs at least one weight")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and non-negative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.weights.size

    def __eq__(self, other):
        if not isinstance(other, MixedStrategy):
            return NotImplemented
        return np.array_equal(self.weights, other.weights)

    def __hash__(self):
        return hash(self.weights.tobytes())


@dataclass(frozen=True)
class GameSolution:
    strategy: MixedStrategy
    value: float
    dual_weights: np.ndarray
    support: tuple[int, ...]

    def primal_gap(self, matrix: PayoffMatrix) -> float:
        """How far the worst column falls below ``value`` (<= 0 when certified)."""
        return float(self.value - mixture_column_values(matrix, self.strategy).min())

    def dual_gap(self, matrix: PayoffMatrix) -> float:
        return float((matrix.values @ self.dual_weights).max() - self.value)


def _validated(values) -> np.ndarray:
    v = np.asarray(values, dtype=float).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise NonFiniteEntry("payoff entries must be finite")
    if v.size and (v.min() < -RANGE_SLACK or v.max() > 1.0 + RANGE_SLACK):
        bad = v[(v < -RANGE_SLACK) | (v > 1.0 + RANGE_SLACK)][0]
        raise OutOfRangeEntry(f"payoff entry {bad!r} outside [0, 1]")
    return np.clip(v, 0.0, 1.0)


def append_row(matrix: PayoffMatrix, row_id: str, values: Iterable[float]) -> PayoffMatrix:
    v = _validated(list(values))
    if row_id in matrix.row_ids:
        raise DuplicateId(f"row id {row_id!r} already present")
    if matrix.rows == 0 and matrix.cols == 0:
        raise DimensionMismatch("append a column before appending rows to an empty matrix")
    if v.size != matrix.cols:
        raise DimensionMismatch(f"row has {v.size} values, matrix has {matrix.cols} columns")
    return PayoffMatrix(matrix.row_ids + (row_id,), matrix.col_ids, np.vstack([matrix.values, v[None, :]]))


def append_column(matrix: PayoffMatrix, col_id: str, values: Iterable[float]) -> PayoffMatrix:
    v = _validated(list(values))
    if col_id in matrix.col_ids:
        raise DuplicateId(f"column id {col_id!r} already present")
    if v.size != matrix.rows:
        raise DimensionMismatch(f"column has {v.size} values, matrix has {matrix.rows} rows")
    return PayoffMatrix(matrix.row_ids, matrix.col_ids + (col_id,), np.hstack([matrix.values, v[:, None]]))


def uniform_strategy(r: int) -> MixedStrategy:
    if r < 1:
        raise ZeroRows("uniform strategy needs r >= 1")
    return MixedStrategy(np.full(r, 1.0 / r))


def mixture_column_values(matrix: PayoffMatrix, strategy: MixedStrategy) -> np.ndarray:
    """Expected payoff of the mixture on every column."""
    if len(strategy) != matrix.rows:
        raise DimensionMismatch(f"strategy has {len(strategy)} weights, matrix has {matrix.rows} rows")
    return strategy.weights @ matrix.values


def _linprog(c, A_ub, b_ub, A_eq, b_eq, bounds):
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                  method="highs", options=_HIGHS_OPTIONS)
    return res


def _game_value(m: np.ndarray) -> float:
    r, t = m.shape
    # variables: p_0..p_{r-1}, v ; maximize v  <=>  minimize -v
    c = np.zeros(r + 1)
    c[-1] = -1.0
    A_ub = np.hstack([-m.T, np.ones((t, 1))])
    A_eq = np.hstack([np.ones((1, r)), np.zeros((1, 1))])
    bounds = [(0.0, None)] * r + [(None, None)]
    res = _linprog(c, A_ub, np.zeros(t), A_eq, [1.0], bounds)
    if res.status != 0:  # pragma: no cover - bounded feasible LP
        raise RuntimeError(f"LP solver failed: {res.message}")
    return float(-res.fun)


def _lexicographic_vertex(m: np.ndarray, v_star: float) -> np.ndarray:
    """Canonical optimal vertex: minimize p_{r-1}, then p_{r-2}, ..., then p_0."""
    r, t = m.shape
    A_ub = -m.T
    b_ub = np.full(t, -(v_star - LP_TOL))
    A_eq = np.ones((1, r))
    upper = [None] * r
    p = None
    for k in range(r - 1, -1, -1):
        c = np.zeros(r)
        c[k] = 1.0
        bounds = [(0.0, upper[i]) for i in range(r)]
        res = _linprog(c, A_ub, b_ub, A_eq, [1.0], bounds)
        if res.status != 0:
            break
        p = res.x
        fixed = float(res.fun)
        upper[k] = 0.0 if fixed <= LP_TOL else fixed + LP_TOL
    if p is None:  # pragma: no cover - the optimal face is never empty
        raise RuntimeError("lexicographic refinement failed on the first step")
    return p


def _polish(m: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Snap a near-vertex to the exact solution of its active equalities.

    LP residue can leave ~1e-8 weight on a row outside the optimal support,
    which costs ~1e-9 of value; coarser snapping thresholds are tried and a
    result is kept only if its worst column strictly improves.
    """
    best = _polish_at(m, p, SUPPORT_EPS)
    for eps in (1e-8, 1e-7, 1e-6):
        cand = _polish_at(m, p, eps)
        if (cand @ m).min() > (best @ m).min():
            best = cand
    return best


def _polish_at(m: np.ndarray, p: np.ndarray, eps: float) -> np.ndarray:
    p = np.where(p < eps, 0.0, p)
    p = p / p.sum()
    cols = p @ m
    worst = cols.min()
    support = np.flatnonzero(p > 0)
    tight = np.flatnonzero(cols <= worst + 1e-7)
    k = support.size
    A = np.zeros((tight.size + 1, k + 1))
    A[: tight.size, :k] = m[np.ix_(support, tight)].T
    A[: tight.size, k] = -1.0
    A[tight.size, :k] = 1.0
    b = np.zeros(tight.size + 1)
    b[-1] = 1.0
    if np.linalg.matrix_rank(A) < k + 1:
        return p
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    if np.abs(A @ sol - b).max() > 1e-10 or sol[:k].min() < -1e-12:
        return p
    q = np.zeros_like(p)
    q[support] = np.clip(sol[:k], 0.0, None)
    q /= q.sum()
    if (q @ m).min() < worst - 1e-12:
        return p
    return q


def _dual_weights(m: np.ndarray) -> np.ndarray:
    r, t = m.shape
    # variables: q_0..q_{t-1}, w ; minimize w subject to M q <= w
    c = np.zeros(t + 1)
    c[-1] = 1.0
    A_ub = np.hstack([m, -np.ones((r, 1))])
    A_eq = np.hstack([np.ones((1, t)), np.zeros((1, 1))])
    bounds = [(0.0, None)] * t + [(None, None)]
    res = _linprog(c, A_ub, np.zeros(r), A_eq, [1.0], bounds)
    if res.status != 0:  # pragma: no cover
        raise RuntimeError(f"dual LP failed: {res.message}")
    q = np.clip(res.x[:t], 0.0, None)
    return q / q.sum()


def solve_nash(matrix: PayoffMatrix) -> GameSolution:
    """Maximin mixed strategy for the row player, with a dual certificate.

    Among multiple optimal strategies the one returned is the vertex of the
    optimal face reached by minimizing the weight of the last row, then the
    next-to-last, and so on; an all-equal matrix therefore yields the point
    mass on row 0.
    """
    if matrix.rows == 0 or matrix.cols == 0:
        raise EmptyMatrix("payoff matrix has no rows or no columns")
    m = np.asarray(matrix.values, dtype=float)
    if not np.all(np.isfinite(m)):
        raise NonFiniteEntry("payoff entries must be finite")
    if matrix.rows == 1:
        p = np.ones(1)
    else:
        v_star = _game_value(m)
        p = _polish(m, _lexicographic_vertex(m, v_star))
    value = float((p @ m).min())
    q = _dual_weights(m)
    strategy = MixedStrategy(p)
    support = tuple(int(i) for i in np.flatnonzero(p > SUPPORT_EPS))
    q.flags.writeable = False
    return GameSolution(strategy=strategy, value=value, dual_weights=q, support=support)


# ---------------------------------------------------------------- CSV


def format_entry(x: float) -> str:
    return format(float(x), "#.17g")


def matrix_to_csv(matrix: PayoffMatrix, corner: str = "policy") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([corner, *matrix.col_ids])
    for rid, row in zip(matrix.row_ids, matrix.values):
        w.writerow([rid, *(format_entry(x) for x in row)])
    return buf.getvalue()


def matrix_from_csv(text: str) -> PayoffMatrix:
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if not rows:
        raise ParseError("CSV is empty")
    header = rows[0]
    col_ids = [c.strip() for c in header[1:]]
    row_ids, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(
                f"row {lineno} ({row[0].strip()!r}) has {len(row)} fields, header has {len(header)}"
            )
        row_ids.append(row[0].strip())
        try:
            values.append([float(c) for c in row[1:]])
        except ValueError as exc:
            raise ParseError(f"row {lineno} ({row[0].strip()!r}): {exc}") from None
    arr = np.array(values, dtype=float).reshape(len(row_ids), len(col_ids))
    if not np.all(np.isfinite(arr)):
        raise NonFiniteEntry("CSV contains non-finite entries")
    return PayoffMatrix(tuple(row_ids), tuple(col_ids), arr)


def write_matrix_csv(matrix: PayoffMatrix, path) -> None:
    Path(path).write_text(matrix_to_csv(matrix))


def read_matrix_csv(path) -> PayoffMatrix:
    return matrix_from_csv(Path(path).read_text())


def pure_maximin(matrix: PayoffMatrix) -> float:
    """Best worst-case value achievable with a single row."""
    return float(matrix.values.min(axis=1).max())


def isclose_value(a: float, b: float, tol: float = CERT_TOL) -> bool:
    return math.isclose(a, b, abs_tol=tol)
