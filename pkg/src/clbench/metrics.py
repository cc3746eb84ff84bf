"""Accuracy-matrix bookkeeping and the two summary metrics.

R[i][j] (1-indexed in the CSV, 0-indexed here) is accuracy on task j's test
set after finishing training on task i. The final-row mean is the average
accuracy; backward transfer compares the final row against the diagonal.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ProtocolError, StateError


class AccuracyMatrix:
    """T x T write-once matrix, lower triangle filled as training proceeds."""

    def __init__(self, num_tasks: int):
        if num_tasks < 1:
            raise ConfigError(f"need at least one task, got {num_tasks}")
        self.num_tasks = int(num_tasks)
        self._values = np.full((num_tasks, num_tasks), np.nan)

    def record(self, trained_through: int, evaluated_task: int, accuracy: float) -> None:
        """Set R[trained_through][evaluated_task] exactly once (0-indexed)."""
        i, j = int(trained_through), int(evaluated_task)
        if not (0 <= j <= i < self.num_tasks):
            raise ConfigError(
                f"eval index ({i},{j}) outside the lower triangle of T={self.num_tasks}"
            )
        if not 0.0 <= accuracy <= 1.0:
            raise ConfigError(f"accuracy {accuracy} outside [0,1]")
        if not np.isnan(self._values[i, j]):
            raise ProtocolError(f"R[{i}][{j}] already recorded (write-once)")
        self._values[i, j] = accuracy

    def defined(self, i: int, j: int) -> bool:
        return not np.isnan(self._values[i, j])

    def value(self, i: int, j: int) -> float:
        if np.isnan(self._values[i, j]):
            raise StateError(f"R[{i}][{j}] undefined")
        return float(self._values[i, j])

    def row_complete(self, i: int) -> bool:
        return not np.isnan(self._values[i, : i + 1]).any()

    def as_array(self) -> np.ndarray:
        return self._values.copy()

    @classmethod
    def from_array(cls, values: np.ndarray) -> "AccuracyMatrix":
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ConfigError(f"accuracy matrix must be square, got {values.shape}")
        m = cls(values.shape[0])
        m._values = values.copy()
        return m

    def to_csv(self) -> str:
        """Rows = trained-through task (1-based), columns = evaluated task; blanks undefined."""
        buf = io.StringIO()
        t = self.num_tasks
        buf.write("after_task," + ",".join(f"task{j}" for j in range(1, t + 1)) + "\n")
        for i in range(t):
            cells = ["" if np.isnan(v) else repr(float(v)) for v in self._values[i]]
            buf.write(f"{i + 1}," + ",".join(cells) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "AccuracyMatrix":
        lines = [ln for ln in text.strip().splitlines() if ln]
        t = len(lines) - 1
        m = cls(t)
        for i, ln in enumerate(lines[1:]):
            cells = ln.split(",")[1:]
            if len(cells) != t:
                raise ConfigError(f"row {i + 1} has {len(cells)} cells, expected {t}")
            m._values[i] = [np.nan if c == "" else float(c) for c in cells]
        return m


def average_accuracy(matrix: AccuracyMatrix) -> float:
    """Mean of the final row: (1/T) sum_j R[T][j]."""
    t = matrix.num_tasks
    if not matrix.row_complete(t - 1):
        raise StateError("final row incomplete; train and evaluate every task first")
    return float(matrix.as_array()[t - 1].mean())


def backward_transfer(matrix: AccuracyMatrix) -> float:
    """(1/(T-1)) sum_{j<T} (R[T][j] - R[j][j]); undefined (error) for T=1."""
    t = matrix.num_tasks
    if t < 2:
        raise StateError("backward transfer undefined for a single-task stream")
    vals = matrix.as_array()
    if not matrix.row_complete(t - 1) or np.isnan(np.diagonal(vals)).any():
        raise StateError("need the complete final row and diagonal")
    final = vals[t - 1, : t - 1]
    diag = np.diagonal(vals)[: t - 1]
    return float((final - diag).mean())


@dataclass
class TaskTiming:
    """Per-task training cost: wall-clock excluded from deterministic outputs."""

    gradient_steps: int
    wall_seconds: float


@dataclass
class MetricReport:
    """Derived metrics for one run: ACC always, BWT only when T >= 2."""

    acc: float
    bwt: float | None
    per_task_final: list[float]
    timing: list[TaskTiming] = field(default_factory=list)

    @classmethod
    def from_matrix(cls, matrix: AccuracyMatrix, timing: list[TaskTiming] | None = None) -> "MetricReport":
        t = matrix.num_tasks
        bwt = backward_transfer(matrix) if t >= 2 else None
        final = [float(v) for v in matrix.as_array()[t - 1]]
        return cls(average_accuracy(matrix), bwt, final, timing or [])
