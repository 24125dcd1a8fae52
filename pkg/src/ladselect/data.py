"""The Likelihood-as-Data matrix: loading, validation, bias correction, summaries.

A :class:`LossMatrix` holds ``Z[i, k]``, the loss (usually negative
log-likelihood, in nats) of observation ``i`` under fitted model ``k``.  Column
order defines the model index.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import LadFormatError, LadSizeError, LadValidationError


def default_names(K: int) -> tuple[str, ...]:
    return tuple(f"model_{k + 1}" for k in range(K))


@dataclass(frozen=True)
class LossMatrix:
    """n x K matrix of per-observation losses.

    ``bias_dims`` is ``None`` for raw losses and records the ``d_k`` that were
    added (as ``d_k / (2n)``) once :func:`bias_correct` has been applied.
    """

    values: np.ndarray
    model_names: tuple[str, ...] = ()
    bias_dims: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise LadValidationError(f"loss matrix must be 2-D, got shape {values.shape}")
        n, K = values.shape
        if K < 1:
            raise LadSizeError("loss matrix needs at least one column")
        if n < 2:
            raise LadSizeError(f"loss matrix needs at least 2 rows, got {n}")
        bad = np.argwhere(~np.isfinite(values))
        if bad.size:
            i, k = bad[0]
            raise LadValidationError(f"non-finite loss at row {i + 1}, column {k + 1}: {values[i, k]!r}")
        names = tuple(self.model_names) if self.model_names else default_names(K)
        if len(names) != K:
            raise LadValidationError(f"{len(names)} model names for {K} columns")
        if len(set(names)) != K:
            raise LadValidationError(f"model names must be distinct: {names}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "model_names", names)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def K(self) -> int:
        return self.values.shape[1]

    @property
    def corrected(self) -> bool:
        return self.bias_dims is not None


@dataclass(frozen=True)
class ModelMeta:
    """Complexity ``c(k)`` and parameter dimension ``d_k`` per model."""

    complexity: tuple[float, ...]
    dims: tuple[int, ...]
    model_names: tuple[str, ...] = ()

    def __post_init__(self):
        complexity = tuple(float(c) for c in self.complexity)
        dims = tuple(int(d) for d in self.dims)
        K = len(complexity)
        if K < 1:
            raise LadValidationError("meta must describe at least one model")
        if len(dims) != K:
            raise LadValidationError(f"{len(dims)} dims for {K} complexities")
        if any(not math.isfinite(c) or c < 0 for c in complexity):
            raise LadValidationError(f"complexities must be finite and nonnegative: {complexity}")
        if any(d < 0 for d in dims):
            raise LadValidationError(f"dims must be nonnegative: {dims}")
        names = tuple(self.model_names) if self.model_names else default_names(K)
        if len(names) != K:
            raise LadValidationError(f"{len(names)} names for {K} models")
        if len(set(names)) != K:
            raise LadValidationError(f"model names must be distinct: {names}")
        object.__setattr__(self, "complexity", complexity)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "model_names", names)

    @property
    def K(self) -> int:
        return len(self.complexity)

    @property
    def c(self) -> np.ndarray:
        return np.asarray(self.complexity, dtype=np.float64)

    def permuted(self, order: Sequence[int]) -> "ModelMeta":
        return ModelMeta(
            tuple(self.complexity[i] for i in order),
            tuple(self.dims[i] for i in order),
            tuple(self.model_names[i] for i in order),
        )

    def aligned_to(self, Z: LossMatrix, by_name: bool = True) -> "ModelMeta":
        """Reorder to match the columns of ``Z``.

        Matching is by name when ``Z`` carries real names that all appear in
        the meta, otherwise by position.
        """
        if self.K != Z.K:
            raise LadValidationError(f"meta describes {self.K} models, loss matrix has {Z.K} columns")
        if by_name and set(Z.model_names) == set(self.model_names):
            index = {name: i for i, name in enumerate(self.model_names)}
            return self.permuted([index[name] for name in Z.model_names])
        return ModelMeta(self.complexity, self.dims, Z.model_names)


@dataclass(frozen=True)
class LossSummary:
    """Column means and 1/n covariance of a loss matrix."""

    mean: np.ndarray
    cov: np.ndarray
    n: int

    @property
    def K(self) -> int:
        return self.mean.shape[0]


def _parse_cell(text: str, row: int, col: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise LadValidationError(f"non-numeric cell at row {row}, column {col}: {text!r}") from None
    if not math.isfinite(value):
        raise LadValidationError(f"non-finite cell at row {row}, column {col}: {text!r}")
    return value


def _looks_numeric(cells: Sequence[str]) -> bool:
    try:
        [float(c) for c in cells]
    except ValueError:
        return False
    return True


def read_numeric_csv(path, has_header: Optional[bool] = None) -> tuple[np.ndarray, Optional[tuple[str, ...]]]:
    """Parse a comma-separated numeric table.

    ``has_header=None`` treats the first row as a header iff any of its cells
    is not a number.  Row numbers in errors are 1-based file lines.
    """
    path = Path(path)
    if not path.exists():
        raise LadValidationError(f"file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        rows = [(reader.line_num, row) for row in reader if row and any(cell.strip() for cell in row)]
    if not rows:
        raise LadSizeError(f"{path}: no data rows")
    header = None
    if has_header is None:
        has_header = not _looks_numeric(rows[0][1])
    if has_header:
        header = tuple(cell.strip() for cell in rows[0][1])
        rows = rows[1:]
    width = len(header) if header is not None else (len(rows[0][1]) if rows else 0)
    out = np.empty((len(rows), width))
    for i, (line, row) in enumerate(rows):
        if len(row) != width:
            raise LadFormatError(f"{path}: line {line} has {len(row)} fields, expected {width}")
        for j, cell in enumerate(row):
            out[i, j] = _parse_cell(cell.strip(), line, j + 1)
    return out, header


def load_loss_matrix(path, has_header: Optional[bool] = None) -> LossMatrix:
    """Read a loss matrix from CSV.  Without a header, names are model_1..model_K."""
    values, header = read_numeric_csv(path, has_header)
    if values.shape[0] < 2:
        raise LadSizeError(f"{path}: loss matrix needs at least 2 rows, got {values.shape[0]}")
    return LossMatrix(values, header or ())


def format_float(x: float) -> str:
    return "%.17g" % x


def write_loss_matrix(Z: LossMatrix, path, header: bool = True) -> None:
    """Write ``Z`` as CSV with 17 significant digits (exact round trip)."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if header:
            writer.writerow(Z.model_names)
        for row in Z.values:
            writer.writerow([format_float(x) for x in row])


def load_meta(path) -> ModelMeta:
    """Read ``{"names": [...], "complexity": [...], "dims": [...]}``."""
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise LadValidationError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise LadFormatError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict) or "complexity" not in doc:
        raise LadFormatError(f"{path}: expected an object with 'complexity' (and optional 'names', 'dims')")
    complexity = doc["complexity"]
    dims = doc.get("dims", [0] * len(complexity))
    names = doc.get("names") or ()
    if not (len(complexity) == len(dims) and (not names or len(names) == len(complexity))):
        raise LadFormatError(f"{path}: names/complexity/dims must have equal length")
    return ModelMeta(tuple(complexity), tuple(dims), tuple(names))


def bias_correct(Z: LossMatrix, meta: ModelMeta) -> LossMatrix:
    """Add ``d_k / (2n)`` to every entry of column ``k``."""
    if Z.corrected:
        raise LadValidationError("loss matrix is already bias-corrected")
    if meta.K != Z.K:
        raise LadValidationError(f"meta has {meta.K} dims, loss matrix has {Z.K} columns")
    meta = meta.aligned_to(Z)
    shift = np.asarray(meta.dims, dtype=np.float64) / (2.0 * Z.n)
    return LossMatrix(Z.values + shift, Z.model_names, bias_dims=tuple(float(d) for d in meta.dims))


def summarize(Z: LossMatrix) -> LossSummary:
    """Sample mean and ``1/n`` covariance (not ``1/(n-1)``)."""
    values = Z.values
    mean = values.mean(axis=0)
    centered = values - mean
    cov = centered.T @ centered / Z.n
    cov = 0.5 * (cov + cov.T)
    return LossSummary(mean=mean, cov=cov, n=Z.n)


def empty_summary(K: int) -> LossSummary:
    """Summary of zero observations; :func:`niw_update` returns the prior for it."""
    return LossSummary(mean=np.zeros(K), cov=np.zeros((K, K)), n=0)
