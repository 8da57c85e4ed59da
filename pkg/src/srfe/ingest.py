"""CSV ingestion: keep numeric columns, drop incomplete rows."""

from __future__ import annotations

import csv
import logging
import math
from pathlib import Path

import numpy as np

from .learners import Dataset

__all__ = [
    "IngestError",
    "MissingTarget",
    "NoNumericFeatures",
    "EmptyAfterCleaning",
    "MISSING_TOKENS",
    "ingest_csv",
]

log = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "na", "n/a", "nan", "null", "none", "?", "-"})


class IngestError(ValueError):
    pass


class MissingTarget(IngestError):
    pass


class NoNumericFeatures(IngestError):
    pass


class EmptyAfterCleaning(IngestError):
    pass


def _parse(token: str) -> float | None:
    """Float value, ``None`` for a missing marker; raises on text."""
    t = token.strip()
    if t.lower() in MISSING_TOKENS:
        return None
    v = float(t)
    return v if math.isfinite(v) else None


def ingest_csv(path: str | Path, target_name: str) -> Dataset:
    """Load ``path`` as a numeric regression dataset with ``target_name`` as y.

    A column holding any non-numeric token (other than a missing-value
    marker) is treated as categorical and dropped with a warning.  Rows with
    a missing value in any retained column are then dropped; the count is
    stored in ``dataset.info["dropped_rows"]``.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyAfterCleaning(f"{path} is empty") from None
        rows = [r for r in reader if any(cell.strip() for cell in r)]
    if target_name not in header:
        raise MissingTarget(f"target column {target_name!r} not in {path.name} header")

    n_cols = len(header)
    values: list[list[float | None]] = [[] for _ in range(n_cols)]
    numeric = [True] * n_cols
    for line_no, row in enumerate(rows, start=2):
        if len(row) != n_cols:
            raise IngestError(f"{path.name}:{line_no}: expected {n_cols} fields, got {len(row)}")
        for j, cell in enumerate(row):
            if not numeric[j]:
                continue
            try:
                values[j].append(_parse(cell))
            except ValueError:
                numeric[j] = False

    t_idx = header.index(target_name)
    if not numeric[t_idx]:
        raise MissingTarget(f"target column {target_name!r} is not numeric")
    dropped_cols = [header[j] for j in range(n_cols) if not numeric[j]]
    if dropped_cols:
        log.warning("dropping non-numeric columns: %s", ", ".join(dropped_cols))
    feat_idx = [j for j in range(n_cols) if numeric[j] and j != t_idx]
    if not feat_idx:
        raise NoNumericFeatures(f"{path.name} has no numeric feature columns")

    keep = [j for j in (*feat_idx, t_idx)]
    complete = [i for i in range(len(rows)) if all(values[j][i] is not None for j in keep)]
    dropped_rows = len(rows) - len(complete)
    if dropped_rows:
        log.warning("dropping %d rows with missing values", dropped_rows)
    if not complete:
        raise EmptyAfterCleaning(f"no complete rows left in {path.name}")
    X = np.array([[values[j][i] for j in feat_idx] for i in complete], dtype=np.float64)
    y = np.array([values[t_idx][i] for i in complete], dtype=np.float64)
    info = {"source": str(path), "target": target_name,
            "dropped_columns": dropped_cols, "dropped_rows": dropped_rows}
    return Dataset(X, y, [header[j] for j in feat_idx], info=info)
