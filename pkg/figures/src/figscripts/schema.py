"""CSV loading with strict column-schema validation."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


class SchemaError(ValueError):
    """A CSV input does not provide the columns a figure family needs."""


def read_csv(path: str | Path) -> dict[str, np.ndarray]:
    """Load a cpqt CSV into named float columns.

    Raises :class:`SchemaError` for missing files, empty files, or rows
    that do not parse as numbers.
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"{path}: no such file")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if not header or any(not name.strip() for name in header):
            raise SchemaError(f"{path}: malformed header row")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise SchemaError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: non-numeric value") from exc
    data = np.array(rows) if rows else np.empty((0, len(header)))
    return {name: data[:, k] for k, name in enumerate(header)}


def require_columns(data: dict[str, np.ndarray], columns: list[str], source: str) -> None:
    missing = [c for c in columns if c not in data]
    if missing:
        raise SchemaError(f"{source}: missing columns {missing}; found {sorted(data)}")
    if columns and len(data[columns[0]]) == 0:
        raise SchemaError(f"{source}: no data rows")
