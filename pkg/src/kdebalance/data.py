"""Covariate tables and the CSV formats used on disk.

All CSV files share one layout: a header row, one row per unit, and an
optional leading ``id`` column holding string labels. Lines starting with
``#`` are comments; files written by this package put a single JSON
metadata comment on the first line.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import CSVFormatError, DataError, DimensionMismatch


@dataclass(frozen=True)
class CovariateTable:
    """Immutable N x d matrix of unit covariates.

    Parameters
    ----------
    values
        Array of shape ``(N, d)``. Copied and made read-only.
    unit_ids
        Optional row labels; defaults to ``"1" .. "N"``.
    columns
        Optional covariate names; defaults to ``z1 .. zd``.
    """

    values: np.ndarray
    unit_ids: tuple[str, ...] | None = None
    columns: tuple[str, ...] | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise DataError(f"covariates must be a 2-d array, got shape {values.shape}")
        n, d = values.shape
        if n < 2:
            raise DataError(f"need at least 2 units, got {n}")
        if d < 1:
            raise DataError("need at least one covariate column")
        bad = np.argwhere(~np.isfinite(values))
        if bad.size:
            i, k = bad[0]
            raise DataError(f"non-finite covariate at unit {i + 1}, column {k + 1}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

        ids = self.unit_ids
        ids = tuple(str(i + 1) for i in range(n)) if ids is None else tuple(str(u) for u in ids)
        if len(ids) != n:
            raise DimensionMismatch(f"{len(ids)} unit ids for {n} rows")
        object.__setattr__(self, "unit_ids", ids)

        cols = self.columns
        cols = tuple(f"z{k + 1}" for k in range(d)) if cols is None else tuple(cols)
        if len(cols) != d:
            raise DimensionMismatch(f"{len(cols)} column names for {d} columns")
        object.__setattr__(self, "columns", cols)

    @property
    def n_units(self) -> int:
        return self.values.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.values.shape[1]

    def take(self, index) -> "CovariateTable":
        """Rows selected by ``index`` (duplicates allowed, ids kept)."""
        index = np.asarray(index)
        return CovariateTable(
            self.values[index],
            unit_ids=tuple(self.unit_ids[i] for i in index),
            columns=self.columns,
        )


# ---------------------------------------------------------------------------
# CSV reading


@dataclass
class CSVTable:
    path: str
    header: list[str]
    ids: list[str] | None
    rows: list[list[str]]
    line_numbers: list[int] = field(default_factory=list)

    def column(self, name: str) -> list[str]:
        try:
            k = self.header.index(name)
        except ValueError:
            raise DataError(f"{self.path}: missing column {name!r}") from None
        return [r[k] for r in self.rows]


def _read_raw(path) -> CSVTable:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"input file not found: {path}")
    header = None
    rows, lines = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for row in reader:
            lineno = reader.line_num
            if not row or (row[0].startswith("#")) or all(not c.strip() for c in row):
                continue
            row = [c.strip() for c in row]
            if header is None:
                header = row
                continue
            if len(row) != len(header):
                raise CSVFormatError(
                    path, lineno, "*", f"expected {len(header)} fields, found {len(row)}"
                )
            rows.append(row)
            lines.append(lineno)
    if header is None:
        raise DataError(f"{path}: empty file, expected a header row")
    ids = None
    if header and header[0].lower() == "id":
        ids = [r[0] for r in rows]
        header = header[1:]
        rows = [r[1:] for r in rows]
    return CSVTable(str(path), header, ids, rows, lines)


def _to_float(table: CSVTable, i: int, k: int) -> float:
    cell = table.rows[i][k]
    try:
        v = float(cell)
    except ValueError:
        raise CSVFormatError(
            table.path, table.line_numbers[i], table.header[k], f"non-numeric value {cell!r}"
        ) from None
    if not math.isfinite(v):
        raise CSVFormatError(
            table.path, table.line_numbers[i], table.header[k], f"non-finite value {cell!r}"
        )
    return v


def _numeric(table: CSVTable, columns: Sequence[str]) -> np.ndarray:
    ks = [table.header.index(c) for c in columns]
    out = np.empty((len(table.rows), len(ks)))
    for i in range(len(table.rows)):
        for j, k in enumerate(ks):
            out[i, j] = _to_float(table, i, k)
    return out


def read_covariates(path, exclude: Sequence[str] = ()) -> CovariateTable:
    """Read a covariate CSV; every non-id column not in ``exclude`` must be numeric."""
    table = _read_raw(path)
    cols = [c for c in table.header if c not in set(exclude)]
    if not cols:
        raise DataError(f"{path}: no covariate columns")
    values = _numeric(table, cols)
    return CovariateTable(values, unit_ids=table.ids, columns=tuple(cols))


def read_column(path, column: str | None = None) -> tuple[list[str] | None, np.ndarray]:
    """Read one numeric column (default: the only non-id column)."""
    table = _read_raw(path)
    if column is None:
        if len(table.header) != 1:
            raise DataError(
                f"{path}: expected a single value column, found {table.header}; name one explicitly"
            )
        column = table.header[0]
    if column not in table.header:
        raise DataError(f"{path}: missing column {column!r}")
    return table.ids, _numeric(table, [column])[:, 0]


def read_assignment(path) -> tuple[list[str] | None, np.ndarray, np.ndarray | None]:
    """Read a partition or design CSV: columns ``group`` and optionally ``level``."""
    table = _read_raw(path)
    ints = {}
    for name in ("group", "level"):
        if name not in table.header:
            continue
        k = table.header.index(name)
        vals = []
        for i, row in enumerate(table.rows):
            cell = row[k]
            try:
                vals.append(int(cell))
            except ValueError:
                raise CSVFormatError(
                    path, table.line_numbers[i], name, f"non-integer value {cell!r}"
                ) from None
        ints[name] = np.array(vals, dtype=np.int64)
    if "group" not in ints:
        raise DataError(f"{path}: missing column 'group'")
    return table.ids, ints["group"], ints.get("level")


def align_ids(expected: Sequence[str], got: Sequence[str] | None, what: str) -> np.ndarray:
    """Index mapping so that ``got[perm]`` follows ``expected``; identity when ids absent."""
    n = len(expected)
    if got is None:
        return np.arange(n)
    if len(got) != n:
        raise DimensionMismatch(f"{what}: {len(got)} rows but {n} units")
    pos = {u: i for i, u in enumerate(got)}
    if len(pos) != n:
        raise DataError(f"{what}: duplicate unit ids")
    try:
        return np.array([pos[u] for u in expected], dtype=np.int64)
    except KeyError as exc:
        raise DataError(f"{what}: unit id {exc.args[0]!r} not found") from None


# ---------------------------------------------------------------------------
# writing


def metadata_line(meta: dict[str, Any]) -> str:
    return "# " + json.dumps(meta, sort_keys=True, separators=(",", ":"))


def write_csv(path, header: Sequence[str], rows, meta: dict[str, Any] | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if meta is not None:
            fh.write(metadata_line(meta) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_json(path, obj: dict[str, Any]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
