"""Result tables and their CSV / JSON encodings."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

FORMATS = ("csv", "json")


@dataclass
class ResultTable:
    columns: list
    rows: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.columns = list(self.columns)
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim == 1:
            rows = rows.reshape(1, -1) if self.columns and rows.size == len(self.columns) \
                else rows.reshape(-1, 1)
        if rows.size == 0:
            rows = rows.reshape(0, len(self.columns))
        if rows.shape[1] != len(self.columns):
            raise InputError(f"{rows.shape[1]} values per row but {len(self.columns)} columns")
        self.rows = rows

    @classmethod
    def from_columns(cls, data, metadata=None):
        """Build from an ordered mapping ``name -> 1D values``."""
        names = list(data)
        arrays = [np.atleast_1d(np.asarray(data[k], dtype=float)) for k in names]
        lengths = {a.size for a in arrays}
        if len(lengths) != 1:
            raise InputError(f"columns have unequal lengths {sorted(lengths)}")
        return cls(names, np.column_stack(arrays), metadata or {})

    def column(self, name):
        return self.rows[:, self.columns.index(name)]

    def __eq__(self, other):
        if not isinstance(other, ResultTable):
            return NotImplemented
        return (self.columns == other.columns and self.rows.shape == other.rows.shape
                and bool(np.array_equal(self.rows, other.rows)) and self.metadata == other.metadata)


def _check_finite(table):
    bad = ~np.isfinite(table.rows)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise InputError(f"non-finite value {table.rows[r, c]} in column "
                         f"'{table.columns[c]}' row {r}; refusing to emit")
    _check_meta_finite(table.metadata, "metadata")


def _check_meta_finite(obj, path):
    if isinstance(obj, float) and not math.isfinite(obj):
        raise InputError(f"non-finite value at {path}; refusing to emit")
    if isinstance(obj, dict):
        for k, v in obj.items():
            _check_meta_finite(v, f"{path}.{k}")
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            _check_meta_finite(v, f"{path}[{i}]")


def _fmt(x):
    # repr gives the shortest string that parses back to the same double
    return repr(float(x))


def emit(table, fmt="csv"):
    """Encode ``table`` as UTF-8 bytes.

    CSV carries the metadata as one leading ``#`` comment line of compact
    JSON, then a header row and one line per row.
    """
    if fmt not in FORMATS:
        raise InputError(f"unknown format {fmt!r}")
    _check_finite(table)
    if fmt == "json":
        doc = {
            "columns": table.columns,
            "data": {name: [float(v) for v in table.rows[:, j]]
                     for j, name in enumerate(table.columns)},
            "metadata": table.metadata,
        }
        return (json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n").encode()
    buf = io.StringIO()
    buf.write("# " + json.dumps(table.metadata, sort_keys=True, separators=(",", ":"),
                                allow_nan=False) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue().encode()


def parse_table(data, fmt="csv"):
    """Inverse of :func:`emit`."""
    text = data.decode() if isinstance(data, bytes) else data
    if fmt == "json":
        doc = json.loads(text)
        cols = doc["columns"]
        rows = np.column_stack([np.asarray(doc["data"][c], dtype=float) for c in cols]) \
            if cols else np.empty((0, 0))
        return ResultTable(cols, rows, doc["metadata"])
    lines = text.splitlines()
    metadata = {}
    if lines and lines[0].startswith("# "):
        metadata = json.loads(lines[0][2:])
        lines = lines[1:]
    reader = list(csv.reader(lines))
    header, body = reader[0], reader[1:]
    rows = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(header))
    return ResultTable(header, rows, metadata)
