"""Typed tabular datasets.

A :class:`Dataset` is an immutable ``n x p`` float matrix paired with a
:class:`Schema`.  Categorical cells hold the level index, binary cells hold
0 or 1, continuous cells hold the value itself (inside the declared range).
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)


class TabularError(ValueError):
    """Raised for schema violations and malformed input files."""


@dataclass(frozen=True)
class Continuous:
    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise TabularError("continuous range must be finite")
        if not self.lo < self.hi:
            raise TabularError(f"continuous range needs lo < hi, got [{self.lo}, {self.hi}]")

    @property
    def cardinality(self) -> None:
        return None


@dataclass(frozen=True)
class Binary:
    @property
    def levels(self) -> tuple[str, str]:
        return ("0", "1")

    @property
    def cardinality(self) -> int:
        return 2


@dataclass(frozen=True)
class Categorical:
    levels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(str(v) for v in self.levels))
        if len(set(self.levels)) < 2 or len(set(self.levels)) != len(self.levels):
            raise TabularError("categorical column needs >= 2 distinct levels")

    @property
    def cardinality(self) -> int:
        return len(self.levels)


ColumnKind = Union[Continuous, Binary, Categorical]


@dataclass(frozen=True)
class Column:
    name: str
    kind: ColumnKind


@dataclass(frozen=True)
class Schema:
    """Ordered column declarations.  Order matters to the chain Bayes net."""

    columns: tuple[Column, ...]

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        names = [c.name for c in self.columns]
        if not names:
            raise TabularError("schema has no columns")
        if any(not n for n in names):
            raise TabularError("column names must be nonempty")
        if len(set(names)) != len(names):
            raise TabularError(f"duplicate column names in {names}")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def p(self) -> int:
        return len(self.columns)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise TabularError(f"unknown column {name!r}") from None

    def kind(self, name: str) -> ColumnKind:
        return self.columns[self.index(name)].kind

    def to_json(self) -> dict:
        cols = []
        for c in self.columns:
            if isinstance(c.kind, Continuous):
                cols.append({"name": c.name, "kind": "continuous", "range": [c.kind.lo, c.kind.hi]})
            elif isinstance(c.kind, Binary):
                cols.append({"name": c.name, "kind": "binary"})
            else:
                cols.append({"name": c.name, "kind": "categorical", "levels": list(c.kind.levels)})
        return {"columns": cols}

    @classmethod
    def from_json(cls, obj) -> "Schema":
        entries = obj["columns"] if isinstance(obj, dict) else obj
        cols = []
        for e in entries:
            kind = str(e.get("kind", "")).lower()
            if kind == "continuous":
                lo, hi = e["range"]
                cols.append(Column(e["name"], Continuous(float(lo), float(hi))))
            elif kind == "binary":
                cols.append(Column(e["name"], Binary()))
            elif kind == "categorical":
                cols.append(Column(e["name"], Categorical(tuple(e["levels"]))))
            else:
                raise TabularError(f"column {e.get('name')!r}: unknown kind {e.get('kind')!r}")
        return cls(tuple(cols))


def load_schema(path) -> Schema:
    path = Path(path)
    if not path.exists():
        raise TabularError(f"schema file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return Schema.from_json(json.load(fh))


def save_schema(schema: Schema, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_json(), fh, indent=2)
        fh.write("\n")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Validated, read-only table.

    ``clamped`` records per-column clamp counts when the dataset came from
    :func:`load_csv` or :func:`from_array` with ``clamp=True``.
    """

    schema: Schema
    rows: np.ndarray
    clamped: dict = field(default_factory=dict)

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float, copy=True)
        if rows.ndim != 2 or rows.shape[1] != self.schema.p:
            raise TabularError(f"rows must be n x {self.schema.p}, got shape {rows.shape}")
        if rows.shape[0] < 1:
            raise TabularError("dataset must have at least one row")
        for j, col in enumerate(self.schema.columns):
            _check_column(col, rows[:, j])
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.schema.index(name)]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.schema == other.schema and np.array_equal(self.rows, other.rows)


def _check_column(col: Column, values: np.ndarray) -> None:
    kind = col.kind
    if not np.all(np.isfinite(values)):
        raise TabularError(f"column {col.name!r}: non-finite value")
    if isinstance(kind, Continuous):
        if values.min() < kind.lo or values.max() > kind.hi:
            raise TabularError(f"column {col.name!r}: value outside [{kind.lo}, {kind.hi}]")
    else:
        ok = (values == np.round(values)) & (values >= 0) & (values < kind.cardinality)
        if not ok.all():
            bad = values[~ok][0]
            raise TabularError(f"column {col.name!r}: {bad!r} label not in levels")


def from_array(schema: Schema, rows, clamp: bool = False) -> Dataset:
    """Build a dataset, optionally clamping continuous columns into range."""
    rows = np.array(rows, dtype=float, copy=True)
    counts = {}
    if clamp:
        for j, col in enumerate(schema.columns):
            if isinstance(col.kind, Continuous):
                lo, hi = col.kind.lo, col.kind.hi
                out = (rows[:, j] < lo) | (rows[:, j] > hi)
                counts[col.name] = int(out.sum())
                np.clip(rows[:, j], lo, hi, out=rows[:, j])
    return Dataset(schema, rows, counts)


def load_csv(path, schema: Schema) -> Dataset:
    """Read a CSV file against ``schema``.

    Continuous values outside the declared range are clamped to the nearest
    bound; the per-column counts land in ``Dataset.clamped``.
    """
    path = Path(path)
    if not path.exists():
        raise TabularError(f"file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TabularError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header != schema.names:
            raise TabularError(f"{path}: header {header} does not match schema {schema.names}")
        records = [r for r in reader if r]
    if not records:
        raise TabularError(f"{path}: no data rows")

    rows = np.empty((len(records), schema.p))
    for i, rec in enumerate(records):
        if len(rec) != schema.p:
            raise TabularError(f"{path}: line {i + 2} has {len(rec)} fields, expected {schema.p}")
        for j, (cell, col) in enumerate(zip(rec, schema.columns)):
            rows[i, j] = _parse_cell(cell.strip(), col, i + 2)
    ds = from_array(schema, rows, clamp=True)
    for name, k in ds.clamped.items():
        if k:
            logger.info("%s: clamped %d value(s) in column %s", path, k, name)
    return ds


def _parse_cell(cell: str, col: Column, line: int) -> float:
    kind = col.kind
    if isinstance(kind, Continuous):
        try:
            v = float(cell)
        except ValueError:
            raise TabularError(f"line {line}, column {col.name!r}: cannot parse {cell!r}") from None
        if not math.isfinite(v):
            raise TabularError(f"line {line}, column {col.name!r}: non-finite value {cell!r}")
        return v
    if isinstance(kind, Binary):
        try:
            v = float(cell)
        except ValueError:
            raise TabularError(f"line {line}, column {col.name!r}: {cell!r} label not in levels") from None
        if v not in (0.0, 1.0):
            raise TabularError(f"line {line}, column {col.name!r}: {cell!r} label not in levels")
        return v
    try:
        return float(kind.levels.index(cell))
    except ValueError:
        raise TabularError(f"line {line}, column {col.name!r}: {cell!r} label not in levels") from None


def _format_cell(v: float, kind: ColumnKind) -> str:
    if isinstance(kind, Continuous):
        return repr(float(v))
    if isinstance(kind, Binary):
        return str(int(v))
    return kind.levels[int(v)]


def save_csv(ds: Dataset, path) -> None:
    """Write ``ds`` with a header row.  Floats use their shortest exact repr."""
    kinds = [c.kind for c in ds.schema.columns]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ds.schema.names)
        for row in ds.rows:
            writer.writerow([_format_cell(v, k) for v, k in zip(row, kinds)])


def infer_schema(paths: Iterable, margin: float = 0.0) -> Schema:
    """Guess a schema from CSV files: 0/1 columns become binary, numeric
    columns continuous over the observed range, anything else categorical."""
    header: Sequence[str] | None = None
    values: list[list[str]] = []
    for path in paths:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            h = [x.strip() for x in next(reader)]
            if header is None:
                header = h
                values = [[] for _ in h]
            elif h != list(header):
                raise TabularError(f"{path}: header {h} differs from {list(header)}")
            for rec in reader:
                if rec:
                    for j, cell in enumerate(rec):
                        values[j].append(cell.strip())
    if header is None:
        raise TabularError("no input files")
    cols = []
    for name, vals in zip(header, values):
        try:
            nums = np.array([float(v) for v in vals])
        except ValueError:
            cols.append(Column(name, Categorical(tuple(sorted(set(vals))))))
            continue
        if nums.size and np.isin(nums, (0.0, 1.0)).all():
            cols.append(Column(name, Binary()))
        else:
            lo, hi = float(nums.min()), float(nums.max())
            if lo == hi:
                lo, hi = lo - 1.0, hi + 1.0
            pad = margin * (hi - lo)
            cols.append(Column(name, Continuous(lo - pad, hi + pad)))
    return Schema(tuple(cols))
