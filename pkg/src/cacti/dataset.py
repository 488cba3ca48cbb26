"""Tabular data loading, schema encoding, min-max scaling, and splits.

A `Table` is an N x K float64 matrix plus an observed mask (1 = value
present). Missing cells hold NaN and are never read as data. Categorical
columns are ordinal-encoded in first-appearance order; the schema keeps the
label list so codes can be decoded on output.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ParseError, SchemaError, ShapeError
from .rng import stream

KINDS = ("continuous", "integer", "categorical", "binary")
MISSING_TOKENS = ("", "NA")


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: str = "continuous"
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.name:
            raise SchemaError("column name must be nonempty")
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical":
            # single-label columns are legal: they arise when only one
            # distinct label is observed in the data
            if len(self.categories) < 1:
                raise SchemaError(
                    f"column {self.name!r}: categorical needs its label list")
            if len(set(self.categories)) != len(self.categories):
                raise SchemaError(f"column {self.name!r}: duplicate category labels")
        elif self.categories:
            raise SchemaError(
                f"column {self.name!r}: only categorical columns carry categories")


@dataclass
class Table:
    schema: list[ColumnSchema]
    values: np.ndarray   # (N, K) float64, NaN at observed == 0
    observed: np.ndarray  # (N, K) uint8

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.observed = np.asarray(self.observed, dtype=np.uint8)
        n, k = self.values.shape
        if n < 1 or k < 1:
            raise ShapeError(f"table must be at least 1x1, got {n}x{k}")
        if self.observed.shape != (n, k):
            raise ShapeError(
                f"observed mask shape {self.observed.shape} != values shape {(n, k)}")
        if len(self.schema) != k:
            raise SchemaError(f"schema has {len(self.schema)} columns, values have {k}")
        names = [c.name for c in self.schema]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names in schema")
        hidden = self.observed == 0
        if not np.all(np.isnan(self.values[hidden])):
            raise ShapeError("unobserved cells must hold NaN")
        if np.any(np.isnan(self.values[~hidden])):
            raise ShapeError("observed cells must be finite numbers, found NaN")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    @property
    def column_names(self) -> list[str]:
        return [c.name for c in self.schema]

    def copy(self) -> "Table":
        return Table(list(self.schema), self.values.copy(), self.observed.copy())

    def take_rows(self, index: np.ndarray) -> "Table":
        return Table(list(self.schema), self.values[index], self.observed[index])


def schema_digest(schema: list[ColumnSchema]) -> str:
    """Stable hex digest of a schema, used to pin checkpoints to data."""
    payload = [[c.name, c.kind, list(c.categories)] for c in schema]
    blob = json.dumps(payload, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _parse_number(token: str) -> float | None:
    try:
        return float(token)
    except ValueError:
        return None


def load_schema_hint(path) -> dict[str, str]:
    """Read a {column_name: kind} JSON map."""
    with open(path, "r", encoding="utf-8") as fh:
        hint = json.load(fh)
    if not isinstance(hint, dict):
        raise ParseError(f"schema hint {path} must be a JSON object")
    for name, kind in hint.items():
        if kind not in KINDS:
            raise SchemaError(f"schema hint for {name!r}: unknown kind {kind!r}")
    return hint


def load_csv(path, schema_hint: dict[str, str] | None = None) -> Table:
    """Parse a UTF-8 CSV with a mandatory header into a Table.

    Empty cells and the literal "NA" are missing. A column whose non-missing
    tokens all parse as numbers is continuous (unless hinted otherwise); a
    column with no numeric tokens is categorical; a mix without a categorical
    hint is a schema error.
    """
    schema_hint = schema_hint or {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file, header row required") from None
        rows = list(reader)

    if len(set(header)) != len(header):
        raise ParseError(f"{path}: duplicate column names in header")
    if not rows:
        raise ParseError(f"{path}: no data rows")
    n, k = len(rows), len(header)
    for i, row in enumerate(rows):
        if len(row) != k:
            raise ParseError(
                f"{path}: row {i + 1} has {len(row)} cells, expected {k}")
    for name in schema_hint:
        if name not in header:
            raise SchemaError(f"schema hint names unknown column {name!r}")

    values = np.full((n, k), np.nan)
    observed = np.zeros((n, k), dtype=np.uint8)
    schema: list[ColumnSchema] = []
    for j, name in enumerate(header):
        tokens = [row[j].strip() for row in rows]
        present = [(i, t) for i, t in enumerate(tokens) if t not in MISSING_TOKENS]
        numeric = [(i, _parse_number(t)) for i, t in present]
        n_num = sum(1 for _, v in numeric if v is not None)
        hinted = schema_hint.get(name)
        if hinted == "categorical" or (n_num == 0 and present and hinted is None):
            codes: dict[str, int] = {}
            for i, t in present:
                code = codes.setdefault(t, len(codes))
                values[i, j] = float(code)
                observed[i, j] = 1
            if not codes:
                raise SchemaError(f"column {name!r}: no observed label to encode")
            schema.append(ColumnSchema(name, "categorical", tuple(codes)))
        else:
            if n_num != len(present):
                bad = next(t for (_, t), (_, v) in zip(present, numeric) if v is None)
                raise SchemaError(
                    f"column {name!r} mixes numeric and non-numeric tokens "
                    f"(e.g. {bad!r}); hint it as categorical to encode labels")
            for (i, _), (_, v) in zip(present, numeric):
                values[i, j] = v
                observed[i, j] = 1
            schema.append(ColumnSchema(name, hinted or "continuous"))
    return Table(schema, values, observed)


def load_csv_with_schema(path, schema: list[ColumnSchema]) -> Table:
    """Parse a CSV against an existing schema: categorical tokens map
    through the schema's label list (numeric tokens are accepted as codes),
    so two files share one coding."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        rows = list(reader)
    if header != [c.name for c in schema]:
        raise SchemaError(f"{path}: header does not match the expected schema")
    if not rows:
        raise ParseError(f"{path}: no data rows")
    n, k = len(rows), len(schema)
    values = np.full((n, k), np.nan)
    observed = np.zeros((n, k), dtype=np.uint8)
    for i, row in enumerate(rows):
        if len(row) != k:
            raise ParseError(f"{path}: row {i + 1} has {len(row)} cells, expected {k}")
        for j, column in enumerate(schema):
            token = row[j].strip()
            if token in MISSING_TOKENS:
                continue
            number = _parse_number(token)
            if column.kind == "categorical" and number is None:
                try:
                    number = float(column.categories.index(token))
                except ValueError:
                    raise SchemaError(
                        f"{path}: column {column.name!r} has unknown label "
                        f"{token!r}") from None
            if number is None:
                raise SchemaError(
                    f"{path}: column {column.name!r} has non-numeric token "
                    f"{token!r}")
            values[i, j] = number
            observed[i, j] = 1
    return Table(list(schema), values, observed)


def format_cell(value: float, column: ColumnSchema, decode_categories: bool = False) -> str:
    if np.isnan(value):
        return ""
    if decode_categories and column.kind == "categorical":
        code = int(round(value))
        if 0 <= code < len(column.categories):
            return column.categories[code]
    return repr(float(value))


def save_csv(table: Table, path, decode_categories: bool = False) -> None:
    """Write a Table back to CSV; missing cells become empty fields."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(table.column_names)
        for i in range(table.n_rows):
            writer.writerow(
                format_cell(table.values[i, j], table.schema[j], decode_categories)
                for j in range(table.n_cols))


def split_train_test(table: Table, test_fraction: float, seed: int) -> tuple[Table, Table]:
    """Disjoint, exhaustive row split; the test split takes the first
    round(test_fraction * N) positions of a seeded shuffle."""
    n = table.n_rows
    if n < 2:
        raise ValueError("need at least 2 rows to split")
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0,1), got {test_fraction}")
    n_test = int(round(test_fraction * n))
    if n_test == 0 or n_test == n:
        raise ValueError(
            f"test_fraction {test_fraction} leaves an empty split for N={n}")
    perm = stream(seed, "split").permutation(n)
    return table.take_rows(perm[n_test:]), table.take_rows(perm[:n_test])


@dataclass
class ScalerState:
    """Per-column min/max fitted on observed training cells."""
    mins: np.ndarray
    maxs: np.ndarray
    column_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.mins = np.asarray(self.mins, dtype=np.float64)
        self.maxs = np.asarray(self.maxs, dtype=np.float64)
        if self.mins.shape != self.maxs.shape or self.mins.ndim != 1:
            raise ShapeError("scaler mins/maxs must be matching 1-D arrays")
        if np.any(self.mins > self.maxs):
            raise ValueError("scaler has min > max")

    @property
    def spans(self) -> np.ndarray:
        return self.maxs - self.mins

    def to_dict(self) -> dict:
        return {"mins": self.mins.tolist(), "maxs": self.maxs.tolist(),
                "column_names": list(self.column_names)}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerState":
        return cls(np.array(d["mins"]), np.array(d["maxs"]),
                   list(d.get("column_names", [])))


class UnscalableColumnError(ValueError):
    """A column has no observed cell to fit the scaler on."""


def fit_scaler(table: Table) -> ScalerState:
    counts = table.observed.sum(axis=0)
    if np.any(counts == 0):
        bad = [table.schema[j].name for j in np.flatnonzero(counts == 0)]
        raise UnscalableColumnError(
            f"cannot fit scaler, fully-missing column(s): {', '.join(bad)}")
    mins = np.nanmin(table.values, axis=0)
    maxs = np.nanmax(table.values, axis=0)
    return ScalerState(mins, maxs, table.column_names)


def _check_scaler(scaler: ScalerState, n_cols: int) -> None:
    if scaler.mins.shape[0] != n_cols:
        raise ShapeError(
            f"scaler covers {scaler.mins.shape[0]} columns, data has {n_cols}")


def scale_values(values: np.ndarray, scaler: ScalerState) -> np.ndarray:
    """(x - min) / (max - min) per column; constant columns map to 0.5.
    NaN passes through."""
    _check_scaler(scaler, values.shape[-1])
    span = scaler.spans
    safe = np.where(span == 0, 1.0, span)
    out = (values - scaler.mins) / safe
    const = span == 0
    if np.any(const):
        out = np.where(const & ~np.isnan(values), 0.5, out)
    return out


def unscale_values(values: np.ndarray, scaler: ScalerState) -> np.ndarray:
    """Inverse of `scale_values`; linear extrapolation outside [0, 1] is
    intentional, constant columns invert to their single value."""
    _check_scaler(scaler, values.shape[-1])
    out = values * scaler.spans + scaler.mins
    const = scaler.spans == 0
    if np.any(const):
        out = np.where(const & ~np.isnan(values), scaler.mins, out)
    return out


def apply_scaler(table: Table, scaler: ScalerState) -> Table:
    return replace(table.copy(), values=scale_values(table.values, scaler))
