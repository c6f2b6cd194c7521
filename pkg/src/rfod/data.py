"""Mixed-type tabular data: loading, schema handling, splitting, quantiles.

Tables are column-oriented and immutable once built.  Numerical columns are
float64 arrays; categorical columns are int64 code arrays plus a per-column
string dictionary in first-occurrence order.  Missing cells are rejected at
load time — reconstruction semantics are undefined on missing predictors.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, LoadError, SchemaMismatchError


class FeatureKind(str, Enum):
    NUMERICAL = "numerical"
    CATEGORICAL = "categorical"


@dataclass(frozen=True)
class Schema:
    """Ordered feature declarations plus an optional label column name."""

    columns: tuple[tuple[str, FeatureKind], ...]
    label_column: str | None = None

    def __post_init__(self) -> None:
        names = [name for name, _ in self.columns]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise LoadError(f"duplicate column name(s): {', '.join(dupes)}")
        if len(self.columns) < 2:
            raise LoadError(
                "schema needs at least 2 feature columns; "
                "each feature must have at least one predictor"
            )

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.columns)

    @property
    def kinds(self) -> tuple[FeatureKind, ...]:
        return tuple(kind for _, kind in self.columns)

    @property
    def n_features(self) -> int:
        return len(self.columns)

    def to_json_obj(self) -> list[dict[str, str]]:
        return [{"name": name, "kind": kind.value} for name, kind in self.columns]

    @classmethod
    def from_json_obj(cls, obj: object, label_column: str | None = None) -> "Schema":
        if not isinstance(obj, list):
            raise LoadError("schema JSON must be a list of {name, kind} objects")
        cols = []
        for entry in obj:
            if not isinstance(entry, dict) or "name" not in entry or "kind" not in entry:
                raise LoadError("schema entries must be objects with 'name' and 'kind'")
            try:
                kind = FeatureKind(str(entry["kind"]).lower())
            except ValueError:
                raise LoadError(
                    f"unknown feature kind {entry['kind']!r} for column {entry['name']!r}"
                ) from None
            cols.append((str(entry["name"]), kind))
        return cls(columns=tuple(cols), label_column=label_column)


def read_schema_json(path: str | Path, label_column: str | None = None) -> Schema:
    """Load a schema sidecar: a JSON list of {name, kind} objects."""
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise LoadError(f"cannot read schema file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise LoadError(f"schema file {path} is not valid JSON: {exc}") from exc
    return Schema.from_json_obj(obj, label_column=label_column)


def write_schema_json(schema: Schema, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_json_obj(), fh, indent=2)
        fh.write("\n")


@dataclass(frozen=True, eq=False)
class Table:
    """Immutable column store for one dataset.

    `columns[j]` is float64 for numerical features and int64 dictionary codes
    for categorical ones; `dictionaries[j]` holds the code-to-string mapping
    (None for numerical columns).
    """

    schema: Schema
    columns: tuple[np.ndarray, ...]
    dictionaries: tuple[tuple[str, ...] | None, ...]
    n_rows: int

    def kind(self, j: int) -> FeatureKind:
        return self.schema.columns[j][1]

    def name(self, j: int) -> str:
        return self.schema.columns[j][0]

    @property
    def n_features(self) -> int:
        return self.schema.n_features

    def values(self, j: int) -> np.ndarray:
        return self.columns[j]

    def dictionary(self, j: int) -> tuple[str, ...]:
        d = self.dictionaries[j]
        if d is None:
            raise ValueError(f"column {self.name(j)!r} is numerical, has no dictionary")
        return d

    def cell_text(self, i: int, j: int) -> str:
        """The cell rendered back to its CSV text form."""
        if self.kind(j) is FeatureKind.NUMERICAL:
            return repr(float(self.columns[j][i]))
        return self.dictionaries[j][int(self.columns[j][i])]

    def subset(self, row_ids: np.ndarray) -> "Table":
        """Row subset sharing the schema and dictionaries (codes unchanged)."""
        cols = tuple(col[row_ids] for col in self.columns)
        return Table(self.schema, cols, self.dictionaries, int(len(row_ids)))

    def equals(self, other: "Table") -> bool:
        if self.schema != other.schema or self.n_rows != other.n_rows:
            return False
        if self.dictionaries != other.dictionaries:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.columns, other.columns))


def _parse_finite(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"non-finite value {text!r}")
    return value


def _read_csv_rows(path: str | Path) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise LoadError(f"{path}: file is empty") from None
            rows = [row for row in reader]
    except OSError as exc:
        raise LoadError(f"cannot read {path}: {exc}") from exc
    if len(set(header)) != len(header):
        dupes = sorted({h for h in header if header.count(h) > 1})
        raise LoadError(f"{path}: duplicate column name(s) in header: {', '.join(dupes)}")
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise LoadError(
                f"{path}: row {i + 1} has {len(row)} fields, header has {len(header)}"
            )
    return header, rows


def infer_schema(
    path: str | Path,
    categorical_max_cardinality: int = 16,
    force_integer_categoricals: bool = False,
) -> Schema:
    """Infer a schema from a CSV file.

    A column is numerical iff every cell parses as a finite real, otherwise
    categorical.  Integer-valued numeric columns with at most
    `categorical_max_cardinality` distinct values are reclassified as
    categorical only when `force_integer_categoricals` is set; plain
    inference never reclassifies them.
    """
    header, rows = _read_csv_rows(path)
    if len(header) < 2:
        raise LoadError(f"{path}: need at least 2 columns, found {len(header)}")
    cols = []
    for j, name in enumerate(header):
        cells = [row[j] for row in rows]
        parsed: list[float] = []
        numeric = True
        for cell in cells:
            try:
                parsed.append(_parse_finite(cell))
            except ValueError:
                numeric = False
                break
        kind = FeatureKind.NUMERICAL if numeric else FeatureKind.CATEGORICAL
        if (
            numeric
            and force_integer_categoricals
            and parsed
            and all(v.is_integer() for v in parsed)
            and len(set(parsed)) <= categorical_max_cardinality
        ):
            kind = FeatureKind.CATEGORICAL
        cols.append((name, kind))
    return Schema(columns=tuple(cols))


def _build_columns(
    header: list[str], rows: list[list[str]], schema: Schema, path: str | Path
) -> Table:
    n = len(rows)
    columns: list[np.ndarray] = []
    dictionaries: list[tuple[str, ...] | None] = []
    for j, (name, kind) in enumerate(schema.columns):
        cells = [row[j] for row in rows]
        for i, cell in enumerate(cells):
            if cell == "":
                raise LoadError(f"{path}: missing value at row {i + 1}, column {name}")
        if kind is FeatureKind.NUMERICAL:
            out = np.empty(n, dtype=np.float64)
            for i, cell in enumerate(cells):
                try:
                    out[i] = _parse_finite(cell)
                except ValueError:
                    raise LoadError(
                        f"{path}: cannot parse {cell!r} as a number "
                        f"at row {i + 1}, column {name}"
                    ) from None
            columns.append(out)
            dictionaries.append(None)
        else:
            code_of: dict[str, int] = {}
            codes = np.empty(n, dtype=np.int64)
            for i, cell in enumerate(cells):
                code = code_of.setdefault(cell, len(code_of))
                codes[i] = code
            columns.append(codes)
            dictionaries.append(tuple(code_of))
    return Table(schema, tuple(columns), tuple(dictionaries), n)


def load_table(path: str | Path, schema: Schema | None = None) -> Table:
    """Load a CSV file (header row required) into a Table.

    With an explicit schema the header must match its column names in order;
    without one the schema is inferred.
    """
    header, rows = _read_csv_rows(path)
    if schema is None:
        schema = _infer_from_rows(header, rows, path)
    elif list(schema.names) != header:
        raise LoadError(
            f"{path}: header {header} does not match schema columns {list(schema.names)}"
        )
    return _build_columns(header, rows, schema, path)


def load_table_strict(path: str | Path, schema: Schema) -> Table:
    """Load a CSV that must match a known schema.

    A header that differs from the schema raises SchemaMismatchError (the
    data belongs to a different layout); cell-level problems still raise
    LoadError.
    """
    header, rows = _read_csv_rows(path)
    if header != list(schema.names):
        raise SchemaMismatchError(
            f"{path}: columns {header} do not match the expected schema "
            f"columns {list(schema.names)}"
        )
    return _build_columns(header, rows, schema, path)


def load_labeled_table(
    path: str | Path, label_column: str, schema: Schema | None = None
) -> tuple[Table, np.ndarray]:
    """Load a CSV with a binary label column; returns (features, labels).

    Labels accept 0/1 or the words normal/anomaly (case-insensitive).
    The schema, given or inferred, covers the feature columns only.
    """
    header, rows = _read_csv_rows(path)
    if label_column not in header:
        raise LoadError(f"{path}: label column {label_column!r} not in header")
    label_j = header.index(label_column)
    labels = np.empty(len(rows), dtype=np.int64)
    for i, row in enumerate(rows):
        labels[i] = _parse_label(row[label_j], path, i + 1)
    feature_header = [h for h in header if h != label_column]
    feature_rows = [[c for j, c in enumerate(row) if j != label_j] for row in rows]
    if schema is None:
        schema = _infer_from_rows(feature_header, feature_rows, path)
    elif list(schema.names) != feature_header:
        raise LoadError(
            f"{path}: feature columns {feature_header} do not match "
            f"schema columns {list(schema.names)}"
        )
    schema = Schema(schema.columns, label_column=label_column)
    return _build_columns(feature_header, feature_rows, schema, path), labels


def _parse_label(cell: str, path: str | Path, row: int) -> int:
    token = cell.strip().lower()
    if token in ("0", "normal"):
        return 0
    if token in ("1", "anomaly"):
        return 1
    raise LoadError(
        f"{path}: label {cell!r} at row {row} is not one of 0/1/normal/anomaly"
    )


def _infer_from_rows(header: list[str], rows: list[list[str]], path: str | Path) -> Schema:
    if len(header) < 2:
        raise LoadError(f"{path}: need at least 2 feature columns, found {len(header)}")
    cols = []
    for j, name in enumerate(header):
        numeric = True
        for row in rows:
            try:
                _parse_finite(row[j])
            except ValueError:
                numeric = False
                break
        cols.append((name, FeatureKind.NUMERICAL if numeric else FeatureKind.CATEGORICAL))
    return Schema(columns=tuple(cols))


def write_table(table: Table, path: str | Path, labels: np.ndarray | None = None) -> None:
    """Write a Table back to CSV; numeric cells use repr for exact round-trips."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = list(table.schema.names)
        if labels is not None:
            header.append(table.schema.label_column or "label")
        writer.writerow(header)
        for i in range(table.n_rows):
            row = [table.cell_text(i, j) for j in range(table.n_features)]
            if labels is not None:
                row.append(str(int(labels[i])))
            writer.writerow(row)


@dataclass(frozen=True)
class SplitResult:
    train: Table
    test: Table
    test_labels: np.ndarray
    train_row_ids: np.ndarray
    test_row_ids: np.ndarray


def split_for_eval(
    table: Table, labels: Sequence[int] | np.ndarray, train_fraction: float, seed: int
) -> SplitResult:
    """Seeded train/test split for the evaluation protocol.

    Training rows are a uniform sample of floor(train_fraction × #normals)
    normal rows, drawn without replacement; the test set is every remaining
    normal row plus all anomalies, in original row order.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (table.n_rows,):
        raise ValueError(
            f"labels length {labels.shape} does not match n_rows {table.n_rows}"
        )
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must be in (0, 1), got {train_fraction}")
    normal_ids = np.flatnonzero(labels == 0)
    if normal_ids.size == 0:
        raise ValueError("cannot split: no normal rows")
    k = int(math.floor(train_fraction * normal_ids.size))
    if k == 0:
        raise ValueError(
            f"train_fraction {train_fraction} yields an empty training set "
            f"({normal_ids.size} normal rows)"
        )
    rng = np.random.default_rng(seed)
    train_ids = np.sort(rng.choice(normal_ids, size=k, replace=False))
    test_ids = np.setdiff1d(np.arange(table.n_rows), train_ids)
    if test_ids.size == 0:
        raise ValueError("split yields an empty test set")
    return SplitResult(
        train=table.subset(train_ids),
        test=table.subset(test_ids),
        test_labels=labels[test_ids],
        train_row_ids=train_ids,
        test_row_ids=test_ids,
    )


def write_split(
    split: SplitResult, out_dir: str | Path, seed: int, train_fraction: float
) -> None:
    """Persist a split as train.csv + test.csv + a JSON manifest of row ids."""
    out = Path(out_dir)
    write_table(split.train, out / "train.csv")
    write_table(split.test, out / "test.csv", labels=split.test_labels)
    manifest = {
        "seed": seed,
        "train_fraction": train_fraction,
        "train_row_ids": [int(i) for i in split.train_row_ids],
        "test_row_ids": [int(i) for i in split.test_row_ids],
    }
    with open(out / "split.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


class QuantileProfile:
    """Per-feature quantile functions over the training columns.

    Holds a sorted copy of each numerical training column; quantiles use
    linear interpolation between order statistics (the common default in
    statistical software), so Q is continuous and monotone in q.
    """

    def __init__(self, sorted_values: dict[int, np.ndarray]):
        self._sorted = sorted_values

    @classmethod
    def from_table(cls, table: Table) -> "QuantileProfile":
        values = {}
        for j in range(table.n_features):
            if table.kind(j) is FeatureKind.NUMERICAL:
                if table.n_rows == 0:
                    raise ValueError("cannot build quantile profile from an empty table")
                values[j] = np.sort(table.values(j))
        return cls(values)

    @property
    def numerical_features(self) -> tuple[int, ...]:
        return tuple(sorted(self._sorted))

    def quantile(self, feature: int, q: float) -> float:
        if feature not in self._sorted:
            raise ValueError(f"feature {feature} is not numerical")
        if not 0.0 <= q <= 1.0:
            raise ValueError(f"q must be in [0, 1], got {q}")
        s = self._sorted[feature]
        h = (s.size - 1) * q
        lo = int(math.floor(h))
        if lo + 1 >= s.size:
            return float(s[-1])
        return float(s[lo] + (h - lo) * (s[lo + 1] - s[lo]))

    def to_json_obj(self) -> dict[str, list[float]]:
        return {str(j): [float(v) for v in vals] for j, vals in self._sorted.items()}

    @classmethod
    def from_json_obj(cls, obj: dict[str, list[float]]) -> "QuantileProfile":
        return cls({int(j): np.asarray(vals, dtype=np.float64) for j, vals in obj.items()})


def quantile(profile: QuantileProfile, feature: int, q: float) -> float:
    """Linear-interpolation quantile of a training column; Q(0)=min, Q(1)=max."""
    return profile.quantile(feature, q)
