"""Tabular data model, file ingestion, and synthetic planted-partition generation.

Tables are columnar and immutable: a tuple of :class:`ColumnSchema` entries plus
one read-only numpy array per column. Categorical gaps are represented by the
reserved level ``UNK``. Tables optionally carry a month tag (``"YYYY-MM"``),
since every downstream analysis is month-scoped.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

UNK = "UNK"
NOISE = -1
COLUMN_KINDS = ("numeric", "categorical", "ordinal")

_PERIOD_RE = re.compile(r"^\d{4}-(0[1-9]|1[0-2])$")


@dataclass(frozen=True)
class ColumnSchema:
    """Schema entry for one table column.

    ``levels`` is required for ordinal columns and gives the explicit level
    order; it is ignored for the other kinds.
    """

    name: str
    kind: str
    units: str | None = None
    levels: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in COLUMN_KINDS:
            raise ValueError(f"unknown column kind {self.kind!r} for {self.name!r}")
        if self.kind == "ordinal":
            if not self.levels:
                raise ValueError(f"ordinal column {self.name!r} needs an ordered level list")
            object.__setattr__(self, "levels", tuple(self.levels))
        elif self.levels is not None:
            object.__setattr__(self, "levels", tuple(self.levels))

    @property
    def is_categorical(self) -> bool:
        return self.kind in ("categorical", "ordinal")


class Partition:
    """Cluster assignment of n points; label ``-1`` marks noise.

    Non-noise labels are required to be exactly ``{0, ..., k-1}`` where k is
    the number of distinct non-noise labels. Use :meth:`from_labels` to compact
    arbitrary integer labelings into this form.
    """

    __slots__ = ("labels",)

    def __init__(self, labels: Sequence[int] | np.ndarray):
        arr = np.asarray(labels, dtype=np.int64)
        if arr.ndim != 1:
            raise ValueError("labels must be one-dimensional")
        if arr.size == 0:
            raise ValueError("empty partition")
        if np.any(arr < NOISE):
            raise ValueError("labels below -1 are not allowed")
        distinct = np.unique(arr[arr != NOISE])
        if distinct.size and not np.array_equal(distinct, np.arange(distinct.size)):
            raise ValueError(
                "non-noise labels must be exactly 0..k-1; use Partition.from_labels to compact"
            )
        arr.setflags(write=False)
        self.labels = arr

    @classmethod
    def from_labels(cls, raw: Sequence[int] | np.ndarray) -> "Partition":
        """Compact an arbitrary integer labeling; anything < 0 becomes noise."""
        arr = np.asarray(raw, dtype=np.int64).copy()
        arr[arr < 0] = NOISE
        mask = arr != NOISE
        if mask.any():
            _, compact = np.unique(arr[mask], return_inverse=True)
            arr[mask] = compact
        return cls(arr)

    @property
    def n(self) -> int:
        return int(self.labels.size)

    @property
    def k(self) -> int:
        return int(np.unique(self.labels[self.labels != NOISE]).size)

    @property
    def noise_count(self) -> int:
        return int(np.count_nonzero(self.labels == NOISE))

    def cluster_sizes(self) -> np.ndarray:
        """Sizes of clusters 0..k-1 (noise excluded)."""
        return np.bincount(self.labels[self.labels != NOISE], minlength=self.k)

    def relabel(self, permutation: Sequence[int]) -> "Partition":
        """Apply a permutation of the ids 0..k-1; noise is untouched."""
        perm = np.asarray(permutation, dtype=np.int64)
        if not np.array_equal(np.sort(perm), np.arange(self.k)):
            raise ValueError("permutation must rearrange 0..k-1")
        out = self.labels.copy()
        mask = out != NOISE
        out[mask] = perm[out[mask]]
        return Partition(out)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Partition):
            return NotImplemented
        return np.array_equal(self.labels, other.labels)

    def __hash__(self):  # pragma: no cover - partitions are not dict keys
        return hash(self.labels.tobytes())

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        return f"Partition(n={self.n}, k={self.k}, noise={self.noise_count})"


class DataTable:
    """Immutable columnar table with a schema and an optional month tag."""

    def __init__(
        self,
        schema: Sequence[ColumnSchema],
        columns: Mapping[str, Sequence] | Sequence[Sequence],
        period: str | None = None,
    ):
        schema = tuple(schema)
        if not schema:
            raise ValueError("schema must not be empty")
        if period is not None and not _PERIOD_RE.match(period):
            raise ValueError(f"period must look like YYYY-MM, got {period!r}")
        if isinstance(columns, Mapping):
            raw = [columns[col.name] for col in schema]
        else:
            raw = list(columns)
            if len(raw) != len(schema):
                raise ValueError("column sequence length does not match schema")
        values: list[np.ndarray] = []
        n = None
        for col, data in zip(schema, raw):
            if col.kind == "numeric":
                arr = np.asarray(data, dtype=np.float64)
            else:
                arr = np.array([str(v) for v in data], dtype=object)
            if arr.ndim != 1:
                raise ValueError(f"column {col.name!r} must be one-dimensional")
            if n is None:
                n = arr.size
            elif arr.size != n:
                raise ValueError(f"column {col.name!r} has {arr.size} rows, expected {n}")
            arr.setflags(write=False)
            values.append(arr)
        self.schema = schema
        self.period = period
        self._values = tuple(values)
        self._index = {}
        for pos, col in enumerate(schema):
            self._index.setdefault(col.name, pos)

    @property
    def n_rows(self) -> int:
        return int(self._values[0].size)

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(col.name for col in self.schema)

    def column(self, name: str) -> np.ndarray:
        try:
            return self._values[self._index[name]]
        except KeyError:
            raise KeyError(f"no column named {name!r}") from None

    def column_at(self, position: int) -> np.ndarray:
        return self._values[position]

    def schema_for(self, name: str) -> ColumnSchema:
        return self.schema[self._index[name]]

    def numeric_names(self) -> list[str]:
        return [c.name for c in self.schema if c.kind == "numeric"]

    def categorical_names(self) -> list[str]:
        return [c.name for c in self.schema if c.is_categorical]

    def take(self, indices: Sequence[int] | np.ndarray) -> "DataTable":
        """Row subset/reordering; keeps schema and period."""
        idx = np.asarray(indices, dtype=np.int64)
        return DataTable(self.schema, [v[idx] for v in self._values], period=self.period)

    def with_period(self, period: str | None) -> "DataTable":
        return DataTable(self.schema, list(self._values), period=period)

    def rows(self) -> Iterator[dict]:
        for i in range(self.n_rows):
            yield {col.name: self._values[pos][i] for pos, col in enumerate(self.schema)}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DataTable):
            return NotImplemented
        if self.schema != other.schema or self.period != other.period:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self._values, other._values))

    def __repr__(self) -> str:
        return f"DataTable(n={self.n_rows}, columns={len(self.schema)}, period={self.period!r})"


def validate_schema(table: DataTable) -> list[str]:
    """Report invariant violations; an empty list means the table is valid."""
    report: list[str] = []
    seen: set[str] = set()
    for col in table.schema:
        if col.name in seen:
            report.append(f"duplicate column name {col.name!r}")
        seen.add(col.name)
    for pos, col in enumerate(table.schema):
        values = table.column_at(pos)
        if col.kind == "numeric":
            bad = np.flatnonzero(~np.isfinite(values))
            for row in bad:
                report.append(f"column {col.name!r}: non-finite value at row {int(row)}")
        elif col.kind == "ordinal":
            allowed = set(col.levels) | {UNK}
            for row, value in enumerate(values):
                if value not in allowed:
                    report.append(f"column {col.name!r}: unknown ordinal level {value!r} at row {row}")
    return report


# ---------------------------------------------------------------------------
# File ingestion (CSV, JSON-lines)

def _parse_cell(cell, col: ColumnSchema, row_index: int):
    if col.kind == "numeric":
        try:
            return float(cell)
        except (TypeError, ValueError):
            raise ValueError(
                f"row {row_index}, column {col.name!r}: could not parse {cell!r} as a number"
            ) from None
    if cell is None or cell == "":
        return UNK
    return str(cell)


def load_table(path: str | Path, schema: Sequence[ColumnSchema], period: str | None = None) -> DataTable:
    """Load a CSV or JSON-lines file against an explicit schema.

    The schema is always supplied, never inferred. CSV headers must equal the
    schema names in order. Empty categorical cells map to ``UNK``.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    schema = tuple(schema)
    if path.suffix.lower() in (".jsonl", ".ndjson"):
        return _load_jsonl(path, schema, period)
    return _load_csv(path, schema, period)


def _load_csv(path: Path, schema: tuple[ColumnSchema, ...], period: str | None) -> DataTable:
    names = [c.name for c in schema]
    columns: list[list] = [[] for _ in schema]
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(row for row in reader if not _is_comment(row))
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if header != names:
            raise ValueError(f"{path}: header {header!r} does not match schema names {names!r}")
        row_index = 0
        for row in reader:
            if _is_comment(row):
                continue
            if len(row) != len(schema):
                raise ValueError(f"{path}: row {row_index} has {len(row)} cells, expected {len(schema)}")
            for pos, (cell, col) in enumerate(zip(row, schema)):
                columns[pos].append(_parse_cell(cell, col, row_index))
            row_index += 1
    if row_index == 0:
        raise ValueError(f"{path}: no data rows")
    return DataTable(schema, columns, period=period)


def _is_comment(row: list[str]) -> bool:
    return bool(row) and row[0].startswith("#")


def _load_jsonl(path: Path, schema: tuple[ColumnSchema, ...], period: str | None) -> DataTable:
    columns: list[list] = [[] for _ in schema]
    row_index = 0
    with path.open(encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise ValueError(f"{path}: row {row_index}: invalid JSON ({err})") from None
            for pos, col in enumerate(schema):
                cell = record.get(col.name)
                if cell is None and col.kind == "numeric":
                    raise ValueError(f"row {row_index}, column {col.name!r}: missing numeric value")
                columns[pos].append(_parse_cell(cell, col, row_index))
            row_index += 1
    if row_index == 0:
        raise ValueError(f"{path}: no data rows")
    return DataTable(schema, columns, period=period)


def _format_cell(value, col: ColumnSchema) -> str:
    if col.kind == "numeric":
        return repr(float(value))
    return str(value)


def write_table(table: DataTable, path: str | Path, header_comments: Iterable[str] = ()) -> None:
    """Write a table to CSV or JSON-lines, chosen by file extension."""
    path = Path(path)
    if path.suffix.lower() in (".jsonl", ".ndjson"):
        with path.open("w", encoding="utf-8") as handle:
            for comment in header_comments:
                handle.write(f"# {comment}\n")
            for row in table.rows():
                record = {
                    col.name: (float(row[col.name]) if col.kind == "numeric" else str(row[col.name]))
                    for col in table.schema
                }
                handle.write(json.dumps(record) + "\n")
        return
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        for comment in header_comments:
            handle.write(f"# {comment}\n")
        writer.writerow(table.column_names)
        for i in range(table.n_rows):
            writer.writerow(
                [_format_cell(table.column_at(pos)[i], col) for pos, col in enumerate(table.schema)]
            )


def write_partition(partition: Partition, path: str | Path, header_comments: Iterable[str] = ()) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        for comment in header_comments:
            handle.write(f"# {comment}\n")
        writer = csv.writer(handle)
        writer.writerow(["row", "label"])
        for i, label in enumerate(partition.labels):
            writer.writerow([i, int(label)])


def load_partition(path: str | Path) -> Partition:
    path = Path(path)
    labels: list[int] = []
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        for row in reader:
            if _is_comment(row) or row == ["row", "label"]:
                continue
            labels.append(int(row[1]))
    return Partition(np.asarray(labels))


# ---------------------------------------------------------------------------
# Synthetic planted-partition generator

@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a planted-partition table used as the test oracle.

    ``separation`` is the centroid spacing in within-cluster standard
    deviations (within-cluster sd is 1 per numeric dimension). Each planted
    cluster biases one level of every categorical column with probability
    ``categorical_bias``; noise rows draw uniformly.
    """

    n: int
    k_true: int
    numeric_dims: int = 2
    categorical_dims: tuple[int, ...] = ()
    separation: float = 8.0
    noise_fraction: float = 0.0
    seed: int = 0
    categorical_bias: float = 0.75

    def __post_init__(self) -> None:
        if not (self.n >= self.k_true >= 1):
            raise ValueError("need n >= k_true >= 1")
        if self.separation <= 0:
            raise ValueError("separation must be > 0")
        if not (0.0 <= self.noise_fraction <= 1.0):
            raise ValueError("noise_fraction must lie in [0, 1]")
        if self.numeric_dims < 1:
            raise ValueError("numeric_dims must be >= 1")
        object.__setattr__(self, "categorical_dims", tuple(int(v) for v in self.categorical_dims))
        if any(v < 2 for v in self.categorical_dims):
            raise ValueError("categorical columns need at least 2 levels")
        if not (0.0 < self.categorical_bias <= 1.0):
            raise ValueError("categorical_bias must lie in (0, 1]")


def _lattice_centroids(k: int, dims: int, separation: float) -> np.ndarray:
    # Axis-aligned lattice: pairwise centroid distance is >= separation exactly.
    centroids = np.zeros((k, dims))
    for j in range(k):
        centroids[j, j % dims] = separation * (1 + j // dims)
    return centroids


def generate_synthetic(spec: SyntheticSpec, period: str | None = None) -> tuple[DataTable, Partition]:
    """Gaussian blobs at planted centroids plus cluster-biased categoricals."""
    rng = np.random.default_rng(spec.seed)
    n_noise = int(round(spec.noise_fraction * spec.n))
    n_signal = spec.n - n_noise
    sizes = np.full(spec.k_true, n_signal // spec.k_true, dtype=np.int64)
    sizes[: n_signal % spec.k_true] += 1
    labels = np.concatenate(
        [np.repeat(np.arange(spec.k_true), sizes), np.full(n_noise, NOISE, dtype=np.int64)]
    )
    centroids = _lattice_centroids(spec.k_true, spec.numeric_dims, spec.separation)
    points = rng.normal(size=(spec.n, spec.numeric_dims))
    for c in range(spec.k_true):
        points[labels == c] += centroids[c]
    if n_noise:
        lo = centroids.min(axis=0) - 3.0
        hi = centroids.max(axis=0) + 3.0
        points[labels == NOISE] = rng.uniform(lo, hi, size=(n_noise, spec.numeric_dims))

    columns: dict[str, np.ndarray] = {}
    schema: list[ColumnSchema] = []
    for d in range(spec.numeric_dims):
        schema.append(ColumnSchema(f"x{d}", "numeric"))
        columns[f"x{d}"] = points[:, d]
    for j, n_levels in enumerate(spec.categorical_dims):
        level_names = [f"lv{t}" for t in range(n_levels)]
        uniform_pick = rng.integers(0, n_levels, spec.n)
        follow_bias = rng.random(spec.n) < spec.categorical_bias
        preferred = np.where(labels >= 0, labels % n_levels, 0)
        pick = np.where((labels >= 0) & follow_bias, preferred, uniform_pick)
        schema.append(ColumnSchema(f"c{j}", "categorical"))
        columns[f"c{j}"] = np.array([level_names[t] for t in pick], dtype=object)

    order = rng.permutation(spec.n)
    table = DataTable(schema, columns, period=period).take(order)
    return table, Partition(labels[order])


def generate_synthetic_months(
    spec: SyntheticSpec,
    months: Sequence[str],
    stable_clusters: int = 0,
    subject_pool: int | None = None,
) -> list[tuple[DataTable, Partition]]:
    """One table per month with controllable cluster-signature stability.

    The first ``stable_clusters`` planted clusters keep their centroid and
    categorical bias across months; the rest are re-randomized each month.
    A ``subject`` id column (drawn from a shared pool) and a ``category``
    column are appended so drift analyses have something to chew on.
    """
    if stable_clusters > spec.k_true:
        raise ValueError("stable_clusters cannot exceed k_true")
    base_rng = np.random.default_rng(spec.seed)
    pool = subject_pool if subject_pool is not None else max(2, spec.n // 3)
    # Month-independent geometry for the stable block.
    stable_centroids = _lattice_centroids(spec.k_true, spec.numeric_dims, spec.separation)
    stable_level_shift = int(base_rng.integers(0, 1_000_000))
    out: list[tuple[DataTable, Partition]] = []
    for m_index, period in enumerate(months):
        month_rng = np.random.default_rng(base_rng.integers(0, 2**63 - 1))
        table, truth = _generate_month(
            spec, period, month_rng, stable_clusters, stable_centroids, stable_level_shift, pool
        )
        out.append((table, truth))
    return out


def _generate_month(
    spec: SyntheticSpec,
    period: str,
    rng: np.random.Generator,
    stable_clusters: int,
    stable_centroids: np.ndarray,
    stable_level_shift: int,
    pool: int,
) -> tuple[DataTable, Partition]:
    n_noise = int(round(spec.noise_fraction * spec.n))
    n_signal = spec.n - n_noise
    sizes = np.full(spec.k_true, n_signal // spec.k_true, dtype=np.int64)
    sizes[: n_signal % spec.k_true] += 1
    labels = np.concatenate(
        [np.repeat(np.arange(spec.k_true), sizes), np.full(n_noise, NOISE, dtype=np.int64)]
    )
    # Unstable clusters get fresh centroids well away from the stable lattice.
    centroids = stable_centroids.copy()
    span = spec.separation * (1 + (spec.k_true - 1) // spec.numeric_dims)
    for c in range(stable_clusters, spec.k_true):
        centroids[c] = rng.uniform(-2.0 * span, 2.0 * span, size=spec.numeric_dims)
    points = rng.normal(size=(spec.n, spec.numeric_dims))
    for c in range(spec.k_true):
        points[labels == c] += centroids[c]
    if n_noise:
        lo = centroids.min(axis=0) - 3.0
        hi = centroids.max(axis=0) + 3.0
        points[labels == NOISE] = rng.uniform(lo, hi, size=(n_noise, spec.numeric_dims))

    columns: dict[str, np.ndarray] = {}
    schema: list[ColumnSchema] = []
    for d in range(spec.numeric_dims):
        schema.append(ColumnSchema(f"x{d}", "numeric"))
        columns[f"x{d}"] = points[:, d]
    for j, n_levels in enumerate(spec.categorical_dims):
        level_names = [f"lv{t}" for t in range(n_levels)]
        uniform_pick = rng.integers(0, n_levels, spec.n)
        follow_bias = rng.random(spec.n) < spec.categorical_bias
        month_shift = int(rng.integers(0, n_levels))
        preferred = np.zeros(spec.n, dtype=np.int64)
        mask = labels >= 0
        stable_mask = mask & (labels < stable_clusters)
        moved_mask = mask & (labels >= stable_clusters)
        preferred[stable_mask] = (labels[stable_mask] + stable_level_shift) % n_levels
        preferred[moved_mask] = (labels[moved_mask] + month_shift) % n_levels
        pick = np.where(mask & follow_bias, preferred, uniform_pick)
        schema.append(ColumnSchema(f"c{j}", "categorical"))
        columns[f"c{j}"] = np.array([level_names[t] for t in pick], dtype=object)

    subjects = rng.integers(0, pool, spec.n)
    schema.append(ColumnSchema("subject", "categorical"))
    columns["subject"] = np.array([f"s{t}" for t in subjects], dtype=object)
    n_categories = max(spec.categorical_dims, default=4)
    category_pick = rng.integers(0, n_categories, spec.n)
    schema.append(ColumnSchema("category", "categorical"))
    columns["category"] = np.array([f"cat{t}" for t in category_pick], dtype=object)

    order = rng.permutation(spec.n)
    table = DataTable(schema, columns, period=period).take(order)
    return table, Partition(labels[order])
