"""Labeled data: CSV ingestion, preprocessing, synthesis and partitioning.

Features are stored row-wise in a float array and labels in ``{-1, +1}``.
Every row of a validated dataset has Euclidean norm at most one.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .topology import Graph

__all__ = [
    "DataError",
    "SchemaError",
    "CsvParseError",
    "Sample",
    "Dataset",
    "LocalDataset",
    "Schema",
    "RawTable",
    "ADULT_SCHEMA",
    "load_csv",
    "preprocess",
    "partition",
    "synthesize",
    "write_dataset",
    "read_dataset",
]

NORM_SLACK = 1e-12


class DataError(ValueError):
    pass


class SchemaError(DataError):
    pass


class CsvParseError(DataError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: int


def _check_arrays(features: np.ndarray, labels: np.ndarray) -> None:
    if features.ndim != 2 or labels.ndim != 1 or features.shape[0] != labels.shape[0]:
        raise DataError(f"features {features.shape} and labels {labels.shape} do not align")
    if features.shape[0] < 1:
        raise DataError("dataset is empty")
    if not np.all(np.isin(labels, (-1.0, 1.0))):
        raise DataError("labels must be -1 or +1")
    if not np.all(np.isfinite(features)):
        raise DataError("features contain non-finite values")
    norms = np.linalg.norm(features, axis=1)
    if norms.max() > 1 + NORM_SLACK:
        raise DataError(f"feature norm {norms.max():.6g} exceeds 1 (row {int(norms.argmax())})")


@dataclass(frozen=True, eq=False)
class Dataset:
    """All samples, before partitioning among nodes."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.array(self.features, dtype=float)
        y = np.array(self.labels, dtype=float)
        _check_arrays(x, y)
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def samples(self) -> list[Sample]:
        return [Sample(x, int(y)) for x, y in zip(self.features, self.labels)]


@dataclass(frozen=True, eq=False)
class LocalDataset(Dataset):
    """One node's shard ``D_i``; ``size`` is ``B_i``."""

    node_id: int = 0

    @property
    def size(self) -> int:
        return len(self)


@dataclass(frozen=True)
class Schema:
    """Role of each CSV column: ``numeric``, ``categorical``, ``label`` or ``ignore``.

    Columns not listed are ignored. Label values in ``positive_labels`` map to
    +1 and everything else to -1.
    """

    columns: dict[str, str]
    positive_labels: tuple[str, ...] = ()
    missing_tokens: tuple[str, ...] = ("", "?")

    ROLES = ("numeric", "categorical", "label", "ignore")

    def __post_init__(self):
        for name, role in self.columns.items():
            if role not in self.ROLES:
                raise SchemaError(f"column {name!r}: unknown role {role!r}")
        labels = [c for c, r in self.columns.items() if r == "label"]
        if len(labels) != 1:
            raise SchemaError(f"schema needs exactly one label column, found {len(labels)}")

    @property
    def label_column(self) -> str:
        return next(c for c, r in self.columns.items() if r == "label")

    def role_columns(self, role: str) -> list[str]:
        return [c for c, r in self.columns.items() if r == role]

    @classmethod
    def from_mapping(cls, mapping: dict[str, str]) -> "Schema":
        """Build from flat keys ``column.<name>``, ``label.positive``, ``missing``."""
        columns = {}
        positive: tuple[str, ...] = ()
        missing = ("", "?")
        for key, value in mapping.items():
            if key.startswith("column."):
                columns[key[len("column."):]] = value.strip()
            elif key == "label.positive":
                positive = tuple(v.strip() for v in value.split(","))
            elif key == "missing":
                missing = ("",) + tuple(v.strip() for v in value.split(",") if v.strip())
            else:
                raise SchemaError(f"unknown schema key {key!r}")
        return cls(columns, positive, missing)


@dataclass
class RawTable:
    """Parsed CSV rows. Numeric cells are floats, categorical cells strings,
    missing cells ``None``; ``missing`` flags rows with any missing cell."""

    columns: list[str]
    rows: list[dict[str, object]]
    missing: list[bool] = field(default_factory=list)
    linenos: list[int] = field(default_factory=list)


def load_csv(path: str | Path, schema: Schema) -> RawTable:
    """Read a comma-separated file with a header row."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh, skipinitialspace=True)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CsvParseError(1, "empty file, header row required") from None
        unknown = [c for c in schema.columns if c not in header]
        if unknown:
            raise SchemaError(f"schema columns not in header: {unknown}")
        used = [c for c, r in schema.columns.items() if r != "ignore"]
        index = {c: header.index(c) for c in used}
        table = RawTable(columns=used, rows=[])
        for row in reader:
            lineno = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise CsvParseError(lineno, f"expected {len(header)} fields, got {len(row)}")
            parsed: dict[str, object] = {}
            has_missing = False
            for c in used:
                cell = row[index[c]].strip()
                if cell in schema.missing_tokens:
                    parsed[c] = None
                    has_missing = True
                elif schema.columns[c] == "numeric":
                    try:
                        parsed[c] = float(cell)
                    except ValueError:
                        raise CsvParseError(lineno, f"column {c!r}: cannot parse {cell!r} as a number") from None
                else:
                    parsed[c] = cell
            table.rows.append(parsed)
            table.missing.append(has_missing)
            table.linenos.append(lineno)
    return table


def preprocess(table: RawTable, schema: Schema) -> Dataset:
    """Turn a raw table into a normalized dataset.

    Rows with missing cells are dropped, each categorical column with ``m``
    distinct values becomes ``m`` indicator columns (values in sorted order),
    every column is divided by its maximum absolute value, rows with norm above
    one are scaled onto the unit sphere, and labels are mapped to +1/-1.
    """
    rows = [r for r, miss in zip(table.rows, table.missing) if not miss]
    if not rows:
        raise DataError("no rows left after dropping rows with missing values")

    blocks = []
    for col in table.columns:
        role = schema.columns[col]
        if role == "numeric":
            blocks.append(np.array([[r[col]] for r in rows], dtype=float))
        elif role == "categorical":
            cats = sorted({r[col] for r in rows})
            pos = {c: k for k, c in enumerate(cats)}
            block = np.zeros((len(rows), len(cats)))
            block[np.arange(len(rows)), [pos[r[col]] for r in rows]] = 1.0
            blocks.append(block)
    if not blocks:
        raise SchemaError("schema has no feature columns")
    x = np.hstack(blocks)

    scale = np.abs(x).max(axis=0)
    scale[scale == 0] = 1.0
    x = x / scale
    norms = np.linalg.norm(x, axis=1)
    x = x / np.maximum(norms, 1.0)[:, None]

    label_col = schema.label_column
    positive = set(schema.positive_labels)
    raw_labels = [str(r[label_col]) for r in rows]
    if not positive:
        raise SchemaError("schema does not name the positive label value(s)")
    y = np.array([1.0 if v in positive else -1.0 for v in raw_labels])
    if np.all(y == y[0]):
        raise DataError("label column is constant after preprocessing")
    return Dataset(x, y)


def partition(
    dataset: Dataset,
    graph: Graph,
    strategy: str | Sequence[float] = "even_shuffle",
    seed: int = 0,
) -> list[LocalDataset]:
    """Split ``dataset`` into one disjoint shard per node.

    ``strategy`` is ``"even_shuffle"`` (sizes differ by at most one) or a
    sequence of per-node fractions summing to one. Both shuffle with ``seed``.
    """
    n = graph.n_nodes
    total = len(dataset)
    if total < n:
        raise DataError(f"{total} samples cannot cover {n} nodes")
    order = np.random.default_rng(seed).permutation(total)

    if isinstance(strategy, str):
        if strategy != "even_shuffle":
            raise DataError(f"unknown partition strategy {strategy!r}")
        sizes = [len(c) for c in np.array_split(np.arange(total), n)]
    else:
        fractions = np.asarray(strategy, dtype=float)
        if fractions.shape != (n,):
            raise DataError(f"need {n} fractions, got {fractions.size}")
        if np.any(fractions < 0) or abs(fractions.sum() - 1) > 1e-9:
            raise DataError(f"fractions must be nonnegative and sum to 1, got sum {fractions.sum()}")
        raw = fractions * total
        sizes_arr = np.floor(raw).astype(int)
        # largest remainder; ties go to the lower node id
        short = total - sizes_arr.sum()
        for k in np.argsort(-(raw - sizes_arr), kind="stable")[:short]:
            sizes_arr[k] += 1
        sizes = sizes_arr.tolist()
    if min(sizes) == 0:
        raise DataError(f"partition leaves an empty shard: sizes {sizes}")

    shards = []
    start = 0
    for node, size in enumerate(sizes):
        idx = order[start:start + size]
        shards.append(LocalDataset(dataset.features[idx], dataset.labels[idx], node_id=node))
        start += size
    return shards


def synthesize(n_samples: int, d: int, separation: float = 1.0, seed: int = 0) -> Dataset:
    """Two Gaussian clusters centred at ``+-separation/2`` along a random unit axis.

    Labels are balanced and shuffled. The whole array is divided by its
    largest row norm, so all rows end up with norm at most one.
    """
    if d < 1 or n_samples < 2:
        raise DataError("need d >= 1 and n_samples >= 2")
    rng = np.random.default_rng(seed)
    axis = rng.standard_normal(d)
    axis /= np.linalg.norm(axis)
    y = np.where(np.arange(n_samples) % 2 == 0, 1.0, -1.0)
    y = rng.permutation(y)
    x = rng.standard_normal((n_samples, d)) + 0.5 * separation * y[:, None] * axis
    x /= np.linalg.norm(x, axis=1).max()
    return Dataset(x, y)


ADULT_SCHEMA = Schema(
    columns={
        "age": "numeric",
        "workclass": "categorical",
        "fnlwgt": "numeric",
        "education": "categorical",
        "education-num": "numeric",
        "marital-status": "categorical",
        "occupation": "categorical",
        "relationship": "categorical",
        "race": "categorical",
        "sex": "categorical",
        "capital-gain": "numeric",
        "capital-loss": "numeric",
        "hours-per-week": "numeric",
        "native-country": "categorical",
        "income": "label",
    },
    positive_labels=(">50K", ">50K."),
)


def write_dataset(dataset: Dataset, path: str | Path, comments: Sequence[str] = ()) -> None:
    """Text format: optional ``#`` lines, then ``n d``, then ``label x_1 .. x_d`` rows."""
    with Path(path).open("w") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        fh.write(f"{len(dataset)} {dataset.dim}\n")
        for x, y in zip(dataset.features, dataset.labels):
            fh.write(" ".join([str(int(y))] + [f"{v:.17g}" for v in x]) + "\n")


def read_dataset(path: str | Path) -> Dataset:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise DataError(f"{path}: empty dataset file")
    n, d = (int(v) for v in lines[0].split())
    body = np.array([[float(v) for v in ln.split()] for ln in lines[1:]]).reshape(-1, d + 1)
    if body.shape[0] != n:
        raise DataError(f"{path}: header says {n} rows, found {body.shape[0]}")
    return Dataset(body[:, 1:], body[:, 0])
