"""CSV datasets with a declared schema, plus train-fitted numeric transforms.

A dataset is a CSV file with a header row and a companion schema CSV
(``name,kind,role`` lines) that declares each used column as numeric or
categorical and marks exactly one column as the target. Splits are plain
text files of 0-based row indices. All transforms fit on the training
split only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import ConfigError, DataError

_KINDS = ("numeric", "categorical")
_ROLES = ("feature", "target")
_P_EPS = 1e-7  # rank probabilities are clipped to [eps, 1-eps] before ndtri


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str  # numeric | categorical
    role: str  # feature | target


def read_schema(path) -> list[ColumnSpec]:
    """Parse a ``name,kind,role`` CSV describing the dataset's columns."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or [c.strip() for c in rows[0]] != ["name", "kind", "role"]:
        raise DataError(f"{path}: first line must be 'name,kind,role'")
    specs = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != 3:
            raise DataError(f"{path}: line {i}: expected 3 fields, got {len(row)}")
        name, kind, role = (f.strip() for f in row)
        if kind not in _KINDS:
            raise DataError(f"{path}: line {i}: unknown kind '{kind}'")
        if role not in _ROLES:
            raise DataError(f"{path}: line {i}: unknown role '{role}'")
        specs.append(ColumnSpec(name, kind, role))
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise DataError(f"{path}: duplicate column names in schema")
    n_targets = sum(s.role == "target" for s in specs)
    if n_targets != 1:
        raise DataError(f"{path}: need exactly one target column, found {n_targets}")
    if not any(s.role == "feature" for s in specs):
        raise DataError(f"{path}: no feature columns declared")
    return specs


@dataclass
class Table:
    """Parsed dataset: numeric block, categorical block, encoded target."""

    num: np.ndarray  # [n, Fn] float64
    cat: np.ndarray  # [n, Fc] object (strings)
    y: np.ndarray  # float64 for regression, int64 class codes otherwise
    num_names: tuple
    cat_names: tuple
    target_name: str
    task: str  # regression | binclass | multiclass
    classes: tuple  # () for regression, sorted class strings otherwise

    @property
    def n_rows(self) -> int:
        return len(self.y)


def _parse_number(cell, path, row, name) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise DataError(
            f"{path}: data row {row}, column '{name}': "
            f"cannot parse '{cell}' as a number"
        ) from None
    if not np.isfinite(v):
        raise DataError(
            f"{path}: data row {row}, column '{name}': non-finite value '{cell}'"
        )
    return v


def load_csv(path, schema) -> Table:
    """Read a headered CSV against a schema; numeric columns come first."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        col_of = {}
        for i, h in enumerate(header):
            if h in col_of and any(s.name == h for s in schema):
                raise DataError(f"{path}: duplicate header column '{h}'")
            col_of[h] = i
        missing = [s.name for s in schema if s.name not in col_of]
        if missing:
            raise DataError(f"{path}: columns missing from header: {missing}")

        num_specs = [s for s in schema if s.role == "feature" and s.kind == "numeric"]
        cat_specs = [
            s for s in schema if s.role == "feature" and s.kind == "categorical"
        ]
        (tgt_spec,) = [s for s in schema if s.role == "target"]

        num_rows, cat_rows, y_cells = [], [], []
        for r, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise DataError(
                    f"{path}: data row {r}: expected {len(header)} fields, "
                    f"got {len(row)}"
                )
            for s in schema:
                if row[col_of[s.name]].strip() == "":
                    raise DataError(
                        f"{path}: data row {r}, column '{s.name}': missing value"
                    )
            num_rows.append(
                [_parse_number(row[col_of[s.name]], path, r, s.name) for s in num_specs]
            )
            cat_rows.append([row[col_of[s.name]].strip() for s in cat_specs])
            cell = row[col_of[tgt_spec.name]].strip()
            if tgt_spec.kind == "numeric":
                y_cells.append(_parse_number(cell, path, r, tgt_spec.name))
            else:
                y_cells.append(cell)

    n = len(y_cells)
    if n == 0:
        raise DataError(f"{path}: no data rows")

    num = np.asarray(num_rows, dtype=np.float64).reshape(n, len(num_specs))
    cat = np.asarray(cat_rows, dtype=object).reshape(n, len(cat_specs))

    if tgt_spec.kind == "numeric":
        y = np.asarray(y_cells, dtype=np.float64)
        task, classes = "regression", ()
    else:
        classes = tuple(sorted(set(y_cells)))
        if len(classes) < 2:
            raise DataError(
                f"{path}: target '{tgt_spec.name}' has {len(classes)} distinct "
                "value(s); need at least 2"
            )
        code = {c: i for i, c in enumerate(classes)}
        y = np.asarray([code[c] for c in y_cells], dtype=np.int64)
        task = "binclass" if len(classes) == 2 else "multiclass"

    return Table(
        num=num,
        cat=cat,
        y=y,
        num_names=tuple(s.name for s in num_specs),
        cat_names=tuple(s.name for s in cat_specs),
        target_name=tgt_spec.name,
        task=task,
        classes=classes,
    )


def read_split(path, n_rows) -> np.ndarray:
    """Read one split file: one 0-based row index per line."""
    idx = []
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            s = line.strip()
            if not s:
                continue
            try:
                v = int(s)
            except ValueError:
                raise DataError(f"{path}: line {ln}: not an integer: '{s}'") from None
            if not 0 <= v < n_rows:
                raise DataError(
                    f"{path}: line {ln}: index {v} out of range [0, {n_rows})"
                )
            idx.append(v)
    if not idx:
        raise DataError(f"{path}: split file is empty")
    arr = np.asarray(idx, dtype=np.int64)
    if np.unique(arr).size != arr.size:
        raise DataError(f"{path}: split contains duplicate indices")
    return arr


def read_splits(train_path, val_path, test_path, n_rows):
    """Read the three split files and require pairwise disjoint indices."""
    parts = {
        "train": read_split(train_path, n_rows),
        "val": read_split(val_path, n_rows),
        "test": read_split(test_path, n_rows),
    }
    names = list(parts)
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            common = np.intersect1d(parts[a], parts[b])
            if common.size:
                raise DataError(
                    f"splits '{a}' and '{b}' overlap on {common.size} indices "
                    f"(first: {int(common[0])})"
                )
    return parts["train"], parts["val"], parts["test"]


class QuantileNormalizer:
    """Map each column to approximate standard-normal scores by rank.

    Fit stores an evenly spaced probability grid and the matching training
    quantiles per column. Transform interpolates a value's rank probability
    from both directions (averaging handles ties symmetrically), clips it
    away from {0, 1}, and applies the normal inverse CDF. Values outside
    the training range saturate at the clipped tails; a constant training
    column maps everything to 0.
    """

    def __init__(self, n_quantiles: int = 1000):
        if n_quantiles < 2:
            raise ConfigError(f"n_quantiles must be >= 2, got {n_quantiles}")
        self.n_quantiles = int(n_quantiles)
        self._refs = None
        self._quantiles = None

    def fit(self, X) -> "QuantileNormalizer":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ConfigError(f"expected a 2-D array, got shape {X.shape}")
        n = X.shape[0]
        if n < 2:
            raise DataError(f"need at least 2 training rows to fit, got {n}")
        m = min(self.n_quantiles, n)
        self._refs = np.linspace(0.0, 1.0, m)
        self._quantiles = [np.quantile(X[:, j], self._refs) for j in range(X.shape[1])]
        return self

    def transform(self, X) -> np.ndarray:
        if self._refs is None:
            raise RuntimeError("transform called before fit")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self._quantiles):
            raise ConfigError(
                f"expected shape (*, {len(self._quantiles)}), got {X.shape}"
            )
        refs = self._refs
        out = np.empty(X.shape, dtype=np.float64)
        for j, q in enumerate(self._quantiles):
            x = X[:, j]
            p = 0.5 * (
                np.interp(x, q, refs) - np.interp(-x, -q[::-1], -refs[::-1])
            )
            np.clip(p, _P_EPS, 1.0 - _P_EPS, out=p)
            out[:, j] = ndtri(p)
        return out


class TargetStandardizer:
    """Center and scale a regression target by training mean and std."""

    def __init__(self):
        self.mean_ = None
        self.std_ = None

    def fit(self, y) -> "TargetStandardizer":
        y = np.asarray(y, dtype=np.float64)
        self.mean_ = float(y.mean())
        self.std_ = float(y.std())  # population std
        if self.std_ == 0.0:
            raise DataError("target column is constant; cannot standardize")
        return self

    def transform(self, y) -> np.ndarray:
        if self.std_ is None:
            raise RuntimeError("transform called before fit")
        return (np.asarray(y, dtype=np.float64) - self.mean_) / self.std_

    def inverse(self, z) -> np.ndarray:
        if self.std_ is None:
            raise RuntimeError("inverse called before fit")
        return np.asarray(z, dtype=np.float64) * self.std_ + self.mean_


class CategoryCodec:
    """Per-column string vocabularies; unseen values map to a reserved code.

    Codes follow the sorted training vocabulary; code ``len(vocab)`` is the
    out-of-vocabulary bucket, so embedding tables need ``len(vocab) + 1``
    rows per column.
    """

    def __init__(self):
        self.vocabs_ = None
        self._maps = None

    def fit(self, cat) -> "CategoryCodec":
        cat = np.asarray(cat, dtype=object)
        self.vocabs_ = [tuple(sorted(set(cat[:, j]))) for j in range(cat.shape[1])]
        self._maps = [{v: i for i, v in enumerate(vv)} for vv in self.vocabs_]
        return self

    def transform(self, cat) -> np.ndarray:
        if self._maps is None:
            raise RuntimeError("transform called before fit")
        cat = np.asarray(cat, dtype=object)
        if cat.ndim != 2 or cat.shape[1] != len(self._maps):
            raise ConfigError(f"expected shape (*, {len(self._maps)}), got {cat.shape}")
        out = np.empty(cat.shape, dtype=np.int64)
        for j, m in enumerate(self._maps):
            unk = len(m)
            out[:, j] = [m.get(v, unk) for v in cat[:, j]]
        return out

    @property
    def cardinalities(self):
        if self.vocabs_ is None:
            raise RuntimeError("cardinalities read before fit")
        return [len(v) for v in self.vocabs_]
