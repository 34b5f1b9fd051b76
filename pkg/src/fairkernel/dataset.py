"""Tabular CSV ingestion, standardization and k-fold plans."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DatasetError, DimensionMismatchError, ValidationError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DatasetSpec:
    path: str
    target_column: str
    protected_columns: tuple
    feature_columns: tuple | None = None   # None means every remaining column
    missing_marker: str = "?"
    has_header: bool = True
    include_protected: bool = False        # keep protected columns in X
    exclude_columns: tuple = ()            # ignored when features are implicit

    def __post_init__(self):
        object.__setattr__(self, "protected_columns", tuple(self.protected_columns))
        object.__setattr__(self, "exclude_columns", tuple(self.exclude_columns))
        if self.feature_columns is not None:
            object.__setattr__(self, "feature_columns", tuple(self.feature_columns))
        if not self.protected_columns:
            raise ValidationError("at least one protected column is required")
        if self.target_column in self.protected_columns:
            raise ValidationError(
                f"target column {self.target_column!r} cannot also be protected")
        if self.feature_columns is not None and self.target_column in self.feature_columns:
            raise ValidationError(
                f"target column {self.target_column!r} cannot also be a feature")

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ValidationError(f"bad dataset spec: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "path": str(self.path),
            "target_column": self.target_column,
            "protected_columns": list(self.protected_columns),
            "feature_columns": None if self.feature_columns is None else list(self.feature_columns),
            "missing_marker": self.missing_marker,
            "has_header": self.has_header,
            "include_protected": self.include_protected,
            "exclude_columns": list(self.exclude_columns),
        }


@dataclass(frozen=True)
class Standardization:
    mean: np.ndarray
    std: np.ndarray


@dataclass(frozen=True, eq=False)
class TabularDataset:
    X: np.ndarray                 # standardized features
    y: np.ndarray
    P: np.ndarray                 # raw protected values, n x l
    column_names: tuple
    protected_names: tuple
    standardization: Standardization
    warnings: tuple = field(default=())

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def X_raw(self) -> np.ndarray:
        return standardize_invert(self.standardization, self.X)


def standardize_fit(X) -> Standardization:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValidationError(f"need a non-empty 2-D matrix, got shape {X.shape}")
    return Standardization(X.mean(axis=0), X.std(axis=0))


def standardize_apply(stats: Standardization, X_new) -> np.ndarray:
    X_new = np.asarray(X_new, dtype=np.float64)
    if X_new.ndim != 2 or X_new.shape[1] != stats.mean.size:
        raise DimensionMismatchError(
            f"matrix has shape {X_new.shape}, statistics cover {stats.mean.size} columns")
    if np.any(stats.std <= 0):
        raise ValidationError("statistics contain a non-positive standard deviation")
    return (X_new - stats.mean) / stats.std


def standardize_invert(stats: Standardization, Z) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != stats.mean.size:
        raise DimensionMismatchError(
            f"matrix has shape {Z.shape}, statistics cover {stats.mean.size} columns")
    return Z * stats.std + stats.mean


def _read_rows(path: Path, has_header: bool):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except FileNotFoundError as exc:
        raise DatasetError(f"{path}: file not found") from exc
    except (UnicodeDecodeError, csv.Error) as exc:
        raise DatasetError(f"{path}: cannot parse as CSV ({exc})") from exc
    if not rows:
        raise DatasetError(f"{path}: file is empty")
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise DatasetError(f"{path}: row {i + 1} has {len(r)} fields, expected {width}")
    if has_header:
        header = [c.strip() for c in rows[0]]
        body = rows[1:]
    else:
        header = [str(i) for i in range(width)]
        body = rows
    return header, body


def _to_float(body, col, marker, path, name, strict=True):
    """Column as floats with NaN for missing cells; ``None`` if non-numeric and not strict."""
    out = np.empty(len(body))
    for i, r in enumerate(body):
        cell = r[col].strip()
        if cell == marker or cell == "":
            out[i] = np.nan
            continue
        try:
            out[i] = float(cell)
        except ValueError as exc:
            if not strict:
                return None
            raise DatasetError(
                f"{path}: column {name!r} row {i + 1}: {cell!r} is not numeric") from exc
    return out


def load_csv(spec: DatasetSpec) -> TabularDataset:
    """Load, clean and standardize a CSV file.

    Rows missing the target or a protected value are dropped, missing feature
    cells take the column mean, and constant feature columns are dropped with
    a warning. Standardization statistics cover the whole file; experiment
    drivers refit them per training fold.
    """
    path = Path(spec.path)
    header, body = _read_rows(path, spec.has_header)
    index = {name: i for i, name in enumerate(header)}
    wanted = [spec.target_column, *spec.protected_columns, *spec.exclude_columns]
    if spec.feature_columns is not None:
        wanted += list(spec.feature_columns)
    missing = [c for c in wanted if c not in index]
    if missing:
        raise DatasetError(f"{path}: columns not found: {missing}")

    explicit = spec.feature_columns is not None
    if explicit:
        features = list(spec.feature_columns)
    else:
        skip = {spec.target_column, *spec.exclude_columns}
        if not spec.include_protected:
            skip |= set(spec.protected_columns)
        features = [c for c in header if c not in skip]
    if spec.include_protected:
        features += [c for c in spec.protected_columns if c not in features]

    y = _to_float(body, index[spec.target_column], spec.missing_marker, path,
                  spec.target_column)
    P = np.column_stack([_to_float(body, index[c], spec.missing_marker, path, c)
                         for c in spec.protected_columns])
    keep = np.isfinite(y) & np.all(np.isfinite(P), axis=1)
    if not keep.any():
        raise DatasetError(f"{path}: no rows left after dropping missing target/protected")
    body = [r for r, k in zip(body, keep) if k]
    y, P = y[keep], P[keep]

    warnings = []
    dropped = int((~keep).sum())
    if dropped:
        warnings.append(f"dropped {dropped} rows with missing target or protected values")

    columns, names = [], []
    for name in features:
        col = _to_float(body, index[name], spec.missing_marker, path, name,
                        strict=explicit or name in spec.protected_columns)
        if col is None:
            warnings.append(f"dropped column {name!r}: not numeric")
            continue
        observed = np.isfinite(col)
        if not observed.any():
            warnings.append(f"dropped column {name!r}: no observed values")
            continue
        if not observed.all():
            col[~observed] = col[observed].mean()
            warnings.append(f"imputed {int((~observed).sum())} missing cells of {name!r} "
                            "with the column mean")
        if np.ptp(col) == 0:
            warnings.append(f"dropped column {name!r}: zero variance")
            continue
        columns.append(col)
        names.append(name)
    if not columns:
        raise DatasetError(f"{path}: no usable feature columns")
    for w in warnings:
        log.warning("%s: %s", path, w)

    X = np.column_stack(columns)
    stats = standardize_fit(X)
    return TabularDataset(standardize_apply(stats, X), y, P, tuple(names),
                          tuple(spec.protected_columns), stats, tuple(warnings))


def synthetic_dataset(n: int = 300, d: int = 5, protected: int = 1, noise: float = 0.1,
                      seed: int = 0) -> TabularDataset:
    """Smooth synthetic regression task with leaking protected attributes.

    ``p_1 = sin(1.5 x_0) + noise``; further attributes mix ``sin(1.5 x_0)``
    with ``tanh`` of another feature, so they are correlated with ``p_1``.
    The target is the sum of the protected signals plus two nuisance terms.
    Protected values are not part of ``X``; they leak only through ``x_0``.
    """
    if n < 2 or d < 2:
        raise ValidationError(f"need n >= 2 and d >= 2, got n={n}, d={d}")
    if not 1 <= protected < d:
        raise ValidationError(f"protected count must lie in [1, {d - 1}], got {protected}")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    base = np.sin(1.5 * X[:, 0])
    cols = [base + noise * rng.standard_normal(n)]
    for j in range(1, protected):
        feature = X[:, (j + 2) % d] if (j + 2) % d != 0 else X[:, 1]
        cols.append(0.6 * base + 0.8 * np.tanh(feature) + noise * rng.standard_normal(n))
    P = np.column_stack(cols)
    y = P.sum(axis=1) + 0.5 * X[:, 1] + 0.3 * np.cos(X[:, 2]) + noise * rng.standard_normal(n)
    stats = standardize_fit(X)
    return TabularDataset(standardize_apply(stats, X), y, P,
                          tuple(f"x{j}" for j in range(d)),
                          tuple(f"p{j}" for j in range(protected)), stats)


@dataclass(frozen=True, eq=False)
class FoldPlan:
    k: int
    seed: int
    assignments: np.ndarray

    def split(self, fold: int):
        """(train indices, test indices) for one fold."""
        if not 0 <= fold < self.k:
            raise ValidationError(f"fold must lie in [0, {self.k}), got {fold}")
        return (np.flatnonzero(self.assignments != fold),
                np.flatnonzero(self.assignments == fold))

    def __iter__(self):
        return (self.split(f) for f in range(self.k))


def kfold(n: int, k: int = 5, seed: int = 0) -> FoldPlan:
    if k < 2:
        raise ValidationError(f"k must be at least 2, got {k}")
    if n < k:
        raise ValidationError(f"cannot split {n} rows into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    assignments = np.empty(n, dtype=np.int64)
    assignments[perm] = np.arange(n) % k
    return FoldPlan(k, seed, assignments)
