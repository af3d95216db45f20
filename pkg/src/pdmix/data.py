"""Observation containers, deduplication and support-set builders."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class InputError(ValueError):
    """Raised for malformed or inconsistent input data."""


def _as_matrix(rows) -> np.ndarray:
    arr = np.asarray(rows, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InputError(f"expected a 2-D array of observations, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class RawDataset:
    """n observation vectors of dimension p, one per row."""

    rows: np.ndarray

    def __post_init__(self):
        try:
            arr = _as_matrix(self.rows)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, InputError):
                raise
            raise InputError(f"rows do not form a rectangular numeric matrix: {exc}") from exc
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InputError("empty dataset")
        if not np.all(np.isfinite(arr)):
            raise InputError("dataset contains non-finite entries")
        arr.setflags(write=False)
        object.__setattr__(self, "rows", arr)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def p(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class DistinctDataset:
    """Distinct observation vectors ``y`` with multiplicities ``counts``."""

    y: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        y = _as_matrix(self.y)
        counts = np.asarray(self.counts)
        if counts.ndim != 1 or counts.shape[0] != y.shape[0]:
            raise InputError("counts must be a vector with one entry per distinct row")
        if y.shape[0] < 1:
            raise InputError("empty dataset")
        if np.any(counts < 1) or np.any(counts != np.round(counts)):
            raise InputError("counts must be positive integers")
        counts = counts.astype(np.int64)
        y.setflags(write=False)
        counts.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "counts", counts)

    @property
    def d(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.y.shape[1]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def expand(self) -> RawDataset:
        """Undo the deduplication (rows repeated by their counts, grouped)."""
        return RawDataset(np.repeat(self.y, self.counts, axis=0))


@dataclass(frozen=True)
class SupportSet:
    """Candidate support vectors, one per row."""

    theta: np.ndarray
    labels: tuple = field(default=(), compare=False)

    def __post_init__(self):
        theta = _as_matrix(self.theta)
        if theta.shape[0] < 1:
            raise InputError("support set must contain at least one vector")
        if not np.all(np.isfinite(theta)):
            raise InputError("support set contains non-finite entries")
        if np.unique(theta, axis=0).shape[0] != theta.shape[0]:
            raise InputError("support vectors must be pairwise distinct")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @property
    def m(self) -> int:
        return self.theta.shape[0]

    @property
    def p(self) -> int:
        return self.theta.shape[1]


def deduplicate(raw: RawDataset, tol: float = 0.0) -> DistinctDataset:
    """Merge repeated observation vectors and count them.

    Rows whose max-norm distance to an earlier representative is at most
    ``tol`` are merged into it. Representatives keep first-appearance order.
    ``tol=0`` means exact equality and is what discrete families need.
    """
    if not isinstance(raw, RawDataset):
        raw = RawDataset(raw)
    if tol < 0:
        raise InputError("dedup tolerance must be non-negative")
    X = raw.rows
    if tol == 0:
        _, first, inverse, counts = np.unique(
            X, axis=0, return_index=True, return_inverse=True, return_counts=True
        )
        order = np.argsort(first, kind="stable")
        return DistinctDataset(X[first[order]], counts[order])

    reps: list[np.ndarray] = []
    counts: list[int] = []
    for row in X:
        if reps:
            dist = np.abs(np.asarray(reps) - row).max(axis=1)
            hit = np.flatnonzero(dist <= tol)
            if hit.size:
                counts[hit[0]] += 1
                continue
        reps.append(row)
        counts.append(1)
    return DistinctDataset(np.asarray(reps), np.asarray(counts))


def support_from_data(data: DistinctDataset) -> SupportSet:
    """Use the distinct observations themselves as the support set."""
    return SupportSet(np.array(data.y))


def support_grid_1d(lo: float, hi: float, step: float) -> SupportSet:
    """Evenly spaced 1-D grid ``lo, lo+step, ..., hi`` with both endpoints.

    The returned set reports its true size; for instance (0, 9, 0.5) gives
    19 points and (0, 9, 0.1) gives 91.
    """
    if not step > 0:
        raise InputError("grid step must be positive")
    if not lo < hi:
        raise InputError("grid requires lo < hi")
    m = int(round((hi - lo) / step)) + 1
    grid = np.linspace(lo, hi, m)
    return SupportSet(grid[:, None])


def support_lattice(levels, p: int) -> SupportSet:
    """All p-fold combinations of ``levels`` (the equi-distant design)."""
    levels = np.asarray(levels, dtype=float)
    mesh = np.meshgrid(*([levels] * p), indexing="ij")
    return SupportSet(np.stack([g.ravel() for g in mesh], axis=1))


def sample_covariance(raw: RawDataset) -> np.ndarray:
    """Unbiased sample covariance (divisor n - 1), exactly symmetric."""
    if not isinstance(raw, RawDataset):
        raw = RawDataset(raw)
    if raw.n < 2:
        raise InputError("sample covariance needs at least two observations")
    centered = raw.rows - raw.rows.mean(axis=0)
    S = centered.T @ centered / (raw.n - 1)
    return (S + S.T) / 2


def read_csv(
    path,
    header: bool | None = None,
    columns=None,
    count_column=None,
    integer: bool = False,
) -> RawDataset:
    """Read one observation per row from a CSV file.

    Parameters
    ----------
    path : path-like
        File to read.
    header : bool or None
        Whether the first line holds column names. ``None`` sniffs it: a first
        line that does not parse as numbers is treated as a header.
    columns : sequence of str or int, optional
        Columns to keep (names need a header). Non-numeric columns are an error
        unless excluded here; by default trailing non-numeric columns such as
        a species label are dropped.
    count_column : str or int, optional
        Column holding frequencies; each row is then repeated that many times.
    integer : bool
        Require non-negative integer values (Poisson data).
    """
    path = Path(path)
    with path.open(newline="") as fh:
        lines = [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    if not lines:
        raise InputError(f"{path}: no data rows")

    def numeric(cells):
        try:
            [float(c) for c in cells]
            return True
        except ValueError:
            return False

    if header is None:
        header = not numeric(lines[0])
    names = [c.strip() for c in lines[0]] if header else None
    body = lines[1:] if header else lines
    if not body:
        raise InputError(f"{path}: no data rows")

    width = len(body[0])
    for k, row in enumerate(body):
        if len(row) != width:
            raise InputError(f"{path}: row {k + 1} has {len(row)} fields, expected {width}")

    def resolve(col):
        if isinstance(col, int):
            return col
        if isinstance(col, str) and col.isdigit():
            return int(col)
        if names is None or col not in names:
            raise InputError(f"{path}: unknown column {col!r}")
        return names.index(col)

    count_idx = resolve(count_column) if count_column is not None else None
    if columns is None:
        keep = [j for j in range(width) if j != count_idx and numeric([r[j] for r in body])]
    else:
        keep = [resolve(c) for c in columns]
    if not keep:
        raise InputError(f"{path}: no numeric columns")
    try:
        X = np.array([[float(r[j]) for j in keep] for r in body])
    except ValueError as exc:
        raise InputError(f"{path}: non-numeric value in selected columns ({exc})") from exc
    if count_idx is not None:
        try:
            reps = np.array([float(r[count_idx]) for r in body])
        except ValueError as exc:
            raise InputError(f"{path}: non-numeric count ({exc})") from exc
        if np.any(reps < 0) or np.any(reps != np.round(reps)):
            raise InputError(f"{path}: counts must be non-negative integers")
        X = np.repeat(X, reps.astype(int), axis=0)
    if integer and (np.any(X < 0) or np.any(X != np.round(X))):
        raise InputError(f"{path}: values must be non-negative integers for this family")
    return RawDataset(X)
