"""Observed-data model, CSV ingestion, and fold assignment.

Single-time-point studies are lists of :class:`PointRecord`; longitudinal
studies are a :class:`Panel` holding one trajectory per subject. Subjects,
not rows, are the cross-fitting unit, so a subject's whole trajectory
always lands in one fold.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field

import numpy as np

from ._rng import stream


class SchemaError(ValueError):
    """Input file header does not match the expected column layout."""


class ValidationError(ValueError):
    """Input values violate a data invariant (non-binary treatment, NaN, ...)."""


@dataclass(frozen=True)
class PointRecord:
    """One observation (x, a, y) with binary treatment a."""

    x: np.ndarray
    a: int
    y: float

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        object.__setattr__(self, "x", x)
        if self.a not in (0, 1):
            raise ValidationError(f"treatment must be 0 or 1, got {self.a!r}")
        if not np.all(np.isfinite(x)):
            raise ValidationError("covariates must be finite")
        if not math.isfinite(self.y):
            raise ValidationError("outcome must be finite")


@dataclass(frozen=True)
class Panel:
    """Trajectories (x_1, a_1, ..., x_T, a_T, y), stored column-wise.

    ``x[t-1]`` is the (n, d_t) covariate block for period t; covariate
    dimension may differ across periods. ``a`` is (n, T) binary and ``y``
    is the terminal outcome.
    """

    x: tuple
    a: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        xs = tuple(np.atleast_2d(np.asarray(b, dtype=float)) for b in self.x)
        a = np.asarray(self.a, dtype=np.int64)
        if a.ndim == 1:
            a = a[:, None]
        y = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "x", xs)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "y", y)
        if len(xs) == 0:
            raise ValidationError("panel needs at least one period")
        n = len(y)
        if a.shape != (n, len(xs)) or any(b.shape[0] != n for b in xs):
            raise ValidationError("inconsistent subject counts across panel blocks")
        for t, b in enumerate(xs, start=1):
            if not np.all(np.isfinite(b)):
                raise ValidationError(f"non-finite covariate in period {t}")
        if not np.isin(a, (0, 1)).all():
            raise ValidationError("treatments must be 0 or 1")
        if not np.all(np.isfinite(y)):
            raise ValidationError("outcomes must be finite")

    @property
    def n_subjects(self) -> int:
        return len(self.y)

    @property
    def n_periods(self) -> int:
        return len(self.x)

    @property
    def cov_dims(self) -> tuple:
        return tuple(b.shape[1] for b in self.x)

    def subject(self, i: int):
        """Trajectory of subject i as (list of x_t vectors, a vector, y)."""
        return [b[i] for b in self.x], self.a[i], float(self.y[i])

    def to_point_records(self) -> list:
        if self.n_periods != 1:
            raise ValueError("only a T=1 panel converts to point records")
        return [
            PointRecord(x=self.x[0][i], a=int(self.a[i, 0]), y=float(self.y[i]))
            for i in range(self.n_subjects)
        ]

    @classmethod
    def from_point_records(cls, records) -> "Panel":
        X, a, y = stack_records(records)
        return cls(x=(X,), a=a[:, None], y=y)


def stack_records(records):
    """Stack point records into (X, a, y) arrays, preserving order."""
    if len(records) == 0:
        raise ValueError("no records")
    d = records[0].x.shape[0]
    if any(r.x.shape[0] != d for r in records):
        raise ValidationError("records have inconsistent covariate dimension")
    X = np.stack([r.x for r in records])
    a = np.asarray([r.a for r in records], dtype=np.int64)
    y = np.asarray([r.y for r in records], dtype=float)
    return X, a, y


@dataclass(frozen=True)
class History:
    """Flattened history up to treatment time t: (x_1..x_t, a_1..a_{t-1})."""

    t: int
    features: np.ndarray


def history_at(panel: Panel, subject: int, t: int) -> History:
    """History of one subject at period t (1-based)."""
    if not 1 <= t <= panel.n_periods:
        raise ValueError(f"t must be in 1..{panel.n_periods}, got {t}")
    xs = [panel.x[s][subject] for s in range(t)]
    feats = np.concatenate(xs + [panel.a[subject, : t - 1].astype(float)])
    return History(t=t, features=feats)


def history_features(panel: Panel, t: int) -> np.ndarray:
    """(n, p_t) matrix of flattened histories, covariates first then treatments."""
    if not 1 <= t <= panel.n_periods:
        raise ValueError(f"t must be in 1..{panel.n_periods}, got {t}")
    blocks = [panel.x[s] for s in range(t)]
    blocks.append(panel.a[:, : t - 1].astype(float))
    return np.column_stack(blocks)


@dataclass(frozen=True)
class FoldAssignment:
    """Subject-level fold labels in 1..K, a pure function of (n, K, seed)."""

    n_subjects: int
    n_folds: int
    seed: int
    fold_of: np.ndarray = field(repr=False)

    def fold_indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == k)

    def complement_indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != k)


def assign_folds(n_subjects: int, n_folds: int, seed: int) -> FoldAssignment:
    """Balanced fold labels; sizes differ by at most one."""
    if n_folds < 2:
        raise ValueError(f"need at least 2 folds, got {n_folds}")
    if n_folds > n_subjects:
        raise ValueError(f"cannot split {n_subjects} subjects into {n_folds} folds")
    perm = stream(seed, "folds").permutation(n_subjects)
    fold_of = np.empty(n_subjects, dtype=np.int64)
    fold_of[perm] = np.arange(n_subjects) % n_folds + 1
    return FoldAssignment(n_subjects=n_subjects, n_folds=n_folds, seed=seed, fold_of=fold_of)


_FLOAT_FMT = "%.17g"  # lossless float64 round-trip


def _parse_float(text, row, col):
    try:
        v = float(text)
    except ValueError:
        raise ValidationError(f"row {row}, column {col}: not a number: {text!r}") from None
    if not math.isfinite(v):
        raise ValidationError(f"row {row}, column {col}: non-finite value {text!r}")
    return v


def _parse_binary(text, row, col):
    if text.strip() in ("0", "1"):
        return int(text)
    raise ValidationError(f"row {row}, column {col}: treatment must be 0 or 1, got {text!r}")


def load_point_csv(path) -> list:
    """Read records from a CSV with header x1..xd,a,y."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("empty file: missing header") from None
        d = len(header) - 2
        expected = [f"x{j}" for j in range(1, d + 1)] + ["a", "y"]
        if d < 1 or header != expected:
            for name in (["x1", "a", "y"] if d < 1 else expected):
                if name not in header:
                    raise SchemaError(f"missing column {name!r}")
            raise SchemaError(f"unexpected column order {header!r}, want x1..xd,a,y")
        records = []
        for row_no, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise ValidationError(f"row {row_no}: expected {len(header)} fields, got {len(row)}")
            x = [_parse_float(row[j], row_no, header[j]) for j in range(d)]
            a = _parse_binary(row[d], row_no, "a")
            y = _parse_float(row[d + 1], row_no, "y")
            records.append(PointRecord(x=np.asarray(x), a=a, y=y))
    return records


def save_point_csv(records, path) -> None:
    d = records[0].x.shape[0]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j}" for j in range(1, d + 1)] + ["a", "y"])
        for r in records:
            writer.writerow(
                [_FLOAT_FMT % v for v in r.x] + [str(r.a)] + [_FLOAT_FMT % r.y]
            )


_PANEL_X = re.compile(r"^x(\d+)_(\d+)$")
_PANEL_A = re.compile(r"^a_(\d+)$")


def panel_header(cov_dims) -> list:
    cols = ["id"]
    for t, d in enumerate(cov_dims, start=1):
        cols += [f"x{j}_{t}" for j in range(1, d + 1)]
        cols.append(f"a_{t}")
    cols.append("y")
    return cols


def load_panel_csv(path, n_periods: int) -> Panel:
    """Read a wide-format panel: id, then per t the x{j}_{t} block and a_{t}, then y."""
    if n_periods < 1:
        raise ValueError("n_periods must be positive")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("empty file: missing header") from None
        dims = _panel_dims_from_header(header, n_periods)
        expected = panel_header(dims)
        if header != expected:
            raise SchemaError(f"header {header!r} inconsistent with T={n_periods}")
        rows = list(reader)
    n = len(rows)
    ids = set()
    xs = [np.empty((n, d)) for d in dims]
    a = np.empty((n, n_periods), dtype=np.int64)
    y = np.empty(n)
    for i, row in enumerate(rows):
        row_no = i + 1
        if len(row) != len(header):
            raise ValidationError(f"row {row_no}: expected {len(header)} fields, got {len(row)}")
        sid = row[0]
        if sid in ids:
            raise ValidationError(f"duplicate id {sid!r}")
        ids.add(sid)
        c = 1
        for t, d in enumerate(dims):
            for j in range(d):
                xs[t][i, j] = _parse_float(row[c], row_no, header[c])
                c += 1
            a[i, t] = _parse_binary(row[c], row_no, header[c])
            c += 1
        y[i] = _parse_float(row[c], row_no, "y")
    return Panel(x=tuple(xs), a=a, y=y)


def _panel_dims_from_header(header, n_periods):
    if not header or header[0] != "id" or header[-1] != "y":
        raise SchemaError("panel header must start with 'id' and end with 'y'")
    dims = [0] * n_periods
    for name in header[1:-1]:
        m = _PANEL_X.match(name)
        if m:
            j, t = int(m.group(1)), int(m.group(2))
            if not 1 <= t <= n_periods:
                raise SchemaError(f"column {name!r} outside declared T={n_periods}")
            dims[t - 1] = max(dims[t - 1], j)
            continue
        m = _PANEL_A.match(name)
        if m:
            t = int(m.group(1))
            if not 1 <= t <= n_periods:
                raise SchemaError(f"column {name!r} outside declared T={n_periods}")
            continue
        raise SchemaError(f"unexpected column {name!r}")
    if any(d == 0 for d in dims):
        missing = dims.index(0) + 1
        raise SchemaError(f"missing column 'x1_{missing}'")
    return tuple(dims)


def save_panel_csv(panel: Panel, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(panel_header(panel.cov_dims))
        for i in range(panel.n_subjects):
            row = [str(i + 1)]
            for t in range(panel.n_periods):
                row += [_FLOAT_FMT % v for v in panel.x[t][i]]
                row.append(str(int(panel.a[i, t])))
            row.append(_FLOAT_FMT % panel.y[i])
            writer.writerow(row)


def infer_n_periods(path) -> int:
    """Infer T from a CSV header: 1 for point files, max a_t index for panels."""
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), None)
    if header is None:
        raise SchemaError("empty file: missing header")
    if header and header[0] == "id":
        periods = [int(m.group(1)) for name in header if (m := _PANEL_A.match(name))]
        if not periods:
            raise SchemaError("panel header has no a_t column")
        return max(periods)
    return 1
