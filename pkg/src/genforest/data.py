"""Immutable columnar datasets and CSV input/output."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyFile, InvalidData, MissingColumn, MissingRole, NonNumericCell

MODEL_KINDS = ("regression", "quantile", "partial_effect", "instrumental")

_REQUIRED_ROLES = {
    "regression": ("outcome",),
    "quantile": ("outcome",),
    "partial_effect": ("outcome", "treatment"),
    "instrumental": ("outcome", "treatment", "instrument"),
}


def _frozen(a, ndim):
    arr = np.array(a, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise InvalidData(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Dataset:
    """Samples with role-tagged columns.

    ``features`` is an ``(n, p)`` matrix; ``outcome``, ``treatment`` and
    ``instrument`` are optional length-``n`` columns. Arrays are copied and
    marked read-only on construction.
    """

    features: np.ndarray
    outcome: Optional[np.ndarray] = None
    treatment: Optional[np.ndarray] = None
    instrument: Optional[np.ndarray] = None
    feature_names: tuple = field(default=())

    def __post_init__(self):
        X = _frozen(self.features, 2)
        n, p = X.shape
        if n < 1 or p < 1:
            raise InvalidData(f"need n >= 1 and p >= 1, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise InvalidData("features contain non-finite values")
        object.__setattr__(self, "features", np.ascontiguousarray(X))
        for role in ("outcome", "treatment", "instrument"):
            col = getattr(self, role)
            if col is None:
                continue
            col = _frozen(col, 1)
            if col.shape[0] != n:
                raise InvalidData(f"{role} has {col.shape[0]} entries, expected {n}")
            if not np.all(np.isfinite(col)):
                raise InvalidData(f"{role} contains non-finite values")
            object.__setattr__(self, role, col)
        names = tuple(self.feature_names) or tuple(f"x{j + 1}" for j in range(p))
        if len(names) != p:
            raise InvalidData(f"{len(names)} feature names for {p} features")
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def replace(self, **changes) -> "Dataset":
        kwargs = dict(
            features=self.features,
            outcome=self.outcome,
            treatment=self.treatment,
            instrument=self.instrument,
            feature_names=self.feature_names,
        )
        kwargs.update(changes)
        return Dataset(**kwargs)


@dataclass(frozen=True)
class ColumnRoles:
    features: tuple
    outcome: Optional[str] = None
    treatment: Optional[str] = None
    instrument: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        names = list(self.features) + [
            c for c in (self.outcome, self.treatment, self.instrument) if c is not None
        ]
        if len(set(names)) != len(names):
            raise InvalidData(f"column roles are not distinct: {names}")
        if not self.features:
            raise InvalidData("at least one feature column is required")


def validate_for_model(data: Dataset, model_kind: str) -> None:
    """Raise :class:`MissingRole` unless ``data`` has every column ``model_kind`` needs."""
    if model_kind not in _REQUIRED_ROLES:
        raise ValueError(f"unknown model kind {model_kind!r}")
    for role in _REQUIRED_ROLES[model_kind]:
        if getattr(data, role) is None:
            raise MissingRole(role)


def read_header(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(_skip_comments(fh)):
            return [h.strip() for h in row]
    raise EmptyFile(f"{path} is empty")


def _skip_comments(fh):
    for line in fh:
        if not line.startswith("#"):
            yield line


def load_csv(path, roles: ColumnRoles) -> Dataset:
    """Read a headed numeric CSV, binding columns according to ``roles``.

    Lines starting with ``#`` are ignored. Row ``i`` of the file becomes
    sample ``i``.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(_skip_comments(fh))
        header = next(reader, None)
        if header is None:
            raise EmptyFile(f"{path} is empty")
        header = [h.strip() for h in header]
        wanted = list(roles.features) + [
            c for c in (roles.outcome, roles.treatment, roles.instrument) if c is not None
        ]
        for name in wanted:
            if name not in header:
                raise MissingColumn(f"column {name!r} not found in {path}")
        pos = {name: header.index(name) for name in wanted}
        rows = []
        for r, row in enumerate(reader, start=1):
            if not row:
                continue
            values = []
            for name in wanted:
                j = pos[name]
                cell = row[j].strip() if j < len(row) else ""
                try:
                    v = float(cell)
                except ValueError:
                    raise NonNumericCell(r, name, cell) from None
                if not math.isfinite(v):
                    raise NonNumericCell(r, name, cell)
                values.append(v)
            rows.append(values)
    if not rows:
        raise EmptyFile(f"{path} has a header but no data rows")
    table = np.array(rows, dtype=np.float64)
    p = len(roles.features)
    cols = {name: table[:, k] for k, name in enumerate(wanted)}
    return Dataset(
        features=table[:, :p],
        outcome=cols.get(roles.outcome),
        treatment=cols.get(roles.treatment),
        instrument=cols.get(roles.instrument),
        feature_names=roles.features,
    )


def write_csv(
    data: Dataset,
    path,
    outcome_name: str = "y",
    treatment_name: str = "w",
    instrument_name: str = "z",
) -> ColumnRoles:
    """Write ``data`` with 17 significant digits; returns the roles to reload it."""
    header = list(data.feature_names)
    cols = [data.features[:, j] for j in range(data.p)]
    names = {}
    for role, name in (
        ("outcome", outcome_name),
        ("treatment", treatment_name),
        ("instrument", instrument_name),
    ):
        col = getattr(data, role)
        if col is not None:
            header.append(name)
            cols.append(col)
            names[role] = name
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(data.n):
            w.writerow([format(c[i], ".17g") for c in cols])
    return ColumnRoles(features=data.feature_names, **names)


def default_roles(header: Sequence[str], outcome=None, treatment=None, instrument=None,
                  features=None) -> ColumnRoles:
    """Roles where unspecified features default to every non-role column."""
    taken = {c for c in (outcome, treatment, instrument) if c is not None}
    if features is None:
        features = [h for h in header if h not in taken]
    return ColumnRoles(features=tuple(features), outcome=outcome, treatment=treatment,
                       instrument=instrument)
