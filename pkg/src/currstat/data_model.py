"""Observation types, dataset container, and CSV ingestion.

A nonrespondent is encoded in-band as (y = c0, delta = 0): follow-up ends
at c0 and the event indicator is structurally zero there.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Observation:
    """One survey recipient: covariates, follow-up time, event indicator."""

    w: np.ndarray
    y: float
    delta: int


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str  # numeric | binary | categorical
    levels: tuple = ()
    reference: str | None = None

    def __post_init__(self):
        if self.kind not in ("numeric", "binary", "categorical"):
            raise ValueError(f"unknown column kind: {self.kind}")
        if self.kind == "categorical":
            if len(self.levels) < 2:
                raise ValueError(f"categorical column {self.name} needs >= 2 levels")
            ref = self.reference if self.reference is not None else self.levels[0]
            if ref not in self.levels:
                raise ValueError(f"reference level {ref!r} not among levels of {self.name}")
            object.__setattr__(self, "reference", ref)
            object.__setattr__(self, "levels", tuple(self.levels))


@dataclass(frozen=True)
class CovariateSchema:
    """Per-column typing; categoricals expand to indicator columns."""

    columns: tuple

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            raw = json.load(f)
        cols = [ColumnSpec(name=c["name"], kind=c["kind"],
                           levels=tuple(c.get("levels", ())),
                           reference=c.get("reference"))
                for c in raw["columns"]]
        return cls(columns=cols)

    def expanded_names(self):
        """Deterministic expanded covariate column names."""
        names = []
        for col in self.columns:
            if col.kind == "categorical":
                for lev in col.levels:
                    if lev != col.reference:
                        names.append(f"{col.name}={lev}")
            else:
                names.append(col.name)
        return names

    def expand_row(self, raw):
        """Map raw string values (by column name) to the expanded vector.

        Returns None if any required field is missing/empty.
        """
        out = []
        for col in self.columns:
            val = raw.get(col.name)
            if val is None or str(val).strip() == "":
                return None
            val = str(val).strip()
            if col.kind == "categorical":
                if val not in col.levels:
                    raise ValueError(
                        f"value {val!r} not a level of column {col.name}")
                for lev in col.levels:
                    if lev != col.reference:
                        out.append(1.0 if val == lev else 0.0)
            elif col.kind == "binary":
                x = float(val)
                if x not in (0.0, 1.0):
                    raise ValueError(f"binary column {col.name} has value {val!r}")
                out.append(x)
            else:
                out.append(float(val))
        return out


@dataclass(frozen=True)
class Dataset:
    """Immutable analysis cohort with covariate matrix and (y, delta)."""

    w: np.ndarray  # (n, p)
    y: np.ndarray  # (n,)
    delta: np.ndarray  # (n,) in {0, 1}
    covariate_names: tuple
    c0: float
    b0: float
    ingest_report: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.w, dtype=np.float64))
        y = np.asarray(self.y, dtype=np.float64)
        delta = np.asarray(self.delta, dtype=np.int64)
        if w.shape[0] != len(y) or len(y) != len(delta):
            raise ValueError("w, y, delta must have matching lengths")
        if w.shape[1] != len(self.covariate_names):
            raise ValueError("covariate dimension does not match covariate_names")
        if not self.b0 < self.c0:
            raise ValueError("require b0 < c0")
        if np.any(y <= 0):
            raise ValueError("all y must be positive")
        if np.any((y < self.b0) | (y > self.c0)):
            raise ValueError("all y must satisfy b0 <= y <= c0")
        if not np.all((delta == 0) | (delta == 1)):
            raise ValueError("delta must be binary")
        if np.any((y == self.c0) & (delta == 1)):
            raise ValueError("nonrespondent rows (y = c0) must have delta = 0")
        w.setflags(write=False)
        y.setflags(write=False)
        delta.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))

    @property
    def n(self):
        return len(self.y)

    @property
    def p(self):
        return self.w.shape[1]

    @property
    def observations(self):
        return [Observation(w=self.w[i], y=float(self.y[i]), delta=int(self.delta[i]))
                for i in range(self.n)]

    def subset(self, mask):
        mask = np.asarray(mask)
        return Dataset(w=self.w[mask], y=self.y[mask], delta=self.delta[mask],
                       covariate_names=self.covariate_names, c0=self.c0, b0=self.b0)

    def numeric_schema(self):
        """Schema treating every current covariate column as numeric."""
        return CovariateSchema(
            columns=[ColumnSpec(name=nm, kind="numeric") for nm in self.covariate_names])

    def to_csv(self, path):
        """Write expanded covariates + y + delta with full float precision."""
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(list(self.covariate_names) + ["y", "delta"])
            for i in range(self.n):
                row = [repr(float(v)) for v in self.w[i]]
                row.append(repr(float(self.y[i])))
                row.append(str(int(self.delta[i])))
                writer.writerow(row)


def ingest_csv(path, schema: CovariateSchema, c0: float, b0: float) -> Dataset:
    """Read and validate a current-status CSV.

    Expected header: schema columns (any order) plus 'y' and 'delta'.
    Rows with any missing field are dropped and counted in the ingestion
    report (available as ``dataset.ingest_report``).
    """
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        for col in schema.columns:
            if col.name not in header:
                raise ValueError(f"schema mismatch: column {col.name!r} missing from CSV")
        for required in ("y", "delta"):
            if required not in header:
                raise ValueError(f"schema mismatch: column {required!r} missing from CSV")
        rows_w, rows_y, rows_d = [], [], []
        n_read = 0
        n_dropped = 0
        for idx, raw in enumerate(reader):
            n_read += 1
            y_raw = (raw.get("y") or "").strip()
            d_raw = (raw.get("delta") or "").strip()
            if y_raw == "" or d_raw == "":
                n_dropped += 1
                continue
            wvec = schema.expand_row(raw)
            if wvec is None:
                n_dropped += 1
                continue
            y = float(y_raw)
            if y <= 0:
                raise ValueError(f"row {idx}: y must be positive")
            if y < b0:
                raise ValueError(f"row {idx}: response before minimum (y={y} < b0={b0})")
            if y > c0:
                raise ValueError(f"row {idx}: response after maximum follow-up (y={y} > c0={c0})")
            d = int(float(d_raw))
            if d not in (0, 1):
                raise ValueError(f"row {idx}: delta must be 0 or 1")
            if y == c0 and d == 1:
                raise ValueError(
                    f"row {idx}: nonrespondent (y = c0) cannot have delta = 1")
            rows_w.append(wvec)
            rows_y.append(y)
            rows_d.append(d)
    names = schema.expanded_names()
    w = np.asarray(rows_w, dtype=np.float64).reshape(len(rows_y), len(names))
    y = np.asarray(rows_y)
    d = np.asarray(rows_d, dtype=np.int64)
    report = {
        "n_read": n_read,
        "n_dropped_missing": n_dropped,
        "n_respondents": int(np.sum(y < c0)),
        "n_nonrespondents": int(np.sum(y == c0)),
    }
    return Dataset(w=w, y=y, delta=d, covariate_names=names, c0=c0, b0=b0,
                   ingest_report=report)


def split_respondents(d: Dataset):
    """Partition into (respondents with y < c0, nonrespondents with y = c0)."""
    resp = d.y < d.c0
    return d.subset(resp), d.subset(~resp)
