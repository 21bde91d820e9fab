"""Areal data model: unit records, census means and per-area aggregates.

All predictors consume an :class:`ArealDataset`, a column-oriented table with
one row per area. For area ``c`` with ``N_c`` units of which ``n_c`` were
sampled, the table holds the sampled means ``ybar_s``/``xbar_s``, the census
mean ``xbar`` and the mean over the non-sampled units

    xbar_ns = (xbar - f_c * xbar_s) / (1 - f_c),   f_c = n_c / N_c.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple, Sequence

import numpy as np


class ArealDataError(ValueError):
    """Raised for malformed or inconsistent areal data."""


@dataclass(frozen=True)
class UnitRecord:
    area_id: str
    stratum: str
    y: float | None
    x: np.ndarray


@dataclass(frozen=True)
class CensusTable:
    """Per-area census information: population count and covariate means."""

    area_id: np.ndarray
    stratum: np.ndarray
    N: np.ndarray
    xbar: np.ndarray
    covariate_names: tuple[str, ...]

    def __post_init__(self):
        ids = list(self.area_id)
        if len(set(ids)) != len(ids):
            dup = sorted({a for a in ids if ids.count(a) > 1})
            raise ArealDataError(f"duplicate census area_id: {dup[:5]}")
        if self.xbar.shape != (len(ids), len(self.covariate_names)):
            raise ArealDataError("census xbar shape does not match ids/names")
        if np.any(self.N < 1):
            raise ArealDataError("census N must be >= 1")

    @property
    def p(self) -> int:
        return len(self.covariate_names)


class ArealRow(NamedTuple):
    area_id: str
    stratum: str
    N: int
    n: int
    f: float
    ybar_s: float
    xbar_s: np.ndarray
    xbar: np.ndarray
    xbar_ns: np.ndarray


@dataclass(frozen=True, eq=False)
class ArealDataset:
    """One row per area; arrays are indexed by area position.

    ``ybar_s`` and ``xbar_s`` are NaN for areas with ``n == 0``.

    ``training`` is set on anonymised datasets and points at the dataset
    carrying the real sampled aggregates, which are still used for fitting.
    """

    area_id: np.ndarray
    stratum: np.ndarray
    N: np.ndarray
    n: np.ndarray
    ybar_s: np.ndarray
    xbar_s: np.ndarray
    xbar: np.ndarray
    xbar_ns: np.ndarray
    covariate_names: tuple[str, ...]
    design_variable_index: int | None = None
    training: ArealDataset | None = field(default=None, repr=False)

    def __post_init__(self):
        M = len(self.area_id)
        p = len(self.covariate_names)
        if len(set(self.area_id.tolist())) != M:
            raise ArealDataError("area_ids must be unique")
        for name in ("xbar_s", "xbar", "xbar_ns"):
            if getattr(self, name).shape != (M, p):
                raise ArealDataError(f"{name} must have shape ({M}, {p})")
        if np.any(self.n < 0) or np.any(self.n > self.N):
            raise ArealDataError("need 0 <= n_c <= N_c for every area")
        if self.training is None and not np.any(self.n > 0):
            raise ArealDataError("dataset has no sampled area")

    @property
    def M(self) -> int:
        return len(self.area_id)

    @property
    def p(self) -> int:
        return len(self.covariate_names)

    @property
    def f(self) -> np.ndarray:
        return self.n / self.N

    @property
    def sampled(self) -> np.ndarray:
        """Boolean mask of areas with at least one sampled unit."""
        return self.n > 0

    @property
    def anonymised(self) -> bool:
        return self.training is not None

    def row(self, i: int) -> ArealRow:
        return ArealRow(str(self.area_id[i]), str(self.stratum[i]),
                        int(self.N[i]), int(self.n[i]),
                        float(self.n[i] / self.N[i]), float(self.ybar_s[i]),
                        self.xbar_s[i], self.xbar[i], self.xbar_ns[i])

    def rows(self) -> list[ArealRow]:
        return [self.row(i) for i in range(self.M)]

    def fitting_data(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Sampled-area training data ``(index, xbar_s, ybar_s, n)``.

        For anonymised datasets the real sampled aggregates are returned.
        """
        src = self.training if self.training is not None else self
        idx = np.flatnonzero(src.n > 0)
        return idx, src.xbar_s[idx], src.ybar_s[idx], src.n[idx].astype(float)

    def fitting_ids(self) -> np.ndarray:
        src = self.training if self.training is not None else self
        return src.area_id[src.n > 0]

    def subset(self, index: Sequence[int] | np.ndarray) -> ArealDataset:
        """Rows ``index`` as a new dataset (training view subset alike)."""
        index = np.asarray(index, dtype=int)
        training = None if self.training is None else self.training.subset(index)
        return replace(
            self, area_id=self.area_id[index], stratum=self.stratum[index],
            N=self.N[index], n=self.n[index], ybar_s=self.ybar_s[index],
            xbar_s=self.xbar_s[index], xbar=self.xbar[index],
            xbar_ns=self.xbar_ns[index], training=training)


def nonsampled_means(xbar: np.ndarray, xbar_s: np.ndarray,
                     n: np.ndarray, N: np.ndarray) -> np.ndarray:
    """Covariate means over non-sampled units.

    Areas with ``n == 0`` get ``xbar``; fully enumerated areas (``n == N``)
    have no non-sampled units and also get ``xbar`` as a placeholder.
    """
    f = (n / N)[:, None]
    out = np.array(xbar, dtype=float, copy=True)
    part = (n > 0) & (n < N)
    if np.any(part):
        out[part] = (xbar[part] - f[part] * xbar_s[part]) / (1.0 - f[part])
    return out


def from_unit_arrays(census: CensusTable, area_index: np.ndarray,
                     y: np.ndarray, X: np.ndarray,
                     design_variable: str | None = None) -> ArealDataset:
    """Aggregate sampled unit arrays into an :class:`ArealDataset`.

    Parameters
    ----------
    census : CensusTable
    area_index : (n_units,) int array
        Position of each unit's area in ``census``.
    y : (n_units,) array
    X : (n_units, p) array
    design_variable : str, optional
        Stratum level whose 0/1 indicator is appended as the forced design
        covariate ``stratum_<level>``.
    """
    M, p = len(census.area_id), census.p
    X = np.asarray(X, dtype=float)
    if X.size != len(y) * p:
        raise ArealDataError(f"unit covariates do not match the census dimension {p}")
    X = X.reshape(len(y), p)
    if np.any(~np.isfinite(y)):
        raise ArealDataError("sampled units must have an outcome")
    n = np.bincount(area_index, minlength=M)
    if np.any(n > census.N):
        bad = census.area_id[n > census.N][:5]
        raise ArealDataError(f"n_c > N_c for areas {list(bad)}")
    with np.errstate(invalid="ignore", divide="ignore"):
        ybar_s = np.bincount(area_index, weights=y, minlength=M) / n
        xbar_s = np.column_stack(
            [np.bincount(area_index, weights=X[:, j], minlength=M) for j in range(p)]
        ).reshape(M, p) / n[:, None]
    ybar_s[n == 0] = np.nan
    xbar_s[n == 0] = np.nan
    xbar = np.asarray(census.xbar, dtype=float)
    names = census.covariate_names
    dvi = None
    if design_variable is not None:
        ind = (census.stratum == design_variable).astype(float)[:, None]
        xbar = np.hstack([xbar, ind])
        xbar_s = np.hstack([xbar_s, np.where(n[:, None] > 0, ind, np.nan)])
        names = names + (f"stratum_{design_variable}",)
        dvi = len(names) - 1
    xbar_ns = nonsampled_means(xbar, xbar_s, n, census.N)
    return ArealDataset(
        area_id=np.asarray(census.area_id), stratum=np.asarray(census.stratum),
        N=np.asarray(census.N, dtype=np.int64), n=n.astype(np.int64),
        ybar_s=ybar_s, xbar_s=xbar_s, xbar=xbar, xbar_ns=xbar_ns,
        covariate_names=tuple(names), design_variable_index=dvi)


def aggregate(units: Iterable[UnitRecord], census: CensusTable,
              design_variable: str | None = None) -> ArealDataset:
    """Build the areal dataset from sampled unit records and census means.

    Every census area yields one row; areas without sampled units get
    ``n_c = 0`` and ``xbar_ns = xbar``.
    """
    units = list(units)
    pos = {a: i for i, a in enumerate(census.area_id.tolist())}
    area_index = np.empty(len(units), dtype=np.int64)
    y = np.empty(len(units))
    X = np.empty((len(units), census.p))
    for k, u in enumerate(units):
        if u.area_id not in pos:
            raise ArealDataError(f"sampled area {u.area_id!r} missing from census")
        if len(u.x) != census.p:
            raise ArealDataError(
                f"unit covariate length {len(u.x)} != census dimension {census.p}")
        if u.y is None:
            raise ArealDataError(f"sampled unit in area {u.area_id!r} has no outcome")
        area_index[k] = pos[u.area_id]
        y[k] = u.y
        X[k] = u.x
    return from_unit_arrays(census, area_index, y, X, design_variable)


def anonymise(dataset: ArealDataset) -> ArealDataset:
    """Prediction-side view that treats every area as non-sampled.

    The returned dataset reports ``n_c = 0`` (so ``f_c = 0``) and
    ``xbar_ns = xbar`` for all areas, while :meth:`ArealDataset.fitting_data`
    still returns the real sampled aggregates.
    """
    training = dataset.training if dataset.training is not None else dataset
    M, p = dataset.M, dataset.p
    return replace(dataset, n=np.zeros(M, dtype=np.int64),
                   ybar_s=np.full(M, np.nan), xbar_s=np.full((M, p), np.nan),
                   xbar_ns=np.array(dataset.xbar, dtype=float, copy=True),
                   training=training)


def held_out_view(dataset: ArealDataset, index) -> ArealDataset:
    """Sampled areas ``index`` posed as prediction targets of their own samples.

    Each area becomes a pseudo-area of ``n_c`` units with nothing observed:
    ``N = n_c``, ``n = 0`` and covariate means ``xbar_s``, so a model's
    non-sampled prediction targets the observed ``ybar_s``. Used for
    cross-validation on survey data, where area totals of the outcome are
    unknown.
    """
    sub = dataset.subset(index)
    if np.any(sub.n == 0):
        raise ArealDataError("held-out areas must be sampled")
    M, p = sub.M, sub.p
    return replace(sub, N=sub.n.copy(), n=np.zeros(M, dtype=np.int64),
                   ybar_s=np.full(M, np.nan), xbar_s=np.full((M, p), np.nan),
                   xbar=sub.xbar_s.copy(), xbar_ns=sub.xbar_s.copy(), training=sub)


# --------------------------------------------------------------------------
# CSV ingestion

def _read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ArealDataError(f"{path}: empty file, header row required") from None
        rows = [r for r in reader if r]
    return header, rows


def _float(cell: str, path, line: int, col: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise ArealDataError(
            f"{path}:{line}: non-numeric value {cell!r} in column {col!r}") from None


def _require(header: list[str], cols: Sequence[str], path) -> None:
    missing = [c for c in cols if c not in header]
    if missing:
        raise ArealDataError(f"{path}: missing column(s) {missing}")


def ingest_survey_csv(path) -> tuple[list[UnitRecord], tuple[str, ...]]:
    """Read ``area_id,stratum,y,x_<name>...`` into unit records.

    Returns the records and the covariate names (header order, without the
    ``x_`` prefix).
    """
    header, rows = _read_csv(path)
    _require(header, ["area_id", "stratum", "y"], path)
    xcols = [i for i, h in enumerate(header) if h.startswith("x_")]
    if not xcols:
        raise ArealDataError(f"{path}: no covariate columns x_<name>")
    names = tuple(header[i][2:] for i in xcols)
    ia, istr, iy = (header.index(c) for c in ("area_id", "stratum", "y"))
    units = []
    for line, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise ArealDataError(f"{path}:{line}: expected {len(header)} fields")
        x = np.array([_float(r[i], path, line, header[i]) for i in xcols])
        y = None if r[iy].strip() in ("", "NA") else _float(r[iy], path, line, "y")
        if not r[ia].strip():
            raise ArealDataError(f"{path}:{line}: empty area_id")
        units.append(UnitRecord(r[ia].strip(), r[istr].strip(), y, x))
    return units, names


def ingest_census_csv(path) -> CensusTable:
    """Read ``area_id,stratum,N,xbar_<name>...`` into a :class:`CensusTable`."""
    header, rows = _read_csv(path)
    _require(header, ["area_id", "stratum", "N"], path)
    xcols = [i for i, h in enumerate(header) if h.startswith("xbar_")]
    if not xcols:
        raise ArealDataError(f"{path}: no covariate columns xbar_<name>")
    names = tuple(header[i][5:] for i in xcols)
    ia, istr, iN = (header.index(c) for c in ("area_id", "stratum", "N"))
    ids, strata, N, xbar = [], [], [], []
    for line, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise ArealDataError(f"{path}:{line}: expected {len(header)} fields")
        Nc = _float(r[iN], path, line, "N")
        if Nc != int(Nc):
            raise ArealDataError(f"{path}:{line}: N must be an integer")
        ids.append(r[ia].strip())
        strata.append(r[istr].strip())
        N.append(int(Nc))
        xbar.append([_float(r[i], path, line, header[i]) for i in xcols])
    return CensusTable(np.array(ids, dtype=object), np.array(strata, dtype=object),
                       np.array(N, dtype=np.int64),
                       np.array(xbar, dtype=float).reshape(len(ids), len(names)),
                       names)


def load_dataset(survey_path, census_path,
                 design_variable: str | None = None) -> ArealDataset:
    """Ingest both CSV files and aggregate them.

    Survey covariate names must match census names exactly and in order.
    """
    units, names = ingest_survey_csv(survey_path)
    census = ingest_census_csv(census_path)
    if names != census.covariate_names:
        raise ArealDataError(
            f"survey covariates {names[:5]}... do not match census "
            f"covariates {census.covariate_names[:5]}...")
    return aggregate(units, census, design_variable)


def write_survey_csv(path, area_id, stratum, y, X, names: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["area_id", "stratum", "y", *[f"x_{n}" for n in names]])
        for a, s, yy, xx in zip(area_id, stratum, y, X):
            w.writerow([a, s, repr(float(yy)), *[repr(float(v)) for v in xx]])


def write_census_csv(path, census: CensusTable) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["area_id", "stratum", "N",
                    *[f"xbar_{n}" for n in census.covariate_names]])
        for a, s, Nc, xx in zip(census.area_id, census.stratum, census.N, census.xbar):
            w.writerow([a, s, int(Nc), *[repr(float(v)) for v in xx]])

