"""Ingestion, harmonization and treatment binarization of district tables.

Source files are UTF-8 CSVs with a header row. Dates are ISO ``YYYY-MM-DD``
or ``YYYY-MM``. Numeric cells that do not parse (``n/a``, empty, ``inf``)
become missing; rows are never dropped at load time.
"""

from __future__ import annotations

import csv
import enum
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

__all__ = [
    "LoadSummary",
    "Period",
    "fill_forward",
    "SCHEMAS",
    "Schema",
    "StudyFrame",
    "Table",
    "TableError",
    "aggregate",
    "binarize_treatment",
    "drop_missing",
    "filter_rows",
    "join",
    "load_csv",
    "per_capita_normalize",
    "write_csv",
]

KINDS = ("numeric", "categorical", "date")
AGGREGATORS = ("mean", "sum", "last")
_DATE_RE = re.compile(r"^\d{4}-\d{2}(-\d{2})?$")


class TableError(ValueError):
    pass


class Period(enum.Enum):
    ANNUAL = "annual"
    MONTHLY = "monthly"

    @classmethod
    def parse(cls, value) -> "Period":
        if isinstance(value, Period):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise TableError(f"unknown period {value!r}; expected annual or monthly") from None


@dataclass(frozen=True)
class Schema:
    """Expected columns of one source file.

    ``aggregators`` gives the default reducer for each value column and
    ``seasonal`` lists columns whose values hold for a whole season and are
    carried forward when resampling to months.
    """

    name: str
    columns: Mapping[str, str]
    aggregators: Mapping[str, str] = field(default_factory=dict)
    seasonal: tuple[str, ...] = ()

    def __post_init__(self):
        for col, kind in self.columns.items():
            if kind not in KINDS:
                raise TableError(f"schema {self.name}: column {col} has unknown kind {kind!r}")
        for col, agg in self.aggregators.items():
            if agg not in AGGREGATORS:
                raise TableError(f"schema {self.name}: unknown aggregator {agg!r} for {col}")

    @property
    def keys(self) -> list[str]:
        return [c for c, k in self.columns.items() if k == "categorical"]

    @property
    def date_column(self) -> str | None:
        dates = [c for c, k in self.columns.items() if k == "date"]
        return dates[0] if dates else None


def _schema(name, columns, aggregators, seasonal=()):
    cols = dict(columns)
    cols.update({c: "numeric" for c in aggregators})
    return Schema(name, cols, dict(aggregators), tuple(seasonal))


_KEYS = {"district": "categorical", "date": "date"}

SCHEMAS: dict[str, Schema] = {
    s.name: s for s in [
        _schema("district_annual", _KEYS, {
            "ENSO": "mean", "SPI": "mean", "Fatalities": "sum", "MarketPrices": "mean",
            "SorghumProduction": "sum", "Displacement": "sum", "Population": "last",
            "Cash": "sum", "GAM": "mean"}),
        _schema("fsnau_monthly", _KEYS, {"MarketPrices": "mean", "Cash": "sum", "GAM": "mean"}),
        _schema("fsnau_sorghum", _KEYS, {"SorghumProduction": "last"},
                seasonal=("SorghumProduction",)),
        _schema("acled_events", _KEYS, {"Fatalities": "sum"}),
        _schema("prmn_displacement", _KEYS, {"Displacement": "sum"}),
        _schema("chirps_spi", _KEYS, {"SPI": "mean"}),
        _schema("wmo_enso", {"date": "date"}, {"ENSO": "mean"}),
        _schema("unfpa_population", {"district": "categorical"}, {"Population": "last"}),
    ]
}


@dataclass(frozen=True)
class LoadSummary:
    source: str
    rows_read: int
    missing: Mapping[str, int]

    def to_text(self) -> str:
        lines = [f"source: {self.source}", f"rows_read: {self.rows_read}"]
        lines += [f"missing.{col}: {n}" for col, n in self.missing.items()]
        return "\n".join(lines) + "\n"


class Table:
    """Column-typed table backed by a pandas DataFrame.

    Operations never mutate a Table; they return a new one. ``normalized``
    records columns already divided by population.
    """

    def __init__(self, frame: pd.DataFrame, kinds: Mapping[str, str],
                 normalized: Iterable[str] = (), summary: LoadSummary | None = None):
        if list(frame.columns) != list(kinds):
            raise TableError("kinds must list every column in frame order")
        if frame.columns.duplicated().any():
            raise TableError("column names must be unique")
        for col, kind in kinds.items():
            if kind not in KINDS:
                raise TableError(f"column {col} has unknown kind {kind!r}")
        self._frame = frame.reset_index(drop=True)
        self.kinds = dict(kinds)
        self.normalized = frozenset(normalized)
        self.summary = summary

    @property
    def frame(self) -> pd.DataFrame:
        return self._frame.copy()

    @property
    def columns(self) -> list[tuple[str, str]]:
        return list(self.kinds.items())

    @property
    def column_names(self) -> list[str]:
        return list(self.kinds)

    @property
    def n_rows(self) -> int:
        return len(self._frame)

    def __len__(self):
        return self.n_rows

    def __contains__(self, name):
        return name in self.kinds

    def values(self, name: str) -> np.ndarray:
        self._require([name])
        return self._frame[name].to_numpy()

    def missing_counts(self) -> dict[str, int]:
        return {c: int(self._frame[c].isna().sum()) for c in self.kinds}

    def _require(self, names):
        unknown = [n for n in names if n not in self.kinds]
        if unknown:
            raise TableError(f"unknown column(s): {', '.join(unknown)}")

    def _derive(self, frame, kinds=None, normalized=None) -> "Table":
        return Table(frame, self.kinds if kinds is None else kinds,
                     self.normalized if normalized is None else normalized)

    def __repr__(self):
        return f"Table({self.n_rows} rows, columns={self.column_names})"


def _resolve_schema(schema) -> Schema:
    if isinstance(schema, Schema):
        return schema
    if isinstance(schema, str):
        try:
            return SCHEMAS[schema]
        except KeyError:
            raise TableError(f"unknown schema {schema!r}") from None
    return Schema("custom", dict(schema))


def _parse_dates(raw: pd.Series) -> pd.Series:
    out = pd.Series(pd.NaT, index=raw.index, dtype="datetime64[ns]")
    ok = raw.str.match(_DATE_RE.pattern)
    if ok.any():
        text = raw[ok].where(raw[ok].str.len() > 7, raw[ok] + "-01")
        out[ok] = pd.to_datetime(text, format="%Y-%m-%d", errors="coerce")
    return out


def _parse_numeric(raw: pd.Series) -> pd.Series:
    vals = pd.to_numeric(raw.str.strip(), errors="coerce").astype(float)
    return vals.where(np.isfinite(vals))


def load_csv(path, schema) -> Table:
    """Read a CSV and coerce the schema's columns to their declared kinds.

    Columns outside the schema are kept as categorical text.
    """
    schema = _resolve_schema(schema)
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        header = next(csv.reader(fh), None)
    if not header or all(not h.strip() for h in header):
        raise TableError(f"{path}: empty file or missing header row")
    header = [h.strip() for h in header]
    dupes = sorted({h for h in header if header.count(h) > 1})
    if dupes:
        raise TableError(f"{path}: duplicate header name(s): {', '.join(dupes)}")
    missing = [c for c in schema.columns if c not in header]
    if missing:
        raise TableError(f"{path}: missing required column(s): {', '.join(missing)}")

    raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8",
                      skipinitialspace=True)
    raw.columns = header
    kinds = {}
    frame = pd.DataFrame(index=raw.index)
    for col in header:
        kind = schema.columns.get(col, "categorical")
        series = raw[col].fillna("")
        if kind == "numeric":
            frame[col] = _parse_numeric(series)
        elif kind == "date":
            frame[col] = _parse_dates(series.str.strip())
        else:
            stripped = series.str.strip()
            frame[col] = stripped.where(stripped != "", None).astype(object)
        kinds[col] = kind
    table = Table(frame, kinds)
    table.summary = LoadSummary(str(path.name), table.n_rows, table.missing_counts())
    return table


def write_csv(table: Table, path) -> Path:
    """Write ``table`` with the same conventions ``load_csv`` reads."""
    path = Path(path)
    frame = table.frame
    for col, kind in table.kinds.items():
        if kind == "date":
            frame[col] = frame[col].dt.strftime("%Y-%m-%d")
        elif kind == "numeric":
            frame[col] = [("" if pd.isna(v) else repr(float(v))) for v in frame[col]]
    frame.to_csv(path, index=False, lineterminator="\n", na_rep="")
    return path


def filter_rows(table: Table, column: str, value) -> Table:
    table._require([column])
    frame = table.frame
    return table._derive(frame[frame[column] == value])


def drop_missing(table: Table, columns: Sequence[str]) -> Table:
    """Listwise deletion over ``columns``."""
    table._require(columns)
    frame = table.frame
    return table._derive(frame.dropna(subset=list(columns)))


def join(left: Table, right: Table, on: Sequence[str], how: str = "outer") -> Table:
    """Join two tables on shared key columns; value columns must not overlap."""
    left._require(on)
    right._require(on)
    overlap = (set(left.kinds) & set(right.kinds)) - set(on)
    if overlap:
        raise TableError(f"join would duplicate column(s): {', '.join(sorted(overlap))}")
    for key in on:
        if left.kinds[key] != right.kinds[key]:
            raise TableError(f"key {key} has kind {left.kinds[key]} vs {right.kinds[key]}")
    frame = left.frame.merge(right.frame, on=list(on), how=how, sort=True)
    kinds = {**left.kinds, **{c: k for c, k in right.kinds.items() if c not in on}}
    frame = frame[list(kinds)]
    return Table(frame, kinds, left.normalized | right.normalized)


def aggregate(table: Table, keys: Sequence[str], period, spec: Mapping[str, str],
              date_col: str = "date", carry_forward: Sequence[str] = ()) -> Table:
    """Collapse rows to one per (keys, period bucket).

    Every column other than the keys and ``date_col`` needs an aggregator
    in ``spec`` (mean, sum or last). Aggregators skip missing cells; a group
    whose cells are all missing yields missing. The date column is
    replaced by the bucket start (Jan 1st or the 1st of the month).

    With a monthly period, ``carry_forward`` columns (seasonal values) are
    replicated into every month of each key group until the next
    observation; the output then covers each group's full month range.
    """
    period = Period.parse(period)
    keys = list(keys)
    table._require(keys + [date_col])
    if table.kinds[date_col] != "date":
        raise TableError(f"{date_col} is not a date column")
    value_cols = [c for c in table.column_names if c not in keys and c != date_col]
    unknown = [c for c in spec if c not in table.kinds]
    if unknown:
        raise TableError(f"unknown column(s) in aggregation spec: {', '.join(unknown)}")
    lacking = [c for c in value_cols if c not in spec]
    if lacking:
        raise TableError(f"no aggregator for column(s): {', '.join(lacking)}")
    for col in value_cols:
        agg = spec[col]
        if agg not in AGGREGATORS:
            raise TableError(f"unknown aggregator {agg!r} for {col}")
        if agg in ("mean", "sum") and table.kinds[col] != "numeric":
            raise TableError(f"cannot {agg} non-numeric column {col}")
    carry_forward = list(carry_forward)
    table._require(carry_forward)
    if carry_forward and period is not Period.MONTHLY:
        raise TableError("carry_forward only applies to monthly resampling")

    frame = table.frame
    freq = "Y" if period is Period.ANNUAL else "M"
    frame[date_col] = frame[date_col].dt.to_period(freq).dt.start_time
    group_cols = keys + [date_col]
    grouped = frame.groupby(group_cols, sort=True, dropna=False)
    parts = []
    for col in value_cols:
        agg = spec[col]
        if agg == "mean":
            parts.append(grouped[col].mean())
        elif agg == "sum":
            parts.append(grouped[col].sum(min_count=1))
        else:
            parts.append(grouped[col].last())
    if parts:
        out = pd.concat(parts, axis=1).reset_index()
    else:
        out = grouped.size().reset_index()[group_cols]

    if carry_forward:
        filled = []
        for _, group in (out.groupby(keys, sort=True, dropna=False) if keys else [(None, out)]):
            months = pd.date_range(group[date_col].min(), group[date_col].max(), freq="MS")
            g = group.set_index(date_col).reindex(months)
            g.index.name = date_col
            for k in keys:
                g[k] = group[k].iloc[0]
            g[carry_forward] = g[carry_forward].ffill()
            filled.append(g.reset_index())
        out = pd.concat(filled, ignore_index=True)

    out = out[table.column_names]
    for col in value_cols:
        if table.kinds[col] == "numeric":
            out[col] = out[col].astype(float)
    return table._derive(out.sort_values(group_cols, kind="stable"))


def fill_forward(table: Table, cols: Sequence[str], keys: Sequence[str] = (),
                 date_col: str = "date") -> Table:
    """Carry the last observed value of ``cols`` forward in date order within
    each key group (a seasonal value holds until the next observation)."""
    keys = list(keys)
    cols = list(cols)
    table._require(keys + cols + [date_col])
    frame = table.frame.sort_values(keys + [date_col], kind="stable")
    if keys:
        frame[cols] = frame.groupby(keys, sort=False, dropna=False)[cols].ffill()
    else:
        frame[cols] = frame[cols].ffill()
    return table._derive(frame)


def per_capita_normalize(table: Table, cols: Sequence[str], population_col: str) -> Table:
    """Divide each of ``cols`` by ``population_col``.

    Refuses columns that were already normalized.
    """
    cols = list(cols)
    table._require(cols + [population_col])
    if population_col in cols:
        raise TableError("population column cannot normalize itself")
    again = sorted(set(cols) & table.normalized)
    if again:
        raise TableError(f"column(s) already normalized per capita: {', '.join(again)}")
    for col in cols + [population_col]:
        if table.kinds[col] != "numeric":
            raise TableError(f"column {col} is not numeric")
    frame = table.frame
    pop = frame[population_col]
    present = frame[cols].notna().any(axis=1)
    bad_missing = present & pop.isna()
    if bad_missing.any():
        row = int(np.flatnonzero(bad_missing.to_numpy())[0])
        raise TableError(f"row {row}: missing {population_col} where values are present")
    bad_value = present & (pop <= 0)
    if bad_value.any():
        row = int(np.flatnonzero(bad_value.to_numpy())[0])
        raise TableError(f"row {row}: {population_col} must be positive, got {pop.iloc[row]}")
    for col in cols:
        frame[col] = frame[col] / pop
    return table._derive(frame, normalized=table.normalized | set(cols))


@dataclass(frozen=True, eq=False)
class StudyFrame:
    """Analysis-ready arrays: binary treatment, outcome, covariate block.

    ``threshold_*`` and ``excluded_count`` describe how the treatment was
    binarized; frames built directly from arrays leave them unset.
    """

    treatment: np.ndarray
    outcome: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple[str, ...] = ()
    threshold_percentile: float | None = None
    threshold_value: float | None = None
    band: float = 0.0
    excluded_count: int = 0
    dropped_missing: int = 0

    def __post_init__(self):
        t = np.asarray(self.treatment)
        y = np.asarray(self.outcome, dtype=float)
        z = np.asarray(self.covariates, dtype=float)
        if z.ndim == 1:
            z = z.reshape(-1, 1)
        if z.ndim != 2 or y.ndim != 1 or t.ndim != 1:
            raise TableError("treatment/outcome must be 1-D and covariates 2-D")
        if not (len(t) == len(y) == z.shape[0]):
            raise TableError("treatment, outcome and covariates differ in length")
        if not np.all((t == 0) | (t == 1)):
            raise TableError("treatment must be binary 0/1")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(z))):
            raise TableError("outcome and covariates must be free of missing values")
        names = tuple(self.covariate_names) or tuple(f"Z{i}" for i in range(z.shape[1]))
        if len(names) != z.shape[1]:
            raise TableError("one covariate name per covariate column is required")
        t = t.astype(np.int64)
        n1 = int(t.sum())
        if n1 < 2 or len(t) - n1 < 2:
            raise TableError(
                f"need at least 2 rows in each arm (treated={n1}, control={len(t) - n1})")
        for arr in (t, y, z):
            arr.setflags(write=False)
        object.__setattr__(self, "treatment", t)
        object.__setattr__(self, "outcome", y)
        object.__setattr__(self, "covariates", z)
        object.__setattr__(self, "covariate_names", names)

    @classmethod
    def from_arrays(cls, treatment, outcome, covariates=None, covariate_names=(), **meta):
        if covariates is None:
            covariates = np.zeros((len(outcome), 0))
        return cls(np.asarray(treatment), np.asarray(outcome, dtype=float),
                   np.asarray(covariates, dtype=float), tuple(covariate_names), **meta)

    @property
    def n(self) -> int:
        return len(self.treatment)

    @property
    def n_treated(self) -> int:
        return int(self.treatment.sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_treated

    def subset(self, rows) -> "StudyFrame":
        rows = np.asarray(rows)
        return self.replace(treatment=self.treatment[rows], outcome=self.outcome[rows],
                            covariates=self.covariates[rows])

    def replace(self, **changes) -> "StudyFrame":
        fields = dict(
            treatment=self.treatment, outcome=self.outcome, covariates=self.covariates,
            covariate_names=self.covariate_names,
            threshold_percentile=self.threshold_percentile,
            threshold_value=self.threshold_value, band=self.band,
            excluded_count=self.excluded_count, dropped_missing=self.dropped_missing)
        fields.update(changes)
        return StudyFrame(**fields)


def binarize_treatment(table: Table, treatment_col: str, percentile: float,
                       band: float = 5.0, *, outcome_col: str,
                       covariate_cols: Sequence[str] = (),
                       outcome_range: tuple[float, float] | None = (0.0, 1.0)) -> StudyFrame:
    """Threshold a continuous treatment at a percentile of its values.

    Rows with a missing treatment, outcome or covariate are dropped first
    and counted in ``dropped_missing``. Percentiles use linear
    interpolation between closest ranks. With ``band > 0`` the rows whose
    treatment lies between the ``percentile - band`` and ``percentile +
    band`` values (inclusive) are excluded and counted; values above the
    upper edge are treated, values below the lower edge are controls. With
    ``band == 0`` values equal to the threshold count as treated.
    """
    if not 0 < percentile < 100:
        raise TableError("percentile must lie strictly between 0 and 100")
    if band < 0:
        raise TableError("band must be >= 0")
    covariate_cols = list(covariate_cols)
    used = [treatment_col, outcome_col] + covariate_cols
    table._require(used)
    for col in used:
        if table.kinds[col] != "numeric":
            raise TableError(f"column {col} is not numeric")

    frame = table.frame[used]
    complete = frame.dropna()
    dropped = len(frame) - len(complete)
    values = complete[treatment_col].to_numpy(dtype=float)
    if len(values) == 0:
        raise TableError("no complete rows to binarize")
    if np.all(values == values[0]):
        raise TableError(f"all {treatment_col} values are identical; threshold is degenerate")

    threshold = float(np.quantile(values, percentile / 100.0, method="linear"))
    if band > 0:
        lower = float(np.quantile(values, max(percentile - band, 0.0) / 100.0, method="linear"))
        upper = float(np.quantile(values, min(percentile + band, 100.0) / 100.0, method="linear"))
        treated = values > upper
        control = values < lower
    else:
        treated = values >= threshold
        control = ~treated
    keep = treated | control
    excluded = int((~keep).sum())

    y = complete[outcome_col].to_numpy(dtype=float)[keep]
    if outcome_range is not None:
        lo, hi = outcome_range
        if np.any((y < lo) | (y > hi)):
            raise TableError(f"{outcome_col} values fall outside [{lo}, {hi}]")
    z = complete[covariate_cols].to_numpy(dtype=float)[keep] if covariate_cols \
        else np.zeros((int(keep.sum()), 0))
    t = treated[keep].astype(np.int64)
    n1 = int(t.sum())
    if n1 < 2 or len(t) - n1 < 2:
        raise TableError(
            f"threshold p{percentile:g} leaves too few rows in an arm "
            f"(treated={n1}, control={len(t) - n1})")
    return StudyFrame(t, y, z, tuple(covariate_cols), threshold_percentile=float(percentile),
                      threshold_value=threshold, band=float(band), excluded_count=excluded,
                      dropped_missing=dropped)
