"""Config-driven study runner: harmonize sources, identify the adjustment set,
estimate every (threshold, method) cell, refute, and render reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from ._random import derive_seed
from ._resources import data_path
from .estimators import METHODS, bootstrap_inference, make_estimator
from .graph import backdoor_satisfied, load_dag, parent_adjustment_set
from .learners import LinearRegression, RandomForestRegressor
from .refute import FAIL_BELOW, MIN_TRIALS, RefutationTest, run_refutations
from .tabular import (SCHEMAS, Period, Table, TableError, aggregate, binarize_treatment,
                      drop_missing, fill_forward, filter_rows, join, load_csv, per_capita_normalize)

__all__ = [
    "ConfigError",
    "ReportRow",
    "SourceSpec",
    "StudyConfig",
    "StudyReport",
    "emit_report",
    "harmonize",
    "load_config",
    "read_report_csv",
    "read_report_json",
    "render_text",
    "run_study",
]

log = logging.getLogger(__name__)

METHOD_ORDER = tuple(METHODS)
SCALE = 1e-4
BUNDLED_CONFIGS = {"somalia_country": "somalia_country.yaml",
                   "baidoa_monthly": "baidoa_monthly.yaml"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SourceSpec:
    path: Path
    schema: str


@dataclass(frozen=True)
class StudyConfig:
    name: str
    dag_path: Path
    sources: tuple[SourceSpec, ...]
    seed: int
    scope: str = "country"
    area: str | None = None
    period: str = "annual"
    thresholds: tuple[float, ...] = (35.0, 50.0, 75.0)
    band: float = 5.0
    methods: tuple[str, ...] = METHOD_ORDER
    bootstrap: int = 1000
    alpha: float = 0.05
    trials: int = 100
    subset_fraction: float = 0.2
    normalize: tuple[str, ...] = ("Cash", "Fatalities", "Displacement")
    population: str = "Population"
    outcome_range: tuple[float, float] | None = (0.0, 1.0)
    matching_k: int = 1
    propensity_clip: tuple[float, float] = (0.01, 0.99)
    base_learner: str = "forest"
    forest: dict = field(default_factory=dict)
    output: Path = Path("out")

    def __post_init__(self):
        if not self.thresholds:
            raise ConfigError("thresholds must not be empty")
        if any(not 0 < t < 100 for t in self.thresholds):
            raise ConfigError("thresholds must lie strictly between 0 and 100")
        if not self.methods:
            raise ConfigError("methods must not be empty")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown method(s): {', '.join(unknown)}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("methods must not repeat")
        if not self.sources:
            raise ConfigError("at least one data source is required")
        for src in self.sources:
            if src.schema not in SCHEMAS:
                raise ConfigError(f"unknown schema {src.schema!r}")
        try:
            Period.parse(self.period)
        except TableError as exc:
            raise ConfigError(str(exc)) from None
        if self.band < 0:
            raise ConfigError("band must be >= 0")
        if self.bootstrap < 100:
            raise ConfigError("bootstrap must be >= 100")
        if self.trials < MIN_TRIALS:
            raise ConfigError(f"trials must be >= {MIN_TRIALS}")
        if not 0 <= self.subset_fraction < 0.5:
            raise ConfigError("subset_fraction must lie in [0, 0.5)")
        if self.base_learner not in ("forest", "ols"):
            raise ConfigError("base_learner must be 'forest' or 'ols'")
        unknown = set(self.forest) - set(RandomForestRegressor().get_params())
        if unknown:
            raise ConfigError(f"unknown forest parameter(s): {', '.join(sorted(unknown))}")

    @property
    def area_label(self) -> str:
        if self.area:
            return self.area
        return "Country" if self.is_country else f"{self.scope} (District)"

    @property
    def is_country(self) -> bool:
        return self.scope.strip().lower() == "country"


_REQUIRED_KEYS = ("dag", "sources", "seed")


def load_config(path, seed: int | None = None, output=None) -> StudyConfig:
    """Read a YAML study config; relative paths resolve against its directory.

    ``path`` may also name a bundled config (``somalia_country`` or
    ``baidoa_monthly``).
    """
    path = Path(path)
    if not path.exists() and str(path) in BUNDLED_CONFIGS:
        path = data_path(BUNDLED_CONFIGS[str(path)])
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    if seed is not None:
        raw["seed"] = seed
    missing = [k for k in _REQUIRED_KEYS if raw.get(k) is None]
    if missing:
        raise ConfigError(f"{path}: missing required key(s): {', '.join(missing)}")
    base = path.parent

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    allowed = {f.name for f in fields(StudyConfig)} | {"dag"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown key(s): {', '.join(sorted(unknown))}")
    kw: dict[str, Any] = {k: v for k, v in raw.items() if k not in ("dag", "sources")}
    kw.setdefault("name", path.stem)
    kw["dag_path"] = resolve(raw["dag"])
    try:
        kw["sources"] = tuple(SourceSpec(resolve(s["path"]), str(s["schema"]))
                              for s in raw["sources"])
    except (TypeError, KeyError):
        raise ConfigError(f"{path}: each source needs 'path' and 'schema'") from None
    for key in ("thresholds", "methods", "normalize"):
        if key in kw:
            kw[key] = tuple(kw[key])
    for key in ("outcome_range", "propensity_clip"):
        if kw.get(key) is not None:
            kw[key] = tuple(float(v) for v in kw[key])
    if "thresholds" in kw:
        kw["thresholds"] = tuple(float(t) for t in kw["thresholds"])
    kw["seed"] = int(kw["seed"])
    kw["scope"] = str(kw.get("scope", "country"))
    kw["output"] = Path(output) if output is not None else resolve(kw.get("output", "out"))
    return StudyConfig(**kw)


# ---------------------------------------------------------------------------
# harmonization

@dataclass
class HarmonizedData:
    table: Table
    load_summaries: list[str]
    n_rows: int


def harmonize(config: StudyConfig) -> HarmonizedData:
    """Load every source, bucket it to months, merge, scope, normalize per
    capita, then aggregate to the study period.

    Normalization happens at monthly resolution, before any annual
    aggregation.
    """
    district_dated, country_dated, static = [], [], []
    aggregators: dict[str, str] = {}
    seasonal: list[str] = []
    summaries = []
    for src in config.sources:
        schema = SCHEMAS[src.schema]
        table = load_csv(src.path, schema)
        summaries.append(table.summary.to_text())
        aggregators.update(schema.aggregators)
        seasonal += list(schema.seasonal)
        if schema.date_column is None:
            static.append(table)
            continue
        monthly = aggregate(table, schema.keys, Period.MONTHLY,
                            {c: a for c, a in schema.aggregators.items()},
                            date_col=schema.date_column, carry_forward=schema.seasonal)
        (district_dated if "district" in schema.keys else country_dated).append(monthly)
    if not district_dated:
        raise TableError("need at least one district-level dated source")

    merged = district_dated[0]
    for other in district_dated[1:]:
        merged = join(merged, other, on=["district", "date"], how="outer")
    for other in country_dated:
        merged = join(merged, other, on=["date"], how="left")
    for other in static:
        merged = join(merged, other, on=["district"], how="left")
    if seasonal:
        merged = fill_forward(merged, seasonal, ["district"])

    if not config.is_country:
        merged = filter_rows(merged, "district", config.scope)
        if merged.n_rows == 0:
            raise TableError(f"no rows for district {config.scope!r}")
    cols = [c for c in config.normalize if c in merged]
    if cols:
        merged = per_capita_normalize(merged, cols, config.population)
    if Period.parse(config.period) is Period.ANNUAL:
        spec = {c: aggregators[c] for c in merged.column_names if c not in ("district", "date")}
        merged = aggregate(merged, ["district"], Period.ANNUAL, spec)
    if merged.n_rows == 0:
        raise TableError("harmonization produced an empty table")
    return HarmonizedData(merged, summaries, merged.n_rows)


# ---------------------------------------------------------------------------
# report

_ROW_FLOATS = ("threshold", "ate", "ci_low", "ci_high", "p_value", "std_error",
               "placebo_effect", "placebo_p", "rcc_effect", "rcc_p", "rsr_effect", "rsr_p")
_ROW_INTS = ("n_used", "n_treated", "n_control")
_TESTS = (("placebo", RefutationTest.PLACEBO), ("rcc", RefutationTest.RANDOM_COMMON_CAUSE),
          ("rsr", RefutationTest.SUBSET_REMOVAL))


@dataclass
class ReportRow:
    area: str
    threshold: float
    method: str
    ate: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    p_value: float | None = None
    std_error: float | None = None
    n_used: int | None = None
    n_treated: int | None = None
    n_control: int | None = None
    placebo_effect: float | None = None
    placebo_p: float | None = None
    rcc_effect: float | None = None
    rcc_p: float | None = None
    rsr_effect: float | None = None
    rsr_p: float | None = None
    error: str | None = None

    @property
    def estimated(self) -> bool:
        return self.error is None

    def verdict(self, test: str) -> str | None:
        p = getattr(self, f"{test}_p")
        if p is None:
            return None
        return "Fail" if p < FAIL_BELOW else "Pass"


@dataclass
class StudyReport:
    rows: list[ReportRow]
    metadata: dict

    @property
    def complete(self) -> bool:
        return all(r.estimated for r in self.rows)

    def to_json(self) -> str:
        payload = {"metadata": self.metadata, "rows": [asdict(r) for r in self.rows]}
        return json.dumps(payload, indent=2, allow_nan=False) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# metadata: " + json.dumps(self.metadata, separators=(",", ":")) + "\n")
        names = [f.name for f in fields(ReportRow)]
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(names)
        for row in self.rows:
            writer.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v)
                             for v in (getattr(row, n) for n in names)])
        return buf.getvalue()


def _row_from_mapping(m) -> ReportRow:
    kw = {}
    for f in fields(ReportRow):
        v = m.get(f.name)
        if v in ("", None):
            kw[f.name] = None
        elif f.name in _ROW_FLOATS:
            kw[f.name] = float(v)
        elif f.name in _ROW_INTS:
            kw[f.name] = int(v)
        else:
            kw[f.name] = str(v)
    return ReportRow(**kw)


def read_report_json(text: str) -> StudyReport:
    payload = json.loads(text)
    return StudyReport([_row_from_mapping(r) for r in payload["rows"]], payload["metadata"])


def read_report_csv(text: str) -> StudyReport:
    first, _, body = text.partition("\n")
    prefix = "# metadata: "
    if not first.startswith(prefix):
        raise ValueError("report CSV must start with a metadata comment line")
    metadata = json.loads(first[len(prefix):])
    rows = [_row_from_mapping(r) for r in csv.DictReader(io.StringIO(body))]
    return StudyReport(rows, metadata)


_METHOD_LABELS = {"LR": "LR", "Matching": "M", "IPSW": "IPSW", "TLearner": "T-L",
                  "XLearner": "X-L"}


def _method_label(method: str, base_learner: str) -> str:
    label = _METHOD_LABELS.get(method, method)
    if method in ("TLearner", "XLearner"):
        label += " (RF)" if base_learner == "forest" else " (OLS)"
    return label


def _scaled(v):
    return "" if v is None else f"{v / SCALE:.3f}"


def _p(v):
    if v is None:
        return ""
    return f"{v:.3f}" + (" F" if v < FAIL_BELOW else "")


def _threshold_label(t):
    return f"{t:g}"


def render_text(report: StudyReport) -> str:
    """Fixed-width table in the layout of a refutation-annotated ATE table.

    ATE and Effect* columns are shown in units of 1e-4; the CI is shown
    unscaled at three decimals. ``F`` marks a p-value below 0.05 on a
    refutation test.
    """
    md = report.metadata
    header = ["Area", "Th", "Method", "ATE (1e-4)", "CI", "p-value",
              "Placebo Effect* (1e-4)", "p-value", "RCC Effect* (1e-4)", "p-value",
              "RSR Effect* (1e-4)", "p-value"]
    body, failed = [], {}
    for r in report.rows:
        label = _method_label(r.method, md.get("base_learner", "forest"))
        if not r.estimated:
            failed[len(body)] = [r.area, _threshold_label(r.threshold), label, r.error]
            body.append(None)
            continue
        body.append([
            r.area, _threshold_label(r.threshold), label, _scaled(r.ate),
            f"({r.ci_low:.3f}, {r.ci_high:.3f})", f"{r.p_value:.3f}",
            _scaled(r.placebo_effect), _p(r.placebo_p),
            _scaled(r.rcc_effect), _p(r.rcc_p),
            _scaled(r.rsr_effect), _p(r.rsr_p),
        ])
    widths = [len(h) for h in header]
    for line in body:
        for i, cell in enumerate(line or ()):
            widths[i] = max(widths[i], len(cell))
    for line in failed.values():
        for i, cell in enumerate(line[:3]):
            widths[i] = max(widths[i], len(cell))

    def fmt(cells):
        return " | ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()

    lines = [
        f"Study: {md['study']}  Area: {md['area']}  Period: {md['period']}  Seed: {md['seed']}",
        f"Adjustment set ({md['adjustment_kind']}): {', '.join(md['adjustment_set'])}",
        f"Rows after harmonization: {md['n_rows_harmonized']}; complete rows: "
        f"{md['n_rows_complete']}",
        f"Bootstrap replicates: {md['bootstrap']}; refutation trials: {md['trials']}; "
        f"exclusion band: +/-{md['band']:g} percentile points",
        "ATE and Effect* in units of 1e-4 of the outcome (GAM per capita). "
        "Refutation tests fail (F) if their p-value is less than 0.05.",
        "",
        fmt(header),
        "-+-".join("-" * w for w in widths),
    ]
    for i, line in enumerate(body):
        if line is None:
            area, th, label, reason = failed[i]
            lines.append(fmt([area, th, label]) + " | " + reason)
        else:
            lines.append(fmt(line))
    lines.append("")
    for t, info in md["thresholds"].items():
        lines.append(f"Th {t}: cut={info['threshold_value']!r} treated={info['n_treated']} "
                     f"control={info['n_control']} excluded={info['excluded']} "
                     f"dropped_missing={info['dropped_missing']}"
                     if "error" not in info else f"Th {t}: {info['error']}")
    return "\n".join(lines) + "\n"


FORMATS = ("text", "csv", "json")


def emit_report(report: StudyReport, out_dir, formats=FORMATS, stem: str = "report") -> list[Path]:
    """Write the report in each requested format; returns the written paths."""
    out_dir = Path(out_dir)
    bad = [f for f in formats if f not in FORMATS]
    if bad:
        raise ValueError(f"unknown format(s): {', '.join(bad)}")
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"output directory {out_dir} is not writable: {exc}") from exc
    written = []
    for fmt in formats:
        text = {"text": render_text, "csv": StudyReport.to_csv,
                "json": StudyReport.to_json}[fmt](report)
        path = out_dir / f"{stem}.{ {'text': 'txt'}.get(fmt, fmt) }"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# running

def _estimator(config: StudyConfig, method: str, random_state: int):
    if method == "Matching":
        return make_estimator(method, k=config.matching_k)
    if method == "IPSW":
        return make_estimator(method, clip=config.propensity_clip)
    if method in ("TLearner", "XLearner"):
        if config.base_learner == "forest":
            base = RandomForestRegressor(**config.forest)
        else:
            base = LinearRegression()
        params = {"base": base, "random_state": random_state}
        if method == "XLearner":
            params["clip"] = config.propensity_clip
        return make_estimator(method, **params)
    return make_estimator(method)


def _describe(exc: Exception) -> str:
    return f"inestimable: {exc}".replace("\n", " ")


def run_study(config: StudyConfig) -> StudyReport:
    """Run the full (threshold x method) grid described by ``config``.

    A cell that cannot be estimated is reported with its reason instead of
    aborting the study. Each cell draws its randomness from a seed derived
    from (study seed, area, threshold, method), so removing a method or a
    threshold leaves every other cell unchanged.
    """
    dag = load_dag(config.dag_path)
    adjustment = parent_adjustment_set(dag)
    if not backdoor_satisfied(dag, adjustment.members):
        raise ConfigError("parent adjustment set fails the backdoor criterion")
    covariates = adjustment.sorted()
    data = harmonize(config)
    needed = [dag.treatment, dag.outcome] + covariates
    absent = [c for c in needed if c not in data.table]
    if absent:
        raise ConfigError(f"columns missing after harmonization: {', '.join(absent)}")
    n_complete = drop_missing(data.table, needed).n_rows
    if n_complete == 0:
        raise TableError("no complete rows after harmonization")
    log.info("harmonized %d rows, %d complete", data.n_rows, n_complete)

    area = config.area_label
    rows: list[ReportRow] = []
    thresholds_md = {}
    for th in config.thresholds:
        key = _threshold_label(th)
        try:
            frame = binarize_treatment(data.table, dag.treatment, th, config.band,
                                       outcome_col=dag.outcome, covariate_cols=covariates,
                                       outcome_range=config.outcome_range)
        except TableError as exc:
            thresholds_md[key] = {"error": _describe(exc)}
            rows += [ReportRow(area, float(th), m, error=_describe(exc)) for m in config.methods]
            continue
        thresholds_md[key] = {
            "threshold_value": frame.threshold_value, "n_treated": frame.n_treated,
            "n_control": frame.n_control, "excluded": frame.excluded_count,
            "dropped_missing": frame.dropped_missing,
        }
        for method in config.methods:
            cell_seed = derive_seed(config.seed, area, key, method)
            row = ReportRow(area, float(th), method)
            try:
                est = _estimator(config, method, derive_seed(cell_seed, "model"))
                effect = bootstrap_inference(est, frame, config.bootstrap, config.alpha,
                                             seed=derive_seed(cell_seed, "bootstrap"))
                refutations = run_refutations(est, frame, config.trials,
                                              seed=derive_seed(cell_seed, "refute"),
                                              fraction=config.subset_fraction,
                                              original_ate=effect.ate)
            except Exception as exc:  # noqa: BLE001 - recorded in-row
                log.warning("cell Th=%s %s failed: %s", key, method, exc)
                row.error = _describe(exc)
                rows.append(row)
                continue
            row.ate, row.ci_low, row.ci_high = effect.ate, effect.ci_low, effect.ci_high
            row.p_value, row.std_error = effect.p_value, effect.std_error
            row.n_used, row.n_treated, row.n_control = frame.n, frame.n_treated, frame.n_control
            for prefix, test in _TESTS:
                rep = refutations[test]
                setattr(row, f"{prefix}_effect", rep.refuted_effect)
                setattr(row, f"{prefix}_p", rep.p_value)
            rows.append(row)
            log.info("Th=%s %s ate=%.6g p=%.3f", key, method, effect.ate, effect.p_value)

    metadata = {
        "study": config.name,
        "area": area,
        "scope": config.scope,
        "period": Period.parse(config.period).value,
        "seed": config.seed,
        "dag": Path(config.dag_path).name,
        "treatment": dag.treatment,
        "outcome": dag.outcome,
        "adjustment_kind": adjustment.kind.value,
        "adjustment_set": covariates,
        "n_rows_harmonized": data.n_rows,
        "n_rows_complete": n_complete,
        "thresholds": thresholds_md,
        "band": config.band,
        "methods": list(config.methods),
        "base_learner": config.base_learner,
        "bootstrap": config.bootstrap,
        "alpha": config.alpha,
        "trials": config.trials,
        "subset_fraction": config.subset_fraction,
        "fail_below": FAIL_BELOW,
        "ate_display_scale": SCALE,
    }
    return StudyReport(rows, metadata)


def is_finite_report(report: StudyReport) -> bool:
    for r in report.rows:
        for name in _ROW_FLOATS:
            v = getattr(r, name)
            if v is not None and not math.isfinite(v):
                return False
    return True
