"""Batch driver: estimate every configured event cell and emit result files.

A run is declared by one JSON config (input paths, years, estimator and
direction sets, bootstrap sizes, grid days, seed). Every (year,
industry, direction) combination present in the membership data gets a
report row; a failing cell records its error there and never aborts the
batch. Output files are plain CSV, markdown, and SVG with fixed column
order and fixed-point formatting, so rerunning the same config and seed
reproduces every byte. Randomness is drawn from per-cell substreams of
the master seed, making results independent of execution order.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .capm import AbnormalSeries, abnormal_returns, car, fit_capm
from .errors import DataError, DegenerateVarianceError, EstimationError
from .eventstats import CarGrid, YearComparison, car_grid, paired_ttest, year_comparison
from .gsynth import AttSeries, GeneralizedSyntheticControl
from .ingest import (
    ACTIONS,
    MembershipEvent,
    ReturnData,
    construct_samples,
    load_fundamentals,
    load_membership,
    load_returns,
)
from .panel import FLAG_CONTROL, EventWindow, align_panel, build_event_window

ESTIMATORS = ("capm", "gsynth")
VARIANTS = ("full", "base")

DEFAULT_FROM_DAYS = tuple(range(1, 17))
DEFAULT_TO_DAYS = tuple(range(11, 22)) + (26, 31, 36)
# Holding-period blocks compared across years: weeks 1-3, week 3 alone,
# week 4 alone, weeks 4-5.
DEFAULT_YEAR_BLOCKS = ((1, 14), (11, 14), (15, 22), (15, 27))

_TOP_KEYS = {
    "returns", "fundamentals", "membership", "output_dir", "years",
    "estimators", "directions", "variants", "announcements", "gsynth",
    "seed", "grid", "year_blocks", "plots", "firm_industries",
}
_GSYNTH_KEYS = {"r", "r_candidates", "b1", "b2", "confidence", "demean", "max_retries"}
_GRID_KEYS = {"from_days", "to_days"}


def _canonical_subset(values, allowed: Sequence[str], name: str) -> tuple[str, ...]:
    vals = list(values)
    if not vals:
        raise DataError(f"{name} must be non-empty")
    for v in vals:
        if v not in allowed:
            raise DataError(
                f"unknown {name} entry {v!r}; accepted: {', '.join(allowed)}"
            )
    return tuple(v for v in allowed if v in vals)


def _int_tuple(values, name: str, minimum: int) -> tuple[int, ...]:
    try:
        out = tuple(sorted({int(v) for v in values}))
    except (TypeError, ValueError) as exc:
        raise DataError(f"{name} must be a list of integers: {exc}") from None
    if any(v < minimum for v in out):
        raise DataError(f"{name} entries must be >= {minimum}")
    return out


def _as_date(value, context: str) -> dt.date:
    if isinstance(value, dt.date):
        return value
    try:
        return dt.date.fromisoformat(str(value))
    except ValueError as exc:
        raise DataError(f"{context}: {exc}") from None


@dataclass(frozen=True)
class RunConfig:
    """Declarative description of one batch run.

    `years` empty means every year present in the membership file.
    `announcements` maps year to the (announcement, effective) dates;
    cells of a year with no entry fail individually at run time.
    `firm_industries` assigns control-universe industries to firms the
    membership file never mentions; without it every firm in the returns
    file is assumed to share the cell's industry.
    """

    returns: Path
    fundamentals: Path
    membership: Path
    output_dir: Path
    announcements: Mapping[int, tuple[dt.date, dt.date]] = field(default_factory=dict)
    years: tuple[int, ...] = ()
    estimators: tuple[str, ...] = ESTIMATORS
    directions: tuple[str, ...] = ACTIONS
    variants: tuple[str, ...] = VARIANTS
    r: int | None = None
    r_candidates: tuple[int, ...] = (0, 1, 2, 3, 4, 5)
    b1: int | None = None
    b2: int = 200
    confidence: float = 0.95
    demean: bool = False
    max_retries: int = 10
    seed: int = 0
    grid_from_days: tuple[int, ...] = DEFAULT_FROM_DAYS
    grid_to_days: tuple[int, ...] = DEFAULT_TO_DAYS
    year_blocks: tuple[tuple[int, int], ...] = DEFAULT_YEAR_BLOCKS
    plots: bool = False
    firm_industries: Mapping[str, str] | None = None

    def __post_init__(self):
        for key in ("returns", "fundamentals", "membership", "output_dir"):
            object.__setattr__(self, key, Path(getattr(self, key)))
        object.__setattr__(
            self, "estimators", _canonical_subset(self.estimators, ESTIMATORS, "estimators")
        )
        object.__setattr__(
            self, "directions", _canonical_subset(self.directions, ACTIONS, "directions")
        )
        object.__setattr__(
            self, "variants", _canonical_subset(self.variants, VARIANTS, "variants")
        )
        object.__setattr__(self, "years", _int_tuple(self.years, "years", 0))

        ann: dict[int, tuple[dt.date, dt.date]] = {}
        for key, value in dict(self.announcements).items():
            try:
                year = int(key)
            except (TypeError, ValueError):
                raise DataError(f"announcements key {key!r} is not a year") from None
            if isinstance(value, Mapping):
                extra = set(value) - {"announcement", "effective"}
                if extra or set(value) != {"announcement", "effective"}:
                    raise DataError(
                        f"announcements[{year}] needs exactly the keys "
                        f"announcement and effective"
                    )
                pair = (value["announcement"], value["effective"])
            else:
                pair = tuple(value)
                if len(pair) != 2:
                    raise DataError(
                        f"announcements[{year}] must hold two dates"
                    )
            ann[year] = (
                _as_date(pair[0], f"announcements[{year}].announcement"),
                _as_date(pair[1], f"announcements[{year}].effective"),
            )
        object.__setattr__(self, "announcements", ann)

        if self.r is not None and int(self.r) < 0:
            raise DataError("r must be >= 0")
        if self.r is not None:
            object.__setattr__(self, "r", int(self.r))
        object.__setattr__(
            self, "r_candidates", _int_tuple(self.r_candidates, "r_candidates", 0)
        )
        if not self.r_candidates:
            raise DataError("r_candidates must be non-empty")
        if self.b1 is not None:
            if int(self.b1) < 1:
                raise DataError("b1 must be >= 1")
            object.__setattr__(self, "b1", int(self.b1))
        if int(self.b2) < 2:
            raise DataError("b2 must be >= 2")
        object.__setattr__(self, "b2", int(self.b2))
        if not 0.0 <= float(self.confidence) < 1.0:
            raise DataError("confidence must be in [0, 1)")
        object.__setattr__(self, "confidence", float(self.confidence))
        if int(self.max_retries) < 0:
            raise DataError("max_retries must be >= 0")
        object.__setattr__(self, "max_retries", int(self.max_retries))
        object.__setattr__(self, "seed", int(self.seed))
        for key in ("demean", "plots"):
            if not isinstance(getattr(self, key), bool):
                raise DataError(f"{key} must be true or false")

        fdays = _int_tuple(self.grid_from_days, "grid from_days", 1)
        tdays = _int_tuple(self.grid_to_days, "grid to_days", 1)
        if not fdays or not tdays:
            raise DataError("grid day sets must be non-empty")
        object.__setattr__(self, "grid_from_days", fdays)
        object.__setattr__(self, "grid_to_days", tdays)

        blocks: list[tuple[int, int]] = []
        for entry in self.year_blocks:
            pair = tuple(entry)
            if len(pair) != 2:
                raise DataError("year_blocks entries must be [from_day, to_day] pairs")
            f, t = int(pair[0]), int(pair[1])
            if f < 1 or t < f:
                raise DataError(f"year_blocks entry ({f}, {t}) is not a valid day span")
            blocks.append((f, t))
        object.__setattr__(self, "year_blocks", tuple(sorted(set(blocks))))

        if self.firm_industries is not None:
            mapping = {}
            for fid, industry in dict(self.firm_industries).items():
                code = str(industry)
                if len(code) != 2 or not code.isdigit():
                    raise DataError(
                        f"firm_industries[{fid!r}] must be a two-digit code, "
                        f"got {industry!r}"
                    )
                mapping[str(fid)] = code
            object.__setattr__(self, "firm_industries", mapping)

    @classmethod
    def from_file(cls, path, **overrides) -> "RunConfig":
        """Load a JSON config; keyword overrides win over file values.

        Relative input/output paths in the file resolve against the
        config file's directory. Unknown keys are rejected so typos
        cannot silently fall back to defaults.
        """
        p = Path(path)
        if not p.exists():
            raise DataError(f"config file not found: {p}")
        try:
            raw = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{p}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise DataError(f"{p}: config must be a JSON object")
        unknown = set(raw) - _TOP_KEYS
        if unknown:
            raise DataError(f"{p}: unknown config keys: {', '.join(sorted(unknown))}")

        kwargs: dict = {}
        for key in ("returns", "fundamentals", "membership", "output_dir"):
            if key in raw:
                value = Path(str(raw[key]))
                kwargs[key] = value if value.is_absolute() else p.parent / value
        for key in ("years", "estimators", "directions", "variants", "announcements",
                    "seed", "year_blocks", "plots", "firm_industries"):
            if key in raw:
                kwargs[key] = raw[key]

        gs = raw.get("gsynth", {})
        if not isinstance(gs, dict):
            raise DataError(f"{p}: gsynth section must be an object")
        unknown = set(gs) - _GSYNTH_KEYS
        if unknown:
            raise DataError(
                f"{p}: unknown gsynth keys: {', '.join(sorted(unknown))}"
            )
        kwargs.update({k: gs[k] for k in gs})

        grid = raw.get("grid", {})
        if not isinstance(grid, dict):
            raise DataError(f"{p}: grid section must be an object")
        unknown = set(grid) - _GRID_KEYS
        if unknown:
            raise DataError(f"{p}: unknown grid keys: {', '.join(sorted(unknown))}")
        if "from_days" in grid:
            kwargs["grid_from_days"] = grid["from_days"]
        if "to_days" in grid:
            kwargs["grid_to_days"] = grid["to_days"]

        kwargs.update(overrides)
        missing = [
            k for k in ("returns", "fundamentals", "membership", "output_dir")
            if k not in kwargs
        ]
        if missing:
            raise DataError(f"{p}: missing config keys: {', '.join(missing)}")
        return cls(**kwargs)


@dataclass(frozen=True)
class CellResult:
    """Report row for one attempted (year, industry, direction) cell."""

    year: int
    industry: str
    direction: str
    n_treated: int = 0
    n_control: int = 0
    capm_mspe: float = float("nan")
    gsynth_mspe: float = float("nan")
    r_chosen: int | None = None
    feasible: bool = True
    note: str = ""

    @property
    def key(self) -> tuple[int, str, str]:
        return (self.year, self.industry, self.direction)


@dataclass(frozen=True)
class RunReport:
    """All cell rows of one batch run plus run-level notices."""

    rows: tuple[CellResult, ...] = ()
    notices: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        object.__setattr__(self, "notices", tuple(self.notices))
        keys = [row.key for row in self.rows]
        if len(set(keys)) != len(keys):
            raise DataError("duplicate (year, industry, direction) rows in report")

    def row(self, year: int, industry: str, direction: str) -> CellResult:
        for r in self.rows:
            if r.key == (year, industry, direction):
                return r
        raise DataError(f"no report row for ({year}, {industry}, {direction})")


@dataclass(frozen=True)
class ContestResult:
    """Per-direction fit comparison: wins plus a paired test over cells."""

    direction: str
    n_cells: int
    gsynth_wins: int
    capm_wins: int
    ties: int
    estimate: float
    t_stat: float
    p_value: float
    stars: str = ""
    note: str = ""


def _fmt(value, decimals: int = 6) -> str:
    if value is None:
        return ""
    v = float(value)
    if math.isnan(v):
        return ""
    return f"{v:.{decimals}f}"


def _substream_seed(master: int, *parts) -> int:
    key = "|".join(str(p) for p in (master, *parts))
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "big")


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[str]]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        for row in rows:
            w.writerow(list(row))


def _grid_table(grid: CarGrid, decimals: int) -> tuple[list[str], list[list[str]]]:
    """Matrix layout, rows = start day, columns = end day, upper-triangular."""
    header = ["from_day"] + [str(t) for t in grid.to_days]
    rows = []
    for f in grid.from_days:
        row = [str(f)]
        for t in grid.to_days:
            cell = grid.cell(f, t)
            if cell is None:
                row.append("")
            else:
                row.append(f"{cell.estimate:.{decimals}f}{cell.stars}")
        rows.append(row)
    return header, rows


def _year_table(yc: YearComparison, decimals: int) -> tuple[list[str], list[list[str]]]:
    header = ["year"] + [str(y) for y in yc.years]
    rows = []
    for ya in yc.years:
        row = [str(ya)]
        for yb in yc.years:
            cell = yc.cell(ya, yb) if ya < yb else None
            if cell is None:
                row.append("")
            else:
                row.append(f"{cell.estimate:.{decimals}f}{cell.stars}")
        rows.append(row)
    return header, rows


def _write_att_csv(series: AttSeries, path: Path) -> None:
    header = ["day", "att", "se", "ci_low", "ci_high", "perc_low", "perc_high"]
    rows = []
    for i, day in enumerate(series.days):
        rows.append([
            str(day),
            _fmt(series.att[i]),
            _fmt(series.se[i] if series.se is not None else None),
            _fmt(series.ci_low[i] if series.ci_low is not None else None),
            _fmt(series.ci_high[i] if series.ci_high is not None else None),
            _fmt(series.perc_low[i] if series.perc_low is not None else None),
            _fmt(series.perc_high[i] if series.perc_high is not None else None),
        ])
    _write_csv(path, header, rows)


def _svg_gap_plot(series: Sequence[AbnormalSeries], mean_line: np.ndarray) -> str:
    """Static line plot: one grey line per firm, the mean gap on top.

    Coordinates are emitted at fixed precision so identical inputs give
    identical bytes.
    """
    width, height = 640, 400
    left, right, top, bottom = 52, 16, 16, 36
    plot_w, plot_h = width - left - right, height - top - bottom
    t0 = len(mean_line)
    values = np.concatenate([np.asarray(s.values) for s in series] + [mean_line, [0.0]])
    lo, hi = float(values.min()), float(values.max())
    if hi - lo < 1e-12:
        hi = lo + 1.0
    pad = 0.05 * (hi - lo)
    lo -= pad
    hi += pad

    def x(day: int) -> float:
        return left + (day - 1) / max(t0 - 1, 1) * plot_w

    def y(v: float) -> float:
        return top + (hi - v) / (hi - lo) * plot_h

    def polyline(vals, color: str, stroke: float) -> str:
        pts = " ".join(f"{x(d + 1):.2f},{y(float(v)):.2f}" for d, v in enumerate(vals))
        return (
            f'<polyline fill="none" stroke="{color}" '
            f'stroke-width="{stroke:g}" points="{pts}"/>'
        )

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="#ffffff"/>',
        f'<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="#444444"/>',
    ]
    if lo < 0.0 < hi:
        parts.append(
            f'<line x1="{left}" y1="{y(0.0):.2f}" x2="{left + plot_w}" '
            f'y2="{y(0.0):.2f}" stroke="#999999" stroke-dasharray="4 3"/>'
        )
    for s in series:
        parts.append(polyline(s.values, "#b0b6bd", 1.0))
    parts.append(polyline(mean_line, "#c0392b", 2.0))
    label = '<text x="%.2f" y="%.2f" font-family="sans-serif" font-size="11" fill="#333333"%s>%s</text>'
    parts.append(label % (x(1), height - 14.0, "", "1"))
    parts.append(label % (x(t0), height - 14.0, ' text-anchor="end"', str(t0)))
    parts.append(label % (left - 6.0, y(hi) + 4.0, ' text-anchor="end"', f"{hi:.2f}"))
    parts.append(label % (left - 6.0, y(lo) + 4.0, ' text-anchor="end"', f"{lo:.2f}"))
    if lo < 0.0 < hi:
        parts.append(label % (left - 6.0, y(0.0) + 4.0, ' text-anchor="end"', "0"))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


@dataclass
class _VariantResult:
    variant: str
    n_treated: int
    n_control: int
    dropped_returns: tuple[str, ...]
    capm_mspe: float = float("nan")
    capm_grid: CarGrid | None = None
    gsynth_mspe: float = float("nan")
    r_chosen: int | None = None
    gsynth_grid: CarGrid | None = None
    gap_series: list[AbnormalSeries] = field(default_factory=list)
    att_series: AttSeries | None = None


@dataclass
class _CellOutput:
    row: CellResult
    blocks: dict[tuple[int, int], list[float]]
    grids: list[tuple[str, str, CarGrid]]


def _estimate_variant(
    spec,
    returns_data: ReturnData,
    window: EventWindow,
    config: RunConfig,
    cell_seed: int,
) -> _VariantResult:
    flags = {fid: spec.action for fid in spec.treated_ids}
    flags.update({fid: FLAG_CONTROL for fid in spec.control_ids})
    ordered = [*spec.treated_ids, *spec.control_ids]
    series = [returns_data.firms[f] for f in ordered if f in returns_data.firms]
    missing = [f for f in ordered if f not in returns_data.firms]
    panel, dropped = align_panel(series, flags, returns_data.market, window)
    result = _VariantResult(
        variant=spec.variant,
        n_treated=len(panel.treated_firms),
        n_control=len(panel.control_firms),
        dropped_returns=tuple(missing) + tuple(dropped),
    )

    from_days = [d for d in config.grid_from_days if d <= window.t0]
    to_days = [d for d in config.grid_to_days if d <= window.t0]
    days = range(1, window.t0 + 1)

    if "capm" in config.estimators:
        treated_ab: list[AbnormalSeries] = []
        control_ab: list[AbnormalSeries] = []
        fit_mspes: list[float] = []
        for j, fid in enumerate(panel.firms):
            fit = fit_capm(panel.control_matrix[:, j], panel.market_control, firm_id=fid)
            ab = abnormal_returns(
                fit, panel.treatment_matrix[:, j], panel.market_treatment, days
            )
            if panel.treated_mask[j]:
                treated_ab.append(ab)
                fit_mspes.append(fit.control_mspe)
            else:
                control_ab.append(ab)
        result.capm_mspe = float(np.mean(fit_mspes))
        if from_days and to_days:
            result.capm_grid = car_grid(
                treated_ab, window, from_days, to_days, comparison=control_ab
            )

    if "gsynth" in config.estimators:
        est = GeneralizedSyntheticControl(
            r=config.r, r_candidates=config.r_candidates, demean=config.demean
        ).fit(panel)
        result.r_chosen = est.r_
        result.gsynth_mspe = float(np.mean(est.control_mspe_))
        result.gap_series = est.abnormal_series()
        if from_days and to_days:
            result.gsynth_grid = car_grid(result.gap_series, window, from_days, to_days)
        result.att_series = est.bootstrap(
            b1=config.b1,
            b2=config.b2,
            confidence=config.confidence,
            seed=cell_seed,
            max_retries=config.max_retries,
        )
    return result


def _run_cell(
    year: int,
    industry: str,
    direction: str,
    *,
    config: RunConfig,
    returns_data: ReturnData,
    fundamentals,
    events: Sequence[MembershipEvent],
    firm_ids: Sequence[str],
    out: Path,
) -> _CellOutput:
    pair = config.announcements.get(year)
    if pair is None:
        raise DataError(f"no announcement dates configured for {year}")
    window = build_event_window(year, returns_data.calendar, pair[0], pair[1])

    if config.firm_industries is not None:
        universe = dict(config.firm_industries)
    else:
        universe = {fid: industry for fid in firm_ids}
    full, base = construct_samples(
        year, industry, direction, events, fundamentals, universe
    )
    specs = {"full": full, "base": base}

    outcomes: dict[str, _VariantResult] = {}
    grids: list[tuple[str, str, CarGrid]] = []
    for variant in config.variants:
        seed = _substream_seed(config.seed, year, industry, direction, variant)
        outcome = _estimate_variant(specs[variant], returns_data, window, config, seed)
        outcomes[variant] = outcome

        stem = f"{year}_{industry}_{direction}_{variant}"
        if outcome.capm_grid is not None:
            header, rows = _grid_table(outcome.capm_grid, decimals=6)
            _write_csv(out / f"car_capm_{stem}.csv", header, rows)
            grids.append((variant, "market-model two-sample", outcome.capm_grid))
        if outcome.gsynth_grid is not None:
            header, rows = _grid_table(outcome.gsynth_grid, decimals=6)
            _write_csv(out / f"car_gsynth_{stem}.csv", header, rows)
            grids.append((variant, "synthetic-control one-sample", outcome.gsynth_grid))
        if outcome.att_series is not None:
            _write_att_csv(outcome.att_series, out / f"att_{stem}.csv")
        if config.plots and outcome.gap_series:
            mean_line = np.mean([s.values for s in outcome.gap_series], axis=0)
            svg = _svg_gap_plot(outcome.gap_series, mean_line)
            (out / f"gaps_{stem}.svg").write_text(svg, encoding="utf-8")

    report_variant = "full" if "full" in config.variants else config.variants[0]
    main = outcomes[report_variant]

    drops = []
    if specs[report_variant].dropped:
        drops.append(f"{len(specs[report_variant].dropped)} without fundamentals")
    if main.dropped_returns:
        drops.append(f"{len(main.dropped_returns)} without complete returns")
    note = "dropped " + ", ".join(drops) if drops else ""

    row = CellResult(
        year=year,
        industry=industry,
        direction=direction,
        n_treated=main.n_treated,
        n_control=main.n_control,
        capm_mspe=main.capm_mspe,
        gsynth_mspe=main.gsynth_mspe,
        r_chosen=main.r_chosen,
        feasible=True,
        note=note,
    )

    blocks: dict[tuple[int, int], list[float]] = {}
    for f, t in config.year_blocks:
        if t <= window.t0 and main.gap_series:
            blocks[(f, t)] = [car(s, f, t) for s in main.gap_series]
    return _CellOutput(row=row, blocks=blocks, grids=grids)


_REPORT_HEADER = [
    "year", "industry", "direction", "n_treated", "n_control",
    "capm_mspe", "gsynth_mspe", "r", "feasible", "note",
]


def _write_report_csv(report: RunReport, path: Path) -> None:
    rows = []
    for r in report.rows:
        rows.append([
            str(r.year), r.industry, r.direction,
            str(r.n_treated), str(r.n_control),
            _fmt(r.capm_mspe), _fmt(r.gsynth_mspe),
            "" if r.r_chosen is None else str(r.r_chosen),
            "true" if r.feasible else "false",
            r.note,
        ])
    _write_csv(path, _REPORT_HEADER, rows)


def read_report(path) -> RunReport:
    """Parse a run_report.csv back into a RunReport."""
    p = Path(path)
    if not p.exists():
        raise DataError(f"report file not found: {p}")
    with p.open("r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{p}: file is empty") from None
        if header != _REPORT_HEADER:
            raise DataError(f"{p}: not a run report (unexpected header)")
        rows: list[CellResult] = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(_REPORT_HEADER):
                raise DataError(
                    f"{p}: line {line_no}: expected {len(_REPORT_HEADER)} fields"
                )
            try:
                rows.append(CellResult(
                    year=int(row[0]),
                    industry=row[1],
                    direction=row[2],
                    n_treated=int(row[3]),
                    n_control=int(row[4]),
                    capm_mspe=float(row[5]) if row[5] else float("nan"),
                    gsynth_mspe=float(row[6]) if row[6] else float("nan"),
                    r_chosen=int(row[7]) if row[7] else None,
                    feasible=row[8] == "true",
                    note=row[9],
                ))
            except ValueError as exc:
                raise DataError(f"{p}: line {line_no}: {exc}") from None
    return RunReport(rows=tuple(rows))


def emit_mspe_contest(report: RunReport, output_dir) -> tuple[ContestResult, ...]:
    """Compare control-span fit of the two estimators cell by cell.

    For each direction with at least two rows carrying both fit
    statistics, writes a per-cell table plus a paired t-test over the
    industry-year MSPE pairs (positive estimate = the synthetic-control
    fit is tighter). Directions with fewer rows are reported as skipped;
    it is an error only when no direction qualifies. Constant MSPE
    differences keep their estimate with the test left blank.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)

    results: list[ContestResult] = []
    ran_any = False
    for direction in sorted({r.direction for r in report.rows}):
        rows = sorted(
            (
                r for r in report.rows
                if r.direction == direction
                and math.isfinite(r.capm_mspe)
                and math.isfinite(r.gsynth_mspe)
            ),
            key=lambda r: (r.year, r.industry),
        )
        if len(rows) < 2:
            results.append(ContestResult(
                direction=direction, n_cells=len(rows),
                gsynth_wins=0, capm_wins=0, ties=0,
                estimate=float("nan"), t_stat=float("nan"), p_value=float("nan"),
                note="skipped: fewer than 2 comparable rows",
            ))
            continue
        ran_any = True

        table = []
        for r in rows:
            better = "tie"
            if r.gsynth_mspe < r.capm_mspe:
                better = "gsynth"
            elif r.capm_mspe < r.gsynth_mspe:
                better = "capm"
            table.append([
                str(r.year), r.industry, str(r.n_treated), str(r.n_control),
                _fmt(r.capm_mspe), _fmt(r.gsynth_mspe), better,
            ])
        _write_csv(
            out / f"contest_{direction}.csv",
            ["year", "industry", "n_treated", "n_control",
             "capm_mspe", "gsynth_mspe", "better"],
            table,
        )

        capm_col = [r.capm_mspe for r in rows]
        synth_col = [r.gsynth_mspe for r in rows]
        gsynth_wins = sum(1 for c, g in zip(capm_col, synth_col) if g < c)
        capm_wins = sum(1 for c, g in zip(capm_col, synth_col) if c < g)
        ties = len(rows) - gsynth_wins - capm_wins
        try:
            test = paired_ttest(capm_col, synth_col)
            results.append(ContestResult(
                direction=direction, n_cells=len(rows),
                gsynth_wins=gsynth_wins, capm_wins=capm_wins, ties=ties,
                estimate=test.estimate, t_stat=test.t_stat,
                p_value=test.p_value, stars=test.stars,
            ))
        except DegenerateVarianceError as exc:
            results.append(ContestResult(
                direction=direction, n_cells=len(rows),
                gsynth_wins=gsynth_wins, capm_wins=capm_wins, ties=ties,
                estimate=exc.estimate, t_stat=float("nan"), p_value=float("nan"),
                note="constant differences; no test",
            ))

    if not ran_any:
        raise DataError(
            "fit contest needs at least 2 industry-year rows with both "
            "fit statistics in some direction"
        )

    summary_rows = [
        [
            c.direction, str(c.n_cells), str(c.gsynth_wins), str(c.capm_wins),
            str(c.ties), _fmt(c.estimate), _fmt(c.t_stat), _fmt(c.p_value),
            c.stars, c.note,
        ]
        for c in results
    ]
    _write_csv(
        out / "contest_summary.csv",
        ["direction", "n_cells", "gsynth_wins", "capm_wins", "ties",
         "estimate", "t_stat", "p_value", "stars", "note"],
        summary_rows,
    )
    return tuple(results)


def _markdown_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> list[str]:
    lines = ["| " + " | ".join(header) + " |"]
    lines.append("|" + "|".join(" --- " for _ in header) + "|")
    for row in rows:
        lines.append("| " + " | ".join(row) + " |")
    return lines


def _write_summary_md(
    report: RunReport,
    comparisons: Mapping[str, YearComparison],
    contest: Sequence[ContestResult],
    cell_grids: Sequence[tuple[tuple[int, str, str], str, str, CarGrid]],
    config: RunConfig,
    path: Path,
) -> None:
    lines: list[str] = ["# Event study run", ""]
    lines.append(
        f"Seed {config.seed}; estimators: {', '.join(config.estimators)}; "
        f"directions: {', '.join(config.directions)}; "
        f"variants: {', '.join(config.variants)}."
    )
    lines.append("")

    lines.append("## Fit statistics")
    lines.append("")
    rows = []
    for r in report.rows:
        status = "ok" if r.feasible else "failed"
        if r.note:
            status += f" ({r.note})"
        rows.append([
            str(r.year), r.industry, r.direction,
            str(r.n_treated), str(r.n_control),
            _fmt(r.capm_mspe, 3), _fmt(r.gsynth_mspe, 3),
            "" if r.r_chosen is None else str(r.r_chosen),
            status,
        ])
    if rows:
        lines.extend(_markdown_table(
            ["year", "industry", "direction", "treated", "controls",
             "capm mspe", "gsynth mspe", "r", "status"],
            rows,
        ))
    else:
        lines.append("No cells were attempted.")
    lines.append("")

    if contest:
        lines.append("## Fit contest")
        lines.append("")
        for c in contest:
            if c.note.startswith("skipped"):
                lines.append(f"- {c.direction}: {c.note}")
                continue
            test = (
                f"paired estimate {_fmt(c.estimate, 3)}"
                + (f" (t {_fmt(c.t_stat, 2)}, p {_fmt(c.p_value, 4)}{c.stars})"
                   if math.isfinite(c.t_stat) else f" ({c.note})")
            )
            lines.append(
                f"- {c.direction}: synthetic control wins {c.gsynth_wins} of "
                f"{c.n_cells} (market model {c.capm_wins}, ties {c.ties}); {test}"
            )
        lines.append("")

    if cell_grids:
        lines.append("## CAR grids")
        lines.append("")
        for (year, industry, direction), variant, label, grid in cell_grids:
            lines.append(f"### {year} / {industry} / {direction} / {variant}: {label}")
            lines.append("")
            header, grid_rows = _grid_table(grid, decimals=3)
            lines.extend(_markdown_table(header, grid_rows))
            lines.append("")

    if comparisons:
        lines.append("## Year comparisons")
        lines.append("")
        for direction in sorted(comparisons):
            yc = comparisons[direction]
            lines.append(f"### {direction}")
            lines.append("")
            header, yc_rows = _year_table(yc, decimals=3)
            lines.extend(_markdown_table(header, yc_rows))
            lines.append("")
            for year, reason in yc.omitted:
                lines.append(f"- {year} omitted: {reason}")
            if yc.omitted:
                lines.append("")

    if report.notices:
        lines.append("## Notices")
        lines.append("")
        for notice in report.notices:
            lines.append(f"- {notice}")
        lines.append("")

    lines.append("Stars: * p < 0.05, ** p < 0.01, *** p < 0.001.")
    lines.append("")
    path.write_text("\n".join(lines), encoding="utf-8")


def run_pipeline(config: RunConfig) -> RunReport:
    """Run every configured cell and write all result files.

    Returns the report that was also written to run_report.csv. Raises
    only on unusable inputs (unreadable files, bad config); estimation
    problems inside a cell are recorded on that cell's row.
    """
    out = config.output_dir
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from None

    returns_data = load_returns(config.returns)
    fundamentals = load_fundamentals(config.fundamentals)
    events = load_membership(config.membership)

    years = config.years or tuple(sorted({e.year for e in events}))
    cells = sorted({
        (e.year, e.industry, e.action)
        for e in events
        if e.year in years and e.action in config.directions
    })

    notices: list[str] = []
    if not cells:
        notices.append(
            "no events match the configured years/directions; nothing to estimate"
        )

    firm_ids = tuple(sorted(fid for fid in returns_data.firms))
    rows: list[CellResult] = []
    cell_grids: list[tuple[tuple[int, str, str], str, str, CarGrid]] = []
    car_samples: dict[str, dict[int, dict[tuple[int, int], list[float]]]] = {}

    for year, industry, direction in cells:
        try:
            output = _run_cell(
                year, industry, direction,
                config=config, returns_data=returns_data,
                fundamentals=fundamentals, events=events,
                firm_ids=firm_ids, out=out,
            )
        except (DataError, EstimationError) as exc:
            rows.append(CellResult(
                year=year, industry=industry, direction=direction,
                feasible=False, note=str(exc),
            ))
            continue
        rows.append(output.row)
        for variant, label, grid in output.grids:
            cell_grids.append(((year, industry, direction), variant, label, grid))
        year_map = car_samples.setdefault(direction, {}).setdefault(year, {})
        for block, values in output.blocks.items():
            year_map.setdefault(block, []).extend(values)

    comparisons: dict[str, YearComparison] = {}
    for direction in config.directions:
        samples = car_samples.get(direction)
        if not samples:
            continue
        try:
            yc = year_comparison(samples)
        except DataError as exc:
            notices.append(f"year comparison ({direction}): {exc}")
            continue
        comparisons[direction] = yc
        header, table = _year_table(yc, decimals=6)
        _write_csv(out / f"year_comparison_{direction}.csv", header, table)
        for yr, reason in yc.omitted:
            notices.append(f"year comparison ({direction}): {yr} omitted ({reason})")

    contest: tuple[ContestResult, ...] = ()
    if {"capm", "gsynth"} <= set(config.estimators) and rows:
        try:
            contest = emit_mspe_contest(RunReport(rows=tuple(rows)), out)
        except DataError as exc:
            notices.append(f"fit contest skipped: {exc}")
        else:
            for c in contest:
                if c.note.startswith("skipped"):
                    notices.append(f"fit contest ({c.direction}): {c.note}")

    report = RunReport(rows=tuple(rows), notices=tuple(notices))
    _write_report_csv(report, out / "run_report.csv")
    _write_summary_md(
        report, comparisons, contest, cell_grids, config, out / "summary.md"
    )
    return report
