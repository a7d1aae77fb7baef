"""CSV loading and sample construction.

Three wire formats, all UTF-8 comma-separated with exact headers, ISO
dates, `.` decimal point, returns in percent:

* returns.csv      -> date,firm_id,ret,mkt (mkt constant per date)
* fundamentals.csv -> firm_id,fiscal_year,assets,roe,leverage
* membership.csv   -> firm_id,year,action,naics2 (action: join|delist)

Loading is strict: malformed rows abort with their line numbers rather
than being skipped, so a defective extract cannot silently shrink the
sample.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import DataError
from .panel import FirmSeries, TradingCalendar

ACTIONS = ("join", "delist")
_MAX_REPORTED_LINES = 20


@dataclass(frozen=True)
class FundamentalsRecord:
    """Balance-sheet snapshot for one firm and fiscal year.

    size is recomputed as ln(assets) at load time, never trusted from
    the file.
    """

    firm_id: str
    fiscal_year: int
    assets: float
    roe: float
    leverage: float

    def __post_init__(self):
        if not (math.isfinite(self.assets) and self.assets > 0):
            raise DataError(
                f"firm {self.firm_id} FY{self.fiscal_year}: assets must be positive"
            )

    @property
    def size(self) -> float:
        return math.log(self.assets)


@dataclass(frozen=True)
class MembershipEvent:
    """One index join or delist for a firm-year."""

    firm_id: str
    year: int
    action: str
    industry: str

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise DataError(
                f"unknown action {self.action!r}; accepted: {', '.join(ACTIONS)}"
            )
        if len(self.industry) != 2 or not self.industry.isdigit():
            raise DataError(
                f"industry must be a two-digit code, got {self.industry!r}"
            )


@dataclass(frozen=True)
class SampleSpec:
    """Treated and control firm sets for one (year, industry, action) cell."""

    year: int
    industry: str
    action: str
    variant: str
    treated_ids: tuple[str, ...]
    control_ids: tuple[str, ...]
    dropped: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if self.variant not in ("full", "base"):
            raise DataError(f"variant must be full or base, got {self.variant!r}")
        if not self.treated_ids:
            raise DataError("sample has an empty treated set")
        if not self.control_ids:
            raise DataError("sample has an empty control set")
        if set(self.treated_ids) & set(self.control_ids):
            raise DataError("treated and control sets overlap")


@dataclass(frozen=True)
class ReturnData:
    """Everything load_returns knows: calendar, firm series, market series."""

    calendar: TradingCalendar
    firms: Mapping[str, FirmSeries]
    market: FirmSeries

    def __post_init__(self):
        object.__setattr__(self, "firms", dict(self.firms))


def _open_rows(path) -> Iterable[tuple[int, list[str]]]:
    p = Path(path)
    if not p.exists():
        raise DataError(f"input file not found: {p}")
    with p.open("r", newline="", encoding="utf-8") as fh:
        for line_no, row in enumerate(csv.reader(fh), start=1):
            yield line_no, row


def _check_header(row: list[str], expected: Sequence[str], path) -> None:
    if row != list(expected):
        raise DataError(
            f"{path}: expected header {','.join(expected)!r}, "
            f"got {','.join(row)!r}"
        )


def _fail_lines(path, problems: list[str]) -> None:
    if problems:
        shown = problems[:_MAX_REPORTED_LINES]
        more = len(problems) - len(shown)
        suffix = f" (+{more} more)" if more > 0 else ""
        raise DataError(f"{path}: rejected rows: " + "; ".join(shown) + suffix)


def load_returns(path) -> ReturnData:
    """Parse returns.csv into a calendar, per-firm series, and the market.

    Rejects duplicate (date, firm) rows, inconsistent `mkt` values within
    a date, and any unparseable field, all with line numbers.
    """
    rows = iter(_open_rows(path))
    try:
        _, header = next(rows)
    except StopIteration:
        raise DataError(f"{path}: file is empty (missing header)") from None
    _check_header(header, ["date", "firm_id", "ret", "mkt"], path)

    observations: dict[tuple[dt.date, str], float] = {}
    market_by_date: dict[dt.date, tuple[float, int]] = {}
    problems: list[str] = []
    for line_no, row in rows:
        if len(row) != 4:
            problems.append(f"line {line_no}: expected 4 fields, got {len(row)}")
            continue
        raw_date, firm_id, raw_ret, raw_mkt = row
        try:
            day = dt.date.fromisoformat(raw_date)
            ret = float(raw_ret)
            mkt = float(raw_mkt)
        except ValueError:
            problems.append(f"line {line_no}: unparseable fields {row!r}")
            continue
        if not firm_id:
            problems.append(f"line {line_no}: empty firm_id")
            continue
        key = (day, firm_id)
        if key in observations:
            problems.append(
                f"line {line_no}: duplicate observation for firm {firm_id} "
                f"on {day.isoformat()}"
            )
            continue
        observations[key] = ret
        seen = market_by_date.get(day)
        if seen is None:
            market_by_date[day] = (mkt, line_no)
        elif seen[0] != mkt:
            problems.append(
                f"line {line_no}: mkt={mkt} contradicts line {seen[1]} "
                f"(mkt={seen[0]}) for {day.isoformat()}"
            )
    _fail_lines(path, problems)
    if not observations:
        raise DataError(f"{path}: no data rows")

    calendar = TradingCalendar(tuple(sorted(market_by_date)))
    firm_obs: dict[str, dict[int, float]] = {}
    for (day, firm_id), ret in observations.items():
        firm_obs.setdefault(firm_id, {})[calendar.index(day)] = ret
    firms = {fid: FirmSeries(fid, obs) for fid, obs in firm_obs.items()}
    market = FirmSeries(
        "__market__",
        {calendar.index(day): mkt for day, (mkt, _) in market_by_date.items()},
    )
    return ReturnData(calendar=calendar, firms=firms, market=market)


def load_fundamentals(path) -> dict[tuple[str, int], FundamentalsRecord]:
    """Parse fundamentals.csv, keyed by (firm_id, fiscal_year)."""
    rows = iter(_open_rows(path))
    try:
        _, header = next(rows)
    except StopIteration:
        raise DataError(f"{path}: file is empty (missing header)") from None
    _check_header(header, ["firm_id", "fiscal_year", "assets", "roe", "leverage"], path)

    records: dict[tuple[str, int], FundamentalsRecord] = {}
    problems: list[str] = []
    for line_no, row in rows:
        if len(row) != 5:
            problems.append(f"line {line_no}: expected 5 fields, got {len(row)}")
            continue
        firm_id, raw_year, raw_assets, raw_roe, raw_lev = row
        try:
            year = int(raw_year)
            assets = float(raw_assets)
            roe = float(raw_roe)
            lev = float(raw_lev)
        except ValueError:
            problems.append(f"line {line_no}: unparseable fields {row!r}")
            continue
        if assets <= 0 or not math.isfinite(assets):
            problems.append(f"line {line_no}: assets must be positive, got {assets}")
            continue
        key = (firm_id, year)
        if key in records:
            problems.append(
                f"line {line_no}: duplicate fundamentals for firm {firm_id} "
                f"FY{year}"
            )
            continue
        records[key] = FundamentalsRecord(
            firm_id=firm_id, fiscal_year=year, assets=assets, roe=roe, leverage=lev
        )
    _fail_lines(path, problems)
    return records


def load_membership(path) -> tuple[MembershipEvent, ...]:
    """Parse membership.csv; one action per firm-year enforced."""
    rows = iter(_open_rows(path))
    try:
        _, header = next(rows)
    except StopIteration:
        raise DataError(f"{path}: file is empty (missing header)") from None
    _check_header(header, ["firm_id", "year", "action", "naics2"], path)

    events: list[MembershipEvent] = []
    seen: dict[tuple[str, int], int] = {}
    problems: list[str] = []
    for line_no, row in rows:
        if len(row) != 4:
            problems.append(f"line {line_no}: expected 4 fields, got {len(row)}")
            continue
        firm_id, raw_year, action, industry = row
        try:
            year = int(raw_year)
        except ValueError:
            problems.append(f"line {line_no}: unparseable year {raw_year!r}")
            continue
        if action not in ACTIONS:
            problems.append(
                f"line {line_no}: unknown action {action!r}; "
                f"accepted: {', '.join(ACTIONS)}"
            )
            continue
        if len(industry) != 2 or not industry.isdigit():
            problems.append(
                f"line {line_no}: industry must be a two-digit code, "
                f"got {industry!r}"
            )
            continue
        key = (firm_id, year)
        if key in seen:
            problems.append(
                f"line {line_no}: firm {firm_id} already has an action for "
                f"{year} (line {seen[key]})"
            )
            continue
        seen[key] = line_no
        events.append(
            MembershipEvent(firm_id=firm_id, year=year, action=action, industry=industry)
        )
    _fail_lines(path, problems)
    return tuple(events)


def construct_samples(
    year: int,
    industry: str,
    action: str,
    events: Sequence[MembershipEvent],
    fundamentals: Mapping[tuple[str, int], FundamentalsRecord],
    firm_universe: Mapping[str, str],
) -> tuple[SampleSpec, SampleSpec]:
    """Build the full and base samples for one (year, industry, action).

    Treated firms are the cell's event firms; full-sample controls are
    every same-industry firm in the universe with no membership event
    that year. Candidates without prior-fiscal-year fundamentals are
    dropped (and reported on both specs) before either variant forms, so
    the treated sets stay identical across variants. The base sample
    keeps controls whose assets are at least 80% of the smallest treated
    firm's assets (raw assets, inclusive at equality).
    """
    if action not in ACTIONS:
        raise DataError(f"unknown action {action!r}; accepted: {', '.join(ACTIONS)}")

    treated_raw = sorted(
        {
            e.firm_id
            for e in events
            if e.year == year and e.industry == industry and e.action == action
        }
    )
    if not treated_raw:
        raise DataError(f"no {action} events for industry {industry} in {year}")

    changed_this_year = {e.firm_id for e in events if e.year == year}
    controls_raw = sorted(
        fid
        for fid, ind in firm_universe.items()
        if ind == industry and fid not in changed_this_year
    )

    fiscal = year - 1
    dropped: list[tuple[str, str]] = []

    def has_fundamentals(fid: str) -> bool:
        if (fid, fiscal) in fundamentals:
            return True
        dropped.append((fid, f"no fundamentals for FY{fiscal}"))
        return False

    treated = [f for f in treated_raw if has_fundamentals(f)]
    controls = [f for f in controls_raw if has_fundamentals(f)]
    if not treated:
        raise DataError(
            f"every {action} firm for industry {industry} in {year} lacks "
            f"FY{fiscal} fundamentals"
        )
    if not controls:
        raise DataError(
            f"no eligible control firms for industry {industry} in {year}"
        )

    dropped_t = tuple(dropped)
    full = SampleSpec(
        year=year,
        industry=industry,
        action=action,
        variant="full",
        treated_ids=tuple(treated),
        control_ids=tuple(controls),
        dropped=dropped_t,
    )

    threshold = 0.8 * min(fundamentals[(f, fiscal)].assets for f in treated)
    base_controls = [
        f for f in controls if fundamentals[(f, fiscal)].assets >= threshold
    ]
    if not base_controls:
        raise DataError(
            f"asset filter (>= {threshold:g}) removed every control for "
            f"industry {industry} in {year}"
        )
    base = SampleSpec(
        year=year,
        industry=industry,
        action=action,
        variant="base",
        treated_ids=tuple(treated),
        control_ids=tuple(base_controls),
        dropped=dropped_t,
    )
    return full, base
