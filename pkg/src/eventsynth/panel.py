"""Panel data model and event-window arithmetic.

Calendars are tuples of trading dates; positions into a calendar are
0-based integers. An event year's timeline has two spans:

* the control span, starting at the first trading day on or after
  November 1 of the prior year and ending the day before the treatment
  span opens;
* the treatment span, opening 15 trading days before the announcement so
  the announcement lands on treatment day 16 (1-based), running through
  the effective day at 16 + gap, and closing 15 trading days after it.

Treatment days are numbered 1..t0 throughout the package; day numbers
convert to calendar positions via ``EventWindow``.
"""

from __future__ import annotations

import bisect
import datetime as dt
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError
from .validation import readonly

PRE_ANNOUNCEMENT_DAYS = 15
POST_EFFECTIVE_DAYS = 15

FLAG_JOIN = "join"
FLAG_DELIST = "delist"
FLAG_CONTROL = "control"
VALID_FLAGS = (FLAG_JOIN, FLAG_DELIST, FLAG_CONTROL)


@dataclass(frozen=True)
class TradingCalendar:
    """Strictly increasing sequence of trading dates."""

    dates: tuple[dt.date, ...]

    def __post_init__(self):
        if not self.dates:
            raise DataError("calendar has no dates")
        for a, b in zip(self.dates, self.dates[1:]):
            if a >= b:
                raise DataError(f"calendar dates not strictly increasing at {b}")
        object.__setattr__(
            self, "_positions", {d: i for i, d in enumerate(self.dates)}
        )

    def __len__(self) -> int:
        return len(self.dates)

    def __getitem__(self, pos: int) -> dt.date:
        return self.dates[pos]

    def index(self, day: dt.date) -> int:
        """Position of a trading day; error if the date is not in the calendar."""
        pos = self._positions.get(day)
        if pos is None:
            raise DataError(f"{day.isoformat()} is not a trading day in the calendar")
        return pos

    def first_on_or_after(self, day: dt.date) -> int:
        """Position of the first trading day on or after `day`."""
        pos = bisect.bisect_left(self.dates, day)
        if pos >= len(self.dates):
            raise DataError(f"no trading day on or after {day.isoformat()}")
        return pos


@dataclass(frozen=True)
class EventWindow:
    """Control and treatment spans for one event year.

    t_start/t_end are calendar positions bounding the control span
    (inclusive). The treatment span covers positions t_end+1 .. t_end+t0
    and its days are numbered 1..t0; the announcement falls on day
    ann_offset and the effective date on day eff_offset.
    """

    year: int
    t_start: int
    t_end: int
    ann_offset: int
    eff_offset: int
    t0: int

    def __post_init__(self):
        if self.t_start < 0:
            raise DataError("t_start must be a calendar position (>= 0)")
        if self.t_start >= self.t_end:
            raise DataError("control span needs at least 2 trading days")
        if not (1 <= self.ann_offset < self.eff_offset <= self.t0):
            raise DataError(
                "window offsets must satisfy 1 <= announcement < effective <= t0, "
                f"got ({self.ann_offset}, {self.eff_offset}, {self.t0})"
            )

    @property
    def n_control(self) -> int:
        return self.t_end - self.t_start + 1

    @property
    def control_positions(self) -> range:
        return range(self.t_start, self.t_end + 1)

    @property
    def treatment_positions(self) -> range:
        return range(self.t_end + 1, self.t_end + 1 + self.t0)

    def day_position(self, day: int) -> int:
        """Calendar position of treatment day `day` (1-based)."""
        if not 1 <= day <= self.t0:
            raise DataError(f"treatment day {day} outside [1, {self.t0}]")
        return self.t_end + day


def build_event_window(
    year: int,
    calendar: TradingCalendar,
    announcement_date: dt.date,
    effective_date: dt.date,
) -> EventWindow:
    """Lay out the control/treatment spans around an announcement.

    The control span runs from the first trading day on or after
    November 1 of year-1 up to 16 trading days before the announcement.
    The treatment span opens 15 trading days before the announcement
    (announcement = day 16), the effective day lands at 16 plus the
    trading-day gap between the two dates, and the span closes 15
    trading days after the effective day.
    """
    ann_pos = calendar.index(announcement_date)
    eff_pos = calendar.index(effective_date)
    gap = eff_pos - ann_pos
    if gap <= 0:
        raise DataError("effective date must fall after the announcement date")

    t_start = calendar.first_on_or_after(dt.date(year - 1, 11, 1))
    treat_first = ann_pos - PRE_ANNOUNCEMENT_DAYS
    if treat_first - t_start < 2:
        raise DataError(
            "control span shorter than 2 trading days: the announcement must come "
            f"more than {PRE_ANNOUNCEMENT_DAYS + 1} trading days after "
            f"November 1 of {year - 1}"
        )

    ann_offset = PRE_ANNOUNCEMENT_DAYS + 1
    eff_offset = ann_offset + gap
    t0 = eff_offset + POST_EFFECTIVE_DAYS
    if treat_first + t0 - 1 >= len(calendar):
        raise DataError(
            f"calendar ends before the treatment window closes "
            f"(needs {treat_first + t0 - len(calendar)} more trading days)"
        )
    return EventWindow(
        year=year,
        t_start=t_start,
        t_end=treat_first - 1,
        ann_offset=ann_offset,
        eff_offset=eff_offset,
        t0=t0,
    )


@dataclass(frozen=True)
class FirmSeries:
    """One firm's excess returns (percent) keyed by calendar position."""

    firm_id: str
    observations: Mapping[int, float]

    def __post_init__(self):
        object.__setattr__(
            self, "observations", MappingProxyType(dict(self.observations))
        )

    @classmethod
    def from_pairs(
        cls, firm_id: str, pairs: Iterable[tuple[int, float]]
    ) -> "FirmSeries":
        obs: dict[int, float] = {}
        for pos, value in pairs:
            if pos in obs:
                raise DataError(
                    f"firm {firm_id}: duplicate observation at calendar position {pos}"
                )
            obs[int(pos)] = float(value)
        return cls(firm_id, obs)

    def covers(self, positions: Iterable[int]) -> bool:
        return all(p in self.observations for p in positions)

    def values_at(self, positions: Sequence[int]) -> np.ndarray:
        try:
            return np.array([self.observations[p] for p in positions], dtype=float)
        except KeyError as exc:
            raise DataError(
                f"firm {self.firm_id}: missing observation at calendar position "
                f"{exc.args[0]}"
            ) from None


@dataclass(frozen=True)
class ReturnPanel:
    """Balanced firm-by-day panel of excess returns over both spans.

    Matrix columns follow `firms`; `control_matrix` is T_c x N over the
    control span, `treatment_matrix` is t0 x N over the treatment span,
    and `market` holds the market excess return over both spans
    (length T_c + t0). All arrays are read-only after construction.
    """

    firms: tuple[str, ...]
    window: EventWindow
    control_matrix: np.ndarray
    treatment_matrix: np.ndarray
    market: np.ndarray
    treatment_flags: tuple[str, ...]
    _masks: tuple = field(init=False, repr=False, compare=False, default=())

    def __post_init__(self):
        n = len(self.firms)
        if n == 0:
            raise DataError("panel has no firms")
        if len(set(self.firms)) != n:
            raise DataError("panel firm ids are not unique")
        if len(self.treatment_flags) != n:
            raise DataError("one treatment flag required per firm")
        bad = sorted({f for f in self.treatment_flags if f not in VALID_FLAGS})
        if bad:
            raise DataError(f"unknown treatment flags {bad}; accepted: {VALID_FLAGS}")

        cm = readonly(np.atleast_2d(self.control_matrix))
        tm = readonly(np.atleast_2d(self.treatment_matrix))
        mk = readonly(np.asarray(self.market, dtype=float))
        if cm.shape != (self.window.n_control, n):
            raise DataError(
                f"control matrix shape {cm.shape} does not match "
                f"(T_c={self.window.n_control}, N={n})"
            )
        if tm.shape != (self.window.t0, n):
            raise DataError(
                f"treatment matrix shape {tm.shape} does not match "
                f"(t0={self.window.t0}, N={n})"
            )
        if mk.shape != (self.window.n_control + self.window.t0,):
            raise DataError("market series must cover both spans")
        if not (
            np.all(np.isfinite(cm))
            and np.all(np.isfinite(tm))
            and np.all(np.isfinite(mk))
        ):
            raise DataError("panel contains non-finite values")

        treated = np.array([f != FLAG_CONTROL for f in self.treatment_flags])
        if not treated.any():
            raise DataError("panel has no treated firm (join or delist)")
        if treated.all():
            raise DataError("panel has no control firm")

        object.__setattr__(self, "control_matrix", cm)
        object.__setattr__(self, "treatment_matrix", tm)
        object.__setattr__(self, "market", mk)
        object.__setattr__(self, "firms", tuple(self.firms))
        object.__setattr__(self, "treatment_flags", tuple(self.treatment_flags))
        object.__setattr__(self, "_masks", (treated, ~treated))

    @property
    def n_firms(self) -> int:
        return len(self.firms)

    @property
    def t_c(self) -> int:
        return self.window.n_control

    @property
    def t0(self) -> int:
        return self.window.t0

    @property
    def treated_mask(self) -> np.ndarray:
        return self._masks[0].copy()

    @property
    def control_mask(self) -> np.ndarray:
        return self._masks[1].copy()

    @property
    def treated_firms(self) -> tuple[str, ...]:
        return tuple(f for f, m in zip(self.firms, self._masks[0]) if m)

    @property
    def control_firms(self) -> tuple[str, ...]:
        return tuple(f for f, m in zip(self.firms, self._masks[1]) if m)

    @property
    def full_matrix(self) -> np.ndarray:
        """(T_c + t0) x N stack of both spans."""
        return np.vstack([self.control_matrix, self.treatment_matrix])

    @property
    def market_control(self) -> np.ndarray:
        return self.market[: self.t_c]

    @property
    def market_treatment(self) -> np.ndarray:
        return self.market[self.t_c :]

    def controls_full(self) -> np.ndarray:
        """(T_c + t0) x N_co matrix of the control firms."""
        return self.full_matrix[:, self._masks[1]]

    def treated_full(self) -> np.ndarray:
        """(T_c + t0) x N_tr matrix of the treated firms."""
        return self.full_matrix[:, self._masks[0]]


def align_panel(
    series: Sequence[FirmSeries],
    flags: Mapping[str, str],
    market: FirmSeries,
    window: EventWindow,
) -> tuple[ReturnPanel, list[str]]:
    """Build a balanced panel from per-firm series, dropping incomplete firms.

    Firms missing any observation in either span are excluded entirely
    (no imputation). Input firm order is preserved. Returns the panel and
    the list of dropped firm ids.
    """
    control_pos = list(window.control_positions)
    treatment_pos = list(window.treatment_positions)
    all_pos = control_pos + treatment_pos

    if not market.covers(all_pos):
        missing = [p for p in all_pos if p not in market.observations]
        raise DataError(
            f"market series incomplete over the window "
            f"(missing {len(missing)} positions, first {missing[0]})"
        )

    kept: list[FirmSeries] = []
    dropped: list[str] = []
    for s in series:
        if s.covers(all_pos):
            kept.append(s)
        else:
            dropped.append(s.firm_id)
    if not kept:
        raise DataError("no firm has complete coverage of the window")

    firm_ids = []
    flag_list = []
    for s in kept:
        if s.firm_id not in flags:
            raise DataError(f"no treatment flag provided for firm {s.firm_id}")
        firm_ids.append(s.firm_id)
        flag_list.append(flags[s.firm_id])

    n_treated = sum(1 for f in flag_list if f != FLAG_CONTROL)
    if n_treated == 0:
        raise DataError("zero treated firms survive the completeness rule")
    if n_treated == len(flag_list):
        raise DataError("zero control firms survive the completeness rule")

    control_matrix = np.column_stack([s.values_at(control_pos) for s in kept])
    treatment_matrix = np.column_stack([s.values_at(treatment_pos) for s in kept])
    market_values = market.values_at(all_pos)

    panel = ReturnPanel(
        firms=tuple(firm_ids),
        window=window,
        control_matrix=control_matrix,
        treatment_matrix=treatment_matrix,
        market=market_values,
        treatment_flags=tuple(flag_list),
    )
    return panel, dropped
