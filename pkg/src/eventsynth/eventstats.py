"""Test batteries over abnormal returns.

Univariate t-tests (Welch two-sample, one-sample, paired), triangular
from/to CAR grids with significance stars, paired year-comparison
matrices, and the cross-sectional CAR regression with cubic firm
controls, industry/year fixed effects, and HC1 robust standard errors.

Stars follow one convention everywhere: * p < 0.05, ** p < 0.01,
*** p < 0.001. Report emitters repeat the mapping in their footers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import stats as sps
from scipy.linalg import qr as scipy_qr

from .capm import AbnormalSeries, car
from .errors import DataError, DegenerateVarianceError, EstimationError
from .panel import EventWindow
from .validation import as_vector, readonly

STAR_THRESHOLDS = ((0.001, "***"), (0.01, "**"), (0.05, "*"))


def star_level(p_value: float) -> str:
    """Significance stars: * 5%, ** 1%, *** 0.1% (strict inequalities)."""
    if p_value is None or math.isnan(p_value):
        return ""
    for threshold, stars in STAR_THRESHOLDS:
        if p_value < threshold:
            return stars
    return ""


@dataclass(frozen=True)
class TestResult:
    """One t-test: point estimate, statistic, two-tailed p, sizes."""

    estimate: float
    t_stat: float
    p_value: float
    df: float
    n_a: int
    n_b: int

    def __post_init__(self):
        if not (math.isnan(self.p_value) or 0 <= self.p_value <= 1):
            raise EstimationError(f"p-value {self.p_value} outside [0, 1]")

    @property
    def stars(self) -> str:
        return star_level(self.p_value)


def welch_ttest(sample_a, sample_b) -> TestResult:
    """Two-sample t-test with unequal variances (Welch-Satterthwaite df).

    estimate = mean(a) - mean(b); two-tailed p. Raises
    DegenerateVarianceError (carrying the estimate) when both samples
    have zero variance.
    """
    a = as_vector(sample_a, "sample_a", min_len=2)
    b = as_vector(sample_b, "sample_b", min_len=2)
    na, nb = len(a), len(b)
    est = float(a.mean() - b.mean())
    va = float(a.var(ddof=1))
    vb = float(b.var(ddof=1))
    se2 = va / na + vb / nb
    if se2 == 0.0:
        raise DegenerateVarianceError(
            f"both samples have zero variance (estimate {est:g})", estimate=est
        )
    t = est / math.sqrt(se2)
    df = se2**2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    p = 2.0 * float(sps.t.sf(abs(t), df))
    return TestResult(estimate=est, t_stat=t, p_value=p, df=df, n_a=na, n_b=nb)


def one_sample_ttest(sample, null_mean: float = 0.0) -> TestResult:
    """One-sample t-test of the mean against `null_mean`."""
    x = as_vector(sample, "sample", min_len=2)
    n = len(x)
    est = float(x.mean() - null_mean)
    v = float(x.var(ddof=1))
    if v == 0.0:
        raise DegenerateVarianceError(
            f"sample has zero variance (estimate {est:g})", estimate=est
        )
    t = est / math.sqrt(v / n)
    df = n - 1
    p = 2.0 * float(sps.t.sf(abs(t), df))
    return TestResult(estimate=est, t_stat=t, p_value=p, df=df, n_a=n, n_b=0)


def paired_ttest(sample_a, sample_b) -> TestResult:
    """Paired t-test: the one-sample test on elementwise differences.

    Returns exactly one_sample_ttest(a - b, 0), field for field (n_b
    stays 0, flagging the one-sample reduction). Constant differences
    raise DegenerateVarianceError with the mean difference attached.
    """
    a = as_vector(sample_a, "sample_a", min_len=2)
    b = as_vector(sample_b, "sample_b", min_len=2)
    if len(a) != len(b):
        raise DataError(
            f"paired samples must have equal length ({len(a)} vs {len(b)})"
        )
    return one_sample_ttest(a - b, 0.0)


@dataclass(frozen=True)
class GridCell:
    """One grid entry: estimate plus the test when variance permits one."""

    estimate: float
    test: TestResult | None

    @property
    def stars(self) -> str:
        return self.test.stars if self.test is not None else ""

    @property
    def t_stat(self) -> float:
        return self.test.t_stat if self.test is not None else float("nan")

    @property
    def p_value(self) -> float:
        return self.test.p_value if self.test is not None else float("nan")


@dataclass(frozen=True)
class CarGrid:
    """Triangular from/to table of CAR tests.

    cells is keyed by (from_day, to_day) and populated only for
    from_day <= to_day. mode is 'two-sample' (treated vs controls,
    Welch) or 'one-sample' (treated against zero).
    """

    mode: str
    from_days: tuple[int, ...]
    to_days: tuple[int, ...]
    cells: Mapping[tuple[int, int], GridCell]

    def __post_init__(self):
        object.__setattr__(self, "cells", dict(self.cells))
        if any(f > t for f, t in self.cells):
            raise EstimationError("grid populated below the diagonal")

    def cell(self, from_day: int, to_day: int) -> GridCell | None:
        return self.cells.get((from_day, to_day))


def car_grid(
    treated: Sequence[AbnormalSeries],
    window: EventWindow,
    from_days: Sequence[int],
    to_days: Sequence[int],
    comparison: Sequence[AbnormalSeries] | None = None,
) -> CarGrid:
    """CAR test over every (from <= to) pair of the given day sets.

    Two-sample mode (comparison given) runs Welch tests of treated vs
    comparison CARs; the cell estimate is the mean difference.
    One-sample mode tests the treated CARs against zero; the cell
    estimate is the mean CAR. Cells whose test variance degenerates
    keep their estimate with no stars. from > to pairs are skipped.
    """
    if not treated:
        raise DataError("no treated series supplied")
    day_range = (1, window.t0)
    for s in list(treated) + list(comparison or []):
        if s.first_day > day_range[0] or s.last_day < day_range[1]:
            raise DataError(
                f"series {s.firm_id} covers [{s.first_day}, {s.last_day}], "
                f"needs [1, {window.t0}]"
            )
    from_list = _day_set(from_days, window.t0, "from_days")
    to_list = _day_set(to_days, window.t0, "to_days")

    cells: dict[tuple[int, int], GridCell] = {}
    for f in from_list:
        for t in to_list:
            if f > t:
                continue
            cars_tr = np.array([car(s, f, t) for s in treated])
            try:
                if comparison is None:
                    test = one_sample_ttest(cars_tr, 0.0)
                else:
                    cars_co = np.array([car(s, f, t) for s in comparison])
                    test = welch_ttest(cars_tr, cars_co)
                cells[(f, t)] = GridCell(estimate=test.estimate, test=test)
            except DegenerateVarianceError as exc:
                cells[(f, t)] = GridCell(estimate=exc.estimate, test=None)

    return CarGrid(
        mode="one-sample" if comparison is None else "two-sample",
        from_days=tuple(from_list),
        to_days=tuple(to_list),
        cells=cells,
    )


def _day_set(days: Sequence[int], t0: int, name: str) -> list[int]:
    out = sorted({int(d) for d in days})
    if not out:
        raise DataError(f"{name} is empty")
    if out[0] < 1 or out[-1] > t0:
        raise DataError(f"{name} must lie within [1, {t0}], got {out[0]}..{out[-1]}")
    return out


@dataclass(frozen=True)
class RegressionResult:
    """OLS coefficients with HC1 robust inference."""

    names: tuple[str, ...]
    coef: np.ndarray
    se: np.ndarray
    t_stats: np.ndarray
    p_values: np.ndarray
    r_squared: float
    adj_r_squared: float
    n_obs: int
    df_resid: int

    def __post_init__(self):
        for field_name in ("coef", "se", "t_stats", "p_values"):
            object.__setattr__(self, field_name, readonly(getattr(self, field_name)))
        if not 0 <= self.r_squared <= 1:
            raise EstimationError(f"R^2 {self.r_squared} outside [0, 1]")
        if self.adj_r_squared > self.r_squared + 1e-12:
            raise EstimationError("adjusted R^2 exceeds R^2")

    def coefficient(self, name: str) -> float:
        return float(self.coef[self.names.index(name)])


def ols_car_regression(
    car_values,
    treated_dummy,
    size,
    profitability,
    leverage,
    industry: Sequence[str],
    year: Sequence[int],
) -> RegressionResult:
    """Cross-sectional CAR regression with cubic controls and fixed effects.

    Design: intercept, treated dummy, cubic polynomials in size,
    profitability, and leverage, then industry and year dummies with the
    first (sorted) category of each block dropped. Standard errors are
    HC1 (White sandwich with n/(n-k) small-sample scaling).
    """
    y = as_vector(car_values, "car_values", min_len=1)
    n = len(y)
    dummy = as_vector(treated_dummy, "treated_dummy")
    sz = as_vector(size, "size")
    prof = as_vector(profitability, "profitability")
    lev = as_vector(leverage, "leverage")
    for vec, name in ((dummy, "treated_dummy"), (sz, "size"),
                      (prof, "profitability"), (lev, "leverage")):
        if len(vec) != n:
            raise DataError(f"{name} length {len(vec)} does not match n={n}")
    if len(industry) != n or len(year) != n:
        raise DataError("industry and year must have one entry per observation")

    if float(np.var(y)) == 0.0:
        raise EstimationError(
            "dependent variable has zero variance; regression undefined"
        )

    columns = [np.ones(n), dummy]
    names = ["const", "treated"]
    for vec, base in ((sz, "size"), (prof, "roe"), (lev, "lev")):
        for power in (1, 2, 3):
            columns.append(vec**power)
            names.append(base if power == 1 else f"{base}^{power}")
    for cat, prefix in ((list(industry), "ind"), ([str(v) for v in year], "year")):
        levels = sorted(set(cat))
        for level in levels[1:]:  # first category absorbed by the intercept
            columns.append(np.array([1.0 if c == level else 0.0 for c in cat]))
            names.append(f"{prefix}_{level}")

    X = np.column_stack(columns)
    k = X.shape[1]
    if n <= k:
        raise DataError(f"need more observations than regressors (n={n}, k={k})")

    rank, collinear = _column_rank(X, names)
    if rank < k:
        raise EstimationError(
            "design matrix is rank deficient; collinear columns: "
            + ", ".join(collinear)
        )

    xtx = X.T @ X
    xtx_inv = np.linalg.inv(xtx)
    coef = xtx_inv @ (X.T @ y)
    resid = y - X @ coef

    meat = (X * (resid**2)[:, None]).T @ X
    cov = xtx_inv @ meat @ xtx_inv * (n / (n - k))
    se = np.sqrt(np.diag(cov))
    t_stats = coef / se
    df_resid = n - k
    p_values = 2.0 * sps.t.sf(np.abs(t_stats), df_resid)

    tss = float(np.sum((y - y.mean()) ** 2))
    rss = float(resid @ resid)
    r2 = 1.0 - rss / tss
    r2 = min(max(r2, 0.0), 1.0)
    adj = 1.0 - (1.0 - r2) * (n - 1) / df_resid

    return RegressionResult(
        names=tuple(names),
        coef=coef,
        se=se,
        t_stats=t_stats,
        p_values=np.asarray(p_values),
        r_squared=r2,
        adj_r_squared=adj,
        n_obs=n,
        df_resid=df_resid,
    )


def _column_rank(X: np.ndarray, names: Sequence[str]) -> tuple[int, list[str]]:
    """Numerical rank plus the names of columns beyond it (QR pivoting)."""
    _, R, P = scipy_qr(X, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    tol = d[0] * max(X.shape) * np.finfo(float).eps if d.size else 0.0
    rank = int(np.sum(d > tol))
    collinear = [names[j] for j in sorted(P[rank:])]
    return rank, collinear


@dataclass(frozen=True)
class YearComparison:
    """Paired tests of mean CARs between year pairs over a from/to block."""

    years: tuple[int, ...]
    cells: Mapping[tuple[int, int], GridCell]
    omitted: tuple[tuple[int, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "cells", dict(self.cells))

    def cell(self, year_a: int, year_b: int) -> GridCell | None:
        return self.cells.get((year_a, year_b))


def year_comparison(
    car_samples: Mapping[int, Mapping[tuple[int, int], Sequence[float]]],
) -> YearComparison:
    """Pairwise year tests over a fixed from/to holding-period block.

    car_samples maps year -> {(from, to): per-firm CARs}. Within each
    year every cell is averaged across firms first; the paired test then
    matches cell means across the two years (pairing by holding-period
    cell). Years with no observations are omitted with a notice. Pairs
    whose differences are constant keep their estimate without a test.
    """
    omitted: list[tuple[int, str]] = []
    usable: dict[int, dict[tuple[int, int], float]] = {}
    for yr in sorted(car_samples):
        block = {
            cell: list(values)
            for cell, values in car_samples[yr].items()
            if len(values) > 0
        }
        if not block:
            omitted.append((yr, "no treated observations"))
            continue
        usable[yr] = {cell: float(np.mean(vals)) for cell, vals in block.items()}

    years = sorted(usable)
    if len(years) < 2:
        raise DataError("need at least 2 years with observations to compare")

    common = set.intersection(*(set(usable[yr]) for yr in years))
    if len(common) < 2:
        raise DataError(
            "year comparison needs at least 2 common (from, to) cells, "
            f"got {len(common)}"
        )
    order = sorted(common)

    cells: dict[tuple[int, int], GridCell] = {}
    for i, ya in enumerate(years):
        vec_a = np.array([usable[ya][c] for c in order])
        for yb in years[i + 1 :]:
            vec_b = np.array([usable[yb][c] for c in order])
            try:
                test = paired_ttest(vec_a, vec_b)
                cells[(ya, yb)] = GridCell(estimate=test.estimate, test=test)
            except DegenerateVarianceError as exc:
                cells[(ya, yb)] = GridCell(estimate=exc.estimate, test=None)

    return YearComparison(
        years=tuple(years), cells=cells, omitted=tuple(omitted)
    )
