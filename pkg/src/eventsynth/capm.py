"""Per-firm market-model baseline.

Fits R_t = alpha + beta * MKT_t by OLS on the control span, then turns
out-of-sample deviations into abnormal returns, cumulative abnormal
returns over inclusive day windows, and the control-period mean squared
prediction error used as the fit metric.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import DataError, EstimationError
from .validation import as_vector, readonly, same_length


@dataclass(frozen=True)
class CapmFit:
    """Market-model coefficients for one firm plus in-sample fit."""

    firm_id: str
    alpha: float
    beta: float
    control_mspe: float

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and np.isfinite(self.beta)):
            raise EstimationError(f"non-finite coefficients for firm {self.firm_id}")
        if self.control_mspe < 0:
            raise EstimationError("control_mspe cannot be negative")


@dataclass(frozen=True)
class AbnormalSeries:
    """Per-day abnormal returns over a contiguous day range.

    `first_day` names the day index of values[0]; days run
    first_day .. first_day + len(values) - 1 inclusive.
    """

    firm_id: str
    first_day: int
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", readonly(np.atleast_1d(self.values)))
        if self.values.ndim != 1:
            raise DataError("abnormal series values must be one-dimensional")

    @property
    def last_day(self) -> int:
        return self.first_day + len(self.values) - 1

    def window_values(self, from_day: int, to_day: int) -> np.ndarray:
        if from_day > to_day:
            raise DataError(f"empty day window [{from_day}, {to_day}]")
        if from_day < self.first_day or to_day > self.last_day:
            raise DataError(
                f"day window [{from_day}, {to_day}] outside series range "
                f"[{self.first_day}, {self.last_day}]"
            )
        lo = from_day - self.first_day
        return self.values[lo : lo + (to_day - from_day + 1)]


def fit_capm(returns, market, firm_id: str = "") -> CapmFit:
    """OLS fit of the single-regressor market model on the control span.

    beta = cov(R, MKT) / var(MKT) and alpha = mean(R) - beta * mean(MKT),
    the closed-form simple-regression solution; control_mspe is the mean
    squared in-sample residual.
    """
    r = as_vector(returns, "returns", min_len=2)
    m = as_vector(market, "market", min_len=2)
    same_length(r, m, "returns", "market")

    mc = m - m.mean()
    denom = float(mc @ mc)
    if denom == 0.0:
        raise EstimationError(
            f"market series has zero variance; beta undefined (firm {firm_id or '?'})"
        )
    beta = float(mc @ (r - r.mean())) / denom
    alpha = float(r.mean() - beta * m.mean())
    resid = r - alpha - beta * m
    return CapmFit(
        firm_id=firm_id,
        alpha=alpha,
        beta=beta,
        control_mspe=float(np.mean(resid**2)),
    )


def abnormal_returns(
    fit: CapmFit, returns, market, days: Sequence[int] | range
) -> AbnormalSeries:
    """Abnormal returns AR_t = R_t - alpha - beta * MKT_t over `days`.

    `days` must be a contiguous ascending day range and both inputs must
    cover it exactly (one value per day).
    """
    day_list = list(days)
    if not day_list:
        raise DataError("days range is empty")
    if any(b - a != 1 for a, b in zip(day_list, day_list[1:])):
        raise DataError("days must be contiguous ascending day indices")
    r = as_vector(returns, "returns")
    m = as_vector(market, "market")
    if len(r) != len(day_list) or len(m) != len(day_list):
        raise DataError(
            f"returns/market do not cover the {len(day_list)}-day range "
            f"({len(r)} and {len(m)} values given)"
        )
    values = r - fit.alpha - fit.beta * m
    return AbnormalSeries(firm_id=fit.firm_id, first_day=day_list[0], values=values)


def car(series: AbnormalSeries, from_day: int, to_day: int) -> float:
    """Cumulative abnormal return: inclusive sum over [from_day, to_day]."""
    return float(np.sum(series.window_values(from_day, to_day)))


def mspe(series: AbnormalSeries) -> float:
    """Mean squared value of the series (model-fit barometer)."""
    if len(series.values) == 0:
        raise DataError("cannot compute MSPE of an empty series")
    return float(np.mean(series.values**2))


class CapmModel(BaseEstimator):
    """Market-model regressions for a whole firm panel at once.

    sklearn-style estimator: ``fit(X, y)`` takes the market series as X
    (shape (T,) or (T, 1)) and firm returns as y (shape (T,) or (T, N));
    ``predict(X)`` returns the model-implied returns per firm. Fitted
    attributes: ``alpha_``, ``beta_`` (shape (N,)), ``mspe_``.
    """

    def fit(self, X, y):
        m = self._market_vector(X)
        Y = np.asarray(y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        if Y.ndim != 2 or Y.shape[0] != m.shape[0]:
            raise DataError(
                f"returns shape {Y.shape} incompatible with market length {len(m)}"
            )
        if len(m) < 2:
            raise DataError("need at least 2 observations to fit")
        if not np.all(np.isfinite(Y)):
            raise DataError("returns contain non-finite values")

        mc = m - m.mean()
        denom = float(mc @ mc)
        if denom == 0.0:
            raise EstimationError("market series has zero variance; beta undefined")
        self.beta_ = (mc @ (Y - Y.mean(axis=0))) / denom
        self.alpha_ = Y.mean(axis=0) - self.beta_ * m.mean()
        resid = Y - self.alpha_ - np.outer(m, self.beta_)
        self.mspe_ = np.mean(resid**2, axis=0)
        self.n_obs_ = len(m)
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "alpha_"):
            raise NotFittedError("CapmModel is not fitted; call fit first")
        m = self._market_vector(X)
        return self.alpha_ + np.outer(m, self.beta_)

    def abnormal(self, X, y) -> np.ndarray:
        """Observed minus predicted returns on new data."""
        Y = np.asarray(y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        pred = self.predict(X)
        if Y.shape != pred.shape:
            raise DataError(
                f"returns shape {Y.shape} does not match predictions {pred.shape}"
            )
        return Y - pred

    @staticmethod
    def _market_vector(X) -> np.ndarray:
        m = np.asarray(X, dtype=float)
        if m.ndim == 2 and m.shape[1] == 1:
            m = m[:, 0]
        if m.ndim != 1:
            raise DataError(f"market X must be (T,) or (T, 1), got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise DataError("market contains non-finite values")
        return m
