"""Synthetic factor-model panels with known ground truth.

Returns are built as F lambda' + noise, with a per-day treatment effect
added to treated firms on treatment days only. Factors, loadings, and
noise are standard normal draws scaled by the config, so every moment
the estimators should recover is known exactly. The first factor doubles
as the market series, which deliberately makes the single-factor market
model misspecified whenever r_true > 1.

Panels can be emitted in the exact CSV wire formats the ingest module
reads, for end-to-end pipeline tests.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .panel import EventWindow, ReturnPanel
from .validation import readonly

# treatment-day geometry constants shared with panel.build_event_window
_ANN_DAY = 16
_POST_EFFECTIVE = 15


@dataclass(frozen=True)
class DgpConfig:
    """Data-generating process parameters."""

    n_control: int
    n_treated: int
    t_control: int
    t_treatment: int
    r_true: int
    factor_scale: float = 1.0
    loading_scale: float = 1.0
    noise_sd: float = 1.0
    att_profile: tuple[float, ...] = ()
    seed: int = 0
    year: int = 2013
    industry: str = "33"
    action: str = "join"

    def __post_init__(self):
        if self.n_control < 1 or self.n_treated < 1:
            raise DataError("need at least one control and one treated firm")
        if self.t_control < 2:
            raise DataError("t_control must be at least 2")
        if self.t_treatment < 2:
            raise DataError("t_treatment must be at least 2")
        if self.r_true < 0:
            raise DataError("r_true must be non-negative")
        if self.noise_sd < 0 or self.factor_scale < 0 or self.loading_scale < 0:
            raise DataError("scales must be non-negative")
        if self.action not in ("join", "delist"):
            raise DataError(f"action must be join or delist, got {self.action!r}")
        profile = tuple(float(v) for v in self.att_profile)
        if not profile:
            profile = (0.0,) * self.t_treatment
        if len(profile) != self.t_treatment:
            raise DataError(
                f"att_profile length {len(profile)} != t_treatment {self.t_treatment}"
            )
        object.__setattr__(self, "att_profile", profile)

    @classmethod
    def constant_att(cls, level: float, **kwargs) -> "DgpConfig":
        """Config whose true effect is `level` on every treatment day."""
        if "t_treatment" not in kwargs:
            raise DataError("constant_att requires t_treatment")
        profile = (float(level),) * int(kwargs["t_treatment"])
        return cls(att_profile=profile, **kwargs)


@dataclass(frozen=True)
class SyntheticTruth:
    """Generated panel plus everything the DGP knows about it."""

    config: DgpConfig
    factors: np.ndarray     # T x r_true
    loadings: np.ndarray    # N x r_true, rows ordered like panel.firms
    att: np.ndarray         # (t_treatment,)
    panel: ReturnPanel
    noiseless: np.ndarray = field(repr=False, default=None)  # T x N, F lambda'

    def __post_init__(self):
        if self.noiseless is None:
            object.__setattr__(self, "noiseless", self.factors @ self.loadings.T)
        for name in ("factors", "loadings", "att", "noiseless"):
            object.__setattr__(self, name, readonly(getattr(self, name)))


def _window_for(config: DgpConfig) -> EventWindow:
    t0 = config.t_treatment
    if t0 >= _ANN_DAY + 1 + _POST_EFFECTIVE:
        ann, eff = _ANN_DAY, t0 - _POST_EFFECTIVE
    else:
        # too short for the standard layout; pick any valid marker pair
        ann = max(1, t0 // 2)
        eff = ann + 1
    return EventWindow(
        year=config.year,
        t_start=0,
        t_end=config.t_control - 1,
        ann_offset=ann,
        eff_offset=eff,
        t0=t0,
    )


def generate_panel(config: DgpConfig) -> SyntheticTruth:
    """Draw one synthetic panel. Deterministic under config.seed."""
    rng = np.random.default_rng(config.seed)
    t = config.t_control + config.t_treatment
    n = config.n_treated + config.n_control
    r = config.r_true

    factors = rng.standard_normal((t, r)) * config.factor_scale
    loadings = rng.standard_normal((n, r)) * config.loading_scale
    noise = rng.standard_normal((t, n)) * config.noise_sd
    noiseless = factors @ loadings.T
    returns = noiseless + noise

    att = np.asarray(config.att_profile, dtype=float)
    returns[config.t_control :, : config.n_treated] += att[:, None]

    if r >= 1:
        market = factors[:, 0].copy()
    else:
        scale = config.factor_scale if config.factor_scale > 0 else 1.0
        market = rng.standard_normal(t) * scale

    width_t = len(str(config.n_treated))
    width_c = len(str(config.n_control))
    firms = tuple(
        f"T{i + 1:0{width_t}d}" for i in range(config.n_treated)
    ) + tuple(f"C{i + 1:0{width_c}d}" for i in range(config.n_control))
    flags = (config.action,) * config.n_treated + ("control",) * config.n_control

    panel = ReturnPanel(
        firms=firms,
        window=_window_for(config),
        control_matrix=returns[: config.t_control],
        treatment_matrix=returns[config.t_control :],
        market=market,
        treatment_flags=flags,
    )
    return SyntheticTruth(
        config=config,
        factors=factors,
        loadings=loadings,
        att=att,
        panel=panel,
        noiseless=noiseless,
    )


def trading_dates(year: int, count: int) -> list[dt.date]:
    """`count` consecutive weekdays starting at/after November 1 of year-1."""
    day = dt.date(year - 1, 11, 1)
    out: list[dt.date] = []
    while len(out) < count:
        if day.weekday() < 5:
            out.append(day)
        day += dt.timedelta(days=1)
    return out


def event_dates(truth: SyntheticTruth) -> tuple[dt.date, dt.date]:
    """Announcement and effective dates implied by the emitted calendar."""
    window = truth.panel.window
    cfg = truth.config
    if window.ann_offset != _ANN_DAY or window.eff_offset != window.t0 - _POST_EFFECTIVE:
        raise DataError(
            "treatment window too short to lay out the announcement geometry; "
            f"need t_treatment >= {_ANN_DAY + 1 + _POST_EFFECTIVE}"
        )
    dates = trading_dates(cfg.year, cfg.t_control + cfg.t_treatment)
    ann = dates[window.day_position(window.ann_offset)]
    eff = dates[window.day_position(window.eff_offset)]
    return ann, eff


def emit_csvs(truth: SyntheticTruth, out_dir) -> dict[str, Path]:
    """Write the panel in the ingest wire formats plus the true ATT.

    Produces returns.csv, fundamentals.csv, membership.csv, and
    true_att.csv in `out_dir`. Requires the standard announcement
    geometry (t_treatment >= 32) so the dates can be reconstructed.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = truth.config
    panel = truth.panel
    event_dates(truth)  # validates the geometry before writing anything
    dates = trading_dates(cfg.year, cfg.t_control + cfg.t_treatment)

    full = panel.full_matrix
    paths: dict[str, Path] = {}

    paths["returns"] = out / "returns.csv"
    with paths["returns"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "firm_id", "ret", "mkt"])
        for ti, day in enumerate(dates):
            mkt = f"{panel.market[ti]:.10f}"
            for fi, firm in enumerate(panel.firms):
                w.writerow([day.isoformat(), firm, f"{full[ti, fi]:.10f}", mkt])

    rng = np.random.default_rng((cfg.seed, 17))
    assets_tr = 100.0 * rng.uniform(0.9, 1.1, size=cfg.n_treated)
    assets_co = 100.0 * rng.uniform(0.6, 1.4, size=cfg.n_control)
    roe = rng.normal(0.10, 0.05, size=panel.n_firms)
    lev = rng.uniform(0.1, 0.9, size=panel.n_firms)

    paths["fundamentals"] = out / "fundamentals.csv"
    with paths["fundamentals"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["firm_id", "fiscal_year", "assets", "roe", "leverage"])
        assets = np.concatenate([assets_tr, assets_co])
        for fi, firm in enumerate(panel.firms):
            w.writerow(
                [
                    firm,
                    cfg.year - 1,
                    f"{assets[fi]:.6f}",
                    f"{roe[fi]:.6f}",
                    f"{lev[fi]:.6f}",
                ]
            )

    paths["membership"] = out / "membership.csv"
    with paths["membership"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["firm_id", "year", "action", "naics2"])
        for firm in panel.treated_firms:
            w.writerow([firm, cfg.year, cfg.action, cfg.industry])

    paths["true_att"] = out / "true_att.csv"
    with paths["true_att"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["day", "true_att"])
        for day_idx, value in enumerate(truth.att, start=1):
            w.writerow([day_idx, f"{value:.6f}"])

    return paths
