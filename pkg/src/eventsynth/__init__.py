"""Abnormal-return estimation around index membership changes.

Two estimators over the same event-window panel: a per-firm market
model fitted on the control span, and a generalized synthetic control
that extracts latent factors from control firms and projects treated
counterfactuals. On top of both sit CAR test grids, an HC1 regression,
year comparisons, a two-stage bootstrap for ATT bands, a synthetic-data
generator, and a batch CLI.
"""

from .capm import (
    AbnormalSeries,
    CapmFit,
    CapmModel,
    abnormal_returns,
    car,
    fit_capm,
    mspe,
)
from .errors import (
    DataError,
    DegenerateVarianceError,
    EstimationError,
    EventSynthError,
)
from .eventstats import (
    CarGrid,
    GridCell,
    RegressionResult,
    TestResult,
    YearComparison,
    car_grid,
    ols_car_regression,
    one_sample_ttest,
    paired_ttest,
    star_level,
    welch_ttest,
    year_comparison,
)
from .gsynth import (
    AttSeries,
    CvReport,
    FactorModel,
    GeneralizedSyntheticControl,
    TreatedLoadings,
    att,
    bootstrap_inference,
    counterfactual,
    cross_validate_r,
    estimate_ife,
    gsc_abnormal,
    project_loadings,
)
from .ingest import (
    FundamentalsRecord,
    MembershipEvent,
    ReturnData,
    SampleSpec,
    construct_samples,
    load_fundamentals,
    load_membership,
    load_returns,
)
from .panel import (
    EventWindow,
    FirmSeries,
    ReturnPanel,
    TradingCalendar,
    align_panel,
    build_event_window,
)
from .pipeline import (
    CellResult,
    ContestResult,
    RunConfig,
    RunReport,
    emit_mspe_contest,
    read_report,
    run_pipeline,
)
from .simulate import (
    DgpConfig,
    SyntheticTruth,
    emit_csvs,
    event_dates,
    generate_panel,
    trading_dates,
)

__version__ = "0.1.0"

__all__ = [
    "AbnormalSeries",
    "AttSeries",
    "CapmFit",
    "CapmModel",
    "CarGrid",
    "CellResult",
    "ContestResult",
    "CvReport",
    "DataError",
    "DegenerateVarianceError",
    "DgpConfig",
    "EstimationError",
    "EventSynthError",
    "EventWindow",
    "FactorModel",
    "FirmSeries",
    "FundamentalsRecord",
    "GeneralizedSyntheticControl",
    "GridCell",
    "MembershipEvent",
    "RegressionResult",
    "ReturnData",
    "ReturnPanel",
    "RunConfig",
    "RunReport",
    "SampleSpec",
    "SyntheticTruth",
    "TestResult",
    "TradingCalendar",
    "TreatedLoadings",
    "YearComparison",
    "abnormal_returns",
    "align_panel",
    "att",
    "bootstrap_inference",
    "build_event_window",
    "car",
    "car_grid",
    "construct_samples",
    "counterfactual",
    "cross_validate_r",
    "emit_csvs",
    "emit_mspe_contest",
    "estimate_ife",
    "event_dates",
    "fit_capm",
    "generate_panel",
    "gsc_abnormal",
    "load_fundamentals",
    "load_membership",
    "load_returns",
    "mspe",
    "ols_car_regression",
    "one_sample_ttest",
    "paired_ttest",
    "project_loadings",
    "read_report",
    "run_pipeline",
    "star_level",
    "trading_dates",
    "welch_ttest",
    "year_comparison",
]
