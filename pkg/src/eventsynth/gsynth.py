"""Generalized synthetic control on an interactive fixed-effects factor model.

The estimator extracts common time factors from the control firms'
return matrix, projects each treated firm's pre-period series onto the
pre-period factors to get loadings, and predicts the treated firms'
untreated outcome over the whole window. Per-day treatment effects are
the mean observed-minus-counterfactual gap. The factor count is chosen
by leave-one-period-out cross-validation on the treated pre-period, and
confidence bands come from a two-stage (placebo + parametric) bootstrap.

The constrained least-squares factor problem is solved in closed form:
with F'F/T = I_r and diagonal loading Gram imposed, the optimum is the
rank-r truncated SVD of the control matrix, F = sqrt(T) * U_r.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import stats as sps
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .capm import AbnormalSeries
from .errors import DataError, EstimationError
from .panel import ReturnPanel
from .validation import as_matrix, readonly

RCOND_SINGULAR = 1e-12


@dataclass(frozen=True)
class FactorModel:
    """Estimated factors, control loadings, and fit diagnostics.

    factors is T x r scaled so factors'factors / T = I_r; loadings is
    N_co x r with a diagonal Gram matrix; fitted + residuals reproduce
    the input matrix exactly. objective is the minimized sum of squared
    residuals (the discarded squared singular values).
    """

    r: int
    factors: np.ndarray
    loadings: np.ndarray
    fitted: np.ndarray
    residuals: np.ndarray
    objective: float

    def __post_init__(self):
        object.__setattr__(self, "factors", readonly(self.factors))
        object.__setattr__(self, "loadings", readonly(self.loadings))
        object.__setattr__(self, "fitted", readonly(self.fitted))
        object.__setattr__(self, "residuals", readonly(self.residuals))
        t, r = self.factors.shape
        if r != self.r or self.loadings.shape[1] != self.r:
            raise EstimationError("factor/loading column counts disagree with r")
        if self.fitted.shape != (t, self.loadings.shape[0]):
            raise EstimationError("fitted matrix shape mismatch")


@dataclass(frozen=True)
class TreatedLoadings:
    """Projected loading vectors for the treated firms (N_tr x r)."""

    values: np.ndarray
    firm_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        vals = readonly(np.atleast_2d(self.values))
        object.__setattr__(self, "values", vals)
        if self.firm_ids is not None and len(self.firm_ids) != vals.shape[0]:
            raise DataError("one loading vector required per firm id")

    @property
    def r(self) -> int:
        return self.values.shape[1]

    @property
    def n_treated(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class AttSeries:
    """Per-day average treatment effect on the treated, days 1..t0.

    gaps holds the per-firm observed-minus-counterfactual series
    (t0 x N_tr); att is its row mean. Interval fields are None for pure
    point estimates and filled by the bootstrap: ci_low/ci_high are
    normal-approximation bands, perc_low/perc_high the pivotal
    percentile bounds kept alongside.
    """

    att: np.ndarray
    gaps: np.ndarray
    firms: tuple[str, ...]
    se: np.ndarray | None = None
    ci_low: np.ndarray | None = None
    ci_high: np.ndarray | None = None
    perc_low: np.ndarray | None = None
    perc_high: np.ndarray | None = None
    confidence: float | None = None
    n_boot: int | None = None

    def __post_init__(self):
        gaps = readonly(np.atleast_2d(self.gaps))
        att = readonly(np.atleast_1d(self.att))
        object.__setattr__(self, "gaps", gaps)
        object.__setattr__(self, "att", att)
        if gaps.shape != (att.shape[0], len(self.firms)):
            raise EstimationError(
                f"gap matrix shape {gaps.shape} does not match "
                f"(t0={att.shape[0]}, N_tr={len(self.firms)})"
            )
        if not np.allclose(att, gaps.mean(axis=1), rtol=0, atol=1e-10):
            raise EstimationError("att must equal the mean per-firm gap")
        for name in ("se", "ci_low", "ci_high", "perc_low", "perc_high"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, readonly(np.atleast_1d(v)))
        if self.ci_low is not None and self.ci_high is not None:
            if np.any(self.ci_low > att) or np.any(self.ci_high < att):
                raise EstimationError("interval must contain the point estimate")

    @property
    def t0(self) -> int:
        return len(self.att)

    @property
    def days(self) -> range:
        return range(1, self.t0 + 1)


@dataclass(frozen=True)
class CvReport:
    """Leave-one-period-out MSPE per candidate factor count."""

    r_star: int
    mspe: Mapping[int, float]
    infeasible: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "mspe", dict(self.mspe))


def estimate_ife(control_matrix, r: int, sign_rows: int | None = None) -> FactorModel:
    """Closed-form interactive-fixed-effects fit of the control matrix.

    F = sqrt(T) times the top-r left singular vectors (so F'F/T = I_r),
    loadings = R'F/T, fitted = F loadings'. The minimized objective
    equals the sum of the squared discarded singular values. Each factor
    column's sign is fixed so its largest-magnitude entry within the
    first `sign_rows` rows (default: all rows) is positive, removing the
    SVD sign indeterminacy.
    """
    X = as_matrix(control_matrix, "control matrix")
    t, n = X.shape
    if t < 2:
        raise DataError(f"need at least 2 time periods, got {t}")
    if n < 1:
        raise DataError("need at least 1 control firm")
    if not 0 <= r <= min(t, n):
        raise DataError(f"r={r} outside [0, min(T={t}, N_co={n})]")

    if r == 0:
        factors = np.zeros((t, 0))
        loadings = np.zeros((n, 0))
        fitted = np.zeros((t, n))
        objective = float(np.sum(X**2))
    else:
        u, s, _ = np.linalg.svd(X, full_matrices=False)
        u_r = u[:, :r].copy()
        rows = t if sign_rows is None else min(max(int(sign_rows), 1), t)
        for j in range(r):
            col = u_r[:rows, j]
            if col[np.argmax(np.abs(col))] < 0:
                u_r[:, j] = -u_r[:, j]
        factors = np.sqrt(t) * u_r
        loadings = X.T @ factors / t
        fitted = factors @ loadings.T
        objective = float(np.sum(s[r:] ** 2))

    return FactorModel(
        r=r,
        factors=factors,
        loadings=loadings,
        fitted=fitted,
        residuals=X - fitted,
        objective=objective,
    )


def project_loadings(
    model: FactorModel,
    treated_pre,
    firm_ids: Sequence[str] | None = None,
) -> TreatedLoadings:
    """OLS projection of treated pre-period series onto pre-period factors.

    Solves (F0'F0) lambda_i = F0' R_i0 per firm, where F0 is the first
    T_c rows of the factor matrix and T_c is the row count of
    `treated_pre`.
    """
    if model.r == 0:
        raise EstimationError("factor count is zero; no loadings to project")
    R0 = as_matrix(treated_pre, "treated pre-period matrix")
    t_c = R0.shape[0]
    if t_c > model.factors.shape[0]:
        raise DataError(
            f"pre-period length {t_c} exceeds factor span {model.factors.shape[0]}"
        )
    if t_c < model.r:
        raise DataError(f"pre-period length {t_c} shorter than r={model.r}")
    f0 = model.factors[:t_c]
    gram = f0.T @ f0
    if _rcond(gram) < RCOND_SINGULAR:
        raise EstimationError("pre-period factor Gram matrix is singular")
    lam = np.linalg.solve(gram, f0.T @ R0).T
    return TreatedLoadings(
        values=lam, firm_ids=tuple(firm_ids) if firm_ids is not None else None
    )


def counterfactual(loadings: TreatedLoadings, model: FactorModel) -> np.ndarray:
    """Predicted untreated outcomes, T x N_tr, over both spans."""
    if loadings.r != model.r:
        raise DataError(
            f"loadings have r={loadings.r} but the model has r={model.r}"
        )
    return model.factors @ loadings.values.T


def att(
    observed_treated,
    counterfactual_treated,
    firms: Sequence[str] | None = None,
) -> AttSeries:
    """Point-estimate ATT series: per-day mean observed-minus-predicted gap."""
    obs = as_matrix(observed_treated, "observed treated matrix")
    cf = as_matrix(counterfactual_treated, "counterfactual matrix")
    if obs.shape != cf.shape:
        raise DataError(f"shape mismatch: observed {obs.shape} vs cf {cf.shape}")
    gaps = obs - cf
    names = tuple(firms) if firms is not None else tuple(
        f"treated_{i}" for i in range(obs.shape[1])
    )
    if len(names) != obs.shape[1]:
        raise DataError("one firm name required per treated column")
    return AttSeries(att=gaps.mean(axis=1), gaps=gaps, firms=names)


def cross_validate_r(
    control_pre,
    treated_pre,
    candidates: Sequence[int],
) -> CvReport:
    """Choose the factor count by leave-one-period-out prediction error.

    For each candidate r the factors are estimated once on the control
    firms' pre-period matrix; each pre-period s is then held out, the
    treated loadings are re-projected on the remaining periods, and the
    held-out day is predicted. MSPE(r) sums the squared errors over
    periods and treated firms, divided by the pre-period length. r = 0
    predicts zero everywhere. Ties break to the smallest r; candidates
    whose held-out Gram matrix turns singular are reported infeasible.
    """
    Xc = as_matrix(control_pre, "control pre-period matrix")
    Xt = as_matrix(treated_pre, "treated pre-period matrix")
    t_c, n_co = Xc.shape
    if Xt.shape[0] != t_c:
        raise DataError("control and treated pre-period row counts differ")
    cands = sorted({int(r) for r in candidates})
    if not cands:
        raise DataError("no candidate factor counts supplied")
    if cands[0] < 0:
        raise DataError("candidate factor counts must be non-negative")
    if cands[-1] > min(t_c - 1, n_co):
        raise DataError(
            f"largest candidate r={cands[-1]} exceeds min(T_c - 1, N_co) = "
            f"{min(t_c - 1, n_co)}"
        )

    mspe: dict[int, float] = {}
    infeasible: list[int] = []
    for r in cands:
        if r == 0:
            mspe[0] = float(np.sum(Xt**2)) / t_c
            continue
        model = estimate_ife(Xc, r)
        f = model.factors
        # Rank-one downdates of the full Gram and cross-product keep the
        # leave-one-out loop at O(T_c r^2) instead of re-stacking F.
        gram_full = f.T @ f
        cross_full = f.T @ Xt
        total = 0.0
        feasible = True
        for s in range(t_c):
            fs = f[s]
            gram = gram_full - np.outer(fs, fs)
            if _rcond(gram) < RCOND_SINGULAR:
                feasible = False
                break
            lam = np.linalg.solve(gram, cross_full - np.outer(fs, Xt[s]))
            err = Xt[s] - fs @ lam
            total += float(err @ err)
        if feasible:
            mspe[r] = total / t_c
        else:
            infeasible.append(r)
            mspe[r] = float("nan")

    feasible_rs = [r for r in cands if r not in infeasible]
    if not feasible_rs:
        raise EstimationError("every candidate factor count was infeasible")
    r_star = feasible_rs[0]
    for r in feasible_rs[1:]:
        if mspe[r] < mspe[r_star]:
            r_star = r
    return CvReport(r_star=r_star, mspe=mspe, infeasible=tuple(infeasible))


@dataclass(frozen=True)
class _GscFit:
    """Internal end-to-end solution for one panel layout."""

    model: FactorModel
    loadings: np.ndarray            # N_tr x r
    counterfactual: np.ndarray      # T x N_tr
    fitted_controls: np.ndarray     # T x N_co reconstruction for controls


def _rcond(gram: np.ndarray) -> float:
    sv = np.linalg.svd(gram, compute_uv=False)
    top = sv[0] if len(sv) else 0.0
    if top == 0 or not np.isfinite(top):
        return 0.0
    return float(sv[-1] / top)


def _solve_gsc(
    r_co: np.ndarray, r_tr: np.ndarray, t_c: int, r: int, demean: bool
) -> _GscFit:
    """Factor fit + loading projection + counterfactual for one layout.

    With demean=True an additive two-way structure is removed first:
    per-day effects are control cross-section means over the full span,
    per-firm effects are pre-period means of the day-adjusted series
    (controls and treated alike), and the counterfactual adds both back.
    """
    t, n_co = r_co.shape
    n_tr = r_tr.shape[1]
    if demean:
        day_effect = r_co.mean(axis=1)
        unit_co = (r_co[:t_c] - day_effect[:t_c, None]).mean(axis=0)
        unit_tr = (r_tr[:t_c] - day_effect[:t_c, None]).mean(axis=0)
        shift_co = day_effect[:, None] + unit_co[None, :]
        shift_tr = day_effect[:, None] + unit_tr[None, :]
    else:
        shift_co = np.zeros((t, n_co))
        shift_tr = np.zeros((t, n_tr))

    model = estimate_ife(r_co - shift_co, r, sign_rows=t_c)
    if r == 0:
        lam = np.zeros((n_tr, 0))
        cf_core = np.zeros((t, n_tr))
    else:
        lam_obj = project_loadings(model, (r_tr - shift_tr)[:t_c])
        lam = lam_obj.values
        cf_core = model.factors @ lam.T
    return _GscFit(
        model=model,
        loadings=lam,
        counterfactual=cf_core + shift_tr,
        fitted_controls=model.fitted + shift_co,
    )


def gsc_abnormal(
    panel: ReturnPanel, r: int, demean: bool = False
) -> list[AbnormalSeries]:
    """Treatment-span gap series per treated firm (days 1..t0).

    The gaps are consumable exactly like market-model abnormal returns:
    `capm.car` and the grid builders accept them unchanged.
    """
    fit = _solve_gsc(panel.controls_full(), panel.treated_full(), panel.t_c, r, demean)
    gaps = panel.treated_full()[panel.t_c :] - fit.counterfactual[panel.t_c :]
    return [
        AbnormalSeries(firm_id=firm, first_day=1, values=gaps[:, i])
        for i, firm in enumerate(panel.treated_firms)
    ]


def bootstrap_inference(
    panel: ReturnPanel,
    r: int,
    b1: int,
    b2: int,
    confidence: float = 0.95,
    seed=None,
    demean: bool = False,
    max_retries: int = 10,
) -> AttSeries:
    """Two-stage bootstrap confidence bands for the per-day ATT.

    Stage one builds a pool of out-of-sample prediction-error vectors by
    repeatedly treating a random control firm as pseudo-treated against
    a resample of the remaining controls and storing its full-window
    residual. Stage two simulates b2 panels (control reconstructions
    plus drawn control residuals; treated counterfactuals plus drawn
    placebo residuals, carrying no treatment effect), re-estimates the
    pipeline on each, and uses the per-day standard deviation of the
    simulated ATT draws for normal-approximation bands around the point
    estimate. Pivotal percentile bounds are kept alongside.

    Replication randomness comes from per-replication child streams of
    one master seed, so execution order cannot change results. Inner
    estimation failures are retried with fresh draws up to `max_retries`
    before the whole call aborts.
    """
    n_co = len(panel.control_firms)
    n_tr = len(panel.treated_firms)
    if n_co < 2:
        raise DataError(f"need at least 2 control firms, got {n_co}")
    if b1 < 1:
        raise DataError("b1 must be at least 1")
    if b2 < 2:
        raise DataError("b2 must be at least 2 (standard deviation undefined below)")
    if not 0 <= confidence < 1:
        raise DataError(f"confidence must lie in [0, 1), got {confidence}")

    r_co = panel.controls_full()
    r_tr = panel.treated_full()
    t_c, t0 = panel.t_c, panel.t0

    base = _solve_gsc(r_co, r_tr, t_c, r, demean)
    gaps = r_tr[t_c:] - base.counterfactual[t_c:]
    att_hat = gaps.mean(axis=1)
    control_resid = r_co - base.fitted_controls  # T x N_co pool

    master = np.random.SeedSequence(seed)
    children = master.spawn(b1 + b2)

    placebo_pool = np.empty((r_co.shape[0], b1))
    for m in range(b1):
        rng = np.random.default_rng(children[m])
        placebo_pool[:, m] = _with_retries(
            lambda rng=rng: _placebo_residual(r_co, t_c, r, demean, rng),
            max_retries,
            f"placebo replication {m}",
        )

    att_draws = np.empty((b2, t0))
    for k in range(b2):
        rng = np.random.default_rng(children[b1 + k])

        def one_draw(rng=rng):
            sim_co = base.fitted_controls + control_resid[
                :, rng.integers(n_co, size=n_co)
            ]
            sim_tr = base.counterfactual + placebo_pool[
                :, rng.integers(b1, size=n_tr)
            ]
            refit = _solve_gsc(sim_co, sim_tr, t_c, r, demean)
            return (sim_tr[t_c:] - refit.counterfactual[t_c:]).mean(axis=1)

        att_draws[k] = _with_retries(one_draw, max_retries, f"bootstrap draw {k}")

    se = att_draws.std(axis=0, ddof=1)
    z = float(sps.norm.ppf(0.5 + confidence / 2))
    alpha = 1.0 - confidence
    q_low = np.quantile(att_draws, alpha / 2, axis=0)
    q_high = np.quantile(att_draws, 1 - alpha / 2, axis=0)

    return AttSeries(
        att=att_hat,
        gaps=gaps,
        firms=panel.treated_firms,
        se=se,
        ci_low=att_hat - z * se,
        ci_high=att_hat + z * se,
        perc_low=att_hat - q_high,
        perc_high=att_hat - q_low,
        confidence=confidence,
        n_boot=b2,
    )


def _placebo_residual(
    r_co: np.ndarray, t_c: int, r: int, demean: bool, rng: np.random.Generator
) -> np.ndarray:
    """One pseudo-treated residual vector over the full window."""
    n_co = r_co.shape[1]
    j = int(rng.integers(n_co))
    others = np.delete(np.arange(n_co), j)
    idx = rng.choice(others, size=n_co, replace=True)
    fit = _solve_gsc(r_co[:, idx], r_co[:, [j]], t_c, r, demean)
    return r_co[:, j] - fit.counterfactual[:, 0]


def _with_retries(fn, max_retries: int, what: str):
    last: Exception | None = None
    for _ in range(max_retries + 1):
        try:
            return fn()
        except (EstimationError, np.linalg.LinAlgError) as exc:
            last = exc
    raise EstimationError(
        f"{what} failed after {max_retries + 1} attempts: {last}"
    )


class GeneralizedSyntheticControl(BaseEstimator):
    """Panel-level synthetic-control estimator with sklearn conventions.

    Parameters
    ----------
    r : int or None
        Factor count. None selects it by cross-validation over
        `r_candidates` (capped to what the panel supports).
    r_candidates : sequence of int
        Candidate factor counts for cross-validation.
    demean : bool
        Remove additive two-way (firm + day) means before the factor
        fit and add them back in the counterfactual.

    Fitted attributes: ``r_``, ``cv_`` (CvReport or None),
    ``factor_model_``, ``treated_loadings_``, ``counterfactual_``
    (T x N_tr over both spans), ``att_`` (point-estimate AttSeries),
    ``control_mspe_`` (pre-period gap MSPE per treated firm).
    """

    def __init__(self, r=None, r_candidates=(0, 1, 2, 3, 4, 5), demean=False):
        self.r = r
        self.r_candidates = r_candidates
        self.demean = demean

    def fit(self, panel: ReturnPanel, y=None):
        if not isinstance(panel, ReturnPanel):
            raise DataError("fit expects a ReturnPanel")
        r_co = panel.controls_full()
        r_tr = panel.treated_full()
        t_c = panel.t_c

        if self.r is None:
            cap = min(t_c - 1, len(panel.control_firms))
            cands = [r for r in self.r_candidates if 0 <= r <= cap]
            if not cands:
                raise DataError(
                    f"no feasible candidate factor count at or below {cap}"
                )
            self.cv_ = cross_validate_r(r_co[:t_c], r_tr[:t_c], cands)
            self.r_ = self.cv_.r_star
        else:
            self.cv_ = None
            self.r_ = int(self.r)

        fit = _solve_gsc(r_co, r_tr, t_c, self.r_, self.demean)
        self.factor_model_ = fit.model
        self.treated_loadings_ = TreatedLoadings(
            values=fit.loadings, firm_ids=panel.treated_firms
        )
        self.counterfactual_ = readonly(fit.counterfactual)
        gaps = r_tr[t_c:] - fit.counterfactual[t_c:]
        self.att_ = AttSeries(
            att=gaps.mean(axis=1), gaps=gaps, firms=panel.treated_firms
        )
        pre_gaps = r_tr[:t_c] - fit.counterfactual[:t_c]
        self.control_mspe_ = np.mean(pre_gaps**2, axis=0)
        self._panel = panel
        return self

    def predict(self) -> np.ndarray:
        """Counterfactual treated returns over both spans (T x N_tr)."""
        self._check_fitted()
        return self.counterfactual_

    def abnormal_series(self) -> list[AbnormalSeries]:
        """Treatment-span gaps as AbnormalSeries, one per treated firm."""
        self._check_fitted()
        gaps = self.att_.gaps
        return [
            AbnormalSeries(firm_id=firm, first_day=1, values=gaps[:, i])
            for i, firm in enumerate(self.att_.firms)
        ]

    def bootstrap(
        self,
        b1: int | None = None,
        b2: int = 500,
        confidence: float = 0.95,
        seed=None,
        max_retries: int = 10,
    ) -> AttSeries:
        """Bootstrap confidence bands for the fitted panel (see module fn)."""
        self._check_fitted()
        if b1 is None:
            b1 = min(len(self._panel.control_firms), 100)
        return bootstrap_inference(
            self._panel,
            self.r_,
            b1=b1,
            b2=b2,
            confidence=confidence,
            seed=seed,
            demean=self.demean,
            max_retries=max_retries,
        )

    def _check_fitted(self):
        if not hasattr(self, "att_"):
            raise NotFittedError(
                "GeneralizedSyntheticControl is not fitted; call fit first"
            )
