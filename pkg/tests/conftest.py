"""Shared builders for the test suite."""

import numpy as np

from eventsynth import DgpConfig, EventWindow, ReturnPanel, generate_panel


def make_window(t_c=30, t0=36, ann=16, eff=21, year=2013):
    """EventWindow whose control span starts at calendar position 0."""
    return EventWindow(
        year=year,
        t_start=0,
        t_end=t_c - 1,
        ann_offset=ann,
        eff_offset=eff,
        t0=t0,
    )


def make_panel(control, treatment, *, n_treated=1, market=None, window=None):
    """ReturnPanel from raw matrices; the first n_treated columns are treated."""
    control = np.asarray(control, dtype=float)
    treatment = np.asarray(treatment, dtype=float)
    t_c, n = control.shape
    t0 = treatment.shape[0]
    if window is None:
        ann = min(16, max(1, t0 - 1))
        window = make_window(t_c=t_c, t0=t0, ann=ann, eff=ann + 1)
    if market is None:
        market = np.linspace(-1.0, 1.0, t_c + t0)
    firms = tuple(f"T{i}" for i in range(n_treated)) + tuple(
        f"C{i}" for i in range(n - n_treated)
    )
    flags = ("join",) * n_treated + ("control",) * (n - n_treated)
    return ReturnPanel(
        firms=firms,
        window=window,
        control_matrix=control,
        treatment_matrix=treatment,
        market=np.asarray(market, dtype=float),
        treatment_flags=flags,
    )


def sim_truth(
    n_control=12,
    n_treated=2,
    t_control=40,
    t_treatment=36,
    r_true=2,
    att=0.0,
    seed=0,
    **kwargs,
):
    """Small synthetic panel with a constant treatment effect."""
    config = DgpConfig.constant_att(
        level=att,
        n_control=n_control,
        n_treated=n_treated,
        t_control=t_control,
        t_treatment=t_treatment,
        r_true=r_true,
        seed=seed,
        **kwargs,
    )
    return generate_panel(config)
