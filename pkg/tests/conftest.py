"""Shared fixtures: small deterministic panels and diff tables."""

import logging
from types import SimpleNamespace

import numpy as np
import pandas as pd
import pytest

from src.models import DiffRecord, TreatmentSchedule
from src.panel import PanelTable


def make_silo_panel(silo_id, periods, n_units=4, seed=0, shift=0.0, covariates=None):
    """Balanced panel for one silo with noisy outcomes."""
    rng = np.random.default_rng(seed)
    periods = list(periods)
    unit = np.repeat(np.arange(n_units), len(periods))
    period = np.tile(periods, n_units)
    outcome = shift + 0.3 * (period - periods[0]) + rng.standard_normal(len(period))
    frame = pd.DataFrame({
        "unit_id": [f"{silo_id}-{u}" for u in unit],
        "silo_id": silo_id,
        "period": period,
        "outcome": outcome,
    })
    for name, values in (covariates or {}).items():
        frame[name] = values
    return PanelTable(frame)


def cell_mean(panel, period):
    frame = panel.frame
    return float(frame.loc[frame["period"] == period, "outcome"].mean())


def make_diff_records(diffs_treated, diffs_control, h=2005, t=2005, ses=None, ns=None):
    """Common-adoption diff records for silos t1.., c1.."""
    records = []
    k = 0
    for arm, diffs, prefix in ((1, diffs_treated, "t"), (0, diffs_control, "c")):
        for i, diff in enumerate(diffs):
            records.append(DiffRecord(
                silo_id=f"{prefix}{i + 1}",
                d=arm,
                h=h,
                t=t,
                diff=float(diff),
                se=float(ses[k]) if ses is not None else 0.1,
                weight=float(ns[k]) if ns is not None else 100.0,
                n=int(ns[k]) if ns is not None else 100,
            ))
            k += 1
    return records


@pytest.fixture
def staggered():
    """Three silos over periods 1..3: A first treated at 2, B at 3, C never."""
    periods = (1, 2, 3)
    schedule = TreatmentSchedule({"A": 2, "B": 3, "C": None}, periods)
    panels = {
        "A": make_silo_panel("A", periods, seed=1, shift=1.0),
        "B": make_silo_panel("B", periods, seed=2, shift=-0.5),
        "C": make_silo_panel("C", periods, seed=3),
    }
    m = {s: {p: cell_mean(panels[s], p) for p in periods} for s in panels}

    def gap(silo, base, t):
        return m[silo][t] - m[silo][base]

    # B is not yet treated at t=2, so it joins C as a control (equal n, equal weight)
    expected = {
        (2, 2): gap("A", 1, 2) - (gap("B", 1, 2) + gap("C", 1, 2)) / 2,
        (2, 3): gap("A", 1, 3) - gap("C", 1, 3),
        (3, 3): gap("B", 2, 3) - gap("C", 2, 3),
    }
    expected_never = dict(expected)
    expected_never[(2, 2)] = gap("A", 1, 2) - gap("C", 1, 2)
    return SimpleNamespace(
        schedule=schedule, panels=panels, periods=periods,
        expected=expected, expected_never=expected_never,
    )


@pytest.fixture(autouse=True)
def _restore_root_logging():
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)
