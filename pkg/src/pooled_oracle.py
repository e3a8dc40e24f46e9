"""Reference estimators that need the micro-data pooled in one place.

These exist to check the siloed pipeline, not to replace it: conventional
two-way DID, the silo-interacted DID-INT regression, direct cell-mean
DID, and the auxiliary-regression diagnostics behind the pooled SE.

All estimators pool to two effective periods: ``post`` is 1 for periods at
or after the single adoption period of the schedule.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import BadSchedule, EmptyCell
from .models import HcVariant, TreatmentSchedule
from .ols import DesignMatrix, fit_ols, fwl_residualize
from .panel import PanelTable
from .silo_stage import expand_covariates

logger = logging.getLogger(__name__)

CONVENTIONAL_COLUMNS = ("const", "treated", "post", "did")


@dataclass(frozen=True)
class PooledDidResult:
    beta: dict[str, float]
    att: float
    se: float
    robust_cov: np.ndarray
    n: int


@dataclass(frozen=True)
class DidIntResult:
    psi: dict[str, float]
    att: float
    se: float
    robust_cov: np.ndarray
    n: int
    silo_weights: dict[str, float]


@dataclass(frozen=True)
class FwlDiagnostics:
    """Regression of the interaction on (const, treated, post)."""
    alpha0: float
    alpha1: float   # coefficient on treated, ~ Pr(post)
    alpha2: float   # coefficient on post, ~ Pr(treated)
    A: float        # residual sum of squares
    pr_post: float
    pr_treated: float
    n: int


# ---------------------------------------------------------------------------
# Indicators
# ---------------------------------------------------------------------------

def _adoption_period(schedule: TreatmentSchedule) -> int:
    cohorts = schedule.cohorts
    if len(cohorts) != 1:
        raise BadSchedule(
            f"pooled estimators need exactly one adoption period, schedule has {cohorts or 'none'}"
        )
    return cohorts[0]


def _prepare(
    pooled: PanelTable, schedule: TreatmentSchedule, covariates: Sequence[str] = ()
) -> tuple[pd.DataFrame, np.ndarray, np.ndarray]:
    """Listwise-complete rows plus the treated and post indicators."""
    g = _adoption_period(schedule)
    unknown = sorted(set(pooled.silo_ids) - set(schedule.first_treated))
    if unknown:
        raise BadSchedule(f"silo(s) {unknown} are not in the treatment schedule")
    pooled.require_covariates(covariates)

    frame = pooled.frame
    if covariates:
        before = len(frame)
        frame = frame.dropna(subset=list(covariates))
        if len(frame) < before:
            logger.warning("Pooled data: dropped %d row(s) with missing covariates", before - len(frame))
    frame = frame.reset_index(drop=True)

    treated = frame["silo_id"].map(lambda s: float(schedule.is_treated(s))).to_numpy(dtype=np.float64)
    post = (frame["period"] >= g).to_numpy(dtype=np.float64)
    for d in (0.0, 1.0):
        for p in (0.0, 1.0):
            if not np.any((treated == d) & (post == p)):
                raise EmptyCell(
                    f"pooled data has no rows with treated={int(d)} and post={int(p)} (adoption period {g})"
                )
    return frame, treated, post


def conventional_design(
    pooled: PanelTable, schedule: TreatmentSchedule, covariates: Sequence[str] = ()
) -> tuple[DesignMatrix, np.ndarray]:
    """Design ``[const, treated, post, did, covariates...]`` and the outcome."""
    frame, treated, post = _prepare(pooled, schedule, covariates)
    columns = {
        "const": np.ones(len(frame)),
        "treated": treated,
        "post": post,
        "did": treated * post,
    }
    columns.update(expand_covariates(frame, covariates))
    return DesignMatrix.from_columns(columns), frame["outcome"].to_numpy()


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------

def fit_conventional_did(
    pooled: PanelTable,
    schedule: TreatmentSchedule,
    covariates: Sequence[str] = (),
    hc: HcVariant = HcVariant.HC1,
) -> PooledDidResult:
    """Two-way DID on pooled data with one common slope per covariate."""
    design, y = conventional_design(pooled, schedule, covariates)
    fit = fit_ols(design, y, hc)
    logger.debug("Conventional DID: n=%d att=%.6g", design.rows, fit.coef("did"))
    return PooledDidResult(
        beta=fit.params,
        att=fit.coef("did"),
        se=fit.se("did"),
        robust_cov=fit.robust_cov,
        n=design.rows,
    )


def fit_did_int(
    pooled: PanelTable,
    schedule: TreatmentSchedule,
    covariates: Sequence[str] = (),
    hc: HcVariant = HcVariant.HC1,
) -> DidIntResult:
    """Pre/post dummies and covariates all interacted with silo, no constant.

    Each silo's ``post - pre`` gap is its own first difference; the ATT is
    the n-weighted treated mean gap minus the n-weighted control mean gap
    (with one silo per arm, ``(psi2 - psi1) - (psi4 - psi3)``).
    """
    frame, treated, post = _prepare(pooled, schedule, covariates)
    n = len(frame)
    silos = sorted(frame["silo_id"].unique())
    columns: dict[str, np.ndarray] = {}
    silo_n: dict[str, int] = {}
    for silo in silos:
        mask = (frame["silo_id"] == silo).to_numpy()
        silo_n[silo] = int(mask.sum())
        columns[f"pre:{silo}"] = (mask & (post == 0)).astype(np.float64)
        columns[f"post:{silo}"] = (mask & (post == 1)).astype(np.float64)
        for name, values in expand_covariates(frame[mask], covariates).items():
            col = np.zeros(n)
            col[mask] = values
            columns[f"{name}:{silo}"] = col

    design = DesignMatrix.from_columns(columns)
    fit = fit_ols(design, frame["outcome"].to_numpy(), hc)

    treated_silos = [s for s in silos if schedule.is_treated(s)]
    control_silos = [s for s in silos if not schedule.is_treated(s)]
    grad = np.zeros(len(design.columns))
    weights: dict[str, float] = {}
    for arm, sign in ((treated_silos, 1.0), (control_silos, -1.0)):
        total = sum(silo_n[s] for s in arm)
        for s in arm:
            w = silo_n[s] / total
            weights[s] = sign * w
            grad[design.index(f"post:{s}")] += sign * w
            grad[design.index(f"pre:{s}")] -= sign * w

    att = 0.0
    for arm, sign in ((treated_silos, 1.0), (control_silos, -1.0)):
        wt = np.array([silo_n[s] for s in arm], dtype=np.float64)
        wt = wt / wt.sum()
        gaps = np.array([fit.coef(f"post:{s}") - fit.coef(f"pre:{s}") for s in arm])
        att += sign * float(np.sum(wt * gaps))
    se = float(np.sqrt(max(grad @ fit.robust_cov @ grad, 0.0)))
    logger.debug("DID-INT: %d silo(s), n=%d att=%.6g", len(silos), n, att)
    return DidIntResult(
        psi=fit.params,
        att=att,
        se=se,
        robust_cov=fit.robust_cov,
        n=n,
        silo_weights=weights,
    )


def group_means_att(pooled: PanelTable, schedule: TreatmentSchedule) -> float:
    """(mean_11 - mean_10) - (mean_01 - mean_00) by direct averaging."""
    frame, treated, post = _prepare(pooled, schedule)
    y = frame["outcome"].to_numpy()

    def cell(d: float, p: float) -> float:
        return float(y[(treated == d) & (post == p)].mean())

    return (cell(1, 1) - cell(1, 0)) - (cell(0, 1) - cell(0, 0))


def fwl_diagnostics(pooled: PanelTable, schedule: TreatmentSchedule) -> FwlDiagnostics:
    """Auxiliary regression of treated*post on a constant, treated and post.

    When treatment and period are independent in the sample the
    coefficients are -Pr(P)Pr(D), Pr(P) and Pr(D), and the residual sum of
    squares is N Pr(P)(1-Pr(P)) Pr(D)(1-Pr(D)) (N/16 when balanced).
    """
    design, _ = conventional_design(pooled, schedule)
    resid, coef = fwl_residualize(design, "did")
    treated = design.column("treated")
    post = design.column("post")
    return FwlDiagnostics(
        alpha0=coef["const"],
        alpha1=coef["treated"],
        alpha2=coef["post"],
        A=float(resid @ resid),
        pr_post=float(post.mean()),
        pr_treated=float(treated.mean()),
        n=design.rows,
    )
