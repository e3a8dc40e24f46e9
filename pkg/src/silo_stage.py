"""Everything that runs inside one data silo.

A silo regresses its outcome on a pre dummy, a post dummy and its own
covariates, with no constant, and reports the first difference
``lambda_post - lambda_pre`` with its robust SE.  Only those numbers (as
``DiffRecord`` rows) ever cross the silo boundary.

Staggered adoption is handled by planning two-period blocks: for a cohort
first treated at ``h`` the base period is ``h - 1`` and every observed
``t >= h`` is a target.  Control silos compute the same (h, t) diffs for
each cohort they are eligible to serve.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
import pandas as pd

from .errors import BadSchedule, DegreesOfFreedomError, EmptyCell, NegativeVariance, NoEligibleBlocks
from .models import (
    AdoptionMode,
    BasePeriodRule,
    BlockTask,
    ControlGroup,
    DiffRecord,
    HcVariant,
    SiloFit,
    SkippedBlock,
    TreatmentSchedule,
)
from .ols import DesignMatrix, fit_ols
from .panel import PanelTable

logger = logging.getLogger(__name__)


@dataclass
class DiffTable:
    """Records a silo produced, plus blocks it had to skip."""
    records: list[DiffRecord] = field(default_factory=list)
    skipped: list[SkippedBlock] = field(default_factory=list)

    def __iter__(self) -> Iterator[DiffRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)


# ---------------------------------------------------------------------------
# Covariate handling
# ---------------------------------------------------------------------------

def expand_covariates(frame: pd.DataFrame, covariates: Sequence[str]) -> dict[str, np.ndarray]:
    """Numeric covariates pass through; categorical ones become dummies.

    Each silo uses its own category set; the lexicographically first
    level is the omitted reference.
    """
    columns: dict[str, np.ndarray] = {}
    for name in covariates:
        col = frame[name]
        if pd.api.types.is_numeric_dtype(col):
            columns[name] = col.to_numpy(dtype=np.float64)
            continue
        levels = sorted(str(v) for v in col.unique())
        for level in levels[1:]:
            columns[f"{name}[{level}]"] = (col.astype(str) == level).to_numpy(dtype=np.float64)
    return columns


# ---------------------------------------------------------------------------
# Silo regression
# ---------------------------------------------------------------------------

def fit_silo_regression(
    data: PanelTable,
    pre_periods: Sequence[int],
    post_periods: Sequence[int],
    covariates: Sequence[str] = (),
    hc: HcVariant = HcVariant.HC1,
) -> SiloFit:
    """Regress outcome on pre/post dummies and covariates, no constant.

    Rows with a missing value in any requested covariate are dropped
    (listwise) and counted in ``SiloFit.n_dropped``.

    Raises:
        EmptyCell: the pre or post periods match no usable rows.
        MissingCovariate: a requested covariate is not a column of *data*.
        RankDeficient: a covariate is collinear with the period dummies.
    """
    silo_id = data.silo_id
    pre = set(int(p) for p in pre_periods)
    post = set(int(p) for p in post_periods)
    if not pre or not post:
        raise EmptyCell(f"silo {silo_id!r}: pre and post period sets must be non-empty")
    if pre & post:
        raise BadSchedule(f"silo {silo_id!r}: pre and post periods overlap: {sorted(pre & post)}")
    data.require_covariates(covariates)

    frame = data.frame[data.frame["period"].isin(pre | post)]
    n_before = len(frame)
    if covariates:
        frame = frame.dropna(subset=list(covariates))
    n_dropped = n_before - len(frame)
    if n_dropped:
        logger.warning(
            "Silo %s: dropped %d of %d row(s) with missing covariates (%s)",
            silo_id, n_dropped, n_before, ", ".join(covariates),
        )

    is_post = frame["period"].isin(post).to_numpy()
    n_post = int(is_post.sum())
    n_pre = int((~is_post).sum())
    if n_pre == 0:
        raise EmptyCell(f"silo {silo_id!r}: no observations in pre period(s) {sorted(pre)}")
    if n_post == 0:
        raise EmptyCell(f"silo {silo_id!r}: no observations in post period(s) {sorted(post)}")

    columns: dict[str, np.ndarray] = {
        "pre": (~is_post).astype(np.float64),
        "post": is_post.astype(np.float64),
    }
    cov_columns = expand_covariates(frame, covariates)
    columns.update(cov_columns)

    fit = fit_ols(DesignMatrix.from_columns(columns), frame["outcome"].to_numpy(), hc)
    logger.debug(
        "Silo %s fit: pre=%s post=%s n=%d covariates=%s",
        silo_id, sorted(pre), sorted(post), n_pre + n_post, list(cov_columns),
    )
    return SiloFit(
        silo_id=silo_id,
        lambda_pre=fit.coef("pre"),
        lambda_post=fit.coef("post"),
        covariate_coeffs={name: fit.coef(name) for name in cov_columns},
        robust_cov=fit.robust_cov,
        n_pre=n_pre,
        n_post=n_post,
        periods_used=frozenset(int(p) for p in frame["period"].unique()),
        n_dropped=n_dropped,
    )


def first_diff(fit: SiloFit) -> tuple[float, float]:
    """``(lambda_post - lambda_pre, SE)`` with Var = V_pre + V_post - 2 Cov."""
    v = fit.robust_cov
    var = float(v[0, 0] + v[1, 1] - 2.0 * v[0, 1])
    if var < 0:
        if var < -1e-12 * max(float(v[0, 0] + v[1, 1]), 1e-300):
            raise NegativeVariance(
                f"silo {fit.silo_id!r}: variance of the first difference is negative ({var!r})"
            )
        var = 0.0
    return fit.lambda_post - fit.lambda_pre, math.sqrt(var)


# ---------------------------------------------------------------------------
# Block planning (the second-stage matrix layout)
# ---------------------------------------------------------------------------

def resolve_mode(schedule: TreatmentSchedule, mode: AdoptionMode) -> AdoptionMode:
    mode = AdoptionMode(mode)
    if mode is AdoptionMode.AUTO:
        return AdoptionMode.COMMON if len(schedule.cohorts) == 1 else AdoptionMode.STAGGERED
    if mode is AdoptionMode.COMMON and len(schedule.cohorts) > 1:
        raise BadSchedule(
            f"common adoption needs a single treatment period, schedule has {schedule.cohorts}"
        )
    return mode


def _eligible_control(g: int | None, t: int, control_group: ControlGroup) -> bool:
    if g is None:
        return True
    return control_group is ControlGroup.NOT_YET_TREATED and g > t


def plan_blocks(
    schedule: TreatmentSchedule,
    mode: AdoptionMode = AdoptionMode.AUTO,
    control_group: ControlGroup = ControlGroup.NOT_YET_TREATED,
    base_period_rule: BasePeriodRule = BasePeriodRule.VARYING,
    all_blocks: bool = False,
) -> dict[str, list[BlockTask]]:
    """Enumerate the (d, h, t) regressions every silo must run.

    ``all_blocks`` asks every silo for every (h, t) block regardless of
    eligibility, so randomization inference can relabel treatment timing;
    the coordinator drops forbidden comparisons itself.
    Treated silos always get every (h, t >= h) block; one with no eligible
    control reaches the coordinator as a skipped cell.

    Raises:
        BadSchedule: no period grid, or common mode with several cohorts.
        NoEligibleBlocks: no treated block has both a treated and a control silo.
    """
    BasePeriodRule(base_period_rule)
    control_group = ControlGroup(control_group)
    if schedule.periods is None:
        raise BadSchedule("schedule has no period grid; list the observed periods")
    periods = sorted(schedule.periods)
    if not schedule.cohorts:
        raise NoEligibleBlocks("schedule has no treated silo")
    mode = resolve_mode(schedule, mode)
    plan: dict[str, list[BlockTask]] = {silo: [] for silo in schedule.silos}

    if mode is AdoptionMode.COMMON:
        g = schedule.cohorts[0]
        pre = tuple(p for p in periods if p < g)
        post = tuple(p for p in periods if p >= g)
        controls = [s for s in schedule.silos if not schedule.is_treated(s)]
        if not pre:
            raise NoEligibleBlocks(f"no period before the adoption period {g}")
        if not controls:
            raise NoEligibleBlocks("common adoption needs at least one never-treated silo")
        for silo in schedule.silos:
            plan[silo].append(BlockTask(int(schedule.is_treated(silo)), g, g, pre, post))
        return plan

    n_estimable = 0
    for h in schedule.cohorts:
        base = h - 1
        if base not in periods:
            logger.warning("SKIPPED cohort h=%d: base period %d is not an observed period", h, base)
            continue
        treated = [s for s in schedule.silos if schedule.first_treated[s] == h]
        for t in (p for p in periods if p >= h):
            controls = [
                s for s in schedule.silos
                if schedule.first_treated[s] != h
                and _eligible_control(schedule.first_treated[s], t, control_group)
            ]
            if controls:
                n_estimable += 1
            else:
                logger.warning("Block (h=%d, t=%d) has no eligible control silo; treated rows only", h, t)
            members = schedule.silos if all_blocks else treated + controls
            for silo in members:
                d = int(schedule.first_treated[silo] == h)
                plan[silo].append(BlockTask(d, h, t, (base,), (t,)))

    if n_estimable == 0:
        raise NoEligibleBlocks("no (h, t) block has both a treated and an eligible control silo")
    for tasks in plan.values():
        tasks.sort(key=lambda task: (task.h, task.t))
    return plan


# ---------------------------------------------------------------------------
# Diff table
# ---------------------------------------------------------------------------

def run_blocks(
    data: PanelTable,
    tasks: Sequence[BlockTask],
    covariates: Sequence[str] = (),
    hc: HcVariant = HcVariant.HC1,
) -> DiffTable:
    """Run planned blocks on one silo's data.

    Blocks whose periods are absent, that leave no residual degrees of
    freedom (one row per period), or whose diff has zero variance are
    skipped with a diagnostic instead of failing the whole silo.
    """
    silo_id = data.silo_id
    table = DiffTable()
    for task in tasks:
        try:
            fit = fit_silo_regression(data, task.pre_periods, task.post_periods, covariates, hc)
        except (EmptyCell, DegreesOfFreedomError) as exc:
            _skip(table, silo_id, task, str(exc))
            continue
        diff, se = first_diff(fit)
        if se <= 0:
            _skip(table, silo_id, task, "first difference has zero variance")
            continue
        table.records.append(DiffRecord(
            silo_id=silo_id,
            d=task.d,
            h=task.h,
            t=task.t,
            diff=diff,
            se=se,
            weight=float(fit.n),
            n=fit.n,
            covariates_used=tuple(covariates),
        ))
    logger.info(
        "Silo %s: %d diff record(s), %d skipped", silo_id, len(table.records), len(table.skipped)
    )
    return table


def _skip(table: DiffTable, silo_id: str, task: BlockTask, reason: str) -> None:
    logger.warning("SKIPPED silo=%s h=%d t=%d: %s", silo_id, task.h, task.t, reason)
    table.skipped.append(SkippedBlock(silo_id, task.h, task.t, reason))


def build_diff_table(
    data: PanelTable,
    schedule: TreatmentSchedule,
    covariates: Sequence[str] = (),
    base_period_rule: BasePeriodRule = BasePeriodRule.VARYING,
    mode: AdoptionMode = AdoptionMode.AUTO,
    control_group: ControlGroup = ControlGroup.NOT_YET_TREATED,
    all_blocks: bool = False,
    hc: HcVariant = HcVariant.HC1,
) -> DiffTable:
    """Plan and run this silo's share of the second-stage matrix.

    When the schedule carries no period grid, the silo's own observed
    periods are used.
    """
    silo_id = data.silo_id
    if silo_id not in schedule.first_treated:
        raise BadSchedule(f"silo {silo_id!r} does not appear in the treatment schedule")
    if schedule.periods is None:
        schedule = TreatmentSchedule(dict(schedule.first_treated), tuple(data.periods))
    plan = plan_blocks(schedule, mode, control_group, base_period_rule, all_blocks)
    return run_blocks(data, plan[silo_id], covariates, hc)
