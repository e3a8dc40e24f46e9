"""Second stage: combine silo diffs into ATT estimates.

Runs outside every silo and only ever sees ``DiffRecord`` rows.  For each
(h, t) block, regressing ``diff`` on a constant and the treated flag (WLS
with weights proportional to n when requested) gives ATT(h, t); that
coefficient is exactly the difference of the two arms' weighted mean
diffs, which is how it is computed here.

Inference is at the silo level:
  * analytic SE: silos are independent samples, so cross-silo covariance
    terms are zero and arm variances add;
  * delete-one-silo jackknife;
  * randomization inference that reassigns treatment-timing labels across
    silos (exact enumeration when the assignment space is small).
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterator, Mapping, Optional, Sequence

import numpy as np

from .errors import (
    DegeneratePermutationSpace,
    EstimationError,
    MismatchedBlock,
    MissingCell,
    NoControlRows,
    NoTreatedRows,
    TooFewSilos,
    WeightSumZero,
)
from .models import (
    AggregationKind,
    AggregationScheme,
    AttEstimate,
    DiffRecord,
    HcVariant,
    Weighting,
)
from .ols import DesignMatrix, OlsFit, fit_ols

logger = logging.getLogger(__name__)

Assignment = Mapping[str, Optional[int]]  # silo_id -> first treated period (None = never)

TIE_TOLERANCE = 1e-12

NOTES = (
    "cross-silo covariance terms are zero: silos are independent samples",
    "analytic aggregate SE treats (s,t) cells as independent; prefer the jackknife",
    "covariates enter each block as observed in the two sampled periods",
)


def block_label(h: int, t: int) -> str:
    return f"ATT(s={h},t={t})"


# ---------------------------------------------------------------------------
# 2x2 and block estimates
# ---------------------------------------------------------------------------

def att_2x2(treated: DiffRecord, control: DiffRecord) -> AttEstimate:
    """ATT from one treated and one control diff; SEs add in quadrature."""
    if treated.d != 1 or control.d != 0:
        raise MismatchedBlock(
            f"att_2x2 needs a treated (d=1) and a control (d=0) record, got d={treated.d}, d={control.d}"
        )
    if (treated.h, treated.t) != (control.h, control.t):
        raise MismatchedBlock(
            f"records belong to different blocks: (h={treated.h}, t={treated.t}) vs "
            f"(h={control.h}, t={control.t})"
        )
    return AttEstimate(
        label=block_label(treated.h, treated.t),
        att=treated.diff - control.diff,
        se_analytic=math.sqrt(treated.se ** 2 + control.se ** 2),
        n_treated_records=1,
        n_control_records=1,
        cohort=treated.h,
        period=treated.t,
        n_treated_obs=treated.n,
    )


def _arm_weights(records: Sequence[DiffRecord], weighting: Weighting) -> np.ndarray:
    if weighting is Weighting.BY_N:
        return np.array([r.weight for r in records], dtype=np.float64)
    return np.ones(len(records))


def _two_group(
    diff_t: np.ndarray, se_t: np.ndarray, w_t: np.ndarray,
    diff_c: np.ndarray, se_c: np.ndarray, w_c: np.ndarray,
) -> tuple[float, float]:
    """Difference of weighted arm means and its SE from normalized weights."""
    wt = w_t / w_t.sum()
    wc = w_c / w_c.sum()
    att = float(np.sum(wt * diff_t)) - float(np.sum(wc * diff_c))
    se = math.sqrt(float(np.sum((wt * se_t) ** 2)) + float(np.sum((wc * se_c) ** 2)))
    return att, se


def _block_rows(records: Sequence[DiffRecord], h: int, t: int) -> tuple[list[DiffRecord], list[DiffRecord]]:
    rows = [r for r in records if r.h == h and r.t == t]
    treated = [r for r in rows if r.d == 1]
    control = [r for r in rows if r.d == 0]
    if not treated:
        raise NoTreatedRows(f"block (h={h}, t={t}) has no treated record")
    if not control:
        raise NoControlRows(f"block (h={h}, t={t}) has no control record")
    return treated, control


def second_stage_regression(
    records: Sequence[DiffRecord], h: int, t: int, weighting: Weighting = Weighting.BY_N
) -> OlsFit:
    """``diff = alpha + beta * d`` over the rows of block (h, t)."""
    treated, control = _block_rows(records, h, t)
    rows = treated + control
    weighting = Weighting(weighting)
    design = DesignMatrix.from_columns(
        {"const": np.ones(len(rows)), "d": [float(r.d) for r in rows]},
        weights=_arm_weights(rows, weighting) if weighting is Weighting.BY_N else None,
    )
    return fit_ols(design, [r.diff for r in rows], HcVariant.HC0)


def att_block(
    records: Sequence[DiffRecord], h: int, t: int, weighting: Weighting = Weighting.BY_N
) -> AttEstimate:
    """ATT(h, t) from the rows of one block.

    The coefficient on ``d`` in :func:`second_stage_regression` equals the
    difference of weighted arm means; the SE uses within-arm normalized
    weights, sqrt(sum w~^2 se^2 over both arms).
    """
    weighting = Weighting(weighting)
    treated, control = _block_rows(records, h, t)
    att, se = _two_group(
        np.array([r.diff for r in treated]), np.array([r.se for r in treated]),
        _arm_weights(treated, weighting),
        np.array([r.diff for r in control]), np.array([r.se for r in control]),
        _arm_weights(control, weighting),
    )
    return AttEstimate(
        label=block_label(h, t),
        att=att,
        se_analytic=se,
        n_treated_records=len(treated),
        n_control_records=len(control),
        cohort=h,
        period=t,
        n_treated_obs=sum(r.n for r in treated),
    )


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def _cell_weights(
    estimates: Sequence[AttEstimate], scheme: AggregationScheme, partial: bool = False
) -> np.ndarray:
    k = len(estimates)
    if scheme.kind is AggregationKind.SIMPLE:
        return np.full(k, 1.0 / k)

    if scheme.kind is AggregationKind.GROUP:
        per_group = Counter(e.cohort for e in estimates)
        n_groups = len(per_group)
        return np.array([1.0 / (per_group[e.cohort] * n_groups) for e in estimates])

    if scheme.weights is not None:
        present = {e.cell for e in estimates}
        absent = [cell for cell, w in scheme.weights.items() if w > 0 and cell not in present]
        if absent and not partial:
            raise MissingCell(f"weights reference cell(s) with no estimate: {sorted(absent)}")
        raw = np.array([float(scheme.weights.get(e.cell, 0.0)) for e in estimates])
    else:
        raw = np.array([float(e.n_treated_obs) for e in estimates])
    total = raw.sum()
    if not total > 0:
        raise WeightSumZero("aggregation weights over the estimated cells sum to zero")
    return raw / total


def aggregate(
    block_estimates: Sequence[AttEstimate], scheme: AggregationScheme, partial: bool = False
) -> AttEstimate:
    """Weighted combination of ATT(s, t) cells.

    SIMPLE averages all cells; GROUP averages over t within each cohort and
    then over cohorts; POPULATION_WEIGHTED uses the supplied w_{s,t} or, if
    none, treated sample shares N_{s,t} / sum N.  The analytic SE treats
    cells as independent.

    ``partial`` renormalises supplied weights over the cells present instead
    of raising MissingCell; jackknife and permutation replicates use it.
    """
    if not block_estimates:
        raise MissingCell("no block estimates to aggregate")
    w = _cell_weights(block_estimates, scheme, partial)
    atts = np.array([e.att for e in block_estimates])
    ses = np.array([e.se_analytic for e in block_estimates])
    return AttEstimate(
        label=f"aggregate:{scheme.name}",
        att=float(np.sum(w * atts)),
        se_analytic=math.sqrt(float(np.sum((w * ses) ** 2))),
        n_treated_records=sum(e.n_treated_records for e in block_estimates),
        n_control_records=sum(e.n_control_records for e in block_estimates),
        n_treated_obs=sum(e.n_treated_obs for e in block_estimates),
    )


# ---------------------------------------------------------------------------
# Timing labels and forbidden comparisons
# ---------------------------------------------------------------------------

def infer_schedule(records: Sequence[DiffRecord]) -> dict[str, Optional[int]]:
    """First treated period per silo, read off its d=1 rows (None if it has none)."""
    schedule: dict[str, Optional[int]] = {}
    for r in records:
        schedule.setdefault(r.silo_id, None)
    for r in records:
        if r.d == 1:
            g = schedule[r.silo_id]
            if g is not None and g != r.h:
                raise MismatchedBlock(
                    f"silo {r.silo_id!r} is marked treated in cohorts {g} and {r.h}; treatment is absorbing"
                )
            schedule[r.silo_id] = r.h
    return schedule


def relabel(records: Sequence[DiffRecord], assignment: Assignment) -> list[DiffRecord]:
    """Re-derive treated flags under *assignment* and drop forbidden comparisons.

    A row (s, h, t) is treated when s is first treated at h, a valid
    control when s is untreated at t, and otherwise discarded.
    """
    out: list[DiffRecord] = []
    for r in records:
        g = assignment[r.silo_id]
        if g == r.h:
            d = 1
        elif g is None or g > r.t:
            d = 0
        else:
            continue
        out.append(r if r.d == d else replace(r, d=d))
    return out


def _cells(
    records: Sequence[DiffRecord], weighting: Weighting
) -> tuple[list[AttEstimate], list[str]]:
    estimates: list[AttEstimate] = []
    skipped: list[str] = []
    for h, t in sorted({(r.h, r.t) for r in records}):
        try:
            estimates.append(att_block(records, h, t, weighting))
        except (NoTreatedRows, NoControlRows) as exc:
            skipped.append(str(exc))
    return estimates, skipped


def _aggregate_att(
    records: Sequence[DiffRecord], assignment: Assignment,
    scheme: AggregationScheme, weighting: Weighting,
) -> Optional[float]:
    estimates, _ = _cells(relabel(records, assignment), weighting)
    if not estimates:
        return None
    try:
        return aggregate(estimates, scheme, partial=True).att
    except WeightSumZero:
        return None


# ---------------------------------------------------------------------------
# Jackknife
# ---------------------------------------------------------------------------

def _arm_silos(records: Sequence[DiffRecord]) -> tuple[set[str], set[str]]:
    treated = {r.silo_id for r in records if r.d == 1}
    control = {r.silo_id for r in records if r.d == 0}
    return treated, control


def jackknife_se(
    records: Sequence[DiffRecord],
    scheme: AggregationScheme,
    weighting: Weighting = Weighting.BY_N,
) -> float:
    """Delete-one-silo jackknife SE of the aggregate ATT.

    SE = sqrt((G - 1) / G * sum_g (theta_(g) - theta_bar)^2), G = number of silos.

    Raises:
        TooFewSilos: fewer than two treated or two control silos.
    """
    weighting = Weighting(weighting)
    assignment = infer_schedule(records)
    valid = relabel(records, assignment)
    treated, control = _arm_silos(valid)
    if len(treated) < 2 or len(control) < 2:
        raise TooFewSilos(
            f"jackknife needs >= 2 treated and >= 2 control silos, got {len(treated)} and {len(control)}"
        )
    silos = sorted(assignment)
    thetas: list[float] = []
    for silo in silos:
        kept = [r for r in valid if r.silo_id != silo]
        theta = _aggregate_att(kept, assignment, scheme, weighting)
        if theta is None:
            raise TooFewSilos(f"no estimable cell remains after deleting silo {silo!r}")
        thetas.append(theta)
    g = len(thetas)
    arr = np.array(thetas)
    se = math.sqrt((g - 1) / g * float(np.sum((arr - arr.mean()) ** 2)))
    logger.debug("Jackknife over %d silo(s): se=%.6g", g, se)
    return se


# ---------------------------------------------------------------------------
# Randomization inference
# ---------------------------------------------------------------------------

def n_distinct_assignments(labels: Sequence[Optional[int]]) -> int:
    total = math.factorial(len(labels))
    for count in Counter(labels).values():
        total //= math.factorial(count)
    return total


def distinct_assignments(labels: Sequence[Optional[int]]) -> Iterator[tuple[Optional[int], ...]]:
    """Every distinct arrangement of a multiset of timing labels."""
    counts = Counter(labels)
    keys = sorted(counts, key=lambda k: (k is None, k if k is not None else 0))
    n = len(labels)
    prefix: list[Optional[int]] = []

    def walk() -> Iterator[tuple[Optional[int], ...]]:
        if len(prefix) == n:
            yield tuple(prefix)
            return
        for k in keys:
            if counts[k]:
                counts[k] -= 1
                prefix.append(k)
                yield from walk()
                prefix.pop()
                counts[k] += 1

    return walk()


def randomization_inference(
    records: Sequence[DiffRecord],
    scheme: AggregationScheme,
    n_permutations: int,
    seed: int,
    weighting: Weighting = Weighting.BY_N,
) -> float:
    """Two-sided RI p-value for the aggregate ATT.

    Treatment-timing labels are shuffled across silos, keeping how many
    silos carry each label.  With at most *n_permutations* distinct
    assignments every one is enumerated and p = share with |ATT| >= |ATT_obs|
    (the observed assignment included); otherwise draws use per-index
    child seeds of *seed* and p = (1 + hits) / (1 + draws).

    Raises:
        DegeneratePermutationSpace: only one distinct assignment exists.
    """
    if n_permutations < 1:
        raise ValueError(f"n_permutations must be >= 1, got {n_permutations}")
    weighting = Weighting(weighting)
    observed = infer_schedule(records)
    silos = sorted(observed)
    labels = [observed[s] for s in silos]
    space = n_distinct_assignments(labels)
    if space <= 1:
        raise DegeneratePermutationSpace("every silo carries the same treatment label")

    theta_obs = _aggregate_att(records, observed, scheme, weighting)
    if theta_obs is None:
        raise NoControlRows("no estimable cell under the observed assignment")
    threshold = abs(theta_obs) - TIE_TOLERANCE * max(1.0, abs(theta_obs))

    def extreme(assignment_labels: Sequence[Optional[int]]) -> Optional[bool]:
        theta = _aggregate_att(records, dict(zip(silos, assignment_labels)), scheme, weighting)
        return None if theta is None else abs(theta) >= threshold

    if space <= n_permutations:
        outcomes = [extreme(a) for a in distinct_assignments(labels)]
        usable = [o for o in outcomes if o is not None]
        p = sum(usable) / len(usable)
        logger.info("RI: exact enumeration of %d assignment(s), p=%.4f", space, p)
        return p

    children = np.random.SeedSequence(seed).spawn(n_permutations)
    hits = 0
    draws = 0
    for child in children:
        rng = np.random.default_rng(child)
        outcome = extreme([labels[i] for i in rng.permutation(len(labels))])
        if outcome is None:
            continue
        draws += 1
        hits += int(outcome)
    if draws < n_permutations:
        logger.warning("RI: %d draw(s) had no estimable cell and were discarded", n_permutations - draws)
    p = (1 + hits) / (1 + draws)
    logger.info("RI: %d random draw(s) from %d assignment(s), p=%.4f", draws, space, p)
    return p


# ---------------------------------------------------------------------------
# Full second stage
# ---------------------------------------------------------------------------

@dataclass
class CoordinatorResult:
    cells: list[AttEstimate]
    aggregate: AttEstimate
    skipped_cells: list[str] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def rows(self) -> list[AttEstimate]:
        return [*self.cells, self.aggregate]


def estimate(
    records: Sequence[DiffRecord],
    scheme: AggregationScheme = AggregationScheme(),
    weighting: Weighting = Weighting.BY_N,
    jackknife: bool = False,
    n_permutations: int = 0,
    seed: Optional[int] = None,
) -> CoordinatorResult:
    """Estimate every (h, t) cell, aggregate, and attach silo-level inference.

    Forbidden comparisons are filtered first, so a table produced with
    every block for every silo is handled the same as a minimal one.
    A jackknife or RI that is undefined for this layout is skipped with a
    warning; the analytic SE is always reported.
    """
    weighting = Weighting(weighting)
    if n_permutations and seed is None:
        raise ValueError("randomization inference needs an explicit seed")
    assignment = infer_schedule(records)
    valid = relabel(records, assignment)
    dropped = len(records) - len(valid)
    if dropped:
        logger.info("Dropped %d forbidden comparison row(s)", dropped)

    cells, skipped = _cells(valid, weighting)
    for msg in skipped:
        logger.warning("SKIPPED cell: %s", msg)
    if not cells:
        if not any(r.d == 1 for r in valid):
            raise NoTreatedRows("no treated records in the diff table")
        raise NoControlRows("no (h, t) block has both treated and control records")
    agg = aggregate(cells, scheme)
    notes = list(NOTES)
    if scheme.weights is not None and (jackknife or n_permutations):
        notes.append("inference replicates renormalise the supplied weights over the cells they estimate")

    if jackknife:
        try:
            agg = replace(agg, se_jackknife=jackknife_se(valid, scheme, weighting))
        except TooFewSilos as exc:
            logger.warning("Jackknife unavailable (%s); reporting analytic SE only", exc)
            notes.append(f"jackknife skipped: {exc}")
        for i, cell in enumerate(cells):
            rows = [r for r in valid if (r.h, r.t) == cell.cell]
            try:
                cells[i] = replace(cell, se_jackknife=jackknife_se(rows, AggregationScheme(), weighting))
            except EstimationError:
                pass

    if n_permutations:
        try:
            p = randomization_inference(records, scheme, n_permutations, seed, weighting)
            agg = replace(agg, p_randomization=p)
        except DegeneratePermutationSpace as exc:
            logger.warning("Randomization inference unavailable (%s)", exc)
            notes.append(f"randomization inference skipped: {exc}")

    if len(cells) == 1:
        cells[0] = replace(cells[0], se_jackknife=agg.se_jackknife, p_randomization=agg.p_randomization)

    metadata = {
        "scheme": scheme.name,
        "weighting": weighting.value,
        "jackknife": jackknife,
        "n_permutations": n_permutations,
        "seed": seed,
        "n_records": len(records),
        "n_forbidden_dropped": dropped,
        "silos": {s: g for s, g in sorted(assignment.items())},
        "skipped_cells": skipped,
        "notes": notes,
    }
    logger.info(
        "Second stage: %d cell(s), aggregate %s ATT=%.6g (se=%.6g)",
        len(cells), scheme.name, agg.att, agg.se_analytic,
    )
    return CoordinatorResult(cells=cells, aggregate=agg, skipped_cells=skipped, metadata=metadata)
