"""Data models shared across the silo, coordinator and simulation stages.

Periods are integers (calendar years work as-is).  A silo that is never
treated has ``first_treated = None`` (``NEVER``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional

import numpy as np

from .errors import BadSchedule, InvalidScheme, MalformedRow

NEVER = None  # first_treated value for never-treated silos


# ---------------------------------------------------------------------------
# Enums
# ---------------------------------------------------------------------------

class HcVariant(str, Enum):
    HC0 = "HC0"
    HC1 = "HC1"


class BasePeriodRule(str, Enum):
    VARYING = "VARYING"   # base period h-1 for every (h, t) block


class ControlGroup(str, Enum):
    NOT_YET_TREATED = "NOT_YET_TREATED"
    NEVER_TREATED = "NEVER_TREATED"


class AdoptionMode(str, Enum):
    AUTO = "AUTO"
    COMMON = "COMMON"
    STAGGERED = "STAGGERED"


class Weighting(str, Enum):
    UNWEIGHTED = "UNWEIGHTED"
    BY_N = "BY_N"


class AggregationKind(str, Enum):
    SIMPLE = "SIMPLE"
    GROUP = "GROUP"
    POPULATION_WEIGHTED = "POPULATION_WEIGHTED"


# ---------------------------------------------------------------------------
# Treatment timing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TreatmentSchedule:
    """First treated period per silo, plus the observed period grid.

    Treatment is absorbing, so one entry per silo is the whole history.
    """
    first_treated: Mapping[str, Optional[int]]
    periods: Optional[tuple[int, ...]] = None

    def __post_init__(self) -> None:
        errors: list[str] = []
        for silo, g in self.first_treated.items():
            if not isinstance(silo, str) or not silo:
                errors.append(f"silo id must be a non-empty string, got {silo!r}")
            if g is not None and (isinstance(g, bool) or not isinstance(g, (int, np.integer))):
                errors.append(f"first treated period for {silo!r} must be an integer or never, got {g!r}")
        if self.periods is not None:
            if len(set(self.periods)) != len(self.periods):
                errors.append("periods contain duplicates")
            for silo, g in self.first_treated.items():
                if g is not None and g not in self.periods:
                    errors.append(f"first treated period {g} of silo {silo!r} is not an observed period")
        if errors:
            raise BadSchedule("; ".join(errors))

    @property
    def silos(self) -> list[str]:
        return sorted(self.first_treated)

    @property
    def cohorts(self) -> list[int]:
        """Distinct first-treated periods, ascending."""
        return sorted({g for g in self.first_treated.values() if g is not None})

    def is_treated(self, silo_id: str) -> bool:
        return self.first_treated[silo_id] is not None


# ---------------------------------------------------------------------------
# Silo-stage products
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlockTask:
    """One two-group/two-period regression a silo must run."""
    d: int
    h: int
    t: int
    pre_periods: tuple[int, ...]
    post_periods: tuple[int, ...]


@dataclass(frozen=True)
class SkippedBlock:
    silo_id: str
    h: int
    t: int
    reason: str


@dataclass(frozen=True)
class SiloFit:
    """Coefficients of the no-constant silo regression (pre, post, covariates)."""
    silo_id: str
    lambda_pre: float
    lambda_post: float
    covariate_coeffs: dict[str, float]
    robust_cov: np.ndarray
    n_pre: int
    n_post: int
    periods_used: frozenset[int]
    n_dropped: int = 0

    def __post_init__(self) -> None:
        k = 2 + len(self.covariate_coeffs)
        if self.robust_cov.shape != (k, k):
            raise ValueError(
                f"robust_cov must be {k}x{k} for {len(self.covariate_coeffs)} covariate column(s), "
                f"got {self.robust_cov.shape}"
            )
        if self.n_pre < 1 or self.n_post < 1:
            raise ValueError("a silo fit needs at least one pre and one post observation")

    @property
    def n(self) -> int:
        return self.n_pre + self.n_post


@dataclass(frozen=True)
class DiffRecord:
    """One row of the second-stage matrix; the only thing that leaves a silo."""
    silo_id: str
    d: int
    h: int
    t: int
    diff: float
    se: float
    weight: float
    n: int
    covariates_used: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.silo_id:
            raise MalformedRow("silo_id is empty", column="silo_id")
        if self.d not in (0, 1):
            raise MalformedRow(f"d must be 0 or 1, got {self.d}", column="d")
        if self.t < self.h:
            raise MalformedRow(f"t ({self.t}) must be >= h ({self.h})", column="t")
        if not math.isfinite(self.diff):
            raise MalformedRow(f"diff must be finite, got {self.diff}", column="diff")
        if not (math.isfinite(self.se) and self.se > 0):
            raise MalformedRow(f"se must be finite and > 0, got {self.se}", column="se")
        if not (math.isfinite(self.weight) and self.weight > 0):
            raise MalformedRow(f"weight must be finite and > 0, got {self.weight}", column="weight")
        if self.n < 1:
            raise MalformedRow(f"n must be >= 1, got {self.n}", column="n")

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.silo_id, self.h, self.t)


# ---------------------------------------------------------------------------
# Coordinator products
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AttEstimate:
    """An ATT with its inference.  ``cohort``/``period`` key an (s, t) cell."""
    label: str
    att: float
    se_analytic: float
    n_treated_records: int
    n_control_records: int
    se_jackknife: Optional[float] = None
    p_randomization: Optional[float] = None
    cohort: Optional[int] = None
    period: Optional[int] = None
    n_treated_obs: int = 0

    def __post_init__(self) -> None:
        if self.p_randomization is not None and not 0.0 <= self.p_randomization <= 1.0:
            raise ValueError(f"p_randomization must lie in [0, 1], got {self.p_randomization}")
        if self.se_analytic < 0:
            raise ValueError(f"se_analytic must be >= 0, got {self.se_analytic}")

    @property
    def cell(self) -> tuple[Optional[int], Optional[int]]:
        return (self.cohort, self.period)


@dataclass(frozen=True)
class AggregationScheme:
    """How ATT(s, t) cells combine into one ATT.

    ``weights`` is only read for POPULATION_WEIGHTED; when omitted there,
    cells are weighted by treated sample size N_{s,t} / sum N.
    """
    kind: AggregationKind = AggregationKind.SIMPLE
    weights: Optional[Mapping[tuple[int, int], float]] = field(default=None)

    def __post_init__(self) -> None:
        if self.weights is None:
            return
        negative = {cell: w for cell, w in self.weights.items() if not w >= 0}
        if negative:
            raise InvalidScheme(f"aggregation weights must be non-negative: {negative}")
        total = sum(self.weights.values())
        if total > 0 and abs(total - 1.0) > 1e-9:
            raise InvalidScheme(f"aggregation weights must sum to 1, got {total!r}")

    @property
    def name(self) -> str:
        return self.kind.value.lower()
