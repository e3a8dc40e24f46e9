"""Two-silo simulation harness.

Generates balanced unit panels over 2000-2009 with treatment in 2005,
runs the siloed estimator next to the pooled DID and DID-INT oracles, and
summarises bias and how well each analytic SE tracks the true SE.

Six preset cases vary the covariate regime:

  NOCOV_*        outcome = effect * DID + e
  TINV_*         + 0.5 * female                  (same slope in both silos)
  TVAR_CCC_HELD  + 1.5 * age                     (age grows one year per period)
  TVAR_CCC_VIOLATED  + 0.5 * age (treated), 2.0 * age (control)

with e ~ N(0, 1).  ``n_total`` counts unit-period rows across all silos.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd

from .coordinator import att_block
from .errors import DegenerateDesign, InvalidSpec, UndidError
from .models import DiffRecord, HcVariant, TreatmentSchedule, Weighting
from .ols import DesignMatrix, fwl_residualize
from .panel import PanelTable
from .pooled_oracle import conventional_design, fit_conventional_did, fit_did_int
from .silo_stage import first_diff, fit_silo_regression

logger = logging.getLogger(__name__)

ESTIMATORS = frozenset({"undid", "pooled", "didint"})
REPORT_COLUMNS = (
    "rep", "att_undid", "att_pooled", "att_didint", "se_undid", "se_pooled", "se_true", "error",
)
SWEEP_SIZES = (1000, 2000, 4000, 8000, 10000, 50000)


class DgpCase(str, Enum):
    NOCOV_NULL = "NOCOV_NULL"
    NOCOV_EFFECT = "NOCOV_EFFECT"
    TINV_NULL = "TINV_NULL"
    TINV_EFFECT = "TINV_EFFECT"
    TVAR_CCC_HELD = "TVAR_CCC_HELD"
    TVAR_CCC_VIOLATED = "TVAR_CCC_VIOLATED"


class Balance(str, Enum):
    EQUAL = "EQUAL"
    TWO_THIRDS_ONE_THIRD = "TWO_THIRDS_ONE_THIRD"   # control arm holds two thirds of the rows


class TrueSeForm(str, Enum):
    RESIDUALIZED = "RESIDUALIZED"   # sum e^2 / ((n-f) * SSR of DID on the other regressors)
    CENTERED = "CENTERED"           # sum e^2 / ((n-f) * sum (DID - mean DID)^2)
    PRINTED = "PRINTED"             # CENTERED without the square root


# (effect, treated slope, control slope, covariate)
_PRESETS: dict[DgpCase, tuple[float, float, float, Optional[str]]] = {
    DgpCase.NOCOV_NULL: (0.0, 0.0, 0.0, None),
    DgpCase.NOCOV_EFFECT: (0.1, 0.0, 0.0, None),
    DgpCase.TINV_NULL: (0.0, 0.5, 0.5, "female"),
    DgpCase.TINV_EFFECT: (0.1, 0.5, 0.5, "female"),
    DgpCase.TVAR_CCC_HELD: (0.0, 1.5, 1.5, "age"),
    DgpCase.TVAR_CCC_VIOLATED: (0.0, 0.5, 2.0, "age"),
}


# ---------------------------------------------------------------------------
# Specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DgpSpec:
    """One data-generating process.  ``effect``/``slopes`` default to the case preset."""
    case: DgpCase = DgpCase.NOCOV_EFFECT
    n_total: int = 500
    balance: Balance = Balance.EQUAL
    periods: tuple[int, ...] = tuple(range(2000, 2010))
    treat_year: int = 2005
    effect: Optional[float] = None
    slopes: Optional[tuple[float, float]] = None   # (treated, control)
    seed: int = 0
    n_silos: int = 2
    n_treated_silos: int = 1
    age_range: tuple[int, int] = (65, 90)
    female_share: float = 0.5
    true_se_form: TrueSeForm = TrueSeForm.RESIDUALIZED
    hc: HcVariant = HcVariant.HC1

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "case", DgpCase(self.case))
            object.__setattr__(self, "balance", Balance(self.balance))
            object.__setattr__(self, "true_se_form", TrueSeForm(self.true_se_form))
            object.__setattr__(self, "hc", HcVariant(self.hc))
        except ValueError as exc:
            raise InvalidSpec(str(exc)) from None
        object.__setattr__(self, "periods", tuple(int(p) for p in self.periods))
        if len(self.periods) < 2:
            raise InvalidSpec("need at least two periods")
        if self.slopes is not None:
            object.__setattr__(self, "slopes", tuple(float(s) for s in self.slopes))

        errors: list[str] = []
        if list(self.periods) != list(range(self.periods[0], self.periods[0] + len(self.periods))):
            errors.append("periods must be consecutive integers")
        if self.treat_year not in self.periods[1:]:
            errors.append(f"treat_year {self.treat_year} must be an observed period after the first")
        if self.n_silos < 2 or not 1 <= self.n_treated_silos < self.n_silos:
            errors.append("need n_silos >= 2 and 1 <= n_treated_silos < n_silos")
        if self.n_total % len(self.periods):
            errors.append(f"n_total ({self.n_total}) must be a multiple of the {len(self.periods)} periods")
        if self.slopes is not None and len(self.slopes) != 2:
            errors.append("slopes must be a (treated, control) pair")
        if self.effect is not None and not math.isfinite(self.effect):
            errors.append("effect must be finite")
        if self.age_range[0] > self.age_range[1]:
            errors.append("age_range must be (low, high) with low <= high")
        if not 0.0 <= self.female_share <= 1.0:
            errors.append("female_share must lie in [0, 1]")
        if not errors and min(self.units_per_silo().values()) < 1:
            errors.append(f"n_total={self.n_total} leaves a silo without units")
        if errors:
            raise InvalidSpec("; ".join(errors))

    @property
    def resolved_effect(self) -> float:
        return _PRESETS[self.case][0] if self.effect is None else float(self.effect)

    @property
    def resolved_slopes(self) -> tuple[float, float]:
        if self.slopes is not None:
            return self.slopes
        _, st, sc, _ = _PRESETS[self.case]
        return st, sc

    @property
    def covariate(self) -> Optional[str]:
        return _PRESETS[self.case][3]

    @property
    def covariates(self) -> tuple[str, ...]:
        return (self.covariate,) if self.covariate else ()

    @property
    def treated_silos(self) -> list[str]:
        return [f"treated_{i + 1}" for i in range(self.n_treated_silos)]

    @property
    def control_silos(self) -> list[str]:
        return [f"control_{i + 1}" for i in range(self.n_silos - self.n_treated_silos)]

    def units_per_silo(self) -> dict[str, int]:
        units = self.n_total // len(self.periods)
        share = 0.5 if self.balance is Balance.EQUAL else 1.0 / 3.0
        n_treated = int(round(units * share))
        out: dict[str, int] = {}
        for silos, total in ((self.treated_silos, n_treated), (self.control_silos, units - n_treated)):
            for silo, chunk in zip(silos, np.array_split(np.arange(total), len(silos))):
                out[silo] = len(chunk)
        return out

    def schedule(self) -> TreatmentSchedule:
        first = {s: self.treat_year for s in self.treated_silos}
        first.update({s: None for s in self.control_silos})
        return TreatmentSchedule(first, self.periods)

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("case", "balance", "true_se_form", "hc"):
            out[key] = out[key].value
        out["periods"] = list(self.periods)
        out["effect"] = self.resolved_effect
        out["slopes"] = list(self.resolved_slopes)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> DgpSpec:
        """Build from a JSON/YAML mapping; an unknown case lists the valid ones."""
        if not isinstance(raw, dict):
            raise InvalidSpec("simulation spec must be a mapping")
        raw = dict(raw)
        case = str(raw.get("case", DgpCase.NOCOV_EFFECT.value)).upper()
        if case not in DgpCase.__members__:
            raise InvalidSpec(
                f"unknown DGP case {raw.get('case')!r}; valid cases: {', '.join(DgpCase.__members__)}"
            )
        raw["case"] = DgpCase(case)
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(raw) - known - {"replications", "workers", "estimators"})
        if unknown:
            raise InvalidSpec(f"unknown simulation field(s): {', '.join(unknown)}")
        for key in ("periods", "slopes", "age_range"):
            if raw.get(key) is not None:
                raw[key] = tuple(raw[key])
        try:
            return cls(**{k: v for k, v in raw.items() if k in known})
        except TypeError as exc:
            raise InvalidSpec(str(exc)) from None


# ---------------------------------------------------------------------------
# Panel generation
# ---------------------------------------------------------------------------

class GeneratedPanel(NamedTuple):
    pooled: PanelTable
    silos: dict[str, PanelTable]
    disturbances: np.ndarray   # aligned with pooled rows


def generate_panel(spec: DgpSpec) -> GeneratedPanel:
    """Draw one panel.  Every unit appears in every period."""
    rng = np.random.default_rng(spec.seed)
    periods = np.array(spec.periods)
    n_periods = len(periods)
    effect = spec.resolved_effect
    slope_t, slope_c = spec.resolved_slopes
    covariate = spec.covariate
    units = spec.units_per_silo()

    frames: list[pd.DataFrame] = []
    errors: list[np.ndarray] = []
    for silo in spec.treated_silos + spec.control_silos:
        treated = silo in spec.treated_silos
        n_units = units[silo]
        age0 = rng.integers(spec.age_range[0], spec.age_range[1] + 1, size=n_units)
        female = (rng.random(n_units) < spec.female_share).astype(np.float64)
        e = rng.standard_normal(n_units * n_periods)

        unit_idx = np.repeat(np.arange(n_units), n_periods)
        period = np.tile(periods, n_units)
        did = float(treated) * (period >= spec.treat_year)
        slope = slope_t if treated else slope_c
        columns = {
            "unit_id": [f"{silo}-{i}" for i in unit_idx],
            "silo_id": silo,
            "period": period,
        }
        if covariate == "age":
            x = (age0[unit_idx] + (period - periods[0])).astype(np.float64)
        elif covariate == "female":
            x = female[unit_idx]
        else:
            x = np.zeros(len(period))
        columns["outcome"] = effect * did + slope * x + e
        if covariate:
            columns[covariate] = x
        frames.append(pd.DataFrame(columns))
        errors.append(e)

    pooled = PanelTable(pd.concat(frames, ignore_index=True))
    silos = {silo: pooled.for_silo(silo) for silo in pooled.silo_ids}
    return GeneratedPanel(pooled, silos, np.concatenate(errors))


def true_se(
    design: DesignMatrix,
    disturbances: Sequence[float] | np.ndarray,
    f: int = 4,
    form: TrueSeForm = TrueSeForm.RESIDUALIZED,
    target: str = "did",
) -> float:
    """SE of the ATT implied by the realized disturbances.

    RESIDUALIZED divides by the residual sum of squares of *target* on the
    other regressors, which is the exact OLS variance denominator (N/16 on
    a balanced 2x2).  CENTERED uses the raw centered sum instead.

    Raises:
        DegenerateDesign: *target* has no variation left (or n <= f).
    """
    form = TrueSeForm(form)
    e = np.asarray(disturbances, dtype=np.float64)
    n = design.rows
    if len(e) != n:
        raise ValueError(f"{len(e)} disturbance(s) for {n} design row(s)")
    if n <= f:
        raise DegenerateDesign(f"n={n} leaves no degrees of freedom for f={f}")
    if form is TrueSeForm.RESIDUALIZED:
        r, _ = fwl_residualize(design, target)
        spread = float(r @ r)
    else:
        x = design.column(target)
        spread = float(np.sum((x - x.mean()) ** 2))
    if spread <= 1e-12 * n:
        raise DegenerateDesign(f"column {target!r} has no variation")
    value = float(e @ e) / ((n - f) * spread)
    return value if form is TrueSeForm.PRINTED else math.sqrt(value)


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

def _undid(panel: GeneratedPanel, spec: DgpSpec) -> tuple[float, float]:
    g = spec.treat_year
    pre = [p for p in spec.periods if p < g]
    post = [p for p in spec.periods if p >= g]
    schedule = spec.schedule()
    records = []
    for silo, table in panel.silos.items():
        fit = fit_silo_regression(table, pre, post, spec.covariates, spec.hc)
        diff, se = first_diff(fit)
        records.append(DiffRecord(
            silo_id=silo, d=int(schedule.is_treated(silo)), h=g, t=g,
            diff=diff, se=se, weight=float(fit.n), n=fit.n, covariates_used=spec.covariates,
        ))
    est = att_block(records, g, g, Weighting.BY_N)
    return est.att, est.se_analytic


def run_replication(spec: DgpSpec, rep: int, estimators: Iterable[str] = ESTIMATORS) -> dict:
    """One report row; estimator failures are recorded, not raised."""
    estimators = set(estimators)
    row: dict = {c: math.nan for c in REPORT_COLUMNS}
    row["rep"] = rep
    row["error"] = ""
    try:
        panel = generate_panel(spec)
        schedule = spec.schedule()
        if "undid" in estimators:
            row["att_undid"], row["se_undid"] = _undid(panel, spec)
        if "pooled" in estimators:
            pooled = fit_conventional_did(panel.pooled, schedule, spec.covariates, spec.hc)
            row["att_pooled"], row["se_pooled"] = pooled.att, pooled.se
        if "didint" in estimators:
            row["att_didint"] = fit_did_int(panel.pooled, schedule, spec.covariates, spec.hc).att
        design, _ = conventional_design(panel.pooled, schedule, spec.covariates)
        row["se_true"] = true_se(design, panel.disturbances, len(design.columns), spec.true_se_form)
    except UndidError as exc:
        logger.warning("Replication %d failed: %s", rep, exc)
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _replication_task(args: tuple[DgpSpec, int, frozenset]) -> dict:
    spec, rep, estimators = args
    return run_replication(spec, rep, estimators)


def replication_specs(spec: DgpSpec, replications: int) -> list[DgpSpec]:
    """Per-replication specs whose seeds are child streams of ``spec.seed``."""
    children = np.random.SeedSequence(spec.seed).spawn(replications)
    return [replace(spec, seed=int(child.generate_state(1)[0])) for child in children]


@dataclass
class MonteCarloReport:
    rows: pd.DataFrame
    summary: dict
    config: dict = field(default_factory=dict)

    def write_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.rows.to_csv(path, index=False, columns=list(REPORT_COLUMNS), lineterminator="\n")
        logger.info("Wrote %d replication row(s) -> %s", len(self.rows), path)

    def write_summary(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        doc = {"summary": _json_safe(self.summary), "config": _json_safe(self.config)}
        with open(path, "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=2, sort_keys=True)
            f.write("\n")
        logger.info("Wrote simulation summary -> %s", path)


def _json_safe(value):
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, (float, np.floating)):
        return None if not math.isfinite(value) else float(value)
    if isinstance(value, np.integer):
        return int(value)
    return value


def summarize(rows: pd.DataFrame, effect: float) -> dict:
    """Bias, spread and SE accuracy over the successful replications."""
    ok = rows[rows["error"] == ""]
    summary: dict = {"replications": int(len(rows)), "failed": int(len(rows) - len(ok))}
    n = len(ok)
    for name in ("att_undid", "att_pooled", "att_didint"):
        col = ok[name].dropna()
        if col.empty:
            continue
        mean = float(col.mean())
        sd = float(col.std(ddof=1)) if len(col) > 1 else 0.0
        summary[f"mean_{name}"] = mean
        summary[f"bias_{name}"] = mean - effect
        summary[f"sd_{name}"] = sd
        summary[f"mcse_{name}"] = sd / math.sqrt(len(col))
    for name in ("se_undid", "se_pooled", "se_true"):
        if ok[name].notna().any():
            summary[f"mean_{name}"] = float(ok[name].mean())

    def mse(a: str, b: str) -> float:
        diff = (ok[a] - ok[b]).dropna()
        return float(np.mean(diff ** 2)) if len(diff) else math.nan

    summary["mse_se_undid"] = mse("se_undid", "se_true")
    summary["mse_se_pooled"] = mse("se_pooled", "se_true")
    summary["mse_se_cross"] = mse("se_undid", "se_pooled")
    both = ok[["se_undid", "se_pooled"]].dropna()
    summary["se_correlation"] = (
        float(np.corrcoef(both["se_undid"], both["se_pooled"])[0, 1]) if len(both) > 1 else math.nan
    )
    for a, b in (("att_undid", "att_pooled"), ("att_undid", "att_didint")):
        diff = (ok[a] - ok[b]).abs().dropna()
        summary[f"max_abs_{a}_minus_{b.removeprefix('att_')}"] = float(diff.max()) if len(diff) else math.nan
    logger.debug("Summary over %d successful replication(s): %s", n, summary)
    return summary


def run_experiment(
    spec: DgpSpec,
    replications: int,
    estimators: Iterable[str] = ESTIMATORS,
    workers: int = 1,
) -> MonteCarloReport:
    """Run *replications* independent draws of *spec*.

    Rows come back in replication order whatever ``workers`` is, so the
    report is identical for a given spec.
    """
    if replications < 1:
        raise InvalidSpec(f"replications must be >= 1, got {replications}")
    estimators = frozenset(estimators)
    unknown = estimators - ESTIMATORS
    if unknown:
        raise InvalidSpec(f"unknown estimator(s) {sorted(unknown)}; choose from {sorted(ESTIMATORS)}")

    tasks = [(s, rep, estimators) for rep, s in enumerate(replication_specs(spec, replications))]
    logger.info(
        "Simulating %s: n_total=%d, %d replication(s), %d worker(s)",
        spec.case.value, spec.n_total, replications, workers,
    )
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_replication_task, tasks, chunksize=max(1, replications // (4 * workers))))
    else:
        rows = [_replication_task(t) for t in tasks]

    frame = pd.DataFrame(rows, columns=list(REPORT_COLUMNS))
    summary = summarize(frame, spec.resolved_effect)
    config = {**spec.to_dict(), "replications": replications, "estimators": sorted(estimators)}
    if summary["failed"]:
        logger.warning("%d of %d replication(s) failed", summary["failed"], replications)
    return MonteCarloReport(rows=frame, summary=summary, config=config)


def run_size_sweep(
    spec: DgpSpec,
    sizes: Sequence[int] = SWEEP_SIZES,
    replications: int = 200,
    workers: int = 1,
) -> pd.DataFrame:
    """MSE of each analytic SE against the true SE, by sample size."""
    out = []
    for size in sizes:
        report = run_experiment(replace(spec, n_total=int(size)), replications, workers=workers)
        s = report.summary
        out.append({
            "n_total": int(size),
            "mse_se_undid": s["mse_se_undid"],
            "mse_se_pooled": s["mse_se_pooled"],
            "mse_se_cross": s["mse_se_cross"],
            "se_correlation": s["se_correlation"],
            "mean_att_undid": s.get("mean_att_undid", math.nan),
            "mean_att_pooled": s.get("mean_att_pooled", math.nan),
        })
        logger.info(
            "n_total=%d: mse_se_undid=%.3g mse_se_pooled=%.3g mse_se_cross=%.3g",
            size, s["mse_se_undid"], s["mse_se_pooled"], s["mse_se_cross"],
        )
    return pd.DataFrame(out)
