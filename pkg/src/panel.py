"""Long-format micro-data (``PanelTable``) and its CSV reader.

Micro-data never leaves a silo: nothing in this module writes it back
out, and ``PanelTable.for_silo`` is the only way a multi-silo table is
split for silo-stage work (simulation and pooled oracles only).

CSV layout: ``unit_id,silo_id,period,outcome`` plus covariate columns.
Numeric covariates are parsed as floats (blank = missing); any column that
does not parse as numbers is kept as a categorical string column.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import EmptyCell, MalformedRow, MissingCovariate

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("unit_id", "silo_id", "period", "outcome")


@dataclass(frozen=True)
class PanelTable:
    """Rows of (unit_id, silo_id, period, outcome, covariates...)."""
    frame: pd.DataFrame

    def __post_init__(self) -> None:
        missing = [c for c in REQUIRED_COLUMNS if c not in self.frame.columns]
        if missing:
            raise MalformedRow(f"micro-data is missing required column(s): {', '.join(missing)}")
        frame = self.frame.reset_index(drop=True)
        frame["unit_id"] = frame["unit_id"].astype(str)
        frame["silo_id"] = frame["silo_id"].astype(str)
        dupes = frame.duplicated(subset=["silo_id", "unit_id", "period"], keep=False)
        if dupes.any():
            first = frame.loc[dupes].iloc[0]
            raise MalformedRow(
                f"(unit_id, period) must be unique within a silo; "
                f"duplicate ({first['unit_id']}, {first['period']}) in silo {first['silo_id']!r}",
                line=int(np.flatnonzero(dupes.to_numpy())[0]) + 2,
            )
        object.__setattr__(self, "frame", frame)

    # ------------------------------------------------------------------
    # Construction
    # ------------------------------------------------------------------

    @classmethod
    def from_records(
        cls,
        unit_id: Sequence,
        silo_id: Sequence | str,
        period: Sequence[int],
        outcome: Sequence[float],
        covariates: Optional[dict[str, Sequence]] = None,
    ) -> PanelTable:
        n = len(period)
        data = {
            "unit_id": list(unit_id),
            "silo_id": [silo_id] * n if isinstance(silo_id, str) else list(silo_id),
            "period": np.asarray(period, dtype=np.int64),
            "outcome": np.asarray(outcome, dtype=np.float64),
        }
        for name, values in (covariates or {}).items():
            data[name] = values
        return cls(pd.DataFrame(data))

    @classmethod
    def concat(cls, tables: Iterable[PanelTable]) -> PanelTable:
        return cls(pd.concat([t.frame for t in tables], ignore_index=True))

    # ------------------------------------------------------------------
    # Accessors
    # ------------------------------------------------------------------

    @property
    def covariate_names(self) -> list[str]:
        return [c for c in self.frame.columns if c not in REQUIRED_COLUMNS]

    @property
    def silo_ids(self) -> list[str]:
        return sorted(self.frame["silo_id"].unique())

    @property
    def periods(self) -> list[int]:
        return sorted(int(p) for p in self.frame["period"].unique())

    @property
    def silo_id(self) -> str:
        """The single silo this table belongs to."""
        ids = self.silo_ids
        if len(ids) != 1:
            raise MalformedRow(f"expected micro-data from exactly one silo, found {len(ids)}: {ids}")
        return ids[0]

    def __len__(self) -> int:
        return len(self.frame)

    def for_silo(self, silo_id: str) -> PanelTable:
        sub = self.frame[self.frame["silo_id"] == silo_id]
        if sub.empty:
            raise EmptyCell(f"no rows for silo {silo_id!r}")
        # drop covariate columns that are entirely absent in this silo (schemas differ by silo)
        keep = [c for c in sub.columns if c in REQUIRED_COLUMNS or sub[c].notna().any()]
        return PanelTable(sub[keep])

    def restrict_periods(self, periods: Iterable[int]) -> PanelTable:
        return PanelTable(self.frame[self.frame["period"].isin(list(periods))])

    def require_covariates(self, covariates: Sequence[str]) -> None:
        missing = [c for c in covariates if c not in self.frame.columns]
        if missing:
            raise MissingCovariate(
                f"covariate(s) not present in silo data: {', '.join(missing)} "
                f"(available: {', '.join(self.covariate_names) or 'none'})"
            )


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def read_panel_csv(path: str | Path) -> PanelTable:
    """Read a micro-data CSV, reporting bad cells with their line numbers."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.ParserError as exc:
        raise MalformedRow(f"{path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise MalformedRow(f"{path}: not valid UTF-8 ({exc})") from exc

    missing = [c for c in REQUIRED_COLUMNS if c not in frame.columns]
    if missing:
        raise MalformedRow(f"{path}: missing required column(s): {', '.join(missing)}", line=1)

    for col in ("unit_id", "silo_id"):
        blank = frame[col].str.strip() == ""
        if blank.any():
            raise MalformedRow(f"{path}: empty value", line=_line(blank), column=col)

    period = pd.to_numeric(frame["period"], errors="coerce")
    bad = period.isna() | (period != period.round())
    if bad.any():
        raise MalformedRow(
            f"{path}: period must be an integer, got {frame['period'][bad].iloc[0]!r}",
            line=_line(bad), column="period",
        )
    outcome = pd.to_numeric(frame["outcome"], errors="coerce")
    bad = outcome.isna() | ~np.isfinite(outcome.fillna(0.0))
    if bad.any():
        raise MalformedRow(
            f"{path}: outcome must be a finite number, got {frame['outcome'][bad].iloc[0]!r}",
            line=_line(bad), column="outcome",
        )

    out = pd.DataFrame({
        "unit_id": frame["unit_id"],
        "silo_id": frame["silo_id"],
        "period": period.astype(np.int64),
        "outcome": outcome.astype(np.float64),
    })
    for col in frame.columns:
        if col in REQUIRED_COLUMNS:
            continue
        raw = frame[col].str.strip()
        present = raw != ""
        numeric = pd.to_numeric(raw.where(present), errors="coerce")
        if numeric[present].notna().all():
            out[col] = numeric.astype(np.float64)
        else:
            out[col] = raw.where(present, None)
            logger.debug("Covariate %s treated as categorical", col)

    logger.info("Read %d row(s) from %s", len(out), path)
    return PanelTable(out)


def _line(mask: pd.Series) -> int:
    """1-based file line of the first True row (header is line 1)."""
    return int(np.flatnonzero(mask.to_numpy())[0]) + 2
