"""Result files and rich console tables.

Results CSV (coordinator and oracle output share it)::

    label,att,se_analytic,se_jackknife,p_randomization,n_treated_records,n_control_records

Optional fields are left blank.  ``write_results`` also writes
``<out>.meta.json`` with the run's settings and diagnostics.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path
from typing import Iterable, Optional, Sequence

import pandas as pd
from rich import box
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from .models import AttEstimate, DiffRecord, SkippedBlock

logger = logging.getLogger(__name__)

RESULT_COLUMNS = (
    "label", "att", "se_analytic", "se_jackknife", "p_randomization",
    "n_treated_records", "n_control_records",
)


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

def _cell(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def meta_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def write_results(rows: Sequence[AttEstimate], path: str | Path, metadata: Optional[dict] = None) -> None:
    """Write the results CSV and, if given, its metadata sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for r in rows:
            writer.writerow([
                r.label,
                _cell(r.att),
                _cell(r.se_analytic),
                _cell(r.se_jackknife),
                _cell(r.p_randomization),
                r.n_treated_records,
                r.n_control_records,
            ])
    logger.info("Wrote %d result row(s) -> %s", len(rows), path)
    if metadata is not None:
        with open(meta_path(path), "w", encoding="utf-8") as f:
            json.dump(metadata, f, indent=2, sort_keys=True, default=str)
            f.write("\n")


def read_results(path: str | Path) -> pd.DataFrame:
    return pd.read_csv(path, dtype={"label": str})


# ---------------------------------------------------------------------------
# Console tables
# ---------------------------------------------------------------------------

def _fmt(value: Optional[float], spec: str = ".6g") -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-"
    return format(value, spec)


def results_table(rows: Iterable[AttEstimate], title: str = "ATT estimates") -> Table:
    table = Table(box=box.ROUNDED, title=title, title_style="bold")
    table.add_column("Estimate", style="bold cyan")
    table.add_column("ATT", justify="right")
    table.add_column("SE", justify="right")
    table.add_column("SE (jackknife)", justify="right")
    table.add_column("p (RI)", justify="right")
    table.add_column("Treated", justify="right")
    table.add_column("Control", justify="right")
    for r in rows:
        label = f"[bold]{r.label}[/]" if r.cohort is None else r.label
        table.add_row(
            label,
            _fmt(r.att),
            _fmt(r.se_analytic),
            _fmt(r.se_jackknife),
            _fmt(r.p_randomization, ".4f"),
            str(r.n_treated_records),
            str(r.n_control_records),
        )
    return table


def diff_table(records: Iterable[DiffRecord], skipped: Iterable[SkippedBlock] = ()) -> Table:
    table = Table(box=box.ROUNDED, title="Silo diffs", title_style="bold")
    for name in ("Silo", "d", "h", "t", "diff", "SE", "n"):
        table.add_column(name, justify="left" if name == "Silo" else "right")
    for r in records:
        table.add_row(r.silo_id, str(r.d), str(r.h), str(r.t), _fmt(r.diff), _fmt(r.se), str(r.n))
    for s in skipped:
        table.add_row(s.silo_id, "-", str(s.h), str(s.t), "[yellow]SKIPPED[/]", "-", "-")
    return table


def summary_panel(summary: dict, title: str = "Simulation summary") -> Panel:
    lines = []
    for key in sorted(summary):
        value = summary[key]
        text = _fmt(value) if isinstance(value, float) else str(value)
        lines.append(f"{key:<40} {text}")
    return Panel("\n".join(lines), title=title, box=box.ROUNDED)


def sweep_table(frame: pd.DataFrame) -> Table:
    table = Table(box=box.ROUNDED, title="SE accuracy by sample size", title_style="bold")
    for col in frame.columns:
        table.add_column(col, justify="right")
    for _, row in frame.iterrows():
        table.add_row(*(str(int(v)) if c == "n_total" else _fmt(float(v)) for c, v in row.items()))
    return table


def print_renderable(renderable, console: Optional[Console] = None) -> None:
    (console or Console()).print(renderable)
