"""Files that cross a silo boundary.

* Diff files (``undid-diff-1``): CSV, UTF-8, one ``DiffRecord`` per row.
  Reals are written as the shortest decimal that round-trips (``repr``),
  so ``parse_diffs(export_diffs(r)) == r`` exactly.  Unknown extra columns
  are accepted with a warning.
* Treatment schedules: YAML ``{periods: [...], silos: {id: period | never}}``.
* Silo task manifests (``undid-manifest-1``): YAML listing the blocks one
  silo must compute, written by ``init`` and consumed by ``silo``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import yaml

from .errors import (
    BadSchedule,
    DuplicateKey,
    InputError,
    MalformedRow,
    SchemaVersionMismatch,
)
from .models import (
    AdoptionMode,
    BasePeriodRule,
    BlockTask,
    ControlGroup,
    DiffRecord,
    TreatmentSchedule,
)

logger = logging.getLogger(__name__)

DIFF_SCHEMA_VERSION = "undid-diff-1"
MANIFEST_SCHEMA_VERSION = "undid-manifest-1"
DIFF_COLUMNS = (
    "schema_version", "silo_id", "d", "h", "t", "diff", "se", "weight", "n", "covariates_used",
)
NEVER_TOKENS = ("never", "inf", "")


# ---------------------------------------------------------------------------
# Diff files
# ---------------------------------------------------------------------------

def _check_unique(records: Iterable[DiffRecord], source: str = "") -> None:
    seen: set[tuple[str, int, int]] = set()
    for r in records:
        if r.key in seen:
            raise DuplicateKey(f"{source}duplicate record for (silo_id, h, t) = {r.key}")
        seen.add(r.key)


def export_diffs(
    records: Sequence[DiffRecord], destination: str | Path, allow_empty: bool = False
) -> None:
    """Write *records* as an ``undid-diff-1`` CSV.

    ``allow_empty`` writes a header-only file (a silo whose every block was
    skipped still hands back a well-formed file).
    """
    if not records and not allow_empty:
        raise InputError("refusing to export an empty diff table")
    _check_unique(records)
    path = Path(destination)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(DIFF_COLUMNS)
        for r in records:
            writer.writerow([
                DIFF_SCHEMA_VERSION,
                r.silo_id,
                r.d,
                r.h,
                r.t,
                repr(float(r.diff)),
                repr(float(r.se)),
                repr(float(r.weight)),
                r.n,
                ";".join(r.covariates_used),
            ])
    logger.info("Exported %d diff record(s) -> %s", len(records), path)


def _parse_int(raw: str, line: int, column: str) -> int:
    try:
        return int(raw.strip())
    except ValueError:
        raise MalformedRow(f"expected an integer, got {raw!r}", line=line, column=column) from None


def _parse_float(raw: str, line: int, column: str) -> float:
    try:
        return float(raw.strip())
    except ValueError:
        raise MalformedRow(f"expected a number, got {raw!r}", line=line, column=column) from None


def parse_diffs(source: str | Path) -> list[DiffRecord]:
    """Read an ``undid-diff-1`` CSV back into records.

    Raises:
        MalformedRow: bad header, wrong field count, unparsable or invalid values.
        SchemaVersionMismatch: a row declares another schema version.
        DuplicateKey: the same (silo_id, h, t) appears twice.
    """
    path = Path(source)
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise MalformedRow(f"{path}: file is empty", line=1)

    header = [h.strip() for h in rows[0]]
    missing = [c for c in DIFF_COLUMNS if c not in header]
    if missing:
        raise MalformedRow(f"{path}: header is missing column(s) {', '.join(missing)}", line=1)
    extra = [c for c in header if c not in DIFF_COLUMNS]
    if extra:
        logger.warning("%s: ignoring unknown column(s) %s", path, ", ".join(extra))
    idx = {name: header.index(name) for name in DIFF_COLUMNS}

    records: list[DiffRecord] = []
    seen: dict[tuple[str, int, int], int] = {}
    for line, row in enumerate(rows[1:], start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise MalformedRow(
                f"{path}: expected {len(header)} field(s), got {len(row)}", line=line
            )
        version = row[idx["schema_version"]].strip()
        if version != DIFF_SCHEMA_VERSION:
            raise SchemaVersionMismatch(
                f"{path}: line {line}: schema version {version!r}, expected {DIFF_SCHEMA_VERSION!r}"
            )
        covs = row[idx["covariates_used"]].strip()
        try:
            record = DiffRecord(
                silo_id=row[idx["silo_id"]].strip(),
                d=_parse_int(row[idx["d"]], line, "d"),
                h=_parse_int(row[idx["h"]], line, "h"),
                t=_parse_int(row[idx["t"]], line, "t"),
                diff=_parse_float(row[idx["diff"]], line, "diff"),
                se=_parse_float(row[idx["se"]], line, "se"),
                weight=_parse_float(row[idx["weight"]], line, "weight"),
                n=_parse_int(row[idx["n"]], line, "n"),
                covariates_used=tuple(covs.split(";")) if covs else (),
            )
        except MalformedRow as exc:
            if exc.line is not None:
                raise
            raise MalformedRow(
                f"{path}: {exc.detail}", line=line, column=exc.column
            ) from None
        if record.key in seen:
            raise DuplicateKey(
                f"{path}: line {line}: (silo_id, h, t) = {record.key} already on line {seen[record.key]}"
            )
        seen[record.key] = line
        records.append(record)

    logger.info("Parsed %d diff record(s) from %s", len(records), path)
    return records


def parse_many(sources: Iterable[str | Path]) -> list[DiffRecord]:
    """Parse several diff files and check keys are unique across all of them."""
    records: list[DiffRecord] = []
    for src in sources:
        records.extend(parse_diffs(src))
    _check_unique(records, source="across input files: ")
    return records


# ---------------------------------------------------------------------------
# Treatment schedules
# ---------------------------------------------------------------------------

def _parse_periods(raw) -> Optional[tuple[int, ...]]:
    if raw is None:
        return None
    if isinstance(raw, str):
        try:
            lo, hi = (int(x) for x in raw.split("-", 1))
        except ValueError:
            raise BadSchedule(f"periods must be a list or 'first-last', got {raw!r}") from None
        return tuple(range(lo, hi + 1))
    try:
        return tuple(int(p) for p in raw)
    except (TypeError, ValueError):
        raise BadSchedule(f"periods must be integers, got {raw!r}") from None


def read_schedule(path: str | Path) -> TreatmentSchedule:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise BadSchedule(f"{path}: cannot read schedule ({exc})") from exc
    if not isinstance(raw, dict) or not isinstance(raw.get("silos"), dict) or not raw["silos"]:
        raise BadSchedule(f"{path}: expected a mapping with a non-empty 'silos' section")

    first_treated: dict[str, Optional[int]] = {}
    errors: list[str] = []
    for silo, g in raw["silos"].items():
        silo = str(silo)
        if g is None or (isinstance(g, str) and g.strip().lower() in NEVER_TOKENS):
            first_treated[silo] = None
        elif isinstance(g, int) and not isinstance(g, bool):
            first_treated[silo] = g
        else:
            errors.append(f"silo {silo!r}: first treated period must be an integer or 'never', got {g!r}")
    if errors:
        raise BadSchedule(f"{path}: " + "; ".join(errors))
    return TreatmentSchedule(first_treated, _parse_periods(raw.get("periods")))


def write_schedule(schedule: TreatmentSchedule, path: str | Path) -> None:
    doc = {
        "periods": list(schedule.periods) if schedule.periods is not None else None,
        "silos": {s: ("never" if g is None else int(g)) for s, g in schedule.first_treated.items()},
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(doc, f, sort_keys=False)


# ---------------------------------------------------------------------------
# Silo task manifests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SiloManifest:
    silo_id: str
    mode: AdoptionMode
    control_group: ControlGroup
    base_period_rule: BasePeriodRule
    blocks: tuple[BlockTask, ...]
    covariates: tuple[str, ...] = field(default=())


def write_manifest(manifest: SiloManifest, path: str | Path) -> None:
    doc = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "silo_id": manifest.silo_id,
        "mode": manifest.mode.value,
        "control_group": manifest.control_group.value,
        "base_period_rule": manifest.base_period_rule.value,
        "covariates": list(manifest.covariates),
        "blocks": [
            {"d": b.d, "h": b.h, "t": b.t, "pre": list(b.pre_periods), "post": list(b.post_periods)}
            for b in manifest.blocks
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(doc, f, sort_keys=False)
    logger.info("Wrote manifest for silo %s (%d block(s)) -> %s", manifest.silo_id, len(manifest.blocks), path)


def read_manifest(path: str | Path) -> SiloManifest:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise BadSchedule(f"{path}: cannot read manifest ({exc})") from exc
    if not isinstance(raw, dict):
        raise BadSchedule(f"{path}: manifest must be a YAML mapping, got {type(raw).__name__}")
    version = raw.get("schema_version")
    if version != MANIFEST_SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"{path}: manifest schema {version!r}, expected {MANIFEST_SCHEMA_VERSION!r}"
        )
    try:
        blocks = tuple(
            BlockTask(
                d=int(b["d"]), h=int(b["h"]), t=int(b["t"]),
                pre_periods=tuple(int(p) for p in b["pre"]),
                post_periods=tuple(int(p) for p in b["post"]),
            )
            for b in raw.get("blocks") or []
        )
        return SiloManifest(
            silo_id=str(raw["silo_id"]),
            mode=AdoptionMode(raw.get("mode", "AUTO")),
            control_group=ControlGroup(raw.get("control_group", "NOT_YET_TREATED")),
            base_period_rule=BasePeriodRule(raw.get("base_period_rule", "VARYING")),
            blocks=blocks,
            covariates=tuple(raw.get("covariates") or ()),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise BadSchedule(f"{path}: malformed manifest ({exc})") from exc
