"""Command-line front end.

The siloed workflow is staged so no step ever holds two silos' micro-data:

    python -m src init SCHEDULE.yaml --out manifests/
    python -m src silo silo_a.csv --manifest manifests/silo_a.manifest.yaml --out diffs/silo_a.csv
    python -m src aggregate diffs/*.csv --scheme simple --jackknife --out results.csv

plus two checking suites that do need pooled data:

    python -m src oracle pooled.csv --schedule SCHEDULE.yaml --out oracle.csv
    python -m src simulate spec.json --out reps.csv

Exit codes: 0 success (SKIPPED diagnostics allowed), 2 input error,
3 estimation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import pandas as pd

from . import report
from .config import SCHEME_NAMES, AppConfig, SimulationConfig, load_config
from .coordinator import estimate
from .errors import InputError, InvalidScheme, InvalidSpec, UndidError
from .exchange import (
    SiloManifest,
    export_diffs,
    parse_many,
    read_manifest,
    read_schedule,
    write_manifest,
)
from .logging_config import set_log_context, setup_logging
from .models import (
    AdoptionMode,
    AggregationScheme,
    AttEstimate,
    BasePeriodRule,
    ControlGroup,
    HcVariant,
    Weighting,
)
from .montecarlo import DgpSpec, run_experiment
from .panel import read_panel_csv
from .pooled_oracle import fit_conventional_did, fit_did_int
from .silo_stage import plan_blocks, resolve_mode, run_blocks

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    """Config file/env values merged with command-line flags."""
    subcommand: str
    inputs: list[Path]
    out: Path
    covariates: list[str] = field(default_factory=list)
    scheme: str = "simple"
    hc: HcVariant = HcVariant.HC1
    seed: Optional[int] = None
    n_permutations: int = 0
    base_period_rule: BasePeriodRule = BasePeriodRule.VARYING
    jackknife: bool = False
    weighting: Weighting = Weighting.BY_N
    control_group: ControlGroup = ControlGroup.NOT_YET_TREATED
    adoption_mode: AdoptionMode = AdoptionMode.AUTO
    all_blocks: bool = False
    silos: list[str] = field(default_factory=list)
    manifest: Optional[Path] = None
    schedule: Optional[Path] = None
    weights: Optional[Path] = None
    replications: Optional[int] = None
    workers: Optional[int] = None

    def validate(self) -> None:
        """Check inputs exist and flag combinations make sense, before any work."""
        errors: list[str] = []
        for path in [*self.inputs, self.manifest, self.schedule, self.weights]:
            if path is not None and not path.is_file():
                errors.append(f"input file not found: {path}")
        if self.scheme not in SCHEME_NAMES:
            errors.append(f"unknown scheme {self.scheme!r}; choose from {', '.join(SCHEME_NAMES)}")
        if self.n_permutations < 0:
            errors.append("--ri must be >= 0")
        if self.n_permutations and self.seed is None:
            errors.append("--ri needs an explicit --seed")
        if self.subcommand == "silo" and self.manifest is None:
            errors.append("silo needs --manifest")
        if self.subcommand == "oracle" and self.schedule is None:
            errors.append("oracle needs --schedule")
        if self.weights is not None and self.scheme != "weighted":
            errors.append("--weights only applies to --scheme weighted")
        if errors:
            raise InputError("; ".join(errors))


def build_run_config(args: argparse.Namespace, config: AppConfig) -> RunConfig:
    est, inf = config.estimation, config.inference
    inputs = [Path(p) for p in getattr(args, "inputs", [])]

    def pick(flag, fallback):
        return fallback if flag is None else flag

    covariates = (
        [c.strip() for c in args.covariates.split(",") if c.strip()]
        if getattr(args, "covariates", None) is not None
        else list(est.covariates)
    )
    run = RunConfig(
        subcommand=args.command,
        inputs=inputs,
        out=Path(args.out),
        covariates=covariates,
        scheme=pick(getattr(args, "scheme", None), inf.scheme),
        hc=HcVariant(args.hc) if getattr(args, "hc", None) else est.hc,
        seed=pick(getattr(args, "seed", None), inf.seed),
        n_permutations=pick(getattr(args, "ri", None), inf.n_permutations),
        base_period_rule=(
            BasePeriodRule(args.base_rule.upper()) if getattr(args, "base_rule", None) else est.base_period_rule
        ),
        jackknife=bool(getattr(args, "jackknife", False)) or inf.jackknife,
        weighting=Weighting(args.weighting.upper()) if getattr(args, "weighting", None) else est.weighting,
        control_group=(
            ControlGroup(args.control_group.upper())
            if getattr(args, "control_group", None) else est.control_group
        ),
        adoption_mode=AdoptionMode(args.mode.upper()) if getattr(args, "mode", None) else est.adoption_mode,
        all_blocks=bool(getattr(args, "all_blocks", False)),
        silos=[s.strip() for s in (getattr(args, "silos", None) or "").split(",") if s.strip()],
        manifest=Path(args.manifest) if getattr(args, "manifest", None) else None,
        schedule=Path(args.schedule) if getattr(args, "schedule", None) else None,
        weights=Path(args.weights) if getattr(args, "weights", None) else None,
        replications=getattr(args, "replications", None),
        workers=getattr(args, "workers", None),
    )
    run.validate()
    return run


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_init(run: RunConfig) -> list[Path]:
    """Write one task manifest per silo listing the blocks it must compute."""
    schedule = read_schedule(run.inputs[0])
    plan = plan_blocks(
        schedule, run.adoption_mode, run.control_group, run.base_period_rule, run.all_blocks
    )
    silos = run.silos or schedule.silos
    unknown = [s for s in silos if s not in plan]
    if unknown:
        raise InputError(f"silo(s) not in the schedule: {', '.join(unknown)}")

    mode = resolve_mode(schedule, run.adoption_mode)
    written = []
    for silo in silos:
        manifest = SiloManifest(
            silo_id=silo,
            mode=mode,
            control_group=run.control_group,
            base_period_rule=run.base_period_rule,
            blocks=tuple(plan[silo]),
            covariates=tuple(run.covariates),
        )
        path = run.out / f"{silo}.manifest.yaml"
        write_manifest(manifest, path)
        if not manifest.blocks:
            logger.warning("Silo %s has no blocks to compute", silo)
        written.append(path)
    logger.info("Wrote %d manifest(s) to %s", len(written), run.out)
    return written


def cmd_silo(run: RunConfig) -> Path:
    """Run one silo's blocks on its own micro-data and export the diffs."""
    manifest = read_manifest(run.manifest)
    data = read_panel_csv(run.inputs[0])
    silo_id = data.silo_id
    if silo_id != manifest.silo_id:
        raise InputError(f"micro-data belongs to silo {silo_id!r}, manifest is for {manifest.silo_id!r}")
    set_log_context(f"silo:{silo_id}")
    covariates = run.covariates or list(manifest.covariates)
    table = run_blocks(data, manifest.blocks, covariates, run.hc)
    export_diffs(table.records, run.out, allow_empty=True)
    report.print_renderable(report.diff_table(table.records, table.skipped))
    if table.skipped:
        logger.warning("Silo %s: %d block(s) SKIPPED", silo_id, len(table.skipped))
    return run.out


def _read_weights(path: Path) -> dict[tuple[int, int], float]:
    frame = pd.read_csv(path)
    missing = [c for c in ("h", "t", "weight") if c not in frame.columns]
    if missing:
        raise InvalidScheme(f"{path}: weights file needs columns h,t,weight (missing {', '.join(missing)})")
    weights: dict[tuple[int, int], float] = {}
    for line, r in enumerate(frame.itertuples(index=False), start=2):
        try:
            weights[(int(r.h), int(r.t))] = float(r.weight)
        except (TypeError, ValueError):
            raise InvalidScheme(
                f"{path}:{line}: h and t must be integers and weight a number, got {r.h!r}, {r.t!r}, {r.weight!r}"
            ) from None
    return weights


def cmd_aggregate(run: RunConfig):
    """Combine diff files into ATT(s, t) cells, an aggregate and inference."""
    records = parse_many(run.inputs)
    scheme = AggregationScheme(
        SCHEME_NAMES[run.scheme], _read_weights(run.weights) if run.weights else None
    )
    result = estimate(
        records,
        scheme=scheme,
        weighting=run.weighting,
        jackknife=run.jackknife,
        n_permutations=run.n_permutations,
        seed=run.seed,
    )
    metadata = {**result.metadata, "inputs": [str(p) for p in run.inputs]}
    report.write_results(result.rows, run.out, metadata)
    report.print_renderable(report.results_table(result.rows))
    return result


def cmd_oracle(run: RunConfig) -> list[AttEstimate]:
    """Pooled conventional DID and DID-INT on a poolable fixture."""
    pooled = read_panel_csv(run.inputs[0])
    schedule = read_schedule(run.schedule)
    conv = fit_conventional_did(pooled, schedule, run.covariates, run.hc)
    didint = fit_did_int(pooled, schedule, run.covariates, run.hc)
    n_treated = sum(1 for s in pooled.silo_ids if schedule.is_treated(s))
    n_control = len(pooled.silo_ids) - n_treated
    rows = [
        AttEstimate("pooled:conventional", conv.att, conv.se, n_treated, n_control),
        AttEstimate("pooled:did_int", didint.att, didint.se, n_treated, n_control),
    ]
    metadata = {
        "inputs": [str(run.inputs[0]), str(run.schedule)],
        "covariates": run.covariates,
        "hc": run.hc.value,
        "n": conv.n,
        "beta": conv.beta,
        "psi": didint.psi,
    }
    report.write_results(rows, run.out, metadata)
    report.print_renderable(report.results_table(rows, title="Pooled oracles"))
    return rows


def cmd_simulate(run: RunConfig, sim: SimulationConfig):
    """Run a Monte Carlo spec (JSON) and write per-replication rows + summary."""
    path = run.inputs[0]
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidSpec(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise InvalidSpec(f"{path}: simulation spec must be a JSON object")
    if run.seed is not None:
        raw["seed"] = run.seed
    if "seed" not in raw:
        raise InvalidSpec("simulation needs an explicit seed (spec 'seed' or --seed)")
    raw.setdefault("true_se_form", sim.true_se_form.value)
    spec = DgpSpec.from_dict(raw)
    replications = run.replications or int(raw.get("replications", sim.replications))
    workers = run.workers or int(raw.get("workers", sim.workers))
    estimators = raw.get("estimators") or ("undid", "pooled", "didint")

    result = run_experiment(spec, replications, estimators, workers=workers)
    result.write_csv(run.out)
    result.write_summary(run.out.with_name(run.out.name + ".summary.json"))
    report.print_renderable(report.summary_panel(result.summary, title=f"{spec.case.value} summary"))
    return result


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="python -m src",
        description="Difference-in-differences across data silos that cannot be pooled.",
    )
    parser.add_argument("--config", default="config.yaml", help="YAML config (optional)")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--out", required=True, help="Output path")
        p.add_argument("--covariates", default=None, help="Comma-separated covariate names")
        p.add_argument("--hc", choices=[h.value for h in HcVariant], type=str.upper, default=None)

    p = sub.add_parser("init", help="Write per-silo task manifests from a treatment schedule")
    p.add_argument("inputs", nargs=1, metavar="SCHEDULE")
    common(p)
    p.add_argument("--silos", default=None, help="Comma-separated subset of silos")
    p.add_argument("--control-group", choices=[c.value.lower() for c in ControlGroup], type=str.lower)
    p.add_argument("--mode", choices=[m.value.lower() for m in AdoptionMode], type=str.lower)
    p.add_argument("--base-rule", choices=["varying"], type=str.lower)
    p.add_argument("--all-blocks", action="store_true",
                   help="Every silo computes every block (needed for staggered RI)")

    p = sub.add_parser("silo", help="Compute one silo's diffs from its micro-data")
    p.add_argument("inputs", nargs=1, metavar="DATA_CSV")
    common(p)
    p.add_argument("--manifest", required=True)

    p = sub.add_parser("aggregate", help="Combine diff files into ATT estimates")
    p.add_argument("inputs", nargs="+", metavar="DIFF_CSV")
    common(p)
    p.add_argument("--scheme", choices=list(SCHEME_NAMES), default=None)
    p.add_argument("--weights", default=None, help="CSV of h,t,weight for --scheme weighted")
    p.add_argument("--weighting", choices=[w.value.lower() for w in Weighting], type=str.lower)
    p.add_argument("--jackknife", action="store_true")
    p.add_argument("--ri", type=int, default=None, metavar="N", help="Randomization-inference draws")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("oracle", help="Pooled DID and DID-INT on poolable data")
    p.add_argument("inputs", nargs=1, metavar="POOLED_CSV")
    common(p)
    p.add_argument("--schedule", required=True)

    p = sub.add_parser("simulate", help="Run a Monte Carlo spec")
    p.add_argument("inputs", nargs=1, metavar="SPEC_JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--replications", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    setup_logging(
        level=args.log_level or config.logging.level,
        log_file=config.logging.file,
        context=args.command,
    )

    try:
        run = build_run_config(args, config)
        if run.subcommand == "init":
            cmd_init(run)
        elif run.subcommand == "silo":
            cmd_silo(run)
        elif run.subcommand == "aggregate":
            cmd_aggregate(run)
        elif run.subcommand == "oracle":
            cmd_oracle(run)
        elif run.subcommand == "simulate":
            cmd_simulate(run, config.simulation)
    except UndidError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    except OSError as exc:
        logger.error("I/O error: %s", exc)
        return InputError.exit_code
    return 0
