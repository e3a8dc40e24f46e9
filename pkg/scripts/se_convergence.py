#!/usr/bin/env python3
"""SE convergence study: how fast do the analytic SEs approach the true SE?

For each sample size n_total we run the two-silo simulation and report
  - MSE of the siloed SE against the true SE
  - MSE of the pooled SE against the true SE
  - MSE between the two analytic SEs
  - correlation of the two analytic SEs across replications

Both MSEs should shrink as n_total grows, and the cross-method MSE should
stay below either one.

Usage:
  python scripts/se_convergence.py
  python scripts/se_convergence.py --case TINV_EFFECT --replications 500 --output sweep.csv
  python scripts/se_convergence.py --sizes 1000,4000,10000,50000 --workers 4
"""

from __future__ import annotations

import argparse
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.config import load_env_file  # noqa: E402
from src.logging_config import setup_logging  # noqa: E402
from src.montecarlo import SWEEP_SIZES, Balance, DgpCase, DgpSpec, TrueSeForm, run_size_sweep  # noqa: E402
from src.report import print_renderable, sweep_table  # noqa: E402


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="MSE of analytic SEs vs. the true SE, by sample size")
    parser.add_argument("--case", default="TINV_EFFECT", choices=list(DgpCase.__members__),
                        help="Simulation case (default: TINV_EFFECT)")
    parser.add_argument("--sizes", default=",".join(str(s) for s in SWEEP_SIZES),
                        help="Comma-separated n_total values")
    parser.add_argument("--balance", default="TWO_THIRDS_ONE_THIRD", choices=list(Balance.__members__),
                        help="Arm sizes (default: control silo holds two thirds of the rows)")
    parser.add_argument("--replications", type=int, default=200)
    parser.add_argument("--seed", type=int, default=20050101)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--true-se", default="RESIDUALIZED", choices=list(TrueSeForm.__members__))
    parser.add_argument("--output", "-o", default=None, help="Write CSV to this path")
    parser.add_argument("--log-level", default="INFO")
    return parser


def build_spec(args: argparse.Namespace) -> DgpSpec:
    return DgpSpec(
        case=DgpCase(args.case),
        balance=Balance(args.balance),
        seed=args.seed,
        true_se_form=TrueSeForm(args.true_se),
    )


def main(argv: list[str] | None = None) -> None:
    args = build_parser().parse_args(argv)

    load_env_file()
    setup_logging(level=args.log_level)

    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    spec = build_spec(args)
    frame = run_size_sweep(spec, sizes, args.replications, workers=args.workers)

    print_renderable(sweep_table(frame))
    if args.output:
        frame.to_csv(args.output, index=False)
        print(f"Wrote {len(frame)} rows to {args.output}")


if __name__ == "__main__":
    main()
