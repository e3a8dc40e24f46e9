"""Argument handling of the SE convergence script."""

import pytest

from scripts.se_convergence import build_parser, build_spec
from src.montecarlo import Balance, DgpCase, TrueSeForm


class TestSweepArguments:
    def test_defaults_use_unequal_silos(self):
        spec = build_spec(build_parser().parse_args([]))
        assert spec.balance is Balance.TWO_THIRDS_ONE_THIRD
        assert spec.case is DgpCase.TINV_EFFECT
        assert spec.true_se_form is TrueSeForm.RESIDUALIZED

    def test_balance_flag(self):
        spec = build_spec(build_parser().parse_args(["--balance", "EQUAL", "--case", "NOCOV_NULL"]))
        assert spec.balance is Balance.EQUAL
        assert spec.case is DgpCase.NOCOV_NULL

    def test_unknown_balance(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["--balance", "HALF"])
