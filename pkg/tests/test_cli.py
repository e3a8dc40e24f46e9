"""End-to-end tests of the staged command-line workflow."""

import json

import pandas as pd
import pytest

from conftest import make_diff_records
from src.cli import build_parser, main
from src.exchange import export_diffs, parse_diffs, read_manifest, write_schedule
from src.models import TreatmentSchedule
from src.montecarlo import DgpCase, DgpSpec, generate_panel
from src.report import meta_path, read_results


@pytest.fixture(autouse=True)
def _isolated(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    for key in ("UNDID_SEED", "UNDID_RI", "UNDID_SCHEME", "UNDID_COVARIATES", "LOG_FILE", "LOG_LEVEL"):
        monkeypatch.delenv(key, raising=False)


def _write_silo_csvs(panel, directory):
    directory.mkdir(exist_ok=True)
    paths = {}
    for silo, table in panel.silos.items():
        paths[silo] = directory / f"{silo}.csv"
        table.frame.to_csv(paths[silo], index=False)
    return paths


def _run_siloed(tmp_path, silo_csvs, schedule_path, extra=()):
    assert main(["init", str(schedule_path), "--out", str(tmp_path / "manifests"), *extra]) == 0
    diffs = []
    for silo, csv_path in silo_csvs.items():
        out = tmp_path / "diffs" / f"{silo}.csv"
        manifest = tmp_path / "manifests" / f"{silo}.manifest.yaml"
        assert main(["silo", str(csv_path), "--manifest", str(manifest), "--out", str(out)]) == 0
        diffs.append(str(out))
    return diffs


@pytest.fixture
def common_fixture(tmp_path):
    spec = DgpSpec(case=DgpCase.TVAR_CCC_HELD, n_total=1000, n_silos=4, n_treated_silos=2, seed=100)
    panel = generate_panel(spec)
    schedule_path = tmp_path / "schedule.yaml"
    write_schedule(spec.schedule(), schedule_path)
    pooled_path = tmp_path / "pooled.csv"
    panel.pooled.frame.to_csv(pooled_path, index=False)
    silo_csvs = _write_silo_csvs(panel, tmp_path / "silos")
    return schedule_path, pooled_path, silo_csvs


class TestWorkflow:
    def test_siloed_workflow_reproduces_pooled_oracle(self, tmp_path, common_fixture):
        schedule_path, pooled_path, silo_csvs = common_fixture
        diffs = _run_siloed(tmp_path, silo_csvs, schedule_path)
        assert main(["aggregate", *diffs, "--out", "results.csv"]) == 0
        assert main(["oracle", str(pooled_path), "--schedule", str(schedule_path), "--out", "oracle.csv"]) == 0

        results = read_results(tmp_path / "results.csv").set_index("label")
        oracle = read_results(tmp_path / "oracle.csv").set_index("label")
        assert results.loc["aggregate:simple", "att"] == pytest.approx(
            oracle.loc["pooled:conventional", "att"], abs=1e-10
        )
        meta = json.loads(meta_path(tmp_path / "results.csv").read_text())
        assert meta["scheme"] == "simple"
        assert len(meta["inputs"]) == 4

    def test_covariates_match_did_int(self, tmp_path, common_fixture):
        schedule_path, pooled_path, silo_csvs = common_fixture
        diffs = _run_siloed(tmp_path, silo_csvs, schedule_path, extra=("--covariates", "age"))
        assert parse_diffs(diffs[0])[0].covariates_used == ("age",)
        assert main(["aggregate", *diffs, "--out", "results.csv"]) == 0
        assert main([
            "oracle", str(pooled_path), "--schedule", str(schedule_path),
            "--covariates", "age", "--out", "oracle.csv",
        ]) == 0
        results = read_results(tmp_path / "results.csv").set_index("label")
        oracle = read_results(tmp_path / "oracle.csv").set_index("label")
        assert results.loc["aggregate:simple", "att"] == pytest.approx(
            oracle.loc["pooled:did_int", "att"], abs=1e-10
        )

    def test_inference_flags(self, tmp_path, common_fixture):
        schedule_path, _, silo_csvs = common_fixture
        diffs = _run_siloed(tmp_path, silo_csvs, schedule_path)
        code = main(["aggregate", *diffs, "--jackknife", "--ri", "100", "--seed", "5", "--out", "r.csv"])
        assert code == 0
        row = read_results(tmp_path / "r.csv").set_index("label").loc["aggregate:simple"]
        assert row["se_jackknife"] > 0
        # 4 silos, 2 treated: 6 assignments, enumerated exactly
        assert row["p_randomization"] * 6 == pytest.approx(round(row["p_randomization"] * 6))

    def test_staggered_with_skipped_block(self, tmp_path, staggered):
        schedule_path = tmp_path / "schedule.yaml"
        write_schedule(staggered.schedule, schedule_path)
        silo_csvs = {}
        for silo, panel in staggered.panels.items():
            frame = panel.frame
            if silo == "C":
                frame = frame[frame["period"] != 3]
            silo_csvs[silo] = tmp_path / f"{silo}.csv"
            frame.to_csv(silo_csvs[silo], index=False)

        diffs = _run_siloed(tmp_path, silo_csvs, schedule_path)
        assert [(r.h, r.t) for r in parse_diffs(tmp_path / "diffs" / "C.csv")] == [(2, 2)]
        assert main(["aggregate", *diffs, "--scheme", "group", "--out", "results.csv"]) == 0
        labels = read_results(tmp_path / "results.csv")["label"].tolist()
        assert labels == ["ATT(s=2,t=2)", "aggregate:group"]
        meta = json.loads(meta_path(tmp_path / "results.csv").read_text())
        assert len(meta["skipped_cells"]) == 2

    def test_init_writes_manifest_per_silo(self, tmp_path, staggered):
        schedule_path = tmp_path / "schedule.yaml"
        write_schedule(staggered.schedule, schedule_path)
        assert main(["init", str(schedule_path), "--out", "m", "--control-group", "never_treated"]) == 0
        manifest = read_manifest(tmp_path / "m" / "C.manifest.yaml")
        assert [(b.h, b.t) for b in manifest.blocks] == [(2, 2), (2, 3), (3, 3)]

    def test_weighted_scheme_with_weights_file(self, tmp_path, common_fixture):
        schedule_path, _, silo_csvs = common_fixture
        diffs = _run_siloed(tmp_path, silo_csvs, schedule_path)
        pd.DataFrame({"h": [2005], "t": [2005], "weight": [1.0]}).to_csv("w.csv", index=False)
        code = main(["aggregate", *diffs, "--scheme", "weighted", "--weights", "w.csv", "--out", "r.csv"])
        assert code == 0
        labels = read_results(tmp_path / "r.csv")["label"].tolist()
        assert labels[-1] == "aggregate:population_weighted"


class TestExitCodes:
    def test_missing_input(self, capsys):
        assert main(["aggregate", "nope.csv", "--out", "r.csv"]) == 2
        assert "input file not found" in capsys.readouterr().err

    def test_ri_without_seed(self, tmp_path):
        (tmp_path / "d.csv").write_text("x\n")
        assert main(["aggregate", "d.csv", "--ri", "10", "--out", "r.csv"]) == 2

    def test_weights_without_weighted_scheme(self, tmp_path):
        (tmp_path / "d.csv").write_text("x\n")
        (tmp_path / "w.csv").write_text("h,t,weight\n")
        assert main(["aggregate", "d.csv", "--weights", "w.csv", "--out", "r.csv"]) == 2

    @pytest.mark.parametrize("row", ["2005,2005,heavy", "x,2005,1.0", ",2005,1.0"])
    def test_non_numeric_weights_file(self, tmp_path, capsys, row):
        export_diffs(make_diff_records([1.0, 2.0], [0.0, 0.5]), tmp_path / "d.csv")
        (tmp_path / "w.csv").write_text(f"h,t,weight\n{row}\n")
        code = main(["aggregate", "d.csv", "--scheme", "weighted", "--weights", "w.csv", "--out", "r.csv"])
        assert code == 2
        assert "w.csv:2" in capsys.readouterr().err

    def test_aggregate_has_no_base_rule_flag(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["aggregate", "d.csv", "--out", "r.csv", "--base-rule", "varying"])

    def test_malformed_diff_file(self, tmp_path):
        (tmp_path / "d.csv").write_text("x\n")
        assert main(["aggregate", "d.csv", "--out", "r.csv"]) == 2

    def test_estimation_error(self, tmp_path):
        export_diffs(make_diff_records([1.0, 2.0], []), tmp_path / "d.csv")
        assert main(["aggregate", "d.csv", "--out", "r.csv"]) == 3

    def test_manifest_for_another_silo(self, tmp_path, staggered):
        schedule_path = tmp_path / "schedule.yaml"
        write_schedule(staggered.schedule, schedule_path)
        assert main(["init", str(schedule_path), "--out", "m"]) == 0
        staggered.panels["A"].frame.to_csv("A.csv", index=False)
        assert main(["silo", "A.csv", "--manifest", "m/B.manifest.yaml", "--out", "d.csv"]) == 2

    def test_init_unknown_silo(self, tmp_path):
        write_schedule(TreatmentSchedule({"T": 2, "C": None}, (1, 2)), tmp_path / "s.yaml")
        assert main(["init", "s.yaml", "--silos", "Z", "--out", "m"]) == 2

    def test_bad_config_file(self, tmp_path):
        (tmp_path / "config.yaml").write_text("inference:\n  scheme: median\n")
        assert main(["aggregate", "x.csv", "--out", "r.csv"]) == 2

    def test_unknown_subcommand(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["frobnicate"])


class TestSimulate:
    def test_writes_rows_and_summary(self, tmp_path):
        (tmp_path / "spec.json").write_text(json.dumps({"case": "NOCOV_EFFECT", "seed": 1, "replications": 3}))
        assert main(["simulate", "spec.json", "--out", "reps.csv"]) == 0
        rows = pd.read_csv(tmp_path / "reps.csv")
        assert rows["rep"].tolist() == [0, 1, 2]
        summary = json.loads((tmp_path / "reps.csv.summary.json").read_text())
        assert summary["summary"]["replications"] == 3
        assert summary["config"]["true_se_form"] == "RESIDUALIZED"

    def test_seed_required(self, tmp_path):
        (tmp_path / "spec.json").write_text(json.dumps({"case": "NOCOV_EFFECT", "replications": 3}))
        assert main(["simulate", "spec.json", "--out", "reps.csv"]) == 2

    def test_unknown_case(self, tmp_path, capsys):
        (tmp_path / "spec.json").write_text(json.dumps({"case": "NOPE", "seed": 1}))
        assert main(["simulate", "spec.json", "--out", "reps.csv"]) == 2
        assert "TVAR_CCC_VIOLATED" in capsys.readouterr().err
