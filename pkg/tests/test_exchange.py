"""Tests for diff files, schedules and manifests."""

import numpy as np
import pytest

from conftest import make_diff_records
from src.errors import BadSchedule, DuplicateKey, InputError, MalformedRow, SchemaVersionMismatch
from src.exchange import (
    DIFF_COLUMNS,
    SiloManifest,
    export_diffs,
    parse_diffs,
    parse_many,
    read_manifest,
    read_schedule,
    write_manifest,
    write_schedule,
)
from src.models import (
    AdoptionMode,
    BasePeriodRule,
    BlockTask,
    ControlGroup,
    DiffRecord,
    TreatmentSchedule,
)

HEADER = ",".join(DIFF_COLUMNS)


def _make_random_records(count, seed):
    rng = np.random.default_rng(seed)
    records = []
    for i in range(count):
        h = int(rng.integers(1990, 2020))
        records.append(DiffRecord(
            silo_id=f"silo-{i}",
            d=int(rng.integers(0, 2)),
            h=h,
            t=h + int(rng.integers(0, 5)),
            diff=float(rng.standard_normal() * 10.0 ** int(rng.integers(-8, 8))),
            se=float(rng.uniform(1e-9, 1e3)),
            weight=float(rng.uniform(1, 1e6)),
            n=int(rng.integers(1, 100000)),
            covariates_used=("age", "female") if i % 3 == 0 else (),
        ))
    return records


class TestDiffFiles:
    def test_round_trip_is_bit_exact(self, tmp_path):
        records = _make_random_records(10_000, seed=30)
        path = tmp_path / "diffs.csv"
        export_diffs(records, path)
        assert parse_diffs(path) == records

    def test_awkward_reals_survive(self, tmp_path):
        records = make_diff_records([0.1 + 0.2, 1e-300], [-5e-324, 123456789.123456789])
        path = tmp_path / "diffs.csv"
        export_diffs(records, path)
        assert [r.diff for r in parse_diffs(path)] == [r.diff for r in records]

    def test_header_and_schema_tag(self, tmp_path):
        path = tmp_path / "diffs.csv"
        export_diffs(make_diff_records([1.0], [0.5]), path)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == HEADER
        assert lines[1].startswith("undid-diff-1,t1,1,2005,2005,")

    def test_empty_export(self, tmp_path):
        with pytest.raises(InputError):
            export_diffs([], tmp_path / "x.csv")
        export_diffs([], tmp_path / "x.csv", allow_empty=True)
        assert parse_diffs(tmp_path / "x.csv") == []

    def test_duplicate_key_on_export(self, tmp_path):
        records = make_diff_records([1.0], [0.5])
        with pytest.raises(DuplicateKey):
            export_diffs(records + records[:1], tmp_path / "x.csv")

    def test_unknown_schema_version(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text(HEADER + "\nundid-diff-9,A,1,2005,2005,0.1,0.1,10.0,10,\n", encoding="utf-8")
        with pytest.raises(SchemaVersionMismatch):
            parse_diffs(path)

    def test_negative_se_reports_line_and_column(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text(
            HEADER + "\n"
            "undid-diff-1,A,1,2005,2005,0.1,0.1,10.0,10,\n"
            "undid-diff-1,B,0,2005,2005,0.1,-0.2,10.0,10,\n",
            encoding="utf-8",
        )
        with pytest.raises(MalformedRow) as exc:
            parse_diffs(path)
        assert exc.value.line == 3
        assert exc.value.column == "se"

    def test_unparsable_number(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text(HEADER + "\nundid-diff-1,A,1,2005,2005,abc,0.1,10.0,10,\n", encoding="utf-8")
        with pytest.raises(MalformedRow) as exc:
            parse_diffs(path)
        assert (exc.value.line, exc.value.column) == (2, "diff")

    def test_t_before_h_rejected(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text(HEADER + "\nundid-diff-1,A,1,2005,2004,0.1,0.1,10.0,10,\n", encoding="utf-8")
        with pytest.raises(MalformedRow):
            parse_diffs(path)

    def test_missing_column(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("schema_version,silo_id,d\n", encoding="utf-8")
        with pytest.raises(MalformedRow, match="missing"):
            parse_diffs(path)

    def test_extra_column_is_warned_and_ignored(self, tmp_path, caplog):
        path = tmp_path / "x.csv"
        path.write_text(
            HEADER + ",note\nundid-diff-1,A,1,2005,2005,0.1,0.1,10.0,10,,hello\n", encoding="utf-8"
        )
        records = parse_diffs(path)
        assert len(records) == 1
        assert "note" in caplog.text

    def test_duplicate_across_files(self, tmp_path):
        records = make_diff_records([1.0], [0.5])
        export_diffs(records, tmp_path / "a.csv")
        export_diffs(records[:1], tmp_path / "b.csv")
        with pytest.raises(DuplicateKey, match="across input files"):
            parse_many([tmp_path / "a.csv", tmp_path / "b.csv"])


class TestSchedules:
    def test_round_trip(self, tmp_path, staggered):
        path = tmp_path / "schedule.yaml"
        write_schedule(staggered.schedule, path)
        back = read_schedule(path)
        assert dict(back.first_treated) == {"A": 2, "B": 3, "C": None}
        assert back.periods == (1, 2, 3)

    def test_period_range_and_never_tokens(self, tmp_path):
        path = tmp_path / "schedule.yaml"
        path.write_text("periods: 2000-2009\nsilos:\n  T: 2005\n  C: never\n  D: inf\n", encoding="utf-8")
        schedule = read_schedule(path)
        assert schedule.periods == tuple(range(2000, 2010))
        assert schedule.first_treated == {"T": 2005, "C": None, "D": None}

    def test_treatment_outside_grid(self, tmp_path):
        path = tmp_path / "schedule.yaml"
        path.write_text("periods: [1, 2]\nsilos:\n  T: 5\n  C: never\n", encoding="utf-8")
        with pytest.raises(BadSchedule):
            read_schedule(path)

    def test_bad_value(self, tmp_path):
        path = tmp_path / "schedule.yaml"
        path.write_text("silos:\n  T: soon\n", encoding="utf-8")
        with pytest.raises(BadSchedule, match="'T'"):
            read_schedule(path)

    def test_no_silos(self, tmp_path):
        path = tmp_path / "schedule.yaml"
        path.write_text("periods: [1, 2]\n", encoding="utf-8")
        with pytest.raises(BadSchedule):
            read_schedule(path)

    def test_boolean_is_not_a_period(self):
        with pytest.raises(BadSchedule):
            TreatmentSchedule({"T": True})


class TestManifests:
    def test_round_trip(self, tmp_path):
        manifest = SiloManifest(
            silo_id="A",
            mode=AdoptionMode.STAGGERED,
            control_group=ControlGroup.NEVER_TREATED,
            base_period_rule=BasePeriodRule.VARYING,
            blocks=(BlockTask(1, 2, 2, (1,), (2,)), BlockTask(1, 2, 3, (1,), (3,))),
            covariates=("age",),
        )
        path = tmp_path / "A.manifest.yaml"
        write_manifest(manifest, path)
        assert read_manifest(path) == manifest

    def test_wrong_schema(self, tmp_path):
        path = tmp_path / "A.manifest.yaml"
        path.write_text("schema_version: other\nsilo_id: A\n", encoding="utf-8")
        with pytest.raises(SchemaVersionMismatch):
            read_manifest(path)

    def test_malformed_block(self, tmp_path):
        path = tmp_path / "A.manifest.yaml"
        path.write_text("schema_version: undid-manifest-1\nsilo_id: A\nblocks:\n  - {d: 1}\n", encoding="utf-8")
        with pytest.raises(BadSchedule):
            read_manifest(path)

    @pytest.mark.parametrize("text", ["- a\n- b\n", "just a string\n", "42\n"])
    def test_document_not_a_mapping(self, tmp_path, text):
        path = tmp_path / "A.manifest.yaml"
        path.write_text(text, encoding="utf-8")
        with pytest.raises(BadSchedule, match="mapping"):
            read_manifest(path)
