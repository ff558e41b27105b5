"""
Tests for the command-line entry point (src/main.py)

Covers exit codes, the run directory layout, report regeneration from persisted
ledgers, byte-identical reruns and the synth → featurize trace path.
"""

import json

import pandas as pd
import pytest

from src.dataio import load_weekly_csv
from src.main import EXIT_OK, EXIT_USAGE, main
from src.services.report_builder import METRIC_TABLE_COLUMNS
from tests.conftest import fast_run_overrides


def _run_args(weekly_csv, output_dir, *extra):
    argv = ["run"]
    for override in list(fast_run_overrides(weekly_csv, output_dir)) + list(extra):
        argv += ["--set", override]
    return argv


@pytest.mark.unit
class TestExitCodes:
    """Usage and configuration errors exit with 2."""

    def test_unknown_run_key_named(self, cohort_dir, tmp_path, capsys):
        code = main(_run_args(cohort_dir / "weekly.csv", tmp_path, "foo=1"))

        assert code == EXIT_USAGE
        assert "foo" in capsys.readouterr().err

    def test_missing_input_file(self, tmp_path):
        assert main(_run_args(tmp_path / "absent.csv", tmp_path / "out")) == EXIT_USAGE

    def test_missing_weekly_csv(self, tmp_path):
        assert main(["run", "--set", f"output_dir={tmp_path}", "--set", "registry=false"]) == EXIT_USAGE

    def test_no_subcommand(self):
        assert main([]) == EXIT_USAGE

    def test_unknown_cohort_key(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path), "--set", "foo=1", "--no-registry"]) == EXIT_USAGE

    def test_report_without_manifest(self, tmp_path):
        assert main(["report", str(tmp_path)]) == EXIT_USAGE


@pytest.mark.integration
class TestRunDirectory:
    """Tests for the files written by `run`."""

    def test_layout(self, completed_run):
        for name in ("ledger.csv", "instances.csv", "training.csv", "manifest.json", "phase_reports.json"):
            assert (completed_run / name).exists()
        assert (completed_run / "report" / "metric_table_retrospective.csv").exists()
        assert (completed_run / "report" / "instability_table.csv").exists()

    def test_manifest(self, completed_run, cohort_dir):
        manifest = json.loads((completed_run / "manifest.json").read_text())

        assert manifest["seeds"] == [0, 1]
        assert manifest["master_seed"] == 11
        assert len(manifest["inputs"]["weekly_csv"]) == 64
        assert manifest["n_ledger_rows"] == len(pd.read_csv(completed_run / "ledger.csv"))

    def test_metric_table_shape(self, completed_run):
        table = pd.read_csv(completed_run / "report" / "metric_table_retrospective.csv")

        assert list(table.columns) == ["strategy", "attribute"] + list(METRIC_TABLE_COLUMNS)
        assert sorted(table["strategy"].unique()) == ["full", "last", "none", "subset"]
        assert sorted(table["attribute"].unique()) == ["age", "sex"]

    def test_lf_line_endings(self, completed_run):
        assert b"\r\n" not in (completed_run / "ledger.csv").read_bytes()
        assert b"\r\n" not in (completed_run / "report" / "instability_table.csv").read_bytes()

    def test_phase_reports_include_retained_variant(self, completed_run):
        reports = json.loads((completed_run / "phase_reports.json").read_text())
        assert {r["variant"] for r in reports} == {"all", "retained"}

    def test_abstention_log_written(self, completed_run):
        log = pd.read_csv(completed_run / "abstentions.csv")
        ledger = pd.read_csv(completed_run / "ledger.csv")

        assert len(log) == 2 * len(ledger)
        assert set(log["attribute"]) == {"sex", "age"}
        assert log["abstained"].sum() == 2 * ledger["abstained"].sum()


@pytest.mark.integration
class TestReproducibility:
    """Reports are rebuilt from disk and reruns are byte-identical."""

    def test_report_regenerates_same_tables(self, completed_run, tmp_path):
        assert main(["report", str(completed_run), "--out", str(tmp_path)]) == EXIT_OK

        for name in ("metric_table_retrospective.csv", "metric_table_prospective.csv", "instability_table.csv", "trajectories.csv"):
            assert (tmp_path / name).read_bytes() == (completed_run / "report" / name).read_bytes()

    def test_rerun_is_byte_identical(self, completed_run, cohort_dir, tmp_path):
        assert main(_run_args(cohort_dir / "weekly.csv", tmp_path)) == EXIT_OK

        for name in ("ledger.csv", "training.csv", "phase_reports.json", "report/metric_table_long.csv"):
            assert (tmp_path / name).read_bytes() == (completed_run / name).read_bytes()

    def test_parallel_rerun_is_byte_identical(self, completed_run, cohort_dir, tmp_path):
        assert main(_run_args(cohort_dir / "weekly.csv", tmp_path, "n_workers=3")) == EXIT_OK

        assert (tmp_path / "ledger.csv").read_bytes() == (completed_run / "ledger.csv").read_bytes()

    def test_rerun_from_manifest(self, completed_run, tmp_path):
        code = main(["run", "--manifest", str(completed_run / "manifest.json"), "--set", f"output_dir={tmp_path}"])

        assert code == EXIT_OK
        assert (tmp_path / "ledger.csv").read_bytes() == (completed_run / "ledger.csv").read_bytes()

    def test_report_with_missing_run_dir(self, completed_run, tmp_path):
        assert main(["report", str(completed_run), str(completed_run.parent / "other"), "--out", str(tmp_path)]) \
            == EXIT_USAGE

    def test_two_run_average(self, completed_run, cohort_dir, tmp_path):
        second = tmp_path / "second"
        assert main(_run_args(cohort_dir / "weekly.csv", second, "master_seed=12")) == EXIT_OK

        out = tmp_path / "combined"
        assert main(["report", str(completed_run), str(second), "--out", str(out)]) == EXIT_OK

        assert (out / "datasets" / "second" / "instability_table.csv").exists()
        long = pd.read_csv(out / "metric_table_long.csv")
        assert long["n"].max() == 2


@pytest.mark.integration
class TestOtherCommands:

    def test_synth_traces_then_featurize(self, tmp_path):
        synth_dir = tmp_path / "traces"
        code = main(["synth", "--mode", "traces", "--out", str(synth_dir), "--no-registry",
                     "--set", "n_patients=2", "--set", "weeks_min=2", "--set", "weeks_max=2",
                     "--set", "trace_days_per_week=2"])
        assert code == EXIT_OK

        weekly_csv = tmp_path / "weekly.csv"
        code = main(["featurize", str(synth_dir / "cgm.csv"), "--meta", str(synth_dir / "meta.csv"),
                     "--out", str(weekly_csv), "--no-registry"])
        assert code == EXIT_OK

        result = load_weekly_csv(weekly_csv)
        assert len(result.weekly) == 4
        assert result.rejects.empty

    def test_synth_weekly(self, tmp_path):
        code = main(["synth", "--out", str(tmp_path), "--no-registry", "--set", "n_patients=5"])

        assert code == EXIT_OK
        assert load_weekly_csv(tmp_path / "weekly.csv").weekly["patient_id"].nunique() == 5

    def test_benchmark(self, cohort_dir, tmp_path):
        out = tmp_path / "bench.csv"
        code = main(["benchmark", "--kinds", "logreg", "--seeds", "2", "--out", str(out),
                     "--set", f"weekly_csv={cohort_dir / 'weekly.csv'}", "--set", "bootstrap=3",
                     "--set", "protected_attributes=[sex]", "--set", "registry=false"])

        assert code == EXIT_OK
        assert len(pd.read_csv(out)) == 2

    def test_registered_run_listed(self, tmp_path, capsys):
        assert main(["synth", "--out", str(tmp_path), "--set", "n_patients=3"]) == EXIT_OK
        assert main(["runs", "--limit", "5"]) == EXIT_OK
        assert "synth" in capsys.readouterr().out
