"""
Unit tests for services/report_builder.py

Tests cell summaries, seed and dataset aggregation, the wide table views and report
writing.
"""

import math

import pandas as pd
import pytest

from src.metrics import PHASE_METRICS
from src.services.report_builder import (
    UNDEFINED_CELL,
    ExperimentReport,
    aggregate,
    aggregate_datasets,
    summarize,
    metric_table_wide,
    write_json,
    write_report,
)


def _phase_report(seed, phase, auc, strategy="full", schema="retrospective", variant="all"):
    metrics = {name: None for name in PHASE_METRICS}
    metrics["auc"] = auc
    return {
        "schema": schema, "seed": seed, "strategy": strategy, "phase": phase,
        "attribute": "sex", "variant": variant, "metrics": metrics, "undefined": {},
    }


def _cell(table, metric, **keys):
    mask = table["metric"] == metric
    for name, value in keys.items():
        mask &= table[name] == value
    rows = table[mask]
    assert len(rows) == 1
    return rows.iloc[0]


@pytest.mark.unit
class TestSummarize:
    """Tests for per-cell mean and confidence interval."""

    def test_two_values(self):
        summary = summarize([0.6, 0.7])

        half = 1.96 * math.sqrt(0.005) / math.sqrt(2)
        assert summary.mean == pytest.approx(0.65)
        assert summary.ci_lo == pytest.approx(0.65 - half)
        assert summary.ci_hi == pytest.approx(0.65 + half)
        assert summary.n == 2
        assert not summary.degenerate_ci

    def test_undefined_values_excluded_and_counted(self):
        values = [0.5, None, 0.6, float("nan"), 0.7, None, 0.8, 0.9, 0.4, 0.3]

        summary = summarize(values)

        assert summary.n == 7
        assert summary.n_excluded == 3
        assert summary.mean == pytest.approx(0.6)

    def test_single_value_is_degenerate(self):
        summary = summarize([0.42])
        assert summary.mean == summary.ci_lo == summary.ci_hi == 0.42
        assert summary.degenerate_ci

    def test_nothing_defined(self):
        summary = summarize([None, None])
        assert not summary.defined
        assert summary.n_excluded == 2


@pytest.mark.unit
class TestAggregate:
    """Tests for seed aggregation."""

    def test_phase_average_then_seed_average(self):
        reports = [
            _phase_report(0, 1, 0.6), _phase_report(0, 2, 0.8),
            _phase_report(1, 1, 0.5), _phase_report(1, 2, 0.7),
        ]

        report = aggregate(reports)

        cell = _cell(report.metric_table, "auc", strategy="full", attribute="sex")
        assert cell["mean"] == pytest.approx(0.65)
        assert cell["n"] == 2

    def test_undefined_phases_skipped_within_seed(self):
        reports = [_phase_report(0, 1, None), _phase_report(0, 2, 0.8), _phase_report(1, 1, 0.6)]

        cell = _cell(aggregate(reports).metric_table, "auc")

        assert cell["mean"] == pytest.approx(0.7)
        assert cell["n_excluded"] == 0

    def test_seed_without_defined_phase_is_excluded(self):
        reports = [_phase_report(0, 1, None), _phase_report(1, 1, 0.6), _phase_report(2, 1, 0.8)]

        cell = _cell(aggregate(reports).metric_table, "auc")

        assert cell["n"] == 2
        assert cell["n_excluded"] == 1

    def test_trajectories_per_phase(self):
        reports = [_phase_report(0, 1, 0.6), _phase_report(0, 2, 0.8), _phase_report(1, 2, 0.6)]

        trajectories = aggregate(reports).trajectories

        assert _cell(trajectories, "auc", phase=1)["degenerate_ci"]
        assert _cell(trajectories, "auc", phase=2)["mean"] == pytest.approx(0.7)

    def test_seed_filter(self):
        reports = [_phase_report(0, 1, 0.6), _phase_report(1, 1, 0.8)]
        cell = _cell(aggregate(reports, seeds=[1]).metric_table, "auc")
        assert cell["mean"] == pytest.approx(0.8)

    def test_nothing_to_aggregate(self):
        with pytest.raises(ValueError):
            aggregate([])


@pytest.mark.unit
class TestDatasetsAndWriting:

    def test_dataset_averaging(self):
        first = aggregate([_phase_report(0, 1, 0.6)])
        second = aggregate([_phase_report(0, 1, 0.8)])

        combined = aggregate_datasets({"b": second, "a": first})

        cell = _cell(combined.metric_table, "auc")
        assert cell["mean"] == pytest.approx(0.7)
        assert cell["n"] == 2

    def test_undefined_cells_rendered_as_text(self):
        report = aggregate([_phase_report(0, 1, 0.6), _phase_report(1, 1, 0.7)])

        wide = metric_table_wide(report.metric_table, "retrospective")

        assert wide.loc[0, "av_auc"] == pytest.approx(0.65)
        assert wide.loc[0, "eo"] == UNDEFINED_CELL

    def test_write_report_files(self, tmp_path):
        report = aggregate([_phase_report(0, 1, 0.6), _phase_report(0, 2, 0.7, variant="retained")])

        written = write_report(report, tmp_path)

        assert (tmp_path / "metric_table_retrospective.csv").exists()
        assert (tmp_path / "metric_table_retrospective_retained.csv").exists()
        assert (tmp_path / "phases" / "retrospective_full_sex.csv").exists()
        assert "instability_table" in written
        phases = pd.read_csv(tmp_path / "phases" / "retrospective_full_sex.csv")
        assert phases["auc"].tolist() == [0.6]

    def test_undefined_phase_values_written_as_text(self, tmp_path):
        write_report(aggregate([_phase_report(0, 1, 0.6)]), tmp_path)

        phases = pd.read_csv(tmp_path / "phases" / "retrospective_full_sex.csv")
        trajectories = pd.read_csv(tmp_path / "trajectories.csv")

        assert phases.loc[0, "eo_gap"] == UNDEFINED_CELL
        assert phases.loc[0, "auc"] == pytest.approx(0.6)
        eo = trajectories[trajectories["metric"] == "eo_gap"]
        assert len(eo) == 1
        assert eo["mean"].iloc[0] == UNDEFINED_CELL

    def test_empty_report_still_writes_instability_table(self, tmp_path):
        report = ExperimentReport(pd.DataFrame(), pd.DataFrame(), pd.DataFrame(), pd.DataFrame())
        written = write_report(report, tmp_path)
        assert list(written) == ["instability_table"]

    def test_json_rejects_nan(self, tmp_path):
        with pytest.raises(ValueError):
            write_json({"value": float("nan")}, tmp_path / "bad.json")
