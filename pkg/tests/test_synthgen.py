"""
Unit tests for synthgen.py

Tests determinism, schema validity, drift controls, configuration parsing and the
trace generator.
"""

from dataclasses import replace
from datetime import date

import numpy as np
import pandas as pd
import pytest
from scipy.stats import chi2_contingency, f_oneway

from src.dataio import FEATURE_COLUMNS, group_table, load_weekly_csv, make_batches, resolve_protected_attrs
from src.errors import ConfigError
from src.learner import TrainConfig, fit_frame
from src.metrics import auc
from src.synthgen import (
    GLUCOSE_CEILING,
    GLUCOSE_FLOOR,
    RECOVERABILITY_AUC,
    CohortSpec,
    DriftSpec,
    TraceParams,
    gen_cohort,
    gen_cohort_traces,
    gen_trace,
    write_cohort,
)


@pytest.mark.unit
class TestGenCohort:
    """Tests for weekly cohort generation."""

    def test_same_seed_same_cohort(self, small_spec):
        first = gen_cohort(small_spec)
        second = gen_cohort(small_spec)

        pd.testing.assert_frame_equal(first.weekly, second.weekly)
        pd.testing.assert_frame_equal(first.meta, second.meta)

    def test_different_seed_differs(self, small_spec, small_cohort):
        other = gen_cohort(replace(small_spec, seed=small_spec.seed + 1))
        assert not other.weekly["tir"].equals(small_cohort.weekly["tir"])

    def test_weeks_per_patient_within_bounds(self, small_spec, small_cohort):
        counts = small_cohort.weekly.groupby("patient_id").size()

        assert len(counts) == small_spec.n_patients
        assert counts.min() >= small_spec.weeks_min
        assert counts.max() <= small_spec.weeks_max

    def test_fractions_on_simplex(self, small_cohort):
        total = small_cohort.weekly[["tir", "tar", "tbr"]].sum(axis=1)
        np.testing.assert_allclose(total, 1.0, atol=1e-9)
        assert (small_cohort.weekly[["tir", "tar", "tbr"]] >= 0).all().all()

    def test_weeks_inside_calendar_span(self, small_spec, small_cohort):
        start = pd.Timestamp(small_spec.start_date)
        end = start + pd.Timedelta(days=small_spec.date_span_days)
        assert small_cohort.weekly["week_start"].between(start, end).all()

    def test_written_cohort_loads_without_rejects(self, tmp_path, small_cohort):
        paths = write_cohort(small_cohort, tmp_path)

        result = load_weekly_csv(paths["weekly"])

        assert result.rejects.empty
        assert (tmp_path / "manifest.json").exists()

    def test_manifest_records_ground_truth(self, small_cohort):
        truth = small_cohort.manifest["ground_truth"]
        assert set(truth["coefficients"]) == set(FEATURE_COLUMNS)
        assert small_cohort.manifest["n_rows"] == len(small_cohort.weekly)

    def test_full_missingness_blanks_metadata(self):
        cohort = gen_cohort(CohortSpec(n_patients=5, weeks_min=2, weeks_max=3, missing_rate=1.0, seed=1))
        assert cohort.meta["sex"].isna().all()
        assert cohort.meta["age"].isna().all()

    def test_subgroup_drift_touches_only_late_group_rows(self):
        spec = CohortSpec(n_patients=30, weeks_min=4, weeks_max=8, seed=2,
                          drift=DriftSpec(onset=0.5, subgroup_attribute="sex", subgroup_shift=2.0))
        cohort = gen_cohort(spec)
        assert 0 < cohort.manifest["n_rows_subgroup_drift"] < len(cohort.weekly)

    def test_stationary_flag(self):
        assert DriftSpec().stationary
        assert not DriftSpec(concept_drift=1.0).stationary
        assert not DriftSpec(covariate_shift={"tar": 0.5}).stationary

    @pytest.mark.slow
    def test_ground_truth_is_recoverable(self):
        cohort = gen_cohort(CohortSpec(n_patients=200, seed=5))

        model = fit_frame(cohort.weekly, FEATURE_COLUMNS, TrainConfig())
        scores = model.predict_proba_frame(cohort.weekly)

        assert auc(scores, cohort.weekly["label"]) >= RECOVERABILITY_AUC

    @pytest.mark.slow
    def test_stationary_cohort_has_no_batch_trend(self):
        cohort = gen_cohort(CohortSpec(n_patients=200, seed=6))
        plan = make_batches(cohort.weekly, 6)
        per_patient = cohort.weekly.groupby("patient_id")[FEATURE_COLUMNS].mean()
        batch = per_patient.index.map(plan.assignment)

        for column in FEATURE_COLUMNS:
            samples = [per_patient.loc[batch == b, column].to_numpy() for b in range(6)]
            assert f_oneway(*[s for s in samples if len(s) > 1]).pvalue > 0.001, column

    @pytest.mark.slow
    def test_subgroup_drift_changes_only_that_group(self):
        spec = CohortSpec(n_patients=300, seed=4, base_risk=0.2,
                          drift=DriftSpec(onset=0.5, subgroup_attribute="sex", subgroup_shift=2.0))
        cohort = gen_cohort(spec)
        weekly = cohort.weekly
        groups = group_table(cohort.meta, resolve_protected_attrs(cohort.meta, ["sex"]))["sex"]
        days = (pd.to_datetime(weekly["week_start"]) - pd.Timestamp(spec.start_date)).dt.days
        late = (days / spec.date_span_days).to_numpy() >= spec.drift.onset
        group = weekly["patient_id"].map(groups).to_numpy()

        def contingency(g):
            rows = group == g
            labels = weekly["label"].to_numpy()
            return [[int(labels[rows & ~late].sum()), int((1 - labels[rows & ~late]).sum())],
                    [int(labels[rows & late].sum()), int((1 - labels[rows & late]).sum())]]

        _, p_b, _, _ = chi2_contingency(contingency("B"))
        assert p_b < 0.01

        a = np.array(contingency("A"))
        rate_before, rate_after = a[0, 0] / a[0].sum(), a[1, 0] / a[1].sum()
        assert abs(rate_after - rate_before) < 0.06

    @pytest.mark.slow
    def test_label_rate_close_to_base_risk(self):
        cohort = gen_cohort(CohortSpec(n_patients=300, seed=8, base_risk=0.2))
        assert abs(cohort.weekly["label"].mean() - 0.2) < 0.05


@pytest.mark.unit
class TestCohortSpec:
    """Tests for cohort specification parsing and validation."""

    def test_flat_round_trip(self):
        spec = CohortSpec(n_patients=12, start_date=date(2021, 1, 4),
                          drift=DriftSpec(onset=0.3, covariate_shift={"sd": 1.0}, concept_drift=0.5))
        assert CohortSpec.from_flat(spec.to_flat()) == spec

    def test_unknown_key_named_in_error(self):
        with pytest.raises(ConfigError, match="foo"):
            CohortSpec.from_flat({"foo": 1})

    def test_marginals_must_sum_to_one(self):
        with pytest.raises(ConfigError, match="education_probs"):
            CohortSpec(education_probs=(0.5, 0.5, 0.5, 0.0, 0.0, 0.0))

    def test_infeasible_weeks(self):
        with pytest.raises(ConfigError):
            CohortSpec(weeks_min=10, weeks_max=5)

    def test_unknown_covariate_shift_feature(self):
        with pytest.raises(ConfigError, match="covariate_shift"):
            CohortSpec(drift=DriftSpec(covariate_shift={"glucose": 1.0}))


@pytest.mark.unit
class TestTraces:

    def test_trace_shape_and_clipping(self):
        trace = gen_trace(TraceParams(mean_glucose=380.0, spike_height=150.0), seed=1,
                          start=date(2021, 3, 1), n_days=2)

        assert len(trace) == 2 * 288
        assert trace["glucose"].between(GLUCOSE_FLOOR, GLUCOSE_CEILING).all()
        assert trace["timestamp"].diff().dropna().eq(pd.Timedelta(minutes=5)).all()

    def test_trace_deterministic(self):
        first = gen_trace(TraceParams(), seed=4, start=date(2021, 3, 1), n_days=1)
        second = gen_trace(TraceParams(), seed=4, start=date(2021, 3, 1), n_days=1)
        pd.testing.assert_frame_equal(first, second)

    def test_cohort_traces_share_patients_with_weekly_generation(self):
        spec = CohortSpec(n_patients=3, weeks_min=2, weeks_max=2, seed=6)

        traces = gen_cohort_traces(spec, days_per_week=1)

        pd.testing.assert_frame_equal(traces.meta, gen_cohort(spec).meta)
        assert len(traces.readings) == 3 * 2 * 288
