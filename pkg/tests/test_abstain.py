"""
Unit tests for abstain.py

Tests the conformal threshold order statistic, calibration preconditions, the strict
abstention rule, the empirical abstention budget and the equity table.
"""

import math

import numpy as np
import pandas as pd
import pytest

from src.abstain import (
    abstention_log,
    abstention_records,
    calibrate,
    conformal_threshold,
    decide,
    decide_many,
    equity_table,
    knn_distance,
    post_abstention_metrics,
)
from src.errors import CalibrationError, SchemaError
from src.metrics import build_phase_reports


def _table(n_patients, seed, rows_per_patient=1, d=3):
    rng = np.random.default_rng(seed)
    n = n_patients * rows_per_patient
    frame = pd.DataFrame(rng.normal(size=(n, d)), columns=[f"x{j}" for j in range(d)])
    frame.insert(0, "patient_id", [f"P{i // rows_per_patient:04d}" for i in range(n)])
    return frame


FEATURES = ["x0", "x1", "x2"]


@pytest.mark.unit
class TestConformalThreshold:

    def test_order_statistic(self):
        distances = list(range(1, 20))
        # ceil(0.95 * 20) = 19th smallest
        assert conformal_threshold(distances, 0.05) == 19.0

    def test_rank_beyond_sample_is_infinite(self):
        assert conformal_threshold(list(range(10)), 0.05) == math.inf

    def test_unsorted_input(self):
        assert conformal_threshold([5.0, 1.0, 3.0, 2.0, 4.0], 0.5) == 3.0


@pytest.mark.unit
class TestCalibrate:
    """Tests for abstainer calibration."""

    def test_too_few_rows(self):
        with pytest.raises(CalibrationError):
            calibrate(_table(20, 0), FEATURES, k=5)

    def test_invalid_alpha(self):
        with pytest.raises(CalibrationError):
            calibrate(_table(100, 0), FEATURES, alpha=1.0)

    def test_calibration_is_deterministic(self):
        first = calibrate(_table(100, 0), FEATURES, k=3, seed=4)
        second = calibrate(_table(100, 0), FEATURES, k=3, seed=4)
        assert first.tau == second.tau
        np.testing.assert_array_equal(first.calibration_distances, second.calibration_distances)

    def test_calibration_split_is_by_patient(self):
        abstainer = calibrate(_table(50, 1, rows_per_patient=4), FEATURES, k=3, seed=2)
        assert len(abstainer.calibration_distances) == 40
        assert abstainer.reference.shape == (160, 3)

    def test_abstains_strictly_above_tau(self):
        abstainer = calibrate(_table(100, 0), FEATURES, k=3)
        point = [0.1, -0.2, 0.3]
        distance = knn_distance(abstainer, point)

        assert not decide(abstainer.tau_with(distance), point)
        assert decide(abstainer.tau_with(distance - 1e-9), point)

    def test_far_point_abstained(self):
        abstainer = calibrate(_table(100, 0), FEATURES, k=3)
        assert decide(abstainer, [50.0, 50.0, 50.0])

    def test_feature_count_checked(self):
        abstainer = calibrate(_table(100, 0), FEATURES, k=3)
        with pytest.raises(SchemaError):
            decide(abstainer, [0.0, 0.0])

    @pytest.mark.slow
    def test_exchangeable_abstention_within_budget(self):
        alpha = 0.05
        rates, shifted_rates = [], []
        for seed in range(20):
            abstainer = calibrate(_table(500, seed), FEATURES, k=5, alpha=alpha, seed=seed)
            test = _table(2000, 1000 + seed)[FEATURES].to_numpy()
            _, flags = decide_many(abstainer, test)
            _, shifted = decide_many(abstainer, test + 5.0)
            rates.append(flags.mean())
            shifted_rates.append(shifted.mean())

        assert 0.03 <= np.mean(rates) <= 0.07
        assert np.mean(shifted_rates) > 0.9


def _abstention_ledger():
    instances = pd.DataFrame({
        "instance_id": ["i1", "i2"],
        "patient_id": ["p1", "p2"],
        "label": [1, 0],
        "sex": ["A", "B"],
    })
    rows = []
    for phase in (1, 2):
        for iid in ("i1", "i2"):
            rows.append({
                "schema": "retrospective", "seed": 0, "strategy": "full", "phase": phase,
                "instance_id": iid, "score": 0.8 if iid == "i1" else 0.2,
                "pred": 1 if iid == "i1" else 0,
                "abstained": iid == "i1" and phase == 2,
                "distance": 2.0 if iid == "i1" and phase == 2 else 0.5, "tau": 1.0,
                "boot_preds": "1111" if iid == "i1" else "0000", "rashomon_preds": "",
            })
    return pd.DataFrame(rows), instances


@pytest.mark.unit
class TestEquity:

    def test_equity_by_group(self):
        ledger, instances = _abstention_ledger()

        table = equity_table(ledger, instances, ["sex"]).set_index("group")

        assert table.loc["A", "abstention_rate"] == 0.5
        assert table.loc["B", "abstention_rate"] == 0.0
        assert table.loc["A", "pct_high_abstention"] == 100.0
        assert table.loc["B", "pct_high_abstention"] == 0.0
        assert table.loc["A", "tsc_abstained"] == 1.0
        assert np.isnan(table.loc["A", "tsc_retained"])

    def test_abstention_records_carry_group(self):
        ledger, instances = _abstention_ledger()

        records = abstention_records(ledger, instances, "sex")

        abstained = [r for r in records if r.abstained]
        assert len(abstained) == 1
        assert abstained[0].group == "A"
        assert abstained[0].distance > abstained[0].tau

    def test_abstention_log_one_row_per_decision_and_attribute(self):
        ledger, instances = _abstention_ledger()
        instances["age"] = ["B", None]

        log = abstention_log(ledger, instances, ["sex", "age"])

        assert len(log) == 2 * len(ledger)
        assert list(log.columns[:4]) == ["schema", "seed", "strategy", "attribute"]
        assert (log["abstained"] == (log["distance"] > log["tau"])).all()
        age = log[log["attribute"] == "age"].set_index(["instance_id", "phase"])
        assert age.loc[("i1", 2), "group"] == "B"
        assert age.loc[("i2", 1), "group"] is None


def _one_phase_ledger(scores, abstained, patient_ids):
    rows = [
        {
            "schema": "retrospective", "seed": 0, "strategy": "full", "phase": 1,
            "instance_id": f"w{i:03d}", "score": float(score),
            "pred": pd.NA if flag else int(score >= 0.5), "abstained": bool(flag),
            "distance": 2.0 if flag else 0.5, "tau": 1.0,
            "boot_preds": "11" if score >= 0.5 else "00", "rashomon_preds": "",
        }
        for i, (score, flag) in enumerate(zip(scores, abstained))
    ]
    instances = pd.DataFrame({
        "instance_id": [f"w{i:03d}" for i in range(len(scores))],
        "patient_id": list(patient_ids),
        "sex": ["A" if i % 2 == 0 else "B" for i in range(len(scores))],
    })
    return pd.DataFrame(rows), instances


@pytest.mark.unit
class TestHighAbstention:
    """One individual with twenty evaluated weeks."""

    @pytest.mark.parametrize("n_abstained,flagged", [(2, False), (3, True)])
    def test_more_than_ten_percent_of_weeks(self, n_abstained, flagged):
        flags = [i < n_abstained for i in range(20)]
        ledger, instances = _one_phase_ledger([0.3] * 20, flags, ["P1"] * 20)
        instances["sex"] = "A"

        table = equity_table(ledger, instances, ["sex"]).set_index("group")

        assert table.loc["A", "n_individuals"] == 1
        assert table.loc["A", "pct_high_abstention"] == (100.0 if flagged else 0.0)


@pytest.mark.unit
class TestRetainedMetrics:

    def test_abstaining_on_misranked_instances_does_not_lower_auc(self):
        rng = np.random.default_rng(3)
        scores = rng.uniform(size=200)
        labels = (rng.uniform(size=200) < scores).astype(int)
        misranked = (labels == 1) & (scores < 0.5) | (labels == 0) & (scores >= 0.5)
        ledger, instances = _one_phase_ledger(scores, misranked, [f"P{i:03d}" for i in range(200)])
        instances["label"] = labels

        baseline = build_phase_reports(ledger, instances, ["sex"])[0]["metrics"]["auc"]
        retained, _ = post_abstention_metrics(ledger, instances, ["sex"])

        assert misranked.any()
        assert retained[0]["metrics"]["auc"] >= baseline
