"""
Unit tests for learner.py

Tests the logistic-regression gradient, deterministic fitting, naive Bayes, the
constant-score fallback and model serialization.
"""

import numpy as np
import pytest

from src.errors import SchemaError, TrainingError
from src.learner import (
    KIND_CONSTANT,
    KIND_NAIVE_BAYES,
    Model,
    TrainConfig,
    constant_model,
    fit,
    fit_frame,
    fit_or_fallback,
    loss_and_gradient,
)
from src.metrics import auc


def _noisy_data(seed=0, n=200, d=4):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d))
    logits = x @ np.array([1.5, -1.0, 0.5, 0.0][:d]) + 0.5 * rng.normal(size=n)
    y = (logits > 0).astype(int)
    return x, y


@pytest.mark.unit
class TestGradient:
    """Analytic gradient against central finite differences."""

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(42)
        eps = 1e-6
        worst = 0.0
        for _ in range(100):
            n, d = int(rng.integers(5, 30)), int(rng.integers(1, 6))
            xs = rng.normal(size=(n, d))
            y = rng.integers(0, 2, size=n)
            w = rng.normal(size=d)
            b = float(rng.normal())
            l2 = float(rng.uniform(0, 0.5))
            _, grad_w, grad_b = loss_and_gradient(w, b, xs, y, l2)

            numeric_w = np.empty(d)
            for j in range(d):
                step = np.zeros(d)
                step[j] = eps
                numeric_w[j] = (loss_and_gradient(w + step, b, xs, y, l2)[0]
                                - loss_and_gradient(w - step, b, xs, y, l2)[0]) / (2 * eps)
            numeric_b = (loss_and_gradient(w, b + eps, xs, y, l2)[0]
                         - loss_and_gradient(w, b - eps, xs, y, l2)[0]) / (2 * eps)

            analytic = np.append(grad_w, grad_b)
            numeric = np.append(numeric_w, numeric_b)
            relative = np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), 1e-3)
            worst = max(worst, float(relative.max()))
        assert worst < 1e-5

    def test_regularization_adds_to_loss(self):
        xs = np.array([[1.0], [-1.0]])
        y = np.array([1, 0])
        w = np.array([2.0])
        plain, _, _ = loss_and_gradient(w, 0.0, xs, y, 0.0)
        penalized, _, _ = loss_and_gradient(w, 0.0, xs, y, 0.5)
        assert penalized == pytest.approx(plain + 0.5 * 0.5 * 4.0)


@pytest.mark.unit
class TestFit:
    """Tests for logistic regression fitting."""

    def test_separable_fixture_reaches_perfect_training_auc(self):
        x = np.array([[0.0], [1.0], [2.0], [3.0], [4.0], [5.0]])
        y = np.array([0, 0, 0, 1, 1, 1])

        model = fit(x, y, TrainConfig(), ["f"])

        assert auc(model.predict_proba(x), y) == 1.0
        assert model.weights[0] > 0

    def test_row_permutation_does_not_change_parameters(self):
        x, y = _noisy_data()
        order = np.random.default_rng(1).permutation(len(y))

        first = fit(x, y, TrainConfig(max_iter=200), ["a", "b", "c", "d"])
        second = fit(x[order], y[order], TrainConfig(max_iter=200), ["a", "b", "c", "d"])

        np.testing.assert_allclose(first.weights, second.weights, rtol=0, atol=1e-12)
        assert first.bias == pytest.approx(second.bias, abs=1e-12)

    def test_constant_column_gets_zero_weight(self):
        x, y = _noisy_data(d=2)
        x = np.column_stack([x, np.full(len(y), 7.0)])

        model = fit(x, y, TrainConfig(), ["a", "b", "const"])

        assert model.weights[2] == 0.0
        assert model.scale[2] == 1.0

    def test_constant_features_predict_base_rate(self):
        x = np.full((100, 3), 4.0)
        y = np.array([1] * 30 + [0] * 70)

        model = fit(x, y, TrainConfig(max_iter=2000), ["a", "b", "c"])
        scores = model.predict_proba(x)

        np.testing.assert_allclose(scores, 0.3, atol=1e-4)
        assert auc(scores, y) == pytest.approx(0.5)

    def test_stronger_l2_never_grows_weights(self):
        x, y = _noisy_data()
        norms = [
            float(np.linalg.norm(fit(x, y, TrainConfig(l2=l2, max_iter=2000), ["a", "b", "c", "d"]).weights))
            for l2 in [0.0, 1e-3, 1e-2, 1e-1, 1.0, 10.0]
        ]

        assert all(later <= earlier + 1e-9 for earlier, later in zip(norms, norms[1:]))
        assert norms[-1] < norms[0]

    def test_single_class_raises(self):
        with pytest.raises(TrainingError):
            fit(np.ones((4, 1)), np.zeros(4, dtype=int), TrainConfig(), ["f"])

    def test_non_finite_feature_raises(self):
        x = np.array([[0.0], [np.nan]])
        with pytest.raises(TrainingError):
            fit(x, np.array([0, 1]), TrainConfig(), ["f"])

    def test_shape_mismatch_raises(self):
        with pytest.raises(SchemaError):
            fit(np.ones((3, 2)), np.array([0, 1, 0]), TrainConfig(), ["only_one"])

    def test_invalid_config_rejected(self):
        with pytest.raises(TrainingError):
            TrainConfig(learning_rate=0.0)

    def test_max_iter_reported_when_not_converged(self):
        x, y = _noisy_data()
        model = fit(x, y, TrainConfig(max_iter=3, tol=0.0), ["a", "b", "c", "d"])
        assert not model.converged
        assert model.n_iter == 3


@pytest.mark.unit
class TestNaiveBayes:

    def test_naive_bayes_learns_signal(self):
        x, y = _noisy_data(seed=3)
        model = fit(x, y, TrainConfig(), ["a", "b", "c", "d"], kind=KIND_NAIVE_BAYES)
        scores = model.predict_proba(x)
        assert np.all((scores >= 0) & (scores <= 1))
        assert auc(scores, y) > 0.8


@pytest.mark.unit
class TestPredictAndFallback:

    def test_single_vector_returns_scalar(self):
        x, y = _noisy_data()
        model = fit(x, y, TrainConfig(), ["a", "b", "c", "d"])
        assert isinstance(model.predict_proba(x[0]), float)
        assert model.predict(x[0]) in (0, 1)

    def test_predict_dimension_mismatch(self):
        model = constant_model(0.3, ["a", "b"])
        with pytest.raises(SchemaError):
            model.predict_proba([1.0, 2.0, 3.0])

    def test_threshold_is_inclusive(self):
        model = constant_model(0.5, ["a"], decision_threshold=0.5)
        assert model.predict([0.0]) == 1

    def test_fallback_on_single_class(self, small_cohort):
        table = small_cohort.weekly.assign(label=0)
        model = fit_or_fallback(table, ["tir", "tar"], TrainConfig(), context="test")
        assert model.kind == KIND_CONSTANT
        assert model.predict_proba([0.5, 0.5]) == 0.0

    def test_fit_frame_uses_named_columns(self, small_cohort):
        model = fit_frame(small_cohort.weekly, ["tar", "sd"], TrainConfig(max_iter=50))
        assert model.feature_names == ["tar", "sd"]
        assert len(model.predict_proba_frame(small_cohort.weekly)) == len(small_cohort.weekly)

    def test_unaware_model_ignores_protected_columns(self, prepared_cohort):
        features = prepared_cohort.feature_names(include_protected=False)
        model = fit_frame(prepared_cohort.table, features, TrainConfig(max_iter=100))
        flipped = prepared_cohort.table.assign(aware_sex=1.0 - prepared_cohort.table["aware_sex"],
                                               aware_age=0.5)

        assert "aware_sex" not in model.feature_names
        assert "aware_age" not in model.feature_names
        np.testing.assert_array_equal(model.predict_proba_frame(flipped),
                                      model.predict_proba_frame(prepared_cohort.table))

    def test_aware_model_uses_protected_columns(self, prepared_cohort):
        features = prepared_cohort.feature_names(include_protected=True)
        model = fit_frame(prepared_cohort.table, features, TrainConfig(max_iter=100, include_protected=True))
        assert {"aware_sex", "aware_age"} <= set(model.feature_names)

    def test_dict_round_trip_preserves_scores(self):
        x, y = _noisy_data()
        model = fit(x, y, TrainConfig(), ["a", "b", "c", "d"])
        restored = Model.from_dict(model.to_dict())
        np.testing.assert_array_equal(restored.predict_proba(x), model.predict_proba(x))
