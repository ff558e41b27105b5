"""
Unit tests for config.py

Tests preset layering, override parsing, unknown-key rejection and value validation
for run and cohort configuration.
"""

import pytest

from src.config import (
    RunConfig,
    load_cohort_spec,
    load_run_config,
    parse_overrides,
    preset_path,
    read_flat_document,
)
from src.errors import ConfigError


@pytest.mark.unit
class TestParseOverrides:

    def test_scalars_and_lists(self):
        overrides = parse_overrides(["n_seeds=3", "strategies=[full, last]", "abstention=false", "l2=0.01"])

        assert overrides == {"n_seeds": 3, "strategies": ["full", "last"], "abstention": False, "l2": 0.01}

    def test_value_may_contain_equals(self):
        assert parse_overrides(["weekly_csv=/data/a=b.csv"]) == {"weekly_csv": "/data/a=b.csv"}

    def test_missing_equals(self):
        with pytest.raises(ConfigError):
            parse_overrides(["n_seeds"])


@pytest.mark.unit
class TestLoadRunConfig:
    """Tests for run configuration loading."""

    def test_preset_defaults(self):
        config = load_run_config()

        assert config.strategies == ["none", "last", "subset", "full"]
        assert config.n_batches == 6
        assert config.n_workers == 1
        assert config.education_threshold == "bachelor"

    def test_file_then_overrides(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("n_seeds: 4\nbootstrap: 8\n")

        config = load_run_config(path, {"bootstrap": 6})

        assert config.n_seeds == 4
        assert config.bootstrap == 6

    def test_unknown_key_in_file_is_named(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("foo: 1\n")

        with pytest.raises(ConfigError, match="foo"):
            load_run_config(path)

    def test_unknown_override_is_named(self):
        with pytest.raises(ConfigError, match="foo"):
            load_run_config(overrides={"foo": 1})

    def test_exponent_notation_read_as_float(self):
        config = load_run_config(overrides=parse_overrides(["rashomon_epsilon=1e-3", "l2=0"]))
        assert config.rashomon_epsilon == 0.001
        assert isinstance(config.l2, float)

    def test_non_numeric_float_rejected(self):
        with pytest.raises(ConfigError, match="l2"):
            load_run_config(overrides={"l2": "lots"})

    def test_comma_separated_lists(self):
        config = load_run_config(overrides={"protected_attributes": "sex, income"})
        assert config.protected_attributes == ["sex", "income"]

    @pytest.mark.parametrize("key,value", [
        ("n_batches", 1),
        ("holdout_fraction", 1.0),
        ("bootstrap", 1),
        ("abstention_alpha", 0.0),
        ("decision_threshold", 1.0),
        ("strategies", ["sometimes"]),
        ("learner", "forest"),
        ("protected_attributes", ["height"]),
    ])
    def test_out_of_range_values(self, key, value):
        with pytest.raises(ConfigError, match=key):
            load_run_config(overrides={key: value})

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_run_config(tmp_path / "absent.yaml")

    def test_document_must_be_mapping(self, tmp_path):
        path = tmp_path / "list.yaml"
        path.write_text("- a\n- b\n")
        with pytest.raises(ConfigError):
            read_flat_document(path)

    def test_workers_from_environment(self, monkeypatch):
        monkeypatch.setenv("RETRAIN_AUDIT_WORKERS", "3")
        assert RunConfig().n_workers == 3

    def test_output_dir_from_environment(self, monkeypatch, tmp_path):
        monkeypatch.setenv("RETRAIN_AUDIT_OUTPUT_DIR", str(tmp_path))
        assert load_run_config().output_dir == str(tmp_path)


@pytest.mark.unit
class TestCohortConfig:

    def test_default_cohort(self):
        spec = load_cohort_spec()
        assert spec.n_patients == 200
        assert spec.drift.stationary

    def test_drift_preset(self):
        spec = load_cohort_spec(preset_path("acceptance_drift"))

        assert spec.drift.subgroup_attribute == "sex"
        assert spec.drift.covariate_shift == {"tar": 0.6, "sd": 0.5}

    def test_unknown_cohort_key(self):
        with pytest.raises(ConfigError, match="foo"):
            load_cohort_spec(overrides={"foo": 1})

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            preset_path("nothing_here")
