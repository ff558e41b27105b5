"""
Unit tests for services/run_registry.py

The registry records every CLI run; database failures must be logged and swallowed.
"""

import pytest

from src.models import STATUS_COMPLETED, STATUS_FAILED, STATUS_RUNNING
from src.services.run_registry import (
    complete_run,
    config_hash,
    fail_run,
    list_runs,
    start_run,
)


def _row(row_id):
    return next(r for r in list_runs(limit=1000) if r["id"] == row_id)


@pytest.mark.unit
class TestRunRegistry:
    """Tests for registering and listing runs."""

    def test_config_hash_ignores_key_order(self):
        assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})
        assert config_hash({"a": 1}) != config_hash({"a": 2})

    def test_start_then_complete(self, tmp_path):
        row_id = start_run("run", {"n_seeds": 2}, str(tmp_path), master_seed=5)

        assert _row(row_id)["status"] == STATUS_RUNNING
        assert _row(row_id)["run_id"].endswith("-5")

        complete_run(row_id, n_ledger_rows=120)

        row = _row(row_id)
        assert row["status"] == STATUS_COMPLETED
        assert row["n_ledger_rows"] == 120
        assert row["completed_at"] is not None

    def test_failed_run_keeps_message(self, tmp_path):
        row_id = start_run("synth", {}, str(tmp_path))

        fail_run(row_id, "boom")

        row = _row(row_id)
        assert row["status"] == STATUS_FAILED
        assert row["error_message"] == "boom"

    def test_newest_first(self, tmp_path):
        first = start_run("run", {"k": 1}, str(tmp_path))
        second = start_run("run", {"k": 2}, str(tmp_path))

        ids = [r["id"] for r in list_runs(limit=2)]

        assert ids == [second, first]

    def test_database_failure_is_swallowed(self, mocker, tmp_path):
        mocker.patch("src.services.run_registry.SessionLocal", side_effect=RuntimeError("database down"))

        assert start_run("run", {}, str(tmp_path)) is None
        assert list_runs() == []
        complete_run(1)

    def test_unregistered_run_is_noop(self):
        complete_run(None)
        fail_run(None, "ignored")
