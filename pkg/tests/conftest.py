"""
Pytest configuration and fixtures for all tests.

Points the run registry at a temporary SQLite file and provides small synthetic
cohorts, a fast experiment configuration and a completed run directory.
"""

import os
import pytest
import tempfile

# Create a temporary database file for tests (shared across all test sessions)
test_db_path = os.path.join(tempfile.gettempdir(), "test_retrain_audit.db")

# Set up environment variables before any src module is imported
os.environ.setdefault("DATABASE_URL", f"sqlite:///{test_db_path}")
os.environ.setdefault("RETRAIN_AUDIT_LOG_LEVEL", "WARNING")
os.environ.setdefault("RETRAIN_AUDIT_WORKERS", "1")


@pytest.fixture(scope="session", autouse=True)
def setup_test_database():
    """Initialize registry tables for testing."""
    from src.db import init_db, engine, Base

    # Remove old test database if it exists
    if os.path.exists(test_db_path):
        os.remove(test_db_path)

    Base.metadata.drop_all(bind=engine)
    init_db()
    yield
    Base.metadata.drop_all(bind=engine)
    if os.path.exists(test_db_path):
        os.remove(test_db_path)


@pytest.fixture(scope="session")
def small_spec():
    """A 40-patient stationary cohort spanning one year."""
    from src.synthgen import CohortSpec

    return CohortSpec(n_patients=40, weeks_min=4, weeks_max=12, date_span_days=364, seed=3)


@pytest.fixture(scope="session")
def small_cohort(small_spec):
    from src.synthgen import gen_cohort

    return gen_cohort(small_spec)


@pytest.fixture(scope="session")
def prepared_cohort(small_cohort):
    from src.engine import prepare_cohort

    return prepare_cohort(small_cohort.weekly, small_cohort.meta, ["sex", "age"])


@pytest.fixture(scope="session")
def fast_config():
    """Experiment settings small enough for unit tests."""
    from src.engine import ExperimentConfig
    from src.learner import TrainConfig

    return ExperimentConfig(
        n_batches=4,
        n_seeds=2,
        bootstrap=4,
        rashomon_m=4,
        rashomon_epsilon=0.05,
        attributes=("sex", "age"),
        train=TrainConfig(max_iter=100),
        abstention_k=3,
        master_seed=11,
    )


@pytest.fixture(scope="session")
def cohort_dir(tmp_path_factory, small_cohort):
    """Directory holding weekly.csv, meta.csv and manifest.json of the small cohort."""
    from src.synthgen import write_cohort

    out = tmp_path_factory.mktemp("cohort")
    write_cohort(small_cohort, out)
    return out


def fast_run_overrides(weekly_csv, output_dir):
    return [
        f"weekly_csv={weekly_csv}",
        f"output_dir={output_dir}",
        "n_seeds=2",
        "n_batches=4",
        "bootstrap=4",
        "rashomon_m=4",
        "rashomon_epsilon=0.05",
        "protected_attributes=[sex, age]",
        "max_iter=100",
        "abstention_k=3",
        "master_seed=11",
        "registry=false",
    ]


@pytest.fixture(scope="session")
def completed_run(tmp_path_factory, cohort_dir):
    """A run directory produced by `run` on the small cohort."""
    from src.main import main

    run_dir = tmp_path_factory.mktemp("run")
    argv = ["run"]
    for override in fast_run_overrides(cohort_dir / "weekly.csv", run_dir):
        argv += ["--set", override]
    assert main(argv) == 0
    return run_dir
