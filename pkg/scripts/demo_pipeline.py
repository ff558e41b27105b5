#!/usr/bin/env python3
"""Demo script: one small drift experiment end to end, printed to the console."""

import sys
import os

# Add parent directory to path to allow imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from dataclasses import replace  # noqa: E402

from src.abstain import post_abstention_metrics  # noqa: E402
from src.config import load_cohort_spec, preset_path  # noqa: E402
from src.engine import RETROSPECTIVE, ExperimentConfig, prepare_cohort, run_experiment  # noqa: E402
from src.learner import TrainConfig  # noqa: E402
from src.metrics import build_phase_reports  # noqa: E402
from src.services.report_builder import build_report, instability_table_wide, metric_table_wide  # noqa: E402
from src.synthgen import gen_cohort  # noqa: E402

ATTRIBUTES = ["sex", "age"]


def demo_pipeline():
    """Generate a drifting cohort, retrain under every strategy and print the audit tables."""
    print("\n" + "=" * 70)
    print("CONTINUAL RETRAINING AUDIT - DEMONSTRATION")
    print("=" * 70)

    spec = replace(load_cohort_spec(preset_path("acceptance_drift")), n_patients=80)
    cohort = gen_cohort(spec)
    print(f"\n🧪 Cohort: {spec.n_patients} patients, {len(cohort.weekly)} patient-weeks, "
          f"label rate {cohort.weekly['label'].mean():.2f}")
    print(f"   Rows under subgroup drift: {cohort.manifest['n_rows_subgroup_drift']}")

    prepared = prepare_cohort(cohort.weekly, cohort.meta, ATTRIBUTES)
    config = ExperimentConfig(
        schemas=(RETROSPECTIVE,),
        n_batches=5,
        n_seeds=3,
        bootstrap=10,
        rashomon_m=8,
        attributes=tuple(ATTRIBUTES),
        train=TrainConfig(max_iter=200),
        abstention_k=3,
    )
    result = run_experiment(prepared, config)
    print(f"\n📒 Ledger: {len(result.ledger)} rows, "
          f"{int(result.ledger['abstained'].sum())} abstained")

    reports = build_phase_reports(result.ledger, result.instances, ATTRIBUTES, training=result.training)
    retained, _ = post_abstention_metrics(result.ledger, result.instances, ATTRIBUTES, training=result.training)
    report = build_report(reports + retained, result.ledger, result.instances, ATTRIBUTES)

    print("\n" + "=" * 70)
    print("FAIRNESS, STABILITY AND MULTIPLICITY (seed means)")
    print("=" * 70)
    print(metric_table_wide(report.metric_table, RETROSPECTIVE).to_string(index=False))

    print("\n" + "=" * 70)
    print("INDIVIDUAL INSTABILITY AND ABSTENTION BY GROUP")
    print("=" * 70)
    print(instability_table_wide(report.instability_table).to_string(index=False))
    print()


if __name__ == "__main__":
    demo_pipeline()
