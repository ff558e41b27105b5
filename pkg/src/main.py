"""
retrain-audit command-line entry point.

Subcommands:
    synth      generate a synthetic cohort (weekly table or raw CGM traces)
    featurize  turn raw CGM readings into the weekly feature table
    run        run the continual-retraining experiment and write a run directory
    report     rebuild reports from one or more run directories
    benchmark  compare learner kinds in both awareness modes
    runs       list registered runs

Usage:
    python -m src.main run --config my_run.yaml --set n_seeds=3
"""

import argparse
import hashlib
import json
import logging
import platform
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import numpy as np
import pandas as pd
import scipy
from dotenv import load_dotenv

from src import __version__
from src.abstain import abstention_log, post_abstention_metrics
from src.cgmfeat import Thresholds, featurize
from src.config import (
    RunConfig,
    default_log_level,
    load_cohort_spec,
    load_run_config,
    parse_overrides,
    read_flat_document,
)
from src.dataio import load_cgm_csv, load_meta_csv, load_weekly_csv, meta_frame, write_weekly_csv
from src.engine import (
    ExperimentConfig,
    benchmark_learners,
    prepare_cohort,
    read_instances,
    read_ledger,
    read_training,
    run_experiment,
    write_table,
)
from src.errors import ConfigError, SchemaError
from src.learner import TrainConfig
from src.metrics import build_phase_reports
from src.services.report_builder import aggregate_datasets, build_report, write_json, write_report
from src.services.run_registry import complete_run, fail_run, list_runs, start_run
from src.synthgen import gen_cohort, gen_cohort_traces, write_cohort, write_traces

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2

LEDGER_FILE = "ledger.csv"
INSTANCES_FILE = "instances.csv"
TRAINING_FILE = "training.csv"
MANIFEST_FILE = "manifest.json"
PHASE_REPORTS_FILE = "phase_reports.json"
ABSTENTIONS_FILE = "abstentions.csv"
REPORT_DIR = "report"


def setup_logging(level: Optional[str] = None) -> None:
    """Configure root logging once for a CLI invocation."""
    logging.basicConfig(
        level=getattr(logging, (level or default_log_level()).upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[logging.StreamHandler()],
        force=True,
    )
    # Reduce SQL echo noise from the registry
    logging.getLogger("sqlalchemy.engine").setLevel(logging.WARNING)


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def versions() -> Dict[str, str]:
    return {
        "retrain_audit": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "pandas": pd.__version__,
        "scipy": scipy.__version__,
    }


# ============================================================================
# INPUTS
# ============================================================================

def load_inputs(config: RunConfig):
    """
    Load the weekly table and metadata named by a RunConfig.

    Returns:
        (weekly, meta)

    Raises:
        ConfigError: If weekly_csv is not set
    """
    if not config.weekly_csv:
        raise ConfigError("weekly_csv: an input weekly table is required")
    loaded = load_weekly_csv(config.weekly_csv, config.column_map or None, config.pediatric_only)
    if len(loaded.rejects):
        logger.warning(f"[RUN] {len(loaded.rejects)} weekly row(s) rejected while loading {config.weekly_csv}")
    weekly, meta = loaded.weekly, loaded.meta
    if config.meta_csv:
        meta, rejects = load_meta_csv(config.meta_csv, config.column_map or None, config.pediatric_only)
        if len(rejects):
            logger.warning(f"[RUN] {len(rejects)} metadata row(s) rejected while loading {config.meta_csv}")
        if config.pediatric_only:
            kept = weekly["patient_id"].isin(set(meta["patient_id"]))
            if (~kept).any():
                logger.info(f"[RUN] Dropped {int((~kept).sum())} weekly row(s) of patients without pediatric metadata")
            weekly = weekly[kept].reset_index(drop=True)
    if weekly.empty:
        raise SchemaError("No valid weekly observations to run on")
    return weekly, meta


def input_hashes(config: RunConfig) -> Dict[str, str]:
    hashes = {}
    for key in ("weekly_csv", "meta_csv"):
        value = getattr(config, key)
        if value:
            hashes[key] = file_sha256(Path(value))
    return hashes


# ============================================================================
# RUN DIRECTORY
# ============================================================================

def run_manifest(config: RunConfig, cohort, n_ledger_rows: int) -> Dict[str, Any]:
    return {
        "command": "run",
        "config": config.to_dict(),
        "attributes": {a.name: a.threshold for a in cohort.attrs},
        "seeds": list(range(config.n_seeds)),
        "master_seed": config.master_seed,
        "inputs": input_hashes(config),
        "versions": versions(),
        "files": [LEDGER_FILE, INSTANCES_FILE, TRAINING_FILE, PHASE_REPORTS_FILE, REPORT_DIR],
        "n_ledger_rows": n_ledger_rows,
    }


def read_manifest(run_dir: Path) -> Dict[str, Any]:
    path = run_dir / MANIFEST_FILE
    if not path.exists():
        raise FileNotFoundError(f"Run manifest not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def report_run_dir(run_dir: Path, config: RunConfig, write: bool = True):
    """
    Phase reports and ExperimentReport computed from the run directory's persisted
    ledger, instance index and training summary.
    """
    attributes = list(config.protected_attributes)
    ledger = read_ledger(run_dir / LEDGER_FILE)
    instances = read_instances(run_dir / INSTANCES_FILE, attributes)
    training = read_training(run_dir / TRAINING_FILE)

    phase_reports = build_phase_reports(ledger, instances, attributes, config.decision_threshold,
                                        training=training)
    if config.abstention:
        retained, _ = post_abstention_metrics(ledger, instances, attributes, config.decision_threshold,
                                              config.high_abstention_fraction, training=training)
        phase_reports = phase_reports + retained
    report = build_report(phase_reports, ledger, instances, attributes, config.decision_threshold,
                          config.flip_instability_fraction, config.low_sc_threshold,
                          config.high_abstention_fraction)
    if write:
        write_json(phase_reports, run_dir / PHASE_REPORTS_FILE)
        if config.abstention:
            write_table(abstention_log(ledger, instances, attributes), run_dir / ABSTENTIONS_FILE)
        write_report(report, run_dir / REPORT_DIR)
    return phase_reports, report


def execute_run(config: RunConfig) -> Path:
    """Load inputs, run the experiment, persist the run directory and its reports."""
    run_dir = Path(config.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    weekly, meta = load_inputs(config)
    cohort = prepare_cohort(weekly, meta, config.protected_attributes, config.age_threshold,
                            config.education_threshold, config.income_threshold)
    result = run_experiment(cohort, ExperimentConfig.from_run_config(config))

    write_table(result.ledger, run_dir / LEDGER_FILE)
    write_table(result.instances, run_dir / INSTANCES_FILE)
    write_table(result.training, run_dir / TRAINING_FILE)
    write_json(run_manifest(config, cohort, len(result.ledger)), run_dir / MANIFEST_FILE)
    logger.info(f"[RUN] Wrote ledger ({len(result.ledger)} rows) to {run_dir}")

    report_run_dir(run_dir, config)
    return run_dir


# ============================================================================
# SUBCOMMANDS
# ============================================================================

def _registered(command: str, config: Dict[str, Any], output_dir: str, seed: Optional[int],
                enabled: bool, action):
    row_id = start_run(command, config, output_dir, seed) if enabled else None
    try:
        result = action()
    except Exception as e:
        fail_run(row_id, f"{type(e).__name__}: {e}")
        raise
    complete_run(row_id, result if isinstance(result, int) else None)
    return result


def cmd_synth(args: argparse.Namespace) -> int:
    overrides = parse_overrides(args.set)
    spec = load_cohort_spec(args.config, overrides)
    out = Path(args.out)

    def _synth() -> None:
        if args.mode == "traces":
            write_traces(gen_cohort_traces(spec), out)
        else:
            write_cohort(gen_cohort(spec), out)

    _registered("synth", spec.to_flat(), str(out), spec.seed, not args.no_registry, _synth)
    logger.info(f"[SYNTH] {args.mode} cohort written to {out}")
    return EXIT_OK


def cmd_featurize(args: argparse.Namespace) -> int:
    thresholds = Thresholds(
        hyper=args.hyper,
        hypo=args.hypo,
        severe_hyper=args.severe_hyper,
        severe_min_duration=args.severe_min_duration,
        gap_tolerance=args.gap_tolerance,
        min_event_duration=args.min_event_duration,
    )
    loaded = load_cgm_csv(args.cgm_csv)
    if loaded.n_out_of_range:
        logger.warning(f"[FEATURIZE] {loaded.n_out_of_range} out-of-range reading(s) dropped")
    if args.meta:
        meta, _ = load_meta_csv(args.meta)
    else:
        meta = meta_frame([])

    def _featurize() -> int:
        weekly = featurize(loaded.readings, thresholds, n_workers=args.workers)
        write_weekly_csv(weekly, meta, args.out)
        return len(weekly)

    n_rows = _registered("featurize", {"cgm_csv": args.cgm_csv, **asdict(thresholds)}, args.out, None,
                         not args.no_registry, _featurize)
    logger.info(f"[FEATURIZE] {n_rows} weekly rows written to {args.out}")
    return EXIT_OK


def _run_config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = parse_overrides(args.set)
    if getattr(args, "manifest", None):
        manifest = read_flat_document(args.manifest)
        if "config" not in manifest:
            raise ConfigError(f"{args.manifest} has no 'config' section")
        return load_run_config(None, {**manifest["config"], **overrides})
    return load_run_config(args.config, overrides)


def cmd_run(args: argparse.Namespace) -> int:
    config = _run_config_from_args(args)
    logger.info(f"[RUN] Output directory: {config.output_dir}")

    def _run() -> int:
        run_dir = execute_run(config)
        return int(read_manifest(run_dir)["n_ledger_rows"])

    _registered("run", config.to_dict(), config.output_dir, config.master_seed, config.registry, _run)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    run_dirs = [Path(d) for d in args.run_dirs]
    reports = {}
    for run_dir in run_dirs:
        manifest = read_manifest(run_dir)
        config = load_run_config(None, manifest["config"])
        write_here = args.out is None and len(run_dirs) == 1
        _, report = report_run_dir(run_dir, config, write=write_here)
        name = run_dir.resolve().name
        if name in reports:
            raise ConfigError(f"Two run directories share the name '{name}'")
        reports[name] = report

    if len(run_dirs) == 1:
        if args.out is not None:
            write_report(reports[run_dirs[0].resolve().name], Path(args.out))
        logger.info(f"[REPORT] Report regenerated for {run_dirs[0]}")
        return EXIT_OK

    out = Path(args.out or "report")
    for name, report in reports.items():
        write_report(report, out / "datasets" / name)
    write_report(aggregate_datasets(reports), out)
    logger.info(f"[REPORT] Dataset-averaged report for {len(reports)} runs written to {out}")
    return EXIT_OK


def cmd_benchmark(args: argparse.Namespace) -> int:
    config = load_run_config(args.config, parse_overrides(args.set))
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    weekly, meta = load_inputs(config)
    cohort = prepare_cohort(weekly, meta, config.protected_attributes, config.age_threshold,
                            config.education_threshold, config.income_threshold)
    cfg = TrainConfig(config.learning_rate, config.l2, config.max_iter, config.tol, config.master_seed)

    def _benchmark() -> int:
        table = benchmark_learners(cohort, kinds, args.seeds, config.master_seed, cfg,
                                   bootstrap=config.bootstrap, decision_threshold=config.decision_threshold)
        write_table(table, Path(args.out))
        print(table.to_string(index=False))
        return len(table)

    _registered("benchmark", config.to_dict(), args.out, config.master_seed, config.registry, _benchmark)
    return EXIT_OK


def cmd_runs(args: argparse.Namespace) -> int:
    rows = list_runs(args.limit)
    if not rows:
        print("No registered runs.")
        return EXIT_OK
    for row in rows:
        print(f"{row['id']:>4}  {row['run_id']:<24} {row['command']:<10} {row['status']:<10} "
              f"{row['started_at'] or '-':<27} {row['completed_at'] or '-':<27} {row['output_dir']}")
    return EXIT_OK


# ============================================================================
# PARSER
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="retrain-audit",
                                     description="Audit fairness and stability of continual model retraining")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="Generate a synthetic cohort")
    synth.add_argument("--config", help="Cohort configuration file (flat YAML)")
    synth.add_argument("--set", action="append", metavar="KEY=VALUE", help="Override a cohort key")
    synth.add_argument("--mode", choices=["weekly", "traces"], default="weekly")
    synth.add_argument("--out", required=True, help="Output directory")
    synth.add_argument("--no-registry", action="store_true")
    synth.set_defaults(func=cmd_synth)

    feat = sub.add_parser("featurize", help="Weekly features from raw CGM readings")
    feat.add_argument("cgm_csv", help="Raw CGM CSV (patient_id, timestamp, glucose_mgdl)")
    feat.add_argument("--meta", help="Per-patient metadata CSV joined into the output")
    feat.add_argument("--out", required=True, help="Output weekly CSV")
    feat.add_argument("--hyper", type=float, default=180.0)
    feat.add_argument("--hypo", type=float, default=70.0)
    feat.add_argument("--severe-hyper", type=float, default=250.0)
    feat.add_argument("--severe-min-duration", type=float, default=180.0)
    feat.add_argument("--gap-tolerance", type=float, default=30.0)
    feat.add_argument("--min-event-duration", type=float, default=15.0)
    feat.add_argument("--workers", type=int, default=1)
    feat.add_argument("--no-registry", action="store_true")
    feat.set_defaults(func=cmd_featurize)

    run = sub.add_parser("run", help="Run the continual-retraining experiment")
    run.add_argument("--config", help="Run configuration file (flat YAML)")
    run.add_argument("--set", action="append", metavar="KEY=VALUE", help="Override a run key")
    run.add_argument("--manifest", help="Re-run from a run manifest")
    run.set_defaults(func=cmd_run)

    report = sub.add_parser("report", help="Rebuild reports from run directories")
    report.add_argument("run_dirs", nargs="+", help="Run directories")
    report.add_argument("--out", help="Report directory (default: <run_dir>/report for a single run)")
    report.set_defaults(func=cmd_report)

    bench = sub.add_parser("benchmark", help="Compare learner kinds")
    bench.add_argument("--config", help="Run configuration file (flat YAML)")
    bench.add_argument("--set", action="append", metavar="KEY=VALUE")
    bench.add_argument("--kinds", default="logreg,naive_bayes")
    bench.add_argument("--seeds", type=int, default=5)
    bench.add_argument("--out", default="benchmark.csv")
    bench.set_defaults(func=cmd_benchmark)

    runs = sub.add_parser("runs", help="List registered runs")
    runs.add_argument("--limit", type=int, default=50)
    runs.set_defaults(func=cmd_runs)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, dispatch the subcommand and map failures to exit codes."""
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_USAGE
    setup_logging("DEBUG" if args.verbose else None)

    try:
        return args.func(args)
    except (ConfigError, SchemaError, FileNotFoundError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_USAGE
    except Exception as e:
        logger.exception(f"Internal error: {e}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
