"""
Experiment report assembly.

Aggregates PhaseReports over phases and seeds into the metric-table shape (strategy ×
attribute summary), builds the instability-table shape (subgroup instability prevalence) from
the ledger, exports per-phase trajectories with 95% confidence intervals, and writes
everything as CSV/JSON with deterministic formatting.
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from src.abstain import equity_table
from src.metrics import (
    GROUP_A,
    GROUP_B,
    PHASE_METRICS,
    VARIANT_ALL,
    group_tsc,
    is_defined,
    self_consistency_matrix,
    stability_profile,
    unpack_predictions,
)

logger = logging.getLogger(__name__)

# Normal-approximation 95% interval
CI_Z = 1.96
UNDEFINED_CELL = "undefined"

# metric table column → phase metric
METRIC_TABLE_COLUMNS = {
    "av_auc": "auc",
    "delta_auc": "auc_gap",
    "eo": "eo_gap",
    "dp": "dp_gap",
    "oa": "oa",
}
INSTABILITY_TABLE_COLUMNS = ["pct_fr_instability", "pct_low_tsc", "pct_high_abstention", "group_tsc"]

SUMMARY_COLUMNS = ["mean", "ci_lo", "ci_hi", "n", "n_excluded", "degenerate_ci"]


@dataclass(frozen=True)
class CellSummary:
    mean: Optional[float]
    ci_lo: Optional[float]
    ci_hi: Optional[float]
    n: int
    n_excluded: int
    degenerate_ci: bool = False

    @property
    def defined(self) -> bool:
        return self.mean is not None

    def to_dict(self) -> Dict[str, Any]:
        return {"mean": self.mean, "ci_lo": self.ci_lo, "ci_hi": self.ci_hi, "n": self.n,
                "n_excluded": self.n_excluded, "degenerate_ci": self.degenerate_ci}


@dataclass
class ExperimentReport:
    """Long-format summary tables; `metric_table`/`instability_table` wide views are derived on write."""
    metric_table: pd.DataFrame
    instability_table: pd.DataFrame
    trajectories: pd.DataFrame
    equity: pd.DataFrame


def summarize(values: Sequence[Optional[float]]) -> CellSummary:
    """
    Mean and normal-approximation 95% CI over defined values.

    None/NaN values are excluded and counted. A single defined value gives a
    zero-width interval flagged as degenerate; no defined value gives an undefined cell.
    """
    defined = [float(v) for v in values if v is not None and not (isinstance(v, float) and math.isnan(v))]
    n_excluded = len(values) - len(defined)
    if not defined:
        return CellSummary(None, None, None, 0, n_excluded)
    mean = float(np.mean(defined))
    if len(defined) == 1:
        return CellSummary(mean, mean, mean, 1, n_excluded, degenerate_ci=True)
    half = CI_Z * float(np.std(defined, ddof=1)) / math.sqrt(len(defined))
    return CellSummary(mean, mean - half, mean + half, len(defined), n_excluded)


def _phase_average(values: Sequence[Optional[float]]) -> Optional[float]:
    defined = [v for v in values if v is not None]
    return float(np.mean(defined)) if defined else None


def _reports_frame(phase_reports: Sequence[Mapping[str, Any]]) -> pd.DataFrame:
    rows = []
    for report in phase_reports:
        base = {k: report[k] for k in ("schema", "seed", "strategy", "phase", "attribute", "variant")}
        for metric in PHASE_METRICS:
            rows.append(dict(base, metric=metric, value=report["metrics"].get(metric)))
    return pd.DataFrame(rows, columns=["schema", "seed", "strategy", "phase", "attribute", "variant",
                                       "metric", "value"])


def _summary_rows(keys: Dict[str, Any], summary: CellSummary) -> Dict[str, Any]:
    return dict(keys, **summary.to_dict())


def _values(series: pd.Series) -> List[Optional[float]]:
    return [None if v is None or (isinstance(v, float) and math.isnan(v)) else float(v) for v in series]


def aggregate(phase_reports: Sequence[Mapping[str, Any]],
              seeds: Optional[Sequence[int]] = None) -> ExperimentReport:
    """
    Aggregate per-phase reports across seeds.

    metric-table cells average each seed's defined phase values first, then summarize
    across seeds; a seed with no defined phase value counts as excluded.
    Trajectory cells summarize each phase across seeds.

    Args:
        phase_reports: PhaseReport dicts (all and/or retained variants)
        seeds: Restrict to these seeds (default: all present)

    Returns:
        ExperimentReport with long-format metric_table and trajectories; instability_table and
        equity are empty until filled by the ledger-based builders
    """
    frame = _reports_frame(phase_reports)
    if seeds is not None:
        frame = frame[frame["seed"].isin(list(seeds))]
    if frame.empty:
        raise ValueError("No phase reports to aggregate")

    table_rows = []
    cell_keys = ["schema", "variant", "strategy", "attribute", "metric"]
    for keys, cell in frame.groupby(cell_keys, sort=True):
        per_seed = [_phase_average(_values(g["value"])) for _, g in cell.groupby("seed", sort=True)]
        table_rows.append(_summary_rows(dict(zip(cell_keys, keys)), summarize(per_seed)))
    metric_table = pd.DataFrame(table_rows, columns=cell_keys + SUMMARY_COLUMNS)

    trajectory_rows = []
    trajectory_keys = ["schema", "variant", "strategy", "attribute", "phase", "metric"]
    for keys, cell in frame.groupby(trajectory_keys, sort=True):
        trajectory_rows.append(_summary_rows(dict(zip(trajectory_keys, keys)), summarize(_values(cell["value"]))))
    trajectories = pd.DataFrame(trajectory_rows, columns=trajectory_keys + SUMMARY_COLUMNS)

    n_seeds = frame["seed"].nunique()
    logger.info(f"[REPORT] Aggregated {len(phase_reports)} phase reports over {n_seeds} seed(s)")
    if n_seeds == 1:
        logger.warning("[REPORT] Single seed: confidence intervals are degenerate (zero width)")
    return ExperimentReport(metric_table=metric_table, instability_table=pd.DataFrame(), trajectories=trajectories,
                            equity=pd.DataFrame())


def _patient_groups(instances: pd.DataFrame, attribute: str) -> pd.Series:
    return instances.groupby("patient_id")[attribute].first()


def stability_table(ledger: pd.DataFrame, instances: pd.DataFrame, attributes: Sequence[str],
                    equity: pd.DataFrame, decision_threshold: float = 0.5,
                    flip_threshold: float = 0.20, sc_threshold: float = 0.75,
                    schema: Optional[str] = None) -> pd.DataFrame:
    """
    instability-table cells per (schema, strategy, attribute, group), summarized over seeds.

    Per seed: % of the group's individuals unstable by flips, % unstable by low or
    decreasing SC, % with high abstention (from `equity`), and the group's mean TSC.
    """
    if schema is None:
        schemas = sorted(ledger["schema"].unique())
        schema = "retrospective" if "retrospective" in schemas else schemas[0]
    ledger = ledger[ledger["schema"] == schema]
    patient_of = instances.set_index("instance_id")["patient_id"]
    per_seed: List[Dict[str, Any]] = []
    for (seed, strategy), arm in ledger.groupby(["seed", "strategy"], sort=True):
        phases = sorted(arm["phase"].unique())
        cells = pd.DataFrame({
            "instance_id": arm["instance_id"].to_numpy(),
            "phase": arm["phase"].to_numpy(),
            "pred": (arm["score"].to_numpy() >= decision_threshold).astype(float),
            "sc": self_consistency_matrix(unpack_predictions(arm["boot_preds"].tolist())),
        })
        preds = cells.pivot(index="instance_id", columns="phase", values="pred").reindex(columns=phases)
        sc = cells.pivot(index="instance_id", columns="phase", values="sc").reindex(columns=phases)
        _, individuals = stability_profile(preds.to_numpy(), sc.to_numpy(), preds.index.tolist(),
                                           patient_of.reindex(preds.index).tolist(), flip_threshold, sc_threshold)
        individuals = individuals.set_index("patient_id")
        for attribute in attributes:
            groups = _patient_groups(instances, attribute).reindex(individuals.index)
            tsc_a, tsc_b = group_tsc(individuals["mean_tsc"].to_numpy(dtype=float),
                                     [g if isinstance(g, str) else None for g in groups])
            for group, tsc in ((GROUP_A, tsc_a), (GROUP_B, tsc_b)):
                members = individuals[(groups == group).to_numpy()]
                flips = members["unstable_by_flips"].dropna().astype(bool)
                low_tsc = members["unstable_by_tsc"].dropna().astype(bool)
                high = equity[(equity["schema"] == schema) & (equity["seed"] == seed)
                              & (equity["strategy"] == strategy) & (equity["attribute"] == attribute)
                              & (equity["group"] == group)] if not equity.empty else pd.DataFrame()
                per_seed.append({
                    "schema": schema,
                    "seed": int(seed),
                    "strategy": strategy,
                    "attribute": attribute,
                    "group": group,
                    "pct_fr_instability": 100.0 * float(flips.mean()) if len(flips) else None,
                    "pct_low_tsc": 100.0 * float(low_tsc.mean()) if len(low_tsc) else None,
                    "pct_high_abstention": (float(high["pct_high_abstention"].iloc[0])
                                            if len(high) and not pd.isna(high["pct_high_abstention"].iloc[0])
                                            else None),
                    "group_tsc": float(tsc) if is_defined(tsc) and not math.isnan(tsc) else None,
                })
    seeds_frame = pd.DataFrame(per_seed)
    rows = []
    keys = ["schema", "strategy", "attribute", "group"]
    if seeds_frame.empty:
        return pd.DataFrame(columns=keys + ["metric"] + SUMMARY_COLUMNS)
    for key, cell in seeds_frame.groupby(keys, sort=True):
        for metric in INSTABILITY_TABLE_COLUMNS:
            rows.append(_summary_rows(dict(zip(keys, key), metric=metric), summarize(_values(cell[metric]))))
    return pd.DataFrame(rows, columns=keys + ["metric"] + SUMMARY_COLUMNS)


def equity_summary(equity: pd.DataFrame) -> pd.DataFrame:
    """Seed-averaged abstention equity per (schema, strategy, attribute, group)."""
    if equity.empty:
        return equity
    keys = ["schema", "strategy", "attribute", "group"]
    value_columns = [c for c in equity.columns if c not in keys + ["seed"]]
    return equity.groupby(keys, sort=True)[value_columns].mean().reset_index()


def build_report(phase_reports: Sequence[Mapping[str, Any]], ledger: pd.DataFrame, instances: pd.DataFrame,
                 attributes: Sequence[str], decision_threshold: float = 0.5,
                 flip_threshold: float = 0.20, sc_threshold: float = 0.75,
                 high_abstention_fraction: float = 0.10) -> ExperimentReport:
    """Full ExperimentReport: aggregated phase reports plus ledger-based instability and equity tables."""
    report = aggregate(phase_reports)
    equity = equity_table(ledger, instances, attributes, decision_threshold, high_abstention_fraction)
    report.instability_table = stability_table(ledger, instances, attributes, equity, decision_threshold,
                                      flip_threshold, sc_threshold)
    report.equity = equity_summary(equity)
    return report


# ============================================================================
# MULTI-DATASET AVERAGING
# ============================================================================

def aggregate_datasets(reports: Mapping[str, ExperimentReport]) -> ExperimentReport:
    """
    Average per-dataset cells across datasets.

    Each dataset contributes its seed-averaged cell mean; the result summarizes those
    means across datasets, with undefined per-dataset cells excluded and counted.
    """
    def _combine(tables: List[pd.DataFrame], keys: List[str]) -> pd.DataFrame:
        tables = [t for t in tables if not t.empty]
        if not tables:
            return pd.DataFrame()
        stacked = pd.concat(tables, ignore_index=True)
        rows = []
        for key, cell in stacked.groupby(keys, sort=True, dropna=False):
            rows.append(_summary_rows(dict(zip(keys, key)), summarize(_values(cell["mean"]))))
        return pd.DataFrame(rows, columns=keys + SUMMARY_COLUMNS)

    names = sorted(reports)
    metric_table = _combine([reports[n].metric_table for n in names],
                            ["schema", "variant", "strategy", "attribute", "metric"])
    instability_table = _combine([reports[n].instability_table for n in names],
                                 ["schema", "strategy", "attribute", "group", "metric"])
    trajectories = _combine([reports[n].trajectories for n in names],
                            ["schema", "variant", "strategy", "attribute", "phase", "metric"])
    equity_tables = [reports[n].equity for n in names if not reports[n].equity.empty]
    equity = equity_summary(pd.concat(equity_tables, ignore_index=True).assign(seed=0)) if equity_tables else pd.DataFrame()
    logger.info(f"[REPORT] Averaged {len(names)} dataset(s): {', '.join(names)}")
    return ExperimentReport(metric_table=metric_table, instability_table=instability_table,
                            trajectories=trajectories, equity=equity)


# ============================================================================
# WRITING
# ============================================================================

def _render(value: Optional[float]) -> Union[float, str]:
    return UNDEFINED_CELL if value is None or (isinstance(value, float) and math.isnan(value)) else value


def metric_table_wide(metric_table: pd.DataFrame, schema: str, variant: str = VARIANT_ALL) -> pd.DataFrame:
    """One row per (strategy, attribute) with the metric-table metric columns; undefined cells rendered as text."""
    subset = metric_table[(metric_table["schema"] == schema) & (metric_table["variant"] == variant)]
    rows = []
    for (strategy, attribute), cell in subset.groupby(["strategy", "attribute"], sort=True):
        means = dict(zip(cell["metric"], cell["mean"]))
        row = {"strategy": strategy, "attribute": attribute}
        for column, metric in METRIC_TABLE_COLUMNS.items():
            row[column] = _render(means.get(metric))
        rows.append(row)
    return pd.DataFrame(rows, columns=["strategy", "attribute"] + list(METRIC_TABLE_COLUMNS))


def instability_table_wide(instability_table: pd.DataFrame) -> pd.DataFrame:
    keys = ["schema", "strategy", "attribute", "group"]
    if instability_table.empty:
        return pd.DataFrame(columns=keys + INSTABILITY_TABLE_COLUMNS)
    rows = []
    for key, cell in instability_table.groupby(keys, sort=True):
        means = dict(zip(cell["metric"], cell["mean"]))
        rows.append(dict(zip(keys, key), **{m: _render(means.get(m)) for m in INSTABILITY_TABLE_COLUMNS}))
    return pd.DataFrame(rows, columns=keys + INSTABILITY_TABLE_COLUMNS)


def _write_csv(frame: pd.DataFrame, path: Path, na_rep: str = "") -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n", na_rep=na_rep)
    return path


def write_json(data: Any, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(data, f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")
    return path


def write_report(report: ExperimentReport, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """
    Write an ExperimentReport.

    Files: metric_table_<schema>[_retained].csv, metric_table_long.csv, instability_table.csv,
    instability_table_long.csv, trajectories.csv, phases/<schema>_<strategy>_<attribute>.csv
    and equity_<attribute>.csv.
    """
    out = Path(out_dir)
    written: Dict[str, Path] = {}
    if not report.metric_table.empty:
        for schema in sorted(report.metric_table["schema"].unique()):
            for variant in sorted(report.metric_table["variant"].unique()):
                suffix = "" if variant == VARIANT_ALL else f"_{variant}"
                name = f"metric_table_{schema}{suffix}"
                written[name] = _write_csv(metric_table_wide(report.metric_table, schema, variant), out / f"{name}.csv")
        written["metric_table_long"] = _write_csv(report.metric_table, out / "metric_table_long.csv")
    written["instability_table"] = _write_csv(instability_table_wide(report.instability_table),
                                              out / "instability_table.csv")
    if not report.instability_table.empty:
        written["instability_table_long"] = _write_csv(report.instability_table, out / "instability_table_long.csv")
    if not report.trajectories.empty:
        written["trajectories"] = _write_csv(report.trajectories, out / "trajectories.csv",
                                              na_rep=UNDEFINED_CELL)
        all_variant = report.trajectories[report.trajectories["variant"] == VARIANT_ALL]
        for (schema, strategy, attribute), cell in all_variant.groupby(["schema", "strategy", "attribute"], sort=True):
            wide = cell.pivot(index="phase", columns="metric", values="mean").reindex(columns=PHASE_METRICS).reset_index()
            written[f"phases/{schema}_{strategy}_{attribute}"] = _write_csv(
                wide, out / "phases" / f"{schema}_{strategy}_{attribute}.csv", na_rep=UNDEFINED_CELL)
    if not report.equity.empty:
        for attribute, cell in report.equity.groupby("attribute", sort=True):
            written[f"equity_{attribute}"] = _write_csv(cell.reset_index(drop=True), out / f"equity_{attribute}.csv")
    logger.info(f"[REPORT] Wrote {len(written)} report file(s) to {out}")
    return written
