"""
Distance-based split-conformal abstention.

An instance's nonconformity score is its mean Euclidean distance to the k nearest
proper-training points in the model's standardized feature space. The threshold tau
is an order statistic of calibration-split scores chosen so that, on exchangeable
data, at most an alpha fraction of instances is abstained on.
"""

import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

from src.dataio import patient_split
from src.errors import CalibrationError, SchemaError
from src.metrics import (
    GROUP_A,
    GROUP_B,
    build_phase_reports,
    flip_stats,
    is_defined,
    self_consistency_matrix,
    temporal_sc,
    unpack_predictions,
)

logger = logging.getLogger(__name__)

CALIBRATION_FRACTION = 0.2
HIGH_ABSTENTION_FRACTION = 0.10
ABSTENTION_LOG_KEYS = ["schema", "seed", "strategy", "attribute"]
# Rows of the query matrix processed per distance block
DISTANCE_BLOCK = 2048


@dataclass
class AbstentionRecord:
    instance_id: str
    phase: int
    distance: float
    tau: float
    abstained: bool
    group: Optional[str]
    score: float


@dataclass
class Abstainer:
    k: int
    alpha: float
    tau: float
    reference: np.ndarray
    calibration_distances: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    feature_names: List[str]

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.scale

    def distances(self, x: np.ndarray) -> np.ndarray:
        """Mean distance to the k nearest reference points for each row of raw features `x`."""
        arr = np.asarray(x, dtype=float)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.shape[1] != self.reference.shape[1]:
            raise SchemaError(f"Expected {self.reference.shape[1]} features, got {arr.shape[1]}")
        return _knn_mean_distance(self.standardize(arr), self.reference, self.k)

    def tau_with(self, tau: float) -> "Abstainer":
        return Abstainer(self.k, self.alpha, tau, self.reference, self.calibration_distances,
                         self.mean, self.scale, self.feature_names)


def _knn_mean_distance(query: np.ndarray, reference: np.ndarray, k: int) -> np.ndarray:
    k = min(k, reference.shape[0])
    out = np.empty(query.shape[0])
    for start in range(0, query.shape[0], DISTANCE_BLOCK):
        block = cdist(query[start:start + DISTANCE_BLOCK], reference)
        if k < block.shape[1]:
            block = np.partition(block, k - 1, axis=1)
        nearest = block[:, :k]
        out[start:start + DISTANCE_BLOCK] = nearest.mean(axis=1)
    return out


def conformal_threshold(calibration_distances: Sequence[float], alpha: float) -> float:
    """
    The ceil((1 − alpha)(n + 1))-th smallest calibration distance; +inf when that
    rank exceeds n.
    """
    d = np.sort(np.asarray(calibration_distances, dtype=float))
    n = len(d)
    rank = math.ceil((1.0 - alpha) * (n + 1) - 1e-9)
    if rank > n:
        return math.inf
    return float(d[max(rank, 1) - 1])


def calibrate(train: pd.DataFrame, feature_names: Sequence[str], k: int = 5, alpha: float = 0.05,
              seed: int = 0, mean: Optional[np.ndarray] = None,
              scale: Optional[np.ndarray] = None) -> Abstainer:
    """
    Calibrate an abstainer on a training table.

    The table is split by patient into proper-training (80%) and calibration (20%)
    parts; each calibration row's score is its mean distance to the k nearest
    proper-training rows.

    Args:
        train: Training table
        feature_names: Feature columns (same order as the model)
        k: Neighbor count
        alpha: Abstention budget in (0, 1)
        seed: Split seed
        mean: Standardizer mean (defaults to the training table's)
        scale: Standardizer scale (defaults to the training table's, constant columns → 1)

    Raises:
        CalibrationError: Fewer than 5(k+1) rows, or a degenerate split
    """
    if not 0.0 < alpha < 1.0:
        raise CalibrationError(f"alpha must be in (0, 1), got {alpha}")
    if len(train) < 5 * (k + 1):
        raise CalibrationError(f"{len(train)} training rows; calibration needs at least {5 * (k + 1)}")
    x_all = train[list(feature_names)].to_numpy(dtype=float)
    if mean is None or scale is None:
        mean = x_all.mean(axis=0)
        sd = x_all.std(axis=0)
        scale = np.where(sd > 0, sd, 1.0)

    proper, calibration = patient_split(train, CALIBRATION_FRACTION, seed)
    if len(calibration) == 0 or len(proper) < k:
        raise CalibrationError(f"Degenerate calibration split ({len(proper)} proper / {len(calibration)} calibration rows)")

    reference = (proper[list(feature_names)].to_numpy(dtype=float) - mean) / scale
    cal_x = (calibration[list(feature_names)].to_numpy(dtype=float) - mean) / scale
    cal_d = np.sort(_knn_mean_distance(cal_x, reference, k))
    tau = conformal_threshold(cal_d, alpha)
    logger.debug(f"Calibrated abstainer: n_ref={len(reference)}, n_cal={len(cal_d)}, tau={tau:.4f}")
    return Abstainer(k=k, alpha=alpha, tau=tau, reference=reference, calibration_distances=cal_d,
                     mean=np.asarray(mean, dtype=float), scale=np.asarray(scale, dtype=float),
                     feature_names=list(feature_names))


def knn_distance(abstainer: Abstainer, x: Sequence[float]) -> float:
    """Mean distance from one raw feature vector to its k nearest reference points."""
    return float(abstainer.distances(np.asarray(x, dtype=float))[0])


def decide(abstainer: Abstainer, x: Sequence[float]) -> bool:
    """True (abstain) iff d(x) > tau."""
    return knn_distance(abstainer, x) > abstainer.tau


def decide_many(abstainer: Abstainer, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(distances, abstained flags) for every row of `x`."""
    d = abstainer.distances(x)
    return d, d > abstainer.tau


def abstention_records(ledger: pd.DataFrame, instances: pd.DataFrame, attribute: str) -> List[AbstentionRecord]:
    """Abstention log entries for one attribute's group labels."""
    groups = instances.set_index("instance_id")[attribute]
    return [
        AbstentionRecord(
            instance_id=row.instance_id,
            phase=int(row.phase),
            distance=float(row.distance),
            tau=float(row.tau),
            abstained=bool(row.abstained),
            group=groups.get(row.instance_id) if isinstance(groups.get(row.instance_id), str) else None,
            score=float(row.score),
        )
        for row in ledger.itertuples(index=False)
    ]


def abstention_log(ledger: pd.DataFrame, instances: pd.DataFrame, attributes: Sequence[str]) -> pd.DataFrame:
    """
    Abstention decisions of every evaluated prediction, one row per (ledger row, attribute).

    Args:
        ledger: Prediction ledger with distance/tau/abstained columns
        instances: Instance index with one group column per attribute
        attributes: Protected attributes to log group membership for

    Returns:
        DataFrame with schema, seed, strategy, attribute and the AbstentionRecord fields
    """
    columns = [f.name for f in fields(AbstentionRecord)]
    frames = []
    for (schema, seed, strategy), arm in ledger.groupby(["schema", "seed", "strategy"], sort=True):
        for attribute in attributes:
            records = pd.DataFrame([asdict(r) for r in abstention_records(arm, instances, attribute)], columns=columns)
            frames.append(records.assign(schema=schema, seed=seed, strategy=strategy, attribute=attribute))
    if not frames:
        return pd.DataFrame(columns=ABSTENTION_LOG_KEYS + columns)
    log = pd.concat(frames, ignore_index=True)[ABSTENTION_LOG_KEYS + columns]
    logger.info(f"Abstention log: {len(log)} decision(s), {int(log['abstained'].sum())} abstained")
    return log


def _individual_stability(arm: pd.DataFrame, decision_threshold: float) -> pd.DataFrame:
    """Per-patient mean flip fraction and mean TSC from unmasked predictions."""
    phases = sorted(arm["phase"].unique())
    preds = (arm["score"].to_numpy() >= decision_threshold).astype(float)
    sc = self_consistency_matrix(unpack_predictions(arm["boot_preds"].tolist()))
    frame = pd.DataFrame({"instance_id": arm["instance_id"].to_numpy(), "phase": arm["phase"].to_numpy(),
                          "pred": preds, "sc": sc})
    pred_pivot = frame.pivot(index="instance_id", columns="phase", values="pred").reindex(columns=phases)
    sc_pivot = frame.pivot(index="instance_id", columns="phase", values="sc").reindex(columns=phases)
    rows = []
    for instance_id in pred_pivot.index:
        series = [None if np.isnan(p) else int(p) for p in pred_pivot.loc[instance_id].to_numpy()]
        _, fraction = flip_stats(series)
        sc_values = sc_pivot.loc[instance_id].dropna().to_numpy()
        tsc = temporal_sc(sc_values)[0] if len(sc_values) else np.nan
        rows.append({"instance_id": instance_id,
                     "flip_fraction": float(fraction) if is_defined(fraction) else np.nan,
                     "tsc": tsc})
    return pd.DataFrame(rows, columns=["instance_id", "flip_fraction", "tsc"])


def equity_table(ledger: pd.DataFrame, instances: pd.DataFrame, attributes: Sequence[str],
                 decision_threshold: float = 0.5,
                 high_abstention_fraction: float = HIGH_ABSTENTION_FRACTION) -> pd.DataFrame:
    """
    Abstention equity per (schema, seed, strategy, attribute, group).

    Columns: abstention_rate (over evaluated cells), n_individuals,
    pct_high_abstention (individuals whose abstained fraction of evaluated weeks is
    > high_abstention_fraction), and mean flip fraction / TSC of individuals with at
    least one abstained week versus none.
    """
    merged = ledger.merge(instances[["instance_id", "patient_id"] + list(attributes)], on="instance_id", how="left")
    rows: List[Dict[str, Any]] = []
    for (schema, seed, strategy), arm in merged.groupby(["schema", "seed", "strategy"], sort=True):
        stability = _individual_stability(arm, decision_threshold).merge(
            instances[["instance_id", "patient_id"]], on="instance_id", how="left")
        per_patient = stability.groupby("patient_id").agg(flip_fraction=("flip_fraction", "mean"),
                                                          tsc=("tsc", "mean"))
        abstained_fraction = arm.groupby("patient_id")["abstained"].mean()
        for attribute in attributes:
            patient_groups = arm.groupby("patient_id")[attribute].first()
            for group in (GROUP_A, GROUP_B):
                cells = arm[arm[attribute] == group]
                patients = patient_groups.index[patient_groups == group]
                fractions = abstained_fraction.reindex(patients)
                any_abstained = fractions > 0
                stab = per_patient.reindex(patients)
                rows.append({
                    "schema": schema,
                    "seed": int(seed),
                    "strategy": strategy,
                    "attribute": attribute,
                    "group": group,
                    "n_cells": int(len(cells)),
                    "abstention_rate": float(cells["abstained"].mean()) if len(cells) else np.nan,
                    "n_individuals": int(len(patients)),
                    "pct_high_abstention": float(100.0 * (fractions > high_abstention_fraction).mean()) if len(patients) else np.nan,
                    "flip_fraction_abstained": float(stab.loc[any_abstained.to_numpy(), "flip_fraction"].mean()) if any_abstained.any() else np.nan,
                    "flip_fraction_retained": float(stab.loc[~any_abstained.to_numpy(), "flip_fraction"].mean()) if (~any_abstained).any() else np.nan,
                    "tsc_abstained": float(stab.loc[any_abstained.to_numpy(), "tsc"].mean()) if any_abstained.any() else np.nan,
                    "tsc_retained": float(stab.loc[~any_abstained.to_numpy(), "tsc"].mean()) if (~any_abstained).any() else np.nan,
                })
    return pd.DataFrame(rows)


def post_abstention_metrics(ledger: pd.DataFrame, instances: pd.DataFrame, attributes: Sequence[str],
                            decision_threshold: float = 0.5,
                            high_abstention_fraction: float = HIGH_ABSTENTION_FRACTION,
                            training: Optional[pd.DataFrame] = None) -> Tuple[List[Dict[str, Any]], pd.DataFrame]:
    """
    Metrics recomputed on retained instances, plus the abstention equity table.

    Abstained cells are masked out of flip chains (both adjacent transitions skipped).

    Returns:
        (retained-only phase reports, equity table)
    """
    reports = build_phase_reports(ledger, instances, attributes, decision_threshold,
                                  retained_only=True, training=training)
    equity = equity_table(ledger, instances, attributes, decision_threshold, high_abstention_fraction)
    n_abstained = int(ledger["abstained"].sum())
    logger.info(f"Abstention: {n_abstained} of {len(ledger)} cells withheld ({n_abstained / max(len(ledger), 1):.3%})")
    return reports, equity
