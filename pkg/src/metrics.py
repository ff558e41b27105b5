"""
Performance, fairness, stability and multiplicity metrics.

All functions are pure. A metric whose precondition fails returns an Undefined value
carrying a reason code instead of a number, so downstream aggregation can skip it
and count the exclusion.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import rankdata, wasserstein_distance

from src.errors import SchemaError

logger = logging.getLogger(__name__)

GROUP_A = "A"
GROUP_B = "B"

FLIP_INSTABILITY_FRACTION = 0.20
LOW_SC_THRESHOLD = 0.75
# Least-squares slopes within this of zero count as flat
SLOPE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class Undefined:
    """A metric value whose precondition failed."""
    reason: str

    def __repr__(self) -> str:
        return f"undefined({self.reason})"


Value = Union[float, Undefined]


@dataclass(frozen=True)
class MetricValue:
    name: str
    value: Value
    phase: Optional[int] = None
    scope: str = "overall"
    n: int = 0

    @property
    def defined(self) -> bool:
        return not isinstance(self.value, Undefined)


def is_defined(value: object) -> bool:
    return not isinstance(value, Undefined) and value is not None


def _group_mask(groups: Sequence[Optional[str]], group: str) -> np.ndarray:
    return np.array([g == group for g in groups], dtype=bool)


def _check_lengths(*arrays: Sequence) -> None:
    n = len(arrays[0])
    if any(len(a) != n for a in arrays[1:]):
        raise SchemaError(f"Length mismatch: {[len(a) for a in arrays]}")


# ============================================================================
# PERFORMANCE
# ============================================================================

def auc(scores: Sequence[float], labels: Sequence[int]) -> Value:
    """
    ROC AUC in Mann-Whitney form: fraction of (positive, negative) pairs ranked
    correctly, ties counted 1/2.

    Returns:
        AUC in [0, 1], or Undefined("single-class") when a class is absent
    """
    _check_lengths(scores, labels)
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(int)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return Undefined("single-class")
    ranks = rankdata(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def gap(a: Value, b: Value) -> Value:
    if not is_defined(a):
        return a
    if not is_defined(b):
        return b
    return abs(float(a) - float(b))


def group_auc_and_gap(scores: Sequence[float], labels: Sequence[int],
                      groups: Sequence[Optional[str]]) -> Tuple[Value, Value, Value]:
    """
    Per-group AUC and the absolute gap between them. Instances with a missing
    group label (None) are ignored.

    Returns:
        (AUC of group A, AUC of group B, |difference|)
    """
    _check_lengths(scores, labels, groups)
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(int)
    per_group = []
    for group in (GROUP_A, GROUP_B):
        mask = _group_mask(groups, group)
        per_group.append(auc(s[mask], y[mask]) if mask.any() else Undefined("empty-group"))
    return per_group[0], per_group[1], gap(per_group[0], per_group[1])


def delta_auc(series: Sequence[Value]) -> List[Value]:
    """Consecutive differences AUC_t − AUC_{t−1}; undefined endpoints propagate."""
    out: List[Value] = []
    for prev, cur in zip(series[:-1], series[1:]):
        if not is_defined(prev) or not is_defined(cur):
            out.append(Undefined("undefined-neighbour"))
        else:
            out.append(float(cur) - float(prev))
    return out


# ============================================================================
# FAIRNESS
# ============================================================================

def eo_gap(preds: Sequence[int], labels: Sequence[int], groups: Sequence[Optional[str]]) -> Value:
    """Equal-opportunity gap |TPR_A − TPR_B|."""
    _check_lengths(preds, labels, groups)
    p = np.asarray(preds).astype(int)
    y = np.asarray(labels).astype(int)
    tprs = []
    for group in (GROUP_A, GROUP_B):
        positives = _group_mask(groups, group) & (y == 1)
        if not positives.any():
            return Undefined("no-positives")
        tprs.append(p[positives].mean())
    return float(abs(tprs[0] - tprs[1]))


def dp_gap(preds: Sequence[int], groups: Sequence[Optional[str]]) -> Value:
    """Demographic-parity gap |P(ŷ=1 | A) − P(ŷ=1 | B)|."""
    _check_lengths(preds, groups)
    p = np.asarray(preds).astype(int)
    rates = []
    for group in (GROUP_A, GROUP_B):
        mask = _group_mask(groups, group)
        if not mask.any():
            return Undefined("empty-group")
        rates.append(p[mask].mean())
    return float(abs(rates[0] - rates[1]))


# ============================================================================
# STABILITY / ARBITRARINESS
# ============================================================================

def self_consistency(predictions: Sequence[int]) -> float:
    """
    Unbiased pairwise agreement of B binary predictions for one instance:
    [N0(N0−1) + N1(N1−1)] / (B(B−1)). Not clamped.

    Raises:
        SchemaError: If fewer than two predictions are given
    """
    p = np.asarray(predictions).astype(int)
    b = len(p)
    if b < 2:
        raise SchemaError(f"self_consistency needs at least 2 predictions, got {b}")
    n1 = int(p.sum())
    n0 = b - n1
    return (n0 * (n0 - 1) + n1 * (n1 - 1)) / (b * (b - 1))


def self_consistency_matrix(predictions: np.ndarray) -> np.ndarray:
    """Row-wise self_consistency of an (instances × B) 0/1 matrix."""
    p = np.asarray(predictions).astype(int)
    if p.ndim != 2 or p.shape[1] < 2:
        raise SchemaError(f"Expected an (n, B>=2) matrix, got shape {p.shape}")
    b = p.shape[1]
    n1 = p.sum(axis=1)
    n0 = b - n1
    return (n0 * (n0 - 1) + n1 * (n1 - 1)) / (b * (b - 1))


def systematic_arbitrariness(sc_a: Sequence[float], sc_b: Sequence[float]) -> Value:
    """Exact 1-D Wasserstein-1 distance between two groups' SC samples."""
    if len(sc_a) == 0 or len(sc_b) == 0:
        return Undefined("empty-group")
    return float(wasserstein_distance(np.asarray(sc_a, dtype=float), np.asarray(sc_b, dtype=float)))


def overall_arbitrariness(sc_values: Sequence[float]) -> Value:
    """1 − mean SC over the instances evaluated at a phase."""
    if len(sc_values) == 0:
        return Undefined("empty")
    return float(1.0 - np.mean(np.asarray(sc_values, dtype=float)))


def temporal_sc(sc_series: Sequence[float]) -> Tuple[float, float]:
    """(TSC, ΔTSC) = (mean of SC over phases, SC at first phase − SC at last phase)."""
    s = np.asarray(sc_series, dtype=float)
    if len(s) == 0:
        raise SchemaError("temporal_sc needs at least one phase")
    return float(s.mean()), float(s[0] - s[-1])


def group_tsc(tsc_values: Sequence[float], groups: Sequence[Optional[str]]) -> Tuple[Value, Value]:
    """Mean TSC within group A and group B."""
    _check_lengths(tsc_values, groups)
    t = np.asarray(tsc_values, dtype=float)
    out = []
    for group in (GROUP_A, GROUP_B):
        mask = _group_mask(groups, group)
        out.append(float(t[mask].mean()) if mask.any() else Undefined("empty-group"))
    return out[0], out[1]


def flip_stats(pred_series: Sequence[Optional[int]]) -> Tuple[List[Optional[bool]], Value]:
    """
    Prediction flips between consecutive phases for one instance.

    Args:
        pred_series: Prediction per phase; None where the instance was abstained on
            or not evaluated

    Returns:
        (flip indicator per transition, None where masked; flips / evaluated transitions)
    """
    if len(pred_series) < 2:
        return [], Undefined("fewer-than-two-phases")
    flips: List[Optional[bool]] = []
    for prev, cur in zip(pred_series[:-1], pred_series[1:]):
        if prev is None or cur is None or _isnan(prev) or _isnan(cur):
            flips.append(None)
        else:
            flips.append(int(prev) != int(cur))
    evaluated = [f for f in flips if f is not None]
    if not evaluated:
        return flips, Undefined("no-evaluated-transitions")
    return flips, sum(evaluated) / len(evaluated)


def _isnan(v: object) -> bool:
    return isinstance(v, float) and np.isnan(v)


def flip_matrix(preds: np.ndarray) -> np.ndarray:
    """
    Flip indicators for an (instances × phases) prediction matrix with NaN for
    masked cells. Returns an (instances × phases−1) float matrix, NaN where masked.
    """
    p = np.asarray(preds, dtype=float)
    prev, cur = p[:, :-1], p[:, 1:]
    flips = (prev != cur).astype(float)
    flips[np.isnan(prev) | np.isnan(cur)] = np.nan
    return flips


def flip_rate(preds: np.ndarray) -> List[Value]:
    """Population FlipRate per transition over instances evaluated at both phases."""
    flips = flip_matrix(preds)
    out: List[Value] = []
    for col in flips.T:
        valid = col[~np.isnan(col)]
        out.append(float(valid.mean()) if len(valid) else Undefined("no-evaluated-transitions"))
    return out


def least_squares_slope(values: Sequence[float]) -> Value:
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        return Undefined("fewer-than-two-phases")
    t = np.arange(len(v), dtype=float)
    tc = t - t.mean()
    return float(tc @ (v - v.mean()) / (tc @ tc))


def instability_flags(week_flip_fractions: Sequence[Value], week_sc_series: np.ndarray,
                      flip_threshold: float = FLIP_INSTABILITY_FRACTION,
                      sc_threshold: float = LOW_SC_THRESHOLD) -> Tuple[Value, Value]:
    """
    Individual-level instability flags from week-level quantities.

    Args:
        week_flip_fractions: Flip fraction of each of the individual's weeks
        week_sc_series: (weeks × phases) SC matrix, NaN where not evaluated
        flip_threshold: Strict threshold on the individual's mean flip fraction
        sc_threshold: Strict lower bound on the individual's mean SC at every phase

    Returns:
        (unstable_by_flips, unstable_by_tsc); Undefined when no input is defined
    """
    fractions = [float(f) for f in week_flip_fractions if is_defined(f)]
    by_flips: Value = (np.mean(fractions) > flip_threshold) if fractions else Undefined("no-flip-data")

    sc = np.asarray(week_sc_series, dtype=float)
    if sc.ndim == 1:
        sc = sc.reshape(1, -1)
    phase_defined = ~np.all(np.isnan(sc), axis=0)
    if not phase_defined.any():
        return _bool_or(by_flips), Undefined("no-sc-data")
    individual_sc = np.nanmean(sc[:, phase_defined], axis=0)
    slope = least_squares_slope(individual_sc)
    decreasing = is_defined(slope) and slope < -SLOPE_TOLERANCE
    by_tsc = bool(decreasing or individual_sc.min() < sc_threshold)
    return _bool_or(by_flips), by_tsc


def _bool_or(value: Value) -> Value:
    return bool(value) if is_defined(value) else value


# ============================================================================
# MULTIPLICITY
# ============================================================================

def multiplicity(pred_vectors: np.ndarray) -> Tuple[int, Value]:
    """
    Rashomon-set multiplicity over M prediction vectors of length N.

    Returns:
        (DPR: number of distinct prediction vectors,
         DR: mean pairwise Hamming disagreement / N; undefined when M < 2)
    """
    p = np.asarray(pred_vectors).astype(int)
    if p.ndim != 2 or p.shape[1] == 0 or p.shape[0] == 0:
        raise SchemaError(f"Expected an (M, N>=1) matrix, got shape {p.shape}")
    m, n = p.shape
    dpr = int(len(np.unique(p, axis=0)))
    if m < 2:
        return dpr, Undefined("fewer-than-two-models")
    # Per instance, the number of disagreeing pairs is N1·N0
    n1 = p.sum(axis=0)
    disagreeing_pairs = float(np.sum(n1 * (m - n1)))
    dr = disagreeing_pairs / (m * (m - 1) / 2.0) / n
    return dpr, dr


# ============================================================================
# LEDGER-LEVEL EVALUATION
# ============================================================================

LEDGER_KEY = ["schema", "seed", "strategy", "phase"]
VARIANT_ALL = "all"
VARIANT_RETAINED = "retained"

PHASE_METRICS = [
    "auc", "auc_a", "auc_b", "auc_gap", "delta_auc", "eo_gap", "dp_gap",
    "mean_sc", "oa", "sa", "sc_a", "sc_b", "dpr", "dr", "flip_rate",
    "abstention_rate", "abstention_rate_a", "abstention_rate_b",
]


def pack_predictions(matrix: np.ndarray) -> List[str]:
    """Encode each row of a 0/1 matrix as a string of '0'/'1' characters."""
    m = np.asarray(matrix).astype(np.uint8)
    if m.ndim != 2 or m.shape[1] == 0:
        return [""] * (m.shape[0] if m.ndim == 2 else 0)
    chars = (m + ord("0")).astype(np.uint8)
    return [row.tobytes().decode("ascii") for row in chars]


def unpack_predictions(packed: Sequence[str]) -> np.ndarray:
    """Inverse of pack_predictions; all strings must have the same length."""
    if len(packed) == 0:
        return np.empty((0, 0), dtype=int)
    width = len(packed[0])
    if any(len(s) != width for s in packed):
        raise SchemaError("Packed prediction strings have different lengths")
    if width == 0:
        return np.empty((len(packed), 0), dtype=int)
    buffer = np.frombuffer("".join(packed).encode("ascii"), dtype=np.uint8)
    return (buffer.reshape(len(packed), width) - ord("0")).astype(int)


def _mean_or_undefined(values: np.ndarray, reason: str = "empty") -> Value:
    return float(values.mean()) if len(values) else Undefined(reason)


def phase_metrics(scores: np.ndarray, labels: np.ndarray, groups: Sequence[Optional[str]],
                  boot_preds: np.ndarray, rashomon_preds: Optional[np.ndarray],
                  decision_threshold: float = 0.5) -> Dict[str, Value]:
    """
    Per-phase performance, fairness, arbitrariness and multiplicity for one group
    attribute over a set of evaluated instances.

    Args:
        scores: Main-model scores
        labels: True labels
        groups: "A"/"B"/None per instance
        boot_preds: (instances × B) bootstrap predictions
        rashomon_preds: (instances × |R|) Rashomon-set predictions, or None
        decision_threshold: Threshold turning scores into predictions
    """
    out: Dict[str, Value] = {}
    n = len(scores)
    if n == 0:
        for name in ("auc", "auc_a", "auc_b", "auc_gap", "eo_gap", "dp_gap", "mean_sc", "oa",
                     "sa", "sc_a", "sc_b", "dpr", "dr"):
            out[name] = Undefined("empty")
        return out
    preds = (np.asarray(scores) >= decision_threshold).astype(int)
    out["auc"] = auc(scores, labels)
    out["auc_a"], out["auc_b"], out["auc_gap"] = group_auc_and_gap(scores, labels, groups)
    out["eo_gap"] = eo_gap(preds, labels, groups)
    out["dp_gap"] = dp_gap(preds, groups)

    sc = self_consistency_matrix(boot_preds)
    mask_a = _group_mask(groups, GROUP_A)
    mask_b = _group_mask(groups, GROUP_B)
    out["mean_sc"] = float(sc.mean())
    out["oa"] = overall_arbitrariness(sc)
    out["sa"] = systematic_arbitrariness(sc[mask_a], sc[mask_b])
    out["sc_a"] = _mean_or_undefined(sc[mask_a], "empty-group")
    out["sc_b"] = _mean_or_undefined(sc[mask_b], "empty-group")

    if rashomon_preds is None or rashomon_preds.shape[1] == 0:
        out["dpr"] = Undefined("no-rashomon-set")
        out["dr"] = Undefined("no-rashomon-set")
    else:
        dpr, dr = multiplicity(rashomon_preds.T)
        out["dpr"] = float(dpr)
        out["dr"] = dr
    return out


def _serialize(values: Dict[str, Value]) -> Tuple[Dict[str, Optional[float]], Dict[str, str]]:
    numbers: Dict[str, Optional[float]] = {}
    undefined: Dict[str, str] = {}
    for name in PHASE_METRICS:
        v = values.get(name, Undefined("not-computed"))
        if isinstance(v, Undefined):
            numbers[name] = None
            undefined[name] = v.reason
        else:
            numbers[name] = float(v)
    return numbers, undefined


def build_phase_reports(ledger: pd.DataFrame, instances: pd.DataFrame, attributes: Sequence[str],
                        decision_threshold: float = 0.5, retained_only: bool = False,
                        training: Optional[pd.DataFrame] = None) -> List[Dict[str, Any]]:
    """
    PhaseReports for every (schema, seed, strategy, phase, attribute).

    Args:
        ledger: PredictionLedger table
        instances: Instance index (instance_id, patient_id, label, one column per attribute)
        attributes: Audited attribute names
        decision_threshold: Threshold used for EO/DP/flip computations
        retained_only: Drop abstained instances before computing metrics
        training: Optional per-phase training summary merged into each report

    Returns:
        List of report dicts sorted by key; metric values are floats or None with the
        reason recorded under "undefined"
    """
    variant = VARIANT_RETAINED if retained_only else VARIANT_ALL
    merged = ledger.merge(instances[["instance_id", "label"] + list(attributes)], on="instance_id",
                          how="left", validate="many_to_one")
    training_index = {}
    if training is not None:
        for row in training.to_dict(orient="records"):
            training_index[(row["schema"], int(row["seed"]), row["strategy"], int(row["phase"]))] = row

    reports: List[Dict[str, Any]] = []
    for (schema, seed, strategy), arm in merged.groupby(["schema", "seed", "strategy"], sort=True):
        arm = arm.sort_values(["phase", "instance_id"], kind="mergesort")
        phases = sorted(arm["phase"].unique())
        pred_values = (arm["score"].to_numpy() >= decision_threshold).astype(float)
        if retained_only:
            pred_values[arm["abstained"].to_numpy(dtype=bool)] = np.nan
        pivot = (
            pd.DataFrame({"instance_id": arm["instance_id"].to_numpy(), "phase": arm["phase"].to_numpy(),
                          "pred": pred_values})
            .pivot(index="instance_id", columns="phase", values="pred")
            .reindex(columns=phases)
        )
        rates = flip_rate(pivot.to_numpy()) if len(phases) >= 2 else []

        for attribute in attributes:
            series_auc: List[Value] = []
            per_phase: List[Tuple[int, pd.DataFrame, Dict[str, Value]]] = []
            for phase in phases:
                rows = arm[arm["phase"] == phase]
                all_groups = rows[attribute].where(rows[attribute].notna(), None).tolist()
                abstained = rows["abstained"].to_numpy(dtype=bool)
                if retained_only:
                    rows = rows[~abstained]
                groups = rows[attribute].where(rows[attribute].notna(), None).tolist()
                boot = unpack_predictions(rows["boot_preds"].tolist())
                rashomon = unpack_predictions(rows["rashomon_preds"].tolist()) if len(rows) else None
                values = phase_metrics(rows["score"].to_numpy(dtype=float), rows["label"].to_numpy(dtype=int),
                                       groups, boot, rashomon, decision_threshold)
                values["abstention_rate"] = _mean_or_undefined(abstained.astype(float))
                ga = _group_mask(all_groups, GROUP_A)
                gb = _group_mask(all_groups, GROUP_B)
                values["abstention_rate_a"] = _mean_or_undefined(abstained[ga].astype(float), "empty-group")
                values["abstention_rate_b"] = _mean_or_undefined(abstained[gb].astype(float), "empty-group")
                series_auc.append(values["auc"])
                per_phase.append((int(phase), rows, values))

            deltas = delta_auc(series_auc)
            for i, (phase, rows, values) in enumerate(per_phase):
                values["delta_auc"] = deltas[i - 1] if i > 0 else Undefined("first-phase")
                values["flip_rate"] = rates[i - 1] if i > 0 else Undefined("first-phase")
                numbers, undefined = _serialize(values)
                report: Dict[str, Any] = {
                    "schema": schema,
                    "seed": int(seed),
                    "strategy": strategy,
                    "phase": phase,
                    "attribute": attribute,
                    "variant": variant,
                    "decision_threshold": decision_threshold,
                    "n_eval": int(len(rows)),
                    "n_a": int((rows[attribute] == GROUP_A).sum()),
                    "n_b": int((rows[attribute] == GROUP_B).sum()),
                    "n_positive": int(rows["label"].sum()),
                    "metrics": numbers,
                    "undefined": undefined,
                }
                train = training_index.get((schema, int(seed), strategy, phase))
                if train is not None:
                    report["n_train"] = int(train["n_train"])
                    report["n_train_positive"] = int(train["n_train_positive"])
                    report["n_train_a"] = int(train.get(f"n_train_a_{attribute}", 0))
                    report["n_train_b"] = int(train.get(f"n_train_b_{attribute}", 0))
                reports.append(report)
    logger.debug(f"Built {len(reports)} {variant} phase reports")
    return reports


def stability_profile(pred_matrix: np.ndarray, sc_matrix: np.ndarray, instance_ids: Sequence[str],
                      patient_ids: Sequence[str], flip_threshold: float = FLIP_INSTABILITY_FRACTION,
                      sc_threshold: float = LOW_SC_THRESHOLD) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Instance- and individual-level stability over retraining phases.

    Args:
        pred_matrix: (instances × phases) predictions, NaN where masked
        sc_matrix: (instances × phases) self-consistency, NaN where not evaluated
        instance_ids: Row labels of both matrices
        patient_ids: Patient of each instance

    Returns:
        (instance table: instance_id, patient_id, tsc, delta_tsc, flip_fraction;
         individual table: patient_id, n_weeks, flip_fraction, min_sc, sc_slope,
         mean_tsc, unstable_by_flips, unstable_by_tsc)
    """
    preds = np.asarray(pred_matrix, dtype=float)
    sc = np.asarray(sc_matrix, dtype=float)
    rows = []
    for i, instance_id in enumerate(instance_ids):
        defined = sc[i][~np.isnan(sc[i])]
        tsc, dtsc = temporal_sc(defined) if len(defined) else (np.nan, np.nan)
        series = [None if np.isnan(p) else int(p) for p in preds[i]]
        _, fraction = flip_stats(series)
        rows.append({
            "instance_id": instance_id,
            "patient_id": patient_ids[i],
            "tsc": tsc,
            "delta_tsc": dtsc,
            "flip_fraction": float(fraction) if is_defined(fraction) else np.nan,
        })
    instance_table = pd.DataFrame(rows, columns=["instance_id", "patient_id", "tsc", "delta_tsc", "flip_fraction"])

    individuals = []
    patient_array = np.asarray(patient_ids, dtype=object)
    for patient_id in sorted(set(patient_ids)):
        mask = patient_array == patient_id
        week_fractions = [
            f if not np.isnan(f) else Undefined("no-evaluated-transitions")
            for f in instance_table.loc[mask, "flip_fraction"].to_numpy()
        ]
        by_flips, by_tsc = instability_flags(week_fractions, sc[mask], flip_threshold, sc_threshold)
        patient_sc = sc[mask]
        phase_defined = ~np.all(np.isnan(patient_sc), axis=0)
        mean_sc = np.nanmean(patient_sc[:, phase_defined], axis=0) if phase_defined.any() else np.empty(0)
        slope = least_squares_slope(mean_sc)
        defined_fractions = [float(f) for f in week_fractions if is_defined(f)]
        individuals.append({
            "patient_id": patient_id,
            "n_weeks": int(mask.sum()),
            "flip_fraction": float(np.mean(defined_fractions)) if defined_fractions else np.nan,
            "min_sc": float(mean_sc.min()) if len(mean_sc) else np.nan,
            "sc_slope": float(slope) if is_defined(slope) else np.nan,
            "mean_tsc": float(np.nanmean(instance_table.loc[mask, "tsc"])) if len(mean_sc) else np.nan,
            "unstable_by_flips": by_flips if is_defined(by_flips) else None,
            "unstable_by_tsc": by_tsc if is_defined(by_tsc) else None,
        })
    individual_table = pd.DataFrame(individuals, columns=[
        "patient_id", "n_weeks", "flip_fraction", "min_sc", "sc_slope", "mean_tsc",
        "unstable_by_flips", "unstable_by_tsc",
    ])
    return instance_table, individual_table
