"""
Synthetic cohort generator.

Produces pediatric-T1D-like cohorts either directly as weekly feature tables (labels
drawn from a known logistic ground truth) or as raw 5-minute CGM traces that go
through cgmfeat. Temporal covariate shift, concept drift and subgroup-specific concept
drift are controlled by a DriftSpec. Every patient draws from its own stream derived
from (seed, patient index), so output does not depend on generation order.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Any, Dict, List, Mapping, NamedTuple, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.optimize import brentq
from scipy.signal import lfilter
from scipy.special import expit

from src.dataio import (
    EDUCATION_LEVELS,
    FEATURE_COLUMNS,
    INCOME_BRACKETS,
    PROTECTED_ATTRIBUTES,
    PatientMeta,
    group_table,
    meta_frame,
    resolve_protected_attrs,
    weekly_frame,
    write_meta_csv,
    write_weekly_csv,
)
from src.errors import ConfigError
from src.services.seeding import derive_seed, rng_for

logger = logging.getLogger(__name__)

GLUCOSE_FLOOR = 40.0
GLUCOSE_CEILING = 400.0
RACE_CATEGORIES = ("white", "hispanic", "black", "asian", "other")
RACE_PROBS = (0.55, 0.2, 0.12, 0.05, 0.08)

# Fixed reference scale for the ground-truth model's z-scores
REFERENCE_MEANS = {
    "tir": 0.60, "tar": 0.33, "tbr": 0.05, "sd": 45.0, "mage": 68.0, "cv": 0.30,
    "hyper_events": 4.5, "hypo_events": 1.5, "severe_hyper_events": 1.0,
}
REFERENCE_SDS = {
    "tir": 0.20, "tar": 0.18, "tbr": 0.04, "sd": 14.0, "mage": 22.0, "cv": 0.08,
    "hyper_events": 3.0, "hypo_events": 1.5, "severe_hyper_events": 1.2,
}
# Unscaled ground-truth direction; rescaled so the linear predictor has sd = signal_strength
GROUND_TRUTH_DIRECTION = {
    "tir": -0.6, "tar": 1.0, "tbr": -0.1, "sd": 0.5, "mage": 0.3, "cv": 0.2,
    "hyper_events": 0.6, "hypo_events": 0.0, "severe_hyper_events": 0.9,
}
# Direction the coefficients move under concept drift (towards variability-driven risk)
CONCEPT_DRIFT_DIRECTION = {
    "tir": 0.3, "tar": -0.6, "tbr": 0.0, "sd": 0.6, "mage": 0.3, "cv": 0.5,
    "hyper_events": 0.0, "hypo_events": 0.4, "severe_hyper_events": -0.4,
}
RECOVERABILITY_AUC = 0.85
PROBABILITY_TOLERANCE = 1e-6


@dataclass(frozen=True)
class DriftSpec:
    """
    Temporal drift settings. `onset` is a fraction of the cohort's calendar span.
    All-zero settings give a stationary cohort.
    """
    onset: float = 0.5
    covariate_shift: Mapping[str, float] = field(default_factory=dict)
    concept_drift: float = 0.0
    subgroup_attribute: Optional[str] = None
    subgroup_group: str = "B"
    subgroup_shift: float = 0.0
    subgroup_coef_scale: float = 1.0

    @property
    def stationary(self) -> bool:
        return (
            not any(self.covariate_shift.values())
            and self.concept_drift == 0.0
            and (self.subgroup_attribute is None or (self.subgroup_shift == 0.0 and self.subgroup_coef_scale == 1.0))
        )


@dataclass(frozen=True)
class CohortSpec:
    n_patients: int = 200
    weeks_min: int = 2
    weeks_max: int = 44
    date_span_days: int = 728
    start_date: date = date(2020, 1, 6)
    seed: int = 0
    sex_male_prob: float = 0.5
    age_mean: float = 11.5
    age_sd: float = 4.0
    age_min: float = 2.0
    age_max: float = 19.0
    education_probs: Tuple[float, ...] = (0.06, 0.22, 0.20, 0.10, 0.27, 0.15)
    income_probs: Tuple[float, ...] = (0.12, 0.15, 0.16, 0.15, 0.20, 0.10, 0.12)
    missing_rate: float = 0.0
    base_risk: float = 0.2
    signal_strength: float = 3.0
    drift: DriftSpec = field(default_factory=DriftSpec)
    trace_days_per_week: int = 7
    trace_cadence_minutes: int = 5
    trace_meal_spikes_per_day: float = 3.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """Raise ConfigError on infeasible settings."""
        if self.n_patients < 1:
            raise ConfigError(f"n_patients must be >= 1, got {self.n_patients}")
        if not 1 <= self.weeks_min <= self.weeks_max:
            raise ConfigError(f"weeks_min/weeks_max infeasible: {self.weeks_min}..{self.weeks_max}")
        if self.date_span_days < 7:
            raise ConfigError("date_span_days must cover at least one week")
        for name, value in (("sex_male_prob", self.sex_male_prob), ("missing_rate", self.missing_rate)):
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {value}")
        if not 0.0 < self.base_risk < 1.0:
            raise ConfigError(f"base_risk must be in (0, 1), got {self.base_risk}")
        _check_marginal("education_probs", self.education_probs, len(EDUCATION_LEVELS))
        _check_marginal("income_probs", self.income_probs, len(INCOME_BRACKETS))
        if self.age_sd < 0 or self.age_min > self.age_max:
            raise ConfigError("age distribution infeasible")
        if self.signal_strength < 0:
            raise ConfigError("signal_strength must be >= 0")
        drift = self.drift
        if not 0.0 <= drift.onset <= 1.0:
            raise ConfigError(f"drift_onset must be in [0, 1], got {drift.onset}")
        unknown = [k for k in drift.covariate_shift if k not in FEATURE_COLUMNS]
        if unknown:
            raise ConfigError(f"covariate_shift names unknown feature(s): {unknown}")
        if drift.subgroup_attribute is not None and drift.subgroup_attribute not in PROTECTED_ATTRIBUTES:
            raise ConfigError(f"subgroup_drift_attribute must be one of {PROTECTED_ATTRIBUTES}")
        if drift.subgroup_group not in ("A", "B"):
            raise ConfigError(f"subgroup_drift_group must be A or B, got {drift.subgroup_group}")

    @classmethod
    def from_flat(cls, values: Mapping[str, Any]) -> "CohortSpec":
        """Build from the flat key-value form used by cohort configuration files."""
        values = dict(values)
        drift = DriftSpec(
            onset=float(values.pop("drift_onset", 0.5)),
            covariate_shift={k: float(v) for k, v in (values.pop("covariate_shift", None) or {}).items()},
            concept_drift=float(values.pop("concept_drift", 0.0)),
            subgroup_attribute=values.pop("subgroup_drift_attribute", None),
            subgroup_group=str(values.pop("subgroup_drift_group", "B")),
            subgroup_shift=float(values.pop("subgroup_drift_shift", 0.0)),
            subgroup_coef_scale=float(values.pop("subgroup_drift_coef_scale", 1.0)),
        )
        known = set(cls.__dataclass_fields__) - {"drift"}
        unknown = [k for k in values if k not in known]
        if unknown:
            raise ConfigError(f"Unknown configuration key '{unknown[0]}' in cohort specification")
        if "start_date" in values and not isinstance(values["start_date"], date):
            try:
                values["start_date"] = date.fromisoformat(str(values["start_date"]))
            except ValueError as e:
                raise ConfigError(f"start_date: {e}") from e
        for key in ("education_probs", "income_probs"):
            if key in values:
                values[key] = tuple(float(p) for p in values[key])
        try:
            return cls(drift=drift, **values)
        except TypeError as e:
            raise ConfigError(f"Invalid cohort specification: {e}") from e

    def to_flat(self) -> Dict[str, Any]:
        flat = asdict(self)
        drift = flat.pop("drift")
        flat["start_date"] = self.start_date.isoformat()
        flat["education_probs"] = list(self.education_probs)
        flat["income_probs"] = list(self.income_probs)
        flat.update({
            "drift_onset": drift["onset"],
            "covariate_shift": dict(drift["covariate_shift"]),
            "concept_drift": drift["concept_drift"],
            "subgroup_drift_attribute": drift["subgroup_attribute"],
            "subgroup_drift_group": drift["subgroup_group"],
            "subgroup_drift_shift": drift["subgroup_shift"],
            "subgroup_drift_coef_scale": drift["subgroup_coef_scale"],
        })
        return flat


def _check_marginal(name: str, probs: Tuple[float, ...], size: int) -> None:
    p = np.asarray(probs, dtype=float)
    if len(p) != size:
        raise ConfigError(f"{name} needs {size} probabilities, got {len(p)}")
    if np.any(p < 0) or abs(p.sum() - 1.0) > PROBABILITY_TOLERANCE:
        raise ConfigError(f"{name} must be non-negative and sum to 1 (sum={p.sum():.6g})")


@dataclass(frozen=True)
class TraceParams:
    """
    Parameters of one synthetic CGM trace.

    `volatility` is the stationary SD (mg/dL) of the mean-reverting component;
    `reversion` its rate per minute.
    """
    mean_glucose: float = 140.0
    volatility: float = 25.0
    meal_spikes_per_day: float = 3.0
    spike_height: float = 80.0
    spike_duration: float = 180.0
    reversion: float = 0.02


class GeneratedCohort(NamedTuple):
    weekly: pd.DataFrame
    meta: pd.DataFrame
    manifest: Dict[str, Any]


class GeneratedTraces(NamedTuple):
    readings: pd.DataFrame
    meta: pd.DataFrame
    manifest: Dict[str, Any]


class _Patient(NamedTuple):
    meta: PatientMeta
    control: float
    n_weeks: int
    first_week: date


def _patient_id(index: int) -> str:
    return f"P{index:05d}"


def _draw_patient(spec: CohortSpec, index: int, rng: np.random.Generator) -> _Patient:
    sex = "male" if rng.random() < spec.sex_male_prob else "female"
    age = float(np.round(np.clip(rng.normal(spec.age_mean, spec.age_sd), spec.age_min, spec.age_max), 1))
    education = int(rng.choice(len(EDUCATION_LEVELS), p=np.asarray(spec.education_probs) / sum(spec.education_probs)))
    income = int(rng.choice(len(INCOME_BRACKETS), p=np.asarray(spec.income_probs) / sum(spec.income_probs)))
    race = str(rng.choice(RACE_CATEGORIES, p=RACE_PROBS))
    missing = rng.random(4) < spec.missing_rate

    # Latent glycemic control: higher is worse; tied to socioeconomic context and adolescence
    control = float(rng.normal() + 0.4 * (income < 3) + 0.3 * (education < 4) + 0.2 * (age >= 13.0))

    n_weeks = int(rng.integers(spec.weeks_min, spec.weeks_max + 1))
    max_offset = max(0, spec.date_span_days // 7 - n_weeks)
    first_week = spec.start_date + timedelta(days=7 * int(rng.integers(0, max_offset + 1)))

    meta = PatientMeta(
        patient_id=_patient_id(index),
        sex=None if missing[0] else sex,
        age=None if missing[1] else age,
        caregiver_education=None if missing[2] else education,
        household_income=None if missing[3] else income,
        race_ethnicity=race,
    )
    return _Patient(meta, control, n_weeks, first_week)


def _week_features(patient: _Patient, spec: CohortSpec,
                   rng: np.random.Generator) -> Tuple[List[date], np.ndarray, np.ndarray]:
    """Feature matrix (weeks × FEATURE_COLUMNS) and calendar fraction per week."""
    n = patient.n_weeks
    weeks = [patient.first_week + timedelta(days=7 * w) for w in range(n)]
    tau = np.clip(np.array([(d - spec.start_date).days for d in weeks], dtype=float) / spec.date_span_days, 0.0, 1.0)
    shift = spec.drift.covariate_shift

    u = patient.control + 0.6 * rng.normal(size=n)
    v = 0.5 * patient.control + 0.8 * rng.normal(size=n)

    hyper_logit = -0.9 + 0.9 * u + shift.get("tar", 0.0) * tau
    hypo_logit = -3.0 + 0.7 * v + shift.get("tbr", 0.0) * tau
    denom = 1.0 + np.exp(hyper_logit) + np.exp(hypo_logit)
    tar = np.exp(hyper_logit) / denom
    tbr = np.exp(hypo_logit) / denom
    tir = 1.0 - tar - tbr

    mean_glucose = np.maximum(80.0, 150.0 + 35.0 * u)
    sd = np.maximum(8.0, 42.0 + 10.0 * v + 6.0 * u + 4.0 * rng.normal(size=n))
    mage = np.maximum(0.0, sd * (1.5 + 0.15 * rng.normal(size=n)))
    cv = sd / mean_glucose
    hyper = rng.poisson(np.exp(1.4 + 0.45 * u)).astype(float)
    hypo = rng.poisson(np.exp(0.2 + 0.5 * v)).astype(float)
    severe = rng.poisson(np.exp(-0.3 + 0.7 * u)).astype(float)

    x = np.column_stack([tir, tar, tbr, sd, mage, cv, hyper, hypo, severe])
    for j, name in enumerate(FEATURE_COLUMNS):
        if name in ("tir", "tar", "tbr") or not shift.get(name):
            continue
        x[:, j] = np.maximum(0.0, x[:, j] + shift[name] * tau * REFERENCE_SDS[name])
        if name.endswith("_events"):
            x[:, j] = np.round(x[:, j])
    return weeks, x, tau


def _zscores(x: np.ndarray) -> np.ndarray:
    means = np.array([REFERENCE_MEANS[c] for c in FEATURE_COLUMNS])
    sds = np.array([REFERENCE_SDS[c] for c in FEATURE_COLUMNS])
    return (x - means) / sds


def _calibrate_intercept(eta: np.ndarray, base_risk: float) -> float:
    return float(brentq(lambda b: float(np.mean(expit(eta + b))) - base_risk, -60.0, 60.0, xtol=1e-12))


def gen_cohort(spec: CohortSpec) -> GeneratedCohort:
    """
    Generate a weekly feature table with ground-truth logistic labels.

    Returns:
        GeneratedCohort(weekly, meta, manifest); the manifest records the scaled
        ground-truth coefficients, intercept and drift settings.
    """
    logger.info(f"[SYNTH] Generating {spec.n_patients} patients (seed {spec.seed})")
    patients = []
    blocks = []
    for i in range(spec.n_patients):
        rng = rng_for(spec.seed, "patient", i)
        patient = _draw_patient(spec, i, rng)
        weeks, x, tau = _week_features(patient, spec, rng)
        patients.append(patient)
        blocks.append((patient.meta.patient_id, weeks, x, tau))

    meta = meta_frame([p.meta for p in patients])
    x_all = np.vstack([b[2] for b in blocks])
    tau_all = np.concatenate([b[3] for b in blocks])
    z = _zscores(x_all)

    direction = np.array([GROUND_TRUTH_DIRECTION[c] for c in FEATURE_COLUMNS])
    raw_eta = z @ direction
    scale = spec.signal_strength / raw_eta.std() if raw_eta.std() > 0 else 1.0
    beta = direction * scale
    intercept = _calibrate_intercept(z @ beta, spec.base_risk)

    drift = spec.drift
    ramp = np.clip((tau_all - drift.onset) / max(1e-12, 1.0 - drift.onset), 0.0, 1.0) * (tau_all >= drift.onset)
    concept = np.array([CONCEPT_DRIFT_DIRECTION[c] for c in FEATURE_COLUMNS]) * scale
    eta = z @ beta + drift.concept_drift * ramp * (z @ concept) + intercept

    affected = np.zeros(len(eta), dtype=bool)
    if drift.subgroup_attribute is not None:
        attrs = resolve_protected_attrs(meta, [drift.subgroup_attribute])
        groups = group_table(meta, attrs)[drift.subgroup_attribute]
        row_groups = np.concatenate([[groups.get(b[0])] * len(b[1]) for b in blocks])
        affected = (row_groups == drift.subgroup_group) & (tau_all >= drift.onset)
        eta = np.where(affected, drift.subgroup_coef_scale * (eta - intercept) + intercept + drift.subgroup_shift, eta)
    probs = expit(eta)

    records = []
    offset = 0
    for i, (pid, weeks, x, _) in enumerate(blocks):
        n = len(weeks)
        labels = (rng_for(spec.seed, "labels", i).random(n) < probs[offset:offset + n]).astype(int)
        for w in range(n):
            record: Dict[str, Any] = {"patient_id": pid, "week_start": pd.Timestamp(weeks[w])}
            record.update({c: x[w, j] for j, c in enumerate(FEATURE_COLUMNS)})
            record["label"] = int(labels[w])
            records.append(record)
        offset += n
    weekly = weekly_frame(records)

    manifest = {
        "kind": "weekly",
        "spec": spec.to_flat(),
        "ground_truth": {
            "coefficients": dict(zip(FEATURE_COLUMNS, beta.tolist())),
            "intercept": intercept,
            "reference_means": REFERENCE_MEANS,
            "reference_sds": REFERENCE_SDS,
            "signal_scale": float(scale),
            "concept_drift_direction": CONCEPT_DRIFT_DIRECTION,
            "recoverability_auc_tolerance": RECOVERABILITY_AUC,
        },
        "n_patients": int(len(meta)),
        "n_rows": int(len(weekly)),
        "label_rate": float(weekly["label"].mean()),
        "n_rows_subgroup_drift": int(affected.sum()),
    }
    logger.info(f"[SYNTH] {len(weekly)} patient-weeks, label rate {manifest['label_rate']:.3f}")
    return GeneratedCohort(weekly, meta, manifest)


def gen_trace(params: TraceParams, seed: int, start: Union[date, pd.Timestamp], n_days: int,
              patient_id: str = "P00000", cadence_minutes: int = 5) -> pd.DataFrame:
    """
    Synthetic CGM trace: a mean-reverting random walk plus post-meal excursions,
    clipped to [40, 400] mg/dL.

    Args:
        params: Trace parameters
        seed: Stream seed
        start: Date of the first reading (midnight)
        n_days: Number of days
        patient_id: Value of the patient_id column
        cadence_minutes: Minutes between readings

    Returns:
        DataFrame with patient_id, timestamp, glucose
    """
    rng = np.random.default_rng(seed)
    per_day = 1440 // cadence_minutes
    n = per_day * n_days
    a = float(np.exp(-params.reversion * cadence_minutes))
    innovations = params.volatility * np.sqrt(1.0 - a * a) * rng.normal(size=n)
    walk = lfilter([1.0], [1.0, -a], innovations)

    impulses = np.zeros(n)
    if params.meal_spikes_per_day > 0 and params.spike_height > 0:
        for day in range(n_days):
            for _ in range(rng.poisson(params.meal_spikes_per_day)):
                impulses[day * per_day + int(rng.integers(0, per_day))] += 1.0
    width = max(1, int(round(params.spike_duration / cadence_minutes)))
    kernel = params.spike_height * np.sin(np.pi * np.arange(width + 1) / width)
    spikes = np.convolve(impulses, kernel)[:n]

    glucose = np.clip(params.mean_glucose + walk + spikes, GLUCOSE_FLOOR, GLUCOSE_CEILING)
    timestamps = pd.Timestamp(start) + pd.to_timedelta(np.arange(n) * cadence_minutes, unit="min")
    return pd.DataFrame({"patient_id": patient_id, "timestamp": timestamps, "glucose": glucose})


def trace_params_for(control: float, spec: CohortSpec) -> TraceParams:
    """Map a patient's latent control level to trace parameters."""
    return TraceParams(
        mean_glucose=float(np.clip(150.0 + 40.0 * control, 90.0, 300.0)),
        volatility=float(25.0 + 6.0 * abs(control)),
        meal_spikes_per_day=spec.trace_meal_spikes_per_day,
        spike_height=float(np.clip(80.0 + 25.0 * control, 20.0, 200.0)),
        spike_duration=float(np.clip(180.0 + 30.0 * control, 60.0, 300.0)),
    )


def gen_cohort_traces(spec: CohortSpec, days_per_week: Optional[int] = None) -> GeneratedTraces:
    """
    Raw CGM traces for every patient of a cohort.

    Patients (metadata, latent control, enrollment dates) are drawn exactly as in
    gen_cohort; each week contributes `days_per_week` days of readings.
    """
    days_per_week = days_per_week or spec.trace_days_per_week
    logger.info(f"[SYNTH] Generating traces for {spec.n_patients} patients ({days_per_week} days/week)")
    metas = []
    frames = []
    for i in range(spec.n_patients):
        patient = _draw_patient(spec, i, rng_for(spec.seed, "patient", i))
        metas.append(patient.meta)
        params = trace_params_for(patient.control, spec)
        for w in range(patient.n_weeks):
            frames.append(gen_trace(
                params,
                derive_seed(spec.seed, "trace", i, w),
                patient.first_week + timedelta(days=7 * w),
                days_per_week,
                patient_id=patient.meta.patient_id,
                cadence_minutes=spec.trace_cadence_minutes,
            ))
    readings = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=["patient_id", "timestamp", "glucose"])
    manifest = {
        "kind": "traces",
        "spec": spec.to_flat(),
        "days_per_week": days_per_week,
        "n_patients": len(metas),
        "n_readings": int(len(readings)),
    }
    return GeneratedTraces(readings, meta_frame(metas), manifest)


def write_manifest(manifest: Mapping[str, Any], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, default=str)
        f.write("\n")
    return path


def write_cohort(cohort: GeneratedCohort, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """Write weekly.csv, meta.csv and manifest.json into `out_dir`."""
    out = Path(out_dir)
    paths = {
        "weekly": write_weekly_csv(cohort.weekly, cohort.meta, out / "weekly.csv"),
        "meta": write_meta_csv(cohort.meta, out / "meta.csv"),
        "manifest": write_manifest(cohort.manifest, out / "manifest.json"),
    }
    logger.info(f"[SYNTH] Wrote cohort to {out}")
    return paths


def write_traces(traces: GeneratedTraces, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """Write cgm.csv (patient_id, timestamp, glucose_mgdl), meta.csv and manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cgm = traces.readings.rename(columns={"glucose": "glucose_mgdl"}).copy()
    cgm["timestamp"] = cgm["timestamp"].dt.strftime("%Y-%m-%dT%H:%M:%S")
    cgm_path = out / "cgm.csv"
    cgm.to_csv(cgm_path, index=False, lineterminator="\n")
    paths = {
        "cgm": cgm_path,
        "meta": write_meta_csv(traces.meta, out / "meta.csv"),
        "manifest": write_manifest(traces.manifest, out / "manifest.json"),
    }
    logger.info(f"[SYNTH] Wrote {len(cgm)} readings to {cgm_path}")
    return paths
