"""
Data ingestion and cohort structuring.

Parses raw CGM CSVs and weekly feature CSVs into validated pandas tables, binarizes
protected attributes, assigns patients to chronological retraining batches and draws
the stratified patient-level holdout used by the retrospective schema.
"""

import logging
import math
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path
from typing import Dict, FrozenSet, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.errors import SchemaError

logger = logging.getLogger(__name__)

# Plausible CGM reporting range (mg/dL); readings outside are rejected at ingestion
GLUCOSE_MIN = 20.0
GLUCOSE_MAX = 600.0

SIMPLEX_TOLERANCE = 1e-9
PEDIATRIC_AGE_LIMIT = 20.0

FRACTION_COLUMNS = ["tir", "tar", "tbr"]
CONTINUOUS_COLUMNS = ["sd", "mage", "cv"]
COUNT_COLUMNS = ["hyper_events", "hypo_events", "severe_hyper_events"]
FEATURE_COLUMNS = FRACTION_COLUMNS + CONTINUOUS_COLUMNS + COUNT_COLUMNS
META_COLUMNS = ["sex", "age", "education", "income"]
OPTIONAL_META_COLUMNS = ["race_ethnicity"]
REQUIRED_WEEKLY_COLUMNS = ["patient_id", "week_start"] + FEATURE_COLUMNS + ["label"]
WEEKLY_COLUMNS = REQUIRED_WEEKLY_COLUMNS + META_COLUMNS
CGM_COLUMNS = ["patient_id", "timestamp", "glucose_mgdl"]

# Ordinal categories; the CSV may carry either the name or the integer code (index)
EDUCATION_LEVELS = (
    "less_than_high_school",
    "high_school",
    "some_college",
    "associate",
    "bachelor",
    "graduate",
)
INCOME_BRACKETS = (
    "<25k",
    "25k-50k",
    "50k-75k",
    "75k-100k",
    "100k-150k",
    "150k-200k",
    ">=200k",
)
DEFAULT_EDUCATION_THRESHOLD = EDUCATION_LEVELS.index("bachelor")

PROTECTED_ATTRIBUTES = ("sex", "age", "education", "income")
GROUP_A = "A"
GROUP_B = "B"


# ============================================================================
# DOMAIN TYPES
# ============================================================================

@dataclass(frozen=True)
class GlucoseReading:
    patient_id: str
    timestamp: datetime
    glucose: float


@dataclass(frozen=True)
class PatientMeta:
    """Sociodemographic record for one patient. Missing values are None."""
    patient_id: str
    sex: Optional[str] = None
    age: Optional[float] = None
    caregiver_education: Optional[int] = None
    household_income: Optional[int] = None
    race_ethnicity: Optional[str] = None


@dataclass(frozen=True)
class ProtectedAttr:
    """
    A binarized protected attribute.

    Group A is male for sex; for age, education and income it is the side with
    value >= threshold (older, higher education, higher income).
    """
    name: str
    threshold: Optional[float] = None

    def __post_init__(self):
        if self.name not in PROTECTED_ATTRIBUTES:
            raise SchemaError(f"Unknown protected attribute '{self.name}'")
        if self.name != "sex" and self.threshold is None:
            raise SchemaError(f"Protected attribute '{self.name}' needs a threshold")


@dataclass(frozen=True)
class WeeklyObservation:
    patient_id: str
    week_start: date
    features: Mapping[str, float]
    label: Optional[int] = None

    def to_record(self) -> Dict[str, object]:
        record: Dict[str, object] = {"patient_id": self.patient_id, "week_start": pd.Timestamp(self.week_start)}
        record.update(self.features)
        record["label"] = self.label
        return record


@dataclass(frozen=True)
class BatchPlan:
    n_batches: int
    assignment: Mapping[str, int]
    boundaries: Tuple[Tuple[pd.Timestamp, pd.Timestamp], ...]
    holdout: FrozenSet[str] = field(default_factory=frozenset)

    def patients_in(self, batch: int) -> List[str]:
        return sorted(p for p, b in self.assignment.items() if b == batch)

    def rows_in(self, table: pd.DataFrame, batch: int) -> pd.DataFrame:
        """Rows of `table` whose patient is assigned to `batch`."""
        batch_ids = table["patient_id"].map(self.assignment)
        return table[batch_ids == batch]

    def batch_sizes(self, table: pd.DataFrame) -> List[int]:
        counts = table["patient_id"].map(self.assignment).value_counts()
        return [int(counts.get(b, 0)) for b in range(self.n_batches)]


class LoadResult(NamedTuple):
    weekly: pd.DataFrame
    meta: pd.DataFrame
    rejects: pd.DataFrame


class CgmLoadResult(NamedTuple):
    readings: pd.DataFrame
    rejects: pd.DataFrame
    n_out_of_range: int


# ============================================================================
# PARSING HELPERS
# ============================================================================

def _parse_sex(value: str) -> Optional[str]:
    v = value.strip().lower()
    if not v:
        return None
    if v in ("male", "m"):
        return "male"
    if v in ("female", "f"):
        return "female"
    raise ValueError(f"unrecognized sex '{value}'")


def _parse_ordinal(value: str, levels: Sequence[str]) -> Optional[int]:
    v = value.strip()
    if not v:
        return None
    if v in levels:
        return levels.index(v)
    code = float(v)
    if not code.is_integer() or not 0 <= code < len(levels):
        raise ValueError(f"ordinal code '{value}' outside 0..{len(levels) - 1}")
    return int(code)


def _parse_optional_float(value: str) -> Optional[float]:
    v = value.strip()
    if not v:
        return None
    x = float(v)
    if not math.isfinite(x):
        raise ValueError(f"non-finite value '{value}'")
    return x


def _parse_count(value: str) -> int:
    x = float(value)
    if not math.isfinite(x) or x < 0 or not x.is_integer():
        raise ValueError(f"count '{value}' is not a non-negative integer")
    return int(x)


def _parse_fraction(value: str) -> float:
    x = float(value)
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"fraction '{value}' outside [0, 1]")
    return x


def _parse_nonnegative(value: str) -> float:
    x = float(value)
    if not math.isfinite(x) or x < 0:
        raise ValueError(f"value '{value}' is not a finite non-negative number")
    return x


def _apply_column_map(df: pd.DataFrame, required: Sequence[str],
                      column_map: Optional[Mapping[str, str]]) -> pd.DataFrame:
    """Rename mapped headers to canonical names and verify required columns exist."""
    column_map = dict(column_map or {})
    rename = {header: canonical for canonical, header in column_map.items() if header in df.columns}
    df = df.rename(columns=rename)
    missing = [c for c in required if c not in df.columns]
    if missing:
        mapped = [column_map.get(c, c) for c in missing]
        raise SchemaError(f"Missing required column(s): {', '.join(mapped)}")
    return df


def _read_raw_csv(path: Union[str, Path]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Input file not found: {path}")
    return pd.read_csv(path, dtype=str, keep_default_na=False)


def _meta_from_row(row: Mapping[str, str], pediatric_only: bool) -> PatientMeta:
    age = _parse_optional_float(row.get("age", ""))
    if age is not None and age < 0:
        raise ValueError(f"negative age '{age}'")
    if pediatric_only and age is not None and age >= PEDIATRIC_AGE_LIMIT:
        raise ValueError(f"age {age} outside pediatric cohort (< {PEDIATRIC_AGE_LIMIT:g})")
    race = row.get("race_ethnicity", "").strip() or None
    return PatientMeta(
        patient_id=row["patient_id"].strip(),
        sex=_parse_sex(row.get("sex", "")),
        age=age,
        caregiver_education=_parse_ordinal(row.get("education", ""), EDUCATION_LEVELS),
        household_income=_parse_ordinal(row.get("income", ""), INCOME_BRACKETS),
        race_ethnicity=race,
    )


def meta_frame(records: Sequence[PatientMeta]) -> pd.DataFrame:
    """Build the canonical meta table (one row per patient, sorted by patient_id)."""
    frame = pd.DataFrame(
        {
            "patient_id": [m.patient_id for m in records],
            "sex": pd.Series([m.sex for m in records], dtype="object"),
            "age": pd.Series([m.age for m in records], dtype="float64"),
            "education": pd.Series([m.caregiver_education for m in records], dtype="Int64"),
            "income": pd.Series([m.household_income for m in records], dtype="Int64"),
            "race_ethnicity": pd.Series([m.race_ethnicity for m in records], dtype="object"),
        }
    )
    return frame.sort_values("patient_id", kind="mergesort").reset_index(drop=True)


def meta_records(meta: pd.DataFrame) -> Dict[str, PatientMeta]:
    """Inverse of meta_frame: patient_id → PatientMeta."""
    out = {}
    for row in meta.itertuples(index=False):
        out[row.patient_id] = PatientMeta(
            patient_id=row.patient_id,
            sex=row.sex if isinstance(row.sex, str) else None,
            age=None if pd.isna(row.age) else float(row.age),
            caregiver_education=None if pd.isna(row.education) else int(row.education),
            household_income=None if pd.isna(row.income) else int(row.income),
            race_ethnicity=row.race_ethnicity if isinstance(row.race_ethnicity, str) else None,
        )
    return out


def _rejects_frame(rejects: List[Dict[str, object]]) -> pd.DataFrame:
    return pd.DataFrame(rejects, columns=["row", "patient_id", "reason"])


# ============================================================================
# INGESTION
# ============================================================================

def load_weekly_csv(path: Union[str, Path], column_map: Optional[Mapping[str, str]] = None,
                    pediatric_only: bool = False) -> LoadResult:
    """
    Load and validate a weekly feature CSV.

    Args:
        path: CSV file path
        column_map: canonical column name → header name in the file
        pediatric_only: Reject rows of patients aged 20 or older

    Returns:
        LoadResult(weekly, meta, rejects). `weekly` has one row per (patient, week)
        with the feature columns and label; `meta` one row per patient.

    Raises:
        FileNotFoundError: If the file does not exist
        SchemaError: If a required column is missing
    """
    raw = _read_raw_csv(path)
    raw = _apply_column_map(raw, REQUIRED_WEEKLY_COLUMNS, column_map)
    logger.info(f"Loading weekly table from {path} ({len(raw)} rows)")

    records: List[Dict[str, object]] = []
    metas: Dict[str, PatientMeta] = {}
    rejects: List[Dict[str, object]] = []
    seen_keys = set()

    for i, row in enumerate(raw.to_dict(orient="records")):
        patient_id = row["patient_id"].strip()
        try:
            if not patient_id:
                raise ValueError("empty patient_id")
            week_start = pd.Timestamp(date.fromisoformat(row["week_start"].strip()))
            values: Dict[str, object] = {}
            for col in FRACTION_COLUMNS:
                values[col] = _parse_fraction(row[col])
            for col in CONTINUOUS_COLUMNS:
                values[col] = _parse_nonnegative(row[col])
            for col in COUNT_COLUMNS:
                values[col] = _parse_count(row[col])
            simplex = values["tir"] + values["tar"] + values["tbr"]
            if abs(simplex - 1.0) > SIMPLEX_TOLERANCE:
                raise ValueError(f"simplex violation (tir+tar+tbr = {simplex:.6g})")
            label = _parse_count(row["label"])
            if label not in (0, 1):
                raise ValueError(f"label '{row['label']}' is not binary")
            meta = _meta_from_row(row, pediatric_only)
        except (ValueError, KeyError) as e:
            logger.warning(f"Rejected weekly row {i} (patient {patient_id or '?'}): {e}")
            rejects.append({"row": i, "patient_id": patient_id, "reason": str(e)})
            continue

        key = (patient_id, week_start)
        if key in seen_keys:
            logger.warning(f"Rejected weekly row {i} (patient {patient_id}): duplicate key")
            rejects.append({"row": i, "patient_id": patient_id, "reason": "duplicate key"})
            continue
        seen_keys.add(key)

        if patient_id in metas and metas[patient_id] != meta:
            logger.warning(f"Conflicting metadata for patient {patient_id} in row {i}; keeping first")
        metas.setdefault(patient_id, meta)
        records.append({"patient_id": patient_id, "week_start": week_start, **values, "label": label})

    weekly = weekly_frame(records)
    meta_table = meta_frame(list(metas.values()))
    logger.info(f"Loaded {len(weekly)} weekly observations for {len(meta_table)} patients, {len(rejects)} rejected")
    return LoadResult(weekly, meta_table, _rejects_frame(rejects))


def weekly_frame(records: Sequence[Mapping[str, object]]) -> pd.DataFrame:
    """Canonical weekly table: typed columns, sorted by (patient_id, week_start)."""
    columns = ["patient_id", "week_start"] + FEATURE_COLUMNS + ["label"]
    frame = pd.DataFrame(list(records), columns=columns)
    frame["week_start"] = pd.to_datetime(frame["week_start"])
    for col in FRACTION_COLUMNS + CONTINUOUS_COLUMNS:
        frame[col] = frame[col].astype("float64")
    for col in COUNT_COLUMNS + ["label"]:
        frame[col] = frame[col].astype("int64")
    frame = frame.sort_values(["patient_id", "week_start"], kind="mergesort").reset_index(drop=True)
    return frame


def load_meta_csv(path: Union[str, Path], column_map: Optional[Mapping[str, str]] = None,
                  pediatric_only: bool = False) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Load a per-patient sociodemographic CSV.

    Returns:
        (meta table, rejects table)
    """
    raw = _read_raw_csv(path)
    raw = _apply_column_map(raw, ["patient_id"], column_map)
    metas: Dict[str, PatientMeta] = {}
    rejects: List[Dict[str, object]] = []
    for i, row in enumerate(raw.to_dict(orient="records")):
        patient_id = row["patient_id"].strip()
        try:
            meta = _meta_from_row(row, pediatric_only)
        except ValueError as e:
            logger.warning(f"Rejected meta row {i} (patient {patient_id}): {e}")
            rejects.append({"row": i, "patient_id": patient_id, "reason": str(e)})
            continue
        if patient_id in metas:
            rejects.append({"row": i, "patient_id": patient_id, "reason": "duplicate key"})
            logger.warning(f"Rejected meta row {i} (patient {patient_id}): duplicate key")
            continue
        metas[patient_id] = meta
    logger.info(f"Loaded metadata for {len(metas)} patients from {path}")
    return meta_frame(list(metas.values())), _rejects_frame(rejects)


def load_cgm_csv(path: Union[str, Path], column_map: Optional[Mapping[str, str]] = None) -> CgmLoadResult:
    """
    Load raw CGM readings.

    Readings outside [20, 600] mg/dL are dropped and counted; for duplicate
    (patient, timestamp) pairs the later row in file order is dropped.

    Returns:
        CgmLoadResult with `readings` columns patient_id, timestamp (naive UTC,
        minute resolution), glucose; sorted by patient then timestamp.
    """
    raw = _read_raw_csv(path)
    raw = _apply_column_map(raw, CGM_COLUMNS, column_map)
    logger.info(f"Loading CGM readings from {path} ({len(raw)} rows)")

    frame = pd.DataFrame({
        "row": np.arange(len(raw)),
        "patient_id": raw["patient_id"].str.strip(),
        "timestamp": pd.to_datetime(raw["timestamp"].str.strip(), utc=True, errors="coerce"),
        "glucose": pd.to_numeric(raw["glucose_mgdl"].str.strip(), errors="coerce"),
    })
    rejects: List[Dict[str, object]] = []

    unparseable = frame["timestamp"].isna() | frame["glucose"].isna() | (frame["patient_id"] == "")
    for row in frame[unparseable].itertuples(index=False):
        rejects.append({"row": row.row, "patient_id": row.patient_id, "reason": "unparseable cell"})
    frame = frame[~unparseable]

    out_of_range = (frame["glucose"] < GLUCOSE_MIN) | (frame["glucose"] > GLUCOSE_MAX)
    n_out_of_range = int(out_of_range.sum())
    for row in frame[out_of_range].itertuples(index=False):
        rejects.append({"row": row.row, "patient_id": row.patient_id, "reason": "glucose out of range"})
    frame = frame[~out_of_range].copy()

    frame["timestamp"] = frame["timestamp"].dt.tz_convert(None).dt.floor("min")
    duplicated = frame.duplicated(subset=["patient_id", "timestamp"], keep="first")
    for row in frame[duplicated].itertuples(index=False):
        rejects.append({"row": row.row, "patient_id": row.patient_id, "reason": "duplicate timestamp"})
    frame = frame[~duplicated]

    readings = frame.sort_values(["patient_id", "timestamp"], kind="mergesort")[["patient_id", "timestamp", "glucose"]]
    readings = readings.reset_index(drop=True)
    if rejects:
        logger.warning(f"Dropped {len(rejects)} CGM rows ({n_out_of_range} out of range)")
    logger.info(f"Loaded {len(readings)} readings for {readings['patient_id'].nunique()} patients")
    return CgmLoadResult(readings, _rejects_frame(rejects).sort_values("row").reset_index(drop=True), n_out_of_range)


def glucose_streams(readings: pd.DataFrame) -> Dict[str, pd.DataFrame]:
    """Split a readings table into per-patient streams (each sorted by timestamp)."""
    return {pid: grp.reset_index(drop=True) for pid, grp in readings.groupby("patient_id", sort=True)}


def write_weekly_csv(weekly: pd.DataFrame, meta: pd.DataFrame, path: Union[str, Path]) -> Path:
    """
    Write a weekly table in the canonical CSV schema (meta columns joined per row).
    Reloading the file with load_weekly_csv yields identical tables.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    merged = weekly.merge(meta, on="patient_id", how="left", validate="many_to_one")
    out = merged[WEEKLY_COLUMNS + OPTIONAL_META_COLUMNS].copy()
    out["week_start"] = out["week_start"].dt.strftime("%Y-%m-%d")
    out.to_csv(path, index=False, lineterminator="\n")
    logger.info(f"Wrote {len(out)} weekly rows to {path}")
    return path


def write_meta_csv(meta: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta[["patient_id"] + META_COLUMNS + OPTIONAL_META_COLUMNS].to_csv(path, index=False, lineterminator="\n")
    return path


def instance_ids(table: pd.DataFrame) -> pd.Series:
    """Stable instance key per weekly row: '<patient_id>|<YYYY-MM-DD>'."""
    return table["patient_id"] + "|" + table["week_start"].dt.strftime("%Y-%m-%d")


# ============================================================================
# PROTECTED ATTRIBUTES
# ============================================================================

def binarize(meta: PatientMeta, attr: ProtectedAttr) -> Optional[str]:
    """
    Map a patient to group A or B for one protected attribute.

    Returns:
        "A" or "B"; None when the attribute value is missing (the patient is then
        excluded from this attribute's disparity analysis, not from training)
    """
    if attr.name == "sex":
        if meta.sex is None:
            return None
        return GROUP_A if meta.sex == "male" else GROUP_B

    value: Optional[float]
    if attr.name == "age":
        value = meta.age
    elif attr.name == "education":
        value = meta.caregiver_education
    else:
        value = meta.household_income
    if value is None:
        return None
    return GROUP_A if value >= attr.threshold else GROUP_B


def resolve_protected_attrs(meta: pd.DataFrame, names: Sequence[str],
                            age_threshold: Optional[float] = None,
                            education_threshold: Optional[Union[int, str]] = None,
                            income_threshold: Optional[Union[int, str]] = None) -> List[ProtectedAttr]:
    """
    Build ProtectedAttr objects, filling unset thresholds from the cohort.

    Defaults: age → cohort median age; education → "bachelor" (code 4);
    income → cohort median income bracket (lower median).
    """
    attrs = []
    for name in names:
        if name == "sex":
            attrs.append(ProtectedAttr("sex"))
        elif name == "age":
            threshold = age_threshold
            if threshold is None:
                ages = meta["age"].dropna()
                threshold = float(ages.median()) if len(ages) else 0.0
            attrs.append(ProtectedAttr("age", float(threshold)))
        elif name == "education":
            if education_threshold is None:
                threshold = DEFAULT_EDUCATION_THRESHOLD
            elif isinstance(education_threshold, str):
                threshold = _parse_ordinal(education_threshold, EDUCATION_LEVELS)
            else:
                threshold = int(education_threshold)
            attrs.append(ProtectedAttr("education", float(threshold)))
        elif name == "income":
            if income_threshold is None:
                codes = meta["income"].dropna().astype(int)
                threshold = int(codes.quantile(0.5, interpolation="lower")) if len(codes) else 0
            elif isinstance(income_threshold, str):
                threshold = _parse_ordinal(income_threshold, INCOME_BRACKETS)
            else:
                threshold = int(income_threshold)
            attrs.append(ProtectedAttr("income", float(threshold)))
        else:
            raise SchemaError(f"Unknown protected attribute '{name}'")
        logger.info(f"Protected attribute {name}: threshold={attrs[-1].threshold}")
    return attrs


def group_table(meta: pd.DataFrame, attrs: Sequence[ProtectedAttr]) -> pd.DataFrame:
    """
    Group labels for every patient and attribute.

    Returns:
        DataFrame indexed by patient_id with one column per attribute name holding
        "A", "B" or None (excluded from that attribute's audit)
    """
    records = meta_records(meta)
    table = pd.DataFrame(
        {attr.name: [binarize(records[p], attr) for p in sorted(records)] for attr in attrs},
        index=pd.Index(sorted(records), name="patient_id"),
        dtype="object",
    )
    for attr in attrs:
        n_missing = int(table[attr.name].isna().sum())
        if n_missing:
            logger.info(f"{n_missing} patient(s) excluded from {attr.name} audit (missing value)")
    return table


# ============================================================================
# BATCHING AND HOLDOUT
# ============================================================================

def make_batches(weekly: pd.DataFrame, n_batches: int,
                 holdout: Optional[FrozenSet[str]] = None) -> BatchPlan:
    """
    Assign patients to chronological batches of equal calendar span.

    The cohort date range [min week_start, max week_start] (inclusive days) is cut
    into `n_batches` equal spans; each patient goes to the span containing their
    first week_start and takes all their weeks along.

    Args:
        weekly: Weekly table (holdout patients already removed)
        n_batches: Number of batches T+1 (>= 2)
        holdout: Holdout patient ids to record in the plan

    Returns:
        BatchPlan
    """
    if n_batches < 2:
        raise SchemaError(f"n_batches must be >= 2, got {n_batches}")
    if weekly.empty:
        raise SchemaError("Cannot batch an empty weekly table")
    holdout = frozenset(holdout or ())
    overlap = holdout & set(weekly["patient_id"])
    if overlap:
        raise SchemaError(f"{len(overlap)} holdout patient(s) present in the table being batched")

    first_obs = weekly.groupby("patient_id")["week_start"].min().sort_index()
    origin = first_obs.min()
    last = weekly["week_start"].max()
    total_days = int((last - origin).days) + 1

    offsets = (first_obs - origin).dt.days.astype(int)
    batch_index = np.minimum((offsets.to_numpy() * n_batches) // total_days, n_batches - 1)
    assignment = dict(zip(first_obs.index, (int(b) for b in batch_index)))

    span = pd.Timedelta(days=total_days / n_batches)
    boundaries = tuple((origin + k * span, origin + (k + 1) * span) for k in range(n_batches))

    plan = BatchPlan(n_batches=n_batches, assignment=assignment, boundaries=boundaries, holdout=holdout)
    counts = np.bincount(batch_index, minlength=n_batches)
    for k, count in enumerate(counts):
        if count == 0:
            logger.warning(f"Batch {k} is empty ({boundaries[k][0].date()} to {boundaries[k][1].date()})")
    logger.info(f"Assigned {len(assignment)} patients to {n_batches} batches: {counts.tolist()}")
    return plan


def _largest_remainder(exact: Dict[Tuple, float], total: int) -> Dict[Tuple, int]:
    quotas = {k: int(math.floor(v)) for k, v in exact.items()}
    shortfall = total - sum(quotas.values())
    order = sorted(exact, key=lambda k: (-(exact[k] - quotas[k]), k))
    for k in order[:max(shortfall, 0)]:
        quotas[k] += 1
    return quotas


def prevalence_quartiles(prevalence: pd.Series) -> pd.Series:
    """Quartile index of each patient's label prevalence; tied values share a bin, so fewer than four bins may remain."""
    if prevalence.nunique() < 2:
        return pd.Series(0, index=prevalence.index)
    bins = pd.qcut(prevalence, q=min(4, len(prevalence)), labels=False, duplicates="drop")
    return bins.astype(int)


def make_holdout(weekly: pd.DataFrame, fraction: float, seed: int,
                 groups: Optional[pd.Series] = None) -> Tuple[FrozenSet[str], pd.DataFrame]:
    """
    Draw a stratified patient-level holdout.

    Strata are (quartile of patient-level label prevalence) x (protected group of
    `groups`, with missing values as their own stratum). Patients with equal
    prevalence always share a quartile. Per-stratum quotas use
    largest-remainder rounding so the holdout size is round(fraction * n_patients).

    Args:
        weekly: Weekly table
        fraction: Holdout fraction in (0, 1)
        seed: Sampling seed
        groups: Optional patient_id → group label series

    Returns:
        (holdout patient ids, remainder table without any holdout week)
    """
    if not 0.0 < fraction < 1.0:
        raise SchemaError(f"holdout fraction must be in (0, 1), got {fraction}")

    prevalence = weekly.groupby("patient_id")["label"].mean().sort_index()
    n_patients = len(prevalence)
    quartile = prevalence_quartiles(prevalence)
    if groups is not None:
        group = groups.reindex(prevalence.index).astype("object").where(lambda s: s.notna(), "missing")
    else:
        group = pd.Series("all", index=prevalence.index)

    strata: Dict[Tuple, List[str]] = {}
    for pid in prevalence.index:
        strata.setdefault((int(quartile[pid]), str(group[pid])), []).append(pid)

    target = int(math.floor(fraction * n_patients + 0.5))
    exact = {k: fraction * len(v) for k, v in strata.items()}
    quotas = _largest_remainder(exact, target)

    rng = np.random.default_rng(seed)
    selected: List[str] = []
    for key in sorted(strata):
        members = strata[key]
        if len(members) < 1.0 / fraction:
            logger.info(f"Holdout stratum {key} has {len(members)} patients; drawing {quotas[key]} by proportional rounding")
        if quotas[key]:
            selected.extend(rng.choice(np.array(members, dtype=object), size=quotas[key], replace=False).tolist())

    holdout = frozenset(selected)
    remainder = weekly[~weekly["patient_id"].isin(holdout)].reset_index(drop=True)
    logger.info(f"Holdout: {len(holdout)} of {n_patients} patients (seed {seed}), {len(remainder)} rows remain")
    return holdout, remainder


def patient_split(table: pd.DataFrame, fraction: float, seed: int) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Random patient-level split.

    Returns:
        (kept rows, split-off rows); the split-off part holds round(fraction * n)
        patients, at least one when the table has two or more patients
    """
    patients = np.array(sorted(table["patient_id"].unique()), dtype=object)
    n_split = int(math.floor(fraction * len(patients) + 0.5))
    if len(patients) >= 2:
        n_split = min(max(n_split, 1), len(patients) - 1)
    else:
        n_split = 0
    rng = np.random.default_rng(seed)
    chosen = set(rng.choice(patients, size=n_split, replace=False).tolist()) if n_split else set()
    mask = table["patient_id"].isin(chosen)
    return table[~mask], table[mask]
