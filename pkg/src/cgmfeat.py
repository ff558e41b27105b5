"""
CGM feature extraction.

Turns per-patient glucose streams into daily glycemic metrics (TIR/TAR/TBR, SD, MAGE,
CV), hyper/hypoglycemic events, weekly feature vectors and the weekly high-risk label
(more than three severe hyperglycemic events).
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import date, datetime, timedelta
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from src.dataio import WeeklyObservation, weekly_frame

logger = logging.getLogger(__name__)

HYPER = "hyperglycemic"
HYPO = "hypoglycemic"
ABOVE = "above"
BELOW = "below"

SEVERE_WEEK_COUNT = 3


@dataclass(frozen=True)
class Thresholds:
    """Glycemic thresholds (mg/dL) and durations (minutes)."""
    hyper: float = 180.0
    hypo: float = 70.0
    severe_hyper: float = 250.0
    severe_min_duration: float = 180.0
    gap_tolerance: float = 30.0
    min_event_duration: float = 15.0
    default_cadence: float = 5.0


DEFAULT_THRESHOLDS = Thresholds()


@dataclass(frozen=True)
class GlycemicEvent:
    patient_id: str
    kind: str
    start: datetime
    end: datetime
    duration: float
    peak_or_nadir: float
    severe: bool
    threshold: float


@dataclass(frozen=True)
class DailyMetrics:
    patient_id: str
    date: date
    tir: float
    tar: float
    tbr: float
    sd: float
    mage: float
    cv: float
    n_readings: int
    coverage: float


def interval_weights(timestamps: pd.Series, thresholds: Thresholds = DEFAULT_THRESHOLDS) -> np.ndarray:
    """
    Minutes represented by each reading: the interval to the next reading, capped at
    the gap tolerance. The last reading gets the trace's median cadence.
    """
    ts = pd.to_datetime(pd.Series(timestamps)).reset_index(drop=True)
    n = len(ts)
    if n == 0:
        return np.empty(0)
    diffs = ts.diff().iloc[1:].dt.total_seconds().to_numpy() / 60.0
    capped = np.minimum(diffs, thresholds.gap_tolerance)
    last = float(np.median(capped)) if len(capped) else thresholds.default_cadence
    return np.append(capped, last)


def segment_events(trace: pd.DataFrame, threshold: float, direction: str,
                   min_duration: float = 0.0, thresholds: Thresholds = DEFAULT_THRESHOLDS,
                   patient_id: Optional[str] = None) -> List[GlycemicEvent]:
    """
    Maximal runs of consecutive readings strictly beyond a threshold.

    Args:
        trace: Readings with `timestamp` and `glucose`, sorted by timestamp
        threshold: mg/dL threshold
        direction: "above" or "below"
        min_duration: Runs shorter than this are never severe
        thresholds: Gap tolerance and severe-hyper rule
        patient_id: Recorded on each event (defaults to the trace's patient_id column)

    Returns:
        Events in chronological order. A hyper event is severe iff all its readings
        exceed the severe threshold and it lasts at least the severe minimum duration.
    """
    if trace.empty:
        return []
    if direction not in (ABOVE, BELOW):
        raise ValueError(f"direction must be '{ABOVE}' or '{BELOW}'")
    if patient_id is None:
        patient_id = str(trace["patient_id"].iloc[0]) if "patient_id" in trace.columns else ""

    ts = pd.to_datetime(trace["timestamp"]).reset_index(drop=True)
    glucose = trace["glucose"].to_numpy(dtype=float)
    weights = interval_weights(ts, thresholds)
    beyond = glucose > threshold if direction == ABOVE else glucose < threshold
    gaps = np.append(ts.diff().iloc[1:].dt.total_seconds().to_numpy() / 60.0 > thresholds.gap_tolerance, False)

    kind = HYPER if direction == ABOVE else HYPO
    events: List[GlycemicEvent] = []
    start: Optional[int] = None
    for i in range(len(glucose)):
        if beyond[i] and start is None:
            start = i
        run_ends = start is not None and (not beyond[i] or i == len(glucose) - 1 or gaps[i])
        if not run_ends:
            continue
        stop = i if beyond[i] else i - 1
        values = glucose[start:stop + 1]
        start_ts = ts.iloc[start].to_pydatetime()
        end_ts = (ts.iloc[stop] + pd.Timedelta(minutes=float(weights[stop]))).to_pydatetime()
        duration = (end_ts - start_ts).total_seconds() / 60.0
        severe = bool(
            kind == HYPER
            and duration >= min_duration
            and duration >= thresholds.severe_min_duration
            and np.all(values > thresholds.severe_hyper)
        )
        extreme = float(values.max() if kind == HYPER else values.min())
        events.append(GlycemicEvent(patient_id, kind, start_ts, end_ts, duration, extreme, severe, float(threshold)))
        start = None
        # A gap-terminated run may be followed immediately by a new run at i+1
    return events


def _zigzag_pivots(values: np.ndarray, sd: float) -> List[float]:
    """Alternating peaks and nadirs whose successive swings all exceed `sd`."""
    pivots: List[float] = []
    trend = 0
    hi = lo = cand = float(values[0])
    for x in values[1:]:
        x = float(x)
        if trend == 0:
            hi, lo = max(hi, x), min(lo, x)
            if hi - lo > sd:
                if x == hi:
                    trend, pivots, cand = 1, [lo], hi
                else:
                    trend, pivots, cand = -1, [hi], lo
        elif trend == 1:
            if x > cand:
                cand = x
            elif cand - x > sd:
                pivots.append(cand)
                trend, cand = -1, x
        else:
            if x < cand:
                cand = x
            elif x - cand > sd:
                pivots.append(cand)
                trend, cand = 1, x
    if trend != 0 and abs(cand - pivots[-1]) > sd:
        pivots.append(cand)
    return pivots


def mage(values: Sequence[float]) -> float:
    """
    Mean amplitude of glycemic excursions: mean of the swings larger than one
    (population) SD, counted in the direction of the first qualifying swing.
    """
    g = np.asarray(values, dtype=float)
    if len(g) < 2:
        return 0.0
    sd = float(g.std())
    if sd == 0.0:
        return 0.0
    pivots = _zigzag_pivots(g, sd)
    swings = np.diff(pivots)
    if len(swings) == 0:
        return 0.0
    first_up = swings[0] > 0
    selected = swings[swings > 0] if first_up else -swings[swings < 0]
    return float(selected.mean())


def daily_metrics(day: pd.DataFrame, patient_id: Optional[str] = None, day_date: Optional[date] = None,
                  thresholds: Thresholds = DEFAULT_THRESHOLDS,
                  weights: Optional[np.ndarray] = None) -> DailyMetrics:
    """
    Glycemic metrics of one patient-day.

    Args:
        day: Readings of one patient on one calendar date (timestamp, glucose)
        weights: Per-reading minutes; computed from `day` alone when omitted

    Returns:
        DailyMetrics with time-weighted TIR/TAR/TBR
    """
    if day.empty:
        raise ValueError("daily_metrics needs at least one reading")
    g = day["glucose"].to_numpy(dtype=float)
    if weights is None:
        weights = interval_weights(day["timestamp"], thresholds)
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if total <= 0:
        w = np.ones_like(g)
        total = float(len(g))
    tar = float(w[g > thresholds.hyper].sum() / total)
    tbr = float(w[g < thresholds.hypo].sum() / total)
    tir = float(w[(g >= thresholds.hypo) & (g <= thresholds.hyper)].sum() / total)

    sd = float(g.std())
    mean = float(g.mean())
    cv = sd / mean if mean > 0 and sd > 0 else 0.0
    if patient_id is None:
        patient_id = str(day["patient_id"].iloc[0]) if "patient_id" in day.columns else ""
    if day_date is None:
        day_date = pd.Timestamp(day["timestamp"].iloc[0]).date()
    expected = 1440.0 / thresholds.default_cadence
    return DailyMetrics(
        patient_id=patient_id,
        date=day_date,
        tir=tir,
        tar=tar,
        tbr=tbr,
        sd=sd,
        mage=mage(g),
        cv=cv,
        n_readings=len(g),
        coverage=min(1.0, len(g) / expected),
    )


def weekly_aggregate(days: Sequence[DailyMetrics], events: Sequence[GlycemicEvent], week_start: date,
                     thresholds: Thresholds = DEFAULT_THRESHOLDS,
                     min_event_duration: float = 0.0) -> Optional[WeeklyObservation]:
    """
    Combine a week of daily metrics and events into one (unlabeled) observation.

    Daily metrics are averaged with n_readings weights. Hyper and hypo events are
    counted when they last at least `min_event_duration` minutes; severe events are
    the severe runs above the severe threshold.

    Returns:
        WeeklyObservation, or None if no day in the week has data
    """
    if not days:
        logger.info(f"No CGM data in week starting {week_start}; no observation emitted")
        return None
    week_end = week_start + timedelta(days=7)
    weights = np.array([d.n_readings for d in days], dtype=float)
    features: Dict[str, float] = {}
    for name in ("tir", "tar", "tbr", "sd", "mage", "cv"):
        values = np.array([getattr(d, name) for d in days], dtype=float)
        features[name] = float(values @ weights / weights.sum())

    in_week = [e for e in events if week_start <= e.start.date() < week_end]
    features["hyper_events"] = sum(
        1 for e in in_week
        if e.kind == HYPER and e.threshold == thresholds.hyper and e.duration >= min_event_duration
    )
    features["hypo_events"] = sum(
        1 for e in in_week
        if e.kind == HYPO and e.threshold == thresholds.hypo and e.duration >= min_event_duration
    )
    features["severe_hyper_events"] = sum(
        1 for e in in_week if e.severe and e.threshold == thresholds.severe_hyper
    )
    return WeeklyObservation(patient_id=days[0].patient_id, week_start=week_start, features=features)


def label_week(obs: WeeklyObservation) -> int:
    """1 iff the week has more than three severe hyperglycemic events."""
    return int(obs.features["severe_hyper_events"] > SEVERE_WEEK_COUNT)


def featurize_patient(trace: pd.DataFrame, patient_id: str,
                      thresholds: Thresholds = DEFAULT_THRESHOLDS) -> List[WeeklyObservation]:
    """
    Labeled weekly observations for one patient.

    Weeks are consecutive 7-day windows anchored at the date of the patient's first
    reading; days are calendar dates.
    """
    if trace.empty:
        return []
    trace = trace.sort_values("timestamp", kind="mergesort").reset_index(drop=True)
    weights = interval_weights(trace["timestamp"], thresholds)
    events = (
        segment_events(trace, thresholds.hyper, ABOVE, thresholds=thresholds, patient_id=patient_id)
        + segment_events(trace, thresholds.hypo, BELOW, thresholds=thresholds, patient_id=patient_id)
        + segment_events(trace, thresholds.severe_hyper, ABOVE, thresholds=thresholds, patient_id=patient_id)
    )

    dates = trace["timestamp"].dt.date
    first = dates.iloc[0]
    week_index = dates.map(lambda d: (d - first).days // 7)

    observations = []
    for week in sorted(week_index.unique()):
        week_start = first + timedelta(days=7 * int(week))
        days = []
        for day_date in sorted(dates[week_index == week].unique()):
            mask = (dates == day_date).to_numpy()
            days.append(daily_metrics(trace[mask], patient_id, day_date, thresholds, weights[mask]))
        obs = weekly_aggregate(days, events, week_start, thresholds, thresholds.min_event_duration)
        if obs is None:
            continue
        observations.append(WeeklyObservation(obs.patient_id, obs.week_start, obs.features, label_week(obs)))
    logger.debug(f"Patient {patient_id}: {len(observations)} weekly observations, {len(events)} events")
    return observations


def featurize(readings: pd.DataFrame, thresholds: Thresholds = DEFAULT_THRESHOLDS,
              n_workers: int = 1) -> pd.DataFrame:
    """
    Weekly feature table (dataio schema, without metadata) for a whole cohort.

    Args:
        readings: Output of dataio.load_cgm_csv (patient_id, timestamp, glucose)
        thresholds: Glycemic thresholds
        n_workers: Patients featurized concurrently

    Returns:
        Weekly table sorted by patient_id and week_start
    """
    streams = {pid: grp for pid, grp in readings.groupby("patient_id", sort=True)}
    logger.info(f"[FEATURIZE] Featurizing {len(streams)} patients with {n_workers} worker(s)")

    def _one(pid: str) -> List[WeeklyObservation]:
        return featurize_patient(streams[pid], pid, thresholds)

    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = dict(zip(streams, pool.map(_one, streams)))
    else:
        results = {pid: _one(pid) for pid in streams}

    records = [obs.to_record() for pid in sorted(results) for obs in results[pid]]
    table = weekly_frame(records)
    logger.info(f"[FEATURIZE] {len(table)} weekly observations, {int(table['label'].sum())} high-risk")
    return table
