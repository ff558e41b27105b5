"""
Continual-retraining experiment engine.

Builds per-phase training sets for each retraining strategy, runs the prospective and
retrospective evaluation schemas over N seeds, trains the main model, bootstrap
ensemble and Rashomon set of every phase, calibrates the conformal abstainer and
fills the PredictionLedger: one row per (schema, seed, strategy, phase, instance).

Jobs run on a thread pool and are merged by structural key, and every random stream
is derived from the master seed plus the job's key, so the ledger does not depend on
the degree of parallelism.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, FrozenSet, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.abstain import Abstainer, calibrate, decide_many
from src.config import RunConfig
from src.dataio import (
    FEATURE_COLUMNS,
    BatchPlan,
    ProtectedAttr,
    group_table,
    instance_ids,
    make_batches,
    make_holdout,
    patient_split,
    resolve_protected_attrs,
)
from src.errors import CalibrationError, ConfigError, InvariantError, RashomonError, SchemaError
from src.learner import KIND_CONSTANT, Model, TrainConfig, constant_model, fit_frame, fit_or_fallback
from src.metrics import auc, is_defined, pack_predictions, self_consistency_matrix
from src.services.seeding import derive_seed, rng_for

logger = logging.getLogger(__name__)

STRATEGIES = ("none", "last", "subset", "full")
PROSPECTIVE = "prospective"
RETROSPECTIVE = "retrospective"

# Regularization jitter applied to Rashomon candidates, cycled over m
RASHOMON_L2_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)
RASHOMON_VALIDATION_FRACTION = 0.2
MAX_RESAMPLE_RETRIES = 10
AWARENESS_MISSING = 0.5

LEDGER_COLUMNS = [
    "schema", "seed", "strategy", "phase", "instance_id", "score", "pred", "abstained",
    "distance", "tau", "boot_preds", "rashomon_preds",
]


@dataclass(frozen=True)
class ExperimentConfig:
    strategies: Tuple[str, ...] = STRATEGIES
    schemas: Tuple[str, ...] = (PROSPECTIVE, RETROSPECTIVE)
    n_batches: int = 6
    holdout_fraction: float = 0.10
    n_seeds: int = 10
    bootstrap: int = 30
    rashomon_m: int = 20
    rashomon_epsilon: float = 0.01
    attributes: Tuple[str, ...] = ("sex", "age", "education", "income")
    train: TrainConfig = field(default_factory=TrainConfig)
    learner: str = "logreg"
    decision_threshold: float = 0.5
    abstention: bool = True
    abstention_k: int = 5
    abstention_alpha: float = 0.05
    master_seed: int = 0
    n_workers: int = 1

    def __post_init__(self):
        if self.bootstrap < 2:
            raise ConfigError("bootstrap must be >= 2")
        if self.rashomon_m < 2:
            raise ConfigError("rashomon_m must be >= 2")
        if self.rashomon_epsilon < 0:
            raise ConfigError("rashomon_epsilon must be >= 0")
        if self.n_batches < 2:
            raise ConfigError("n_batches must be >= 2")

    @property
    def n_phases(self) -> int:
        return self.n_batches - 1

    @classmethod
    def from_run_config(cls, config: RunConfig) -> "ExperimentConfig":
        return cls(
            strategies=tuple(config.strategies),
            schemas=tuple(config.schemas),
            n_batches=config.n_batches,
            holdout_fraction=config.holdout_fraction,
            n_seeds=config.n_seeds,
            bootstrap=config.bootstrap,
            rashomon_m=config.rashomon_m,
            rashomon_epsilon=config.rashomon_epsilon,
            attributes=tuple(config.protected_attributes),
            train=TrainConfig(
                learning_rate=config.learning_rate,
                l2=config.l2,
                max_iter=config.max_iter,
                tol=config.tol,
                seed=config.master_seed,
                include_protected=config.include_protected,
            ),
            learner=config.learner,
            decision_threshold=config.decision_threshold,
            abstention=config.abstention,
            abstention_k=config.abstention_k,
            abstention_alpha=config.abstention_alpha,
            master_seed=config.master_seed,
            n_workers=config.n_workers,
        )


@dataclass
class Cohort:
    """Weekly table prepared for the engine: instance ids, group labels, awareness columns."""
    table: pd.DataFrame
    meta: pd.DataFrame
    attrs: List[ProtectedAttr]
    groups: pd.DataFrame

    @property
    def attribute_names(self) -> List[str]:
        return [a.name for a in self.attrs]

    def feature_names(self, include_protected: bool) -> List[str]:
        if include_protected:
            return FEATURE_COLUMNS + [f"aware_{name}" for name in self.attribute_names]
        return list(FEATURE_COLUMNS)

    def instances(self) -> pd.DataFrame:
        """Instance index: instance_id, patient_id, week_start, label and one group column per attribute."""
        out = self.table[["instance_id", "patient_id", "week_start", "label"] + self.attribute_names].copy()
        out["week_start"] = out["week_start"].dt.strftime("%Y-%m-%d")
        return out.sort_values("instance_id", kind="mergesort").reset_index(drop=True)


class PhaseKey(NamedTuple):
    schema: str
    seed: int
    strategy: str
    phase: int


class RashomonResult(NamedTuple):
    models: List[Model]
    candidate_aucs: List[float]
    kept: List[int]
    best_auc: float


@dataclass
class PhaseModels:
    main: Model
    boot: List[Model]
    rashomon: List[Model]
    abstainer: Optional[Abstainer]
    train_patients: FrozenSet[str]
    summary: Dict[str, Any]


@dataclass
class SchemaSplit:
    """Batches and evaluation sets of one (schema, seed)."""
    schema: str
    seed: int
    plan: BatchPlan
    table: pd.DataFrame
    eval_sets: Dict[int, pd.DataFrame]


class ExperimentResult(NamedTuple):
    ledger: pd.DataFrame
    instances: pd.DataFrame
    training: pd.DataFrame


# ============================================================================
# COHORT PREPARATION
# ============================================================================

def prepare_cohort(weekly: pd.DataFrame, meta: pd.DataFrame, attribute_names: Sequence[str],
                   age_threshold: Optional[float] = None,
                   education_threshold: Optional[Union[int, str]] = None,
                   income_threshold: Optional[Union[int, str]] = None) -> Cohort:
    """
    Attach instance ids, per-attribute group labels and awareness indicator columns
    (A=1, B=0, missing=0.5) to a weekly table.
    """
    attrs = resolve_protected_attrs(meta, attribute_names, age_threshold, education_threshold, income_threshold)
    groups = group_table(meta, attrs)
    table = weekly.copy()
    table["instance_id"] = instance_ids(table)
    unknown = sorted(set(table["patient_id"]) - set(groups.index))
    if unknown:
        logger.warning(f"{len(unknown)} patient(s) have no metadata; excluded from every group audit")
    for attr in attrs:
        labels = table["patient_id"].map(groups[attr.name])
        table[attr.name] = labels.where(labels.notna(), None)
        table[f"aware_{attr.name}"] = labels.map({"A": 1.0, "B": 0.0}).fillna(AWARENESS_MISSING).astype(float)
    table = table.sort_values(["patient_id", "week_start"], kind="mergesort").reset_index(drop=True)
    return Cohort(table=table, meta=meta, attrs=attrs, groups=groups)


# ============================================================================
# TRAINING SETS, ENSEMBLES, RASHOMON SETS
# ============================================================================

def training_set_for(strategy: str, t: int, plan: BatchPlan, table: pd.DataFrame, seed: int) -> pd.DataFrame:
    """
    Training table of phase t (1..T) under a retraining strategy.

    full: batches 0..t−1; last: batch t−1; subset: uniform sample without replacement
    from batches 0..t−1 of size round(mean batch size); none: batch 0.
    """
    n_phases = plan.n_batches - 1
    if not 1 <= t <= n_phases:
        raise SchemaError(f"Phase {t} outside 1..{n_phases}")
    batch = table["patient_id"].map(plan.assignment)
    if strategy == "none":
        return table[batch == 0]
    if strategy == "last":
        return table[batch == t - 1]
    union = table[batch.between(0, t - 1)]
    if strategy == "full":
        return union
    if strategy == "subset":
        sizes = plan.batch_sizes(table)[:t]
        size = int(np.floor(np.mean(sizes) + 0.5))
        if size >= len(union):
            logger.info(f"Subset size {size} >= union size {len(union)} at phase {t}; using the full union")
            return union
        chosen = np.sort(np.random.default_rng(seed).choice(len(union), size=size, replace=False))
        return union.iloc[chosen]
    raise ConfigError(f"Unknown strategy '{strategy}'")


def _resample(train: pd.DataFrame, rng: np.random.Generator) -> Optional[pd.DataFrame]:
    for _ in range(MAX_RESAMPLE_RETRIES):
        sample = train.iloc[rng.integers(0, len(train), size=len(train))]
        if sample["label"].nunique() == 2:
            return sample
    return None


def bootstrap_ensemble(train: pd.DataFrame, n_models: int, seed: int, feature_names: Sequence[str],
                       cfg: TrainConfig, kind: str = "logreg", decision_threshold: float = 0.5) -> List[Model]:
    """
    Fit `n_models` models on with-replacement resamples of the training table.

    Replica b draws from the stream derived from (seed, b). Single-class resamples are
    redrawn up to 10 times, then replaced by a constant-score model.
    """
    if n_models < 2:
        raise ConfigError("bootstrap ensemble needs at least 2 models")
    models = []
    base_rate = float(train["label"].mean()) if len(train) else 0.0
    for b in range(n_models):
        sample = _resample(train, rng_for(seed, "bootstrap", b)) if len(train) else None
        if sample is None:
            logger.warning(f"Bootstrap replica {b}: no two-class resample in {MAX_RESAMPLE_RETRIES} draws; constant-score model")
            models.append(constant_model(base_rate, feature_names, decision_threshold))
            continue
        models.append(fit_frame(sample, feature_names, cfg, kind=kind, decision_threshold=decision_threshold))
    return models


def rashomon_set(train: pd.DataFrame, validation: pd.DataFrame, n_candidates: int, epsilon: float, seed: int,
                 feature_names: Sequence[str], cfg: TrainConfig, kind: str = "logreg",
                 decision_threshold: float = 0.5) -> RashomonResult:
    """
    Near-optimal candidate models.

    Candidate m is fit on a bootstrap resample with l2 = RASHOMON_L2_GRID[m mod 5]; the
    returned set keeps candidates whose validation AUC is >= best − epsilon.

    Raises:
        RashomonError: If no candidate has a defined validation AUC
    """
    if n_candidates < 2:
        raise ConfigError("Rashomon set needs at least 2 candidates")
    if validation.empty:
        raise RashomonError("Empty validation table")
    x_val = validation[list(feature_names)].to_numpy(dtype=float)
    y_val = validation["label"].to_numpy(dtype=int)
    candidates: List[Optional[Model]] = []
    aucs: List[float] = []
    for m in range(n_candidates):
        sample = _resample(train, rng_for(seed, "rashomon", m)) if len(train) else None
        if sample is None:
            candidates.append(None)
            aucs.append(np.nan)
            continue
        candidate_cfg = TrainConfig(cfg.learning_rate, RASHOMON_L2_GRID[m % len(RASHOMON_L2_GRID)],
                                    cfg.max_iter, cfg.tol, cfg.seed, cfg.include_protected)
        model = fit_frame(sample, feature_names, candidate_cfg, kind=kind, decision_threshold=decision_threshold)
        value = auc(model.predict_proba(x_val), y_val)
        candidates.append(model)
        aucs.append(float(value) if is_defined(value) else np.nan)

    finite = [a for a in aucs if not np.isnan(a)]
    if not finite:
        raise RashomonError("Every Rashomon candidate is degenerate on the validation table")
    best = max(finite)
    kept = [m for m, a in enumerate(aucs) if not np.isnan(a) and a >= best - epsilon]
    return RashomonResult([candidates[m] for m in kept], aucs, kept, best)


# ============================================================================
# SCHEMAS AND PHASE JOBS
# ============================================================================

def make_split(cohort: Cohort, config: ExperimentConfig, schema: str, seed: int) -> SchemaSplit:
    """Batches and per-phase evaluation sets for one (schema, seed)."""
    table = cohort.table
    if schema == RETROSPECTIVE:
        strata_groups = cohort.groups[cohort.attribute_names[0]] if cohort.attribute_names else None
        holdout, remainder = make_holdout(table, config.holdout_fraction,
                                          derive_seed(config.master_seed, "holdout", seed), groups=strata_groups)
        plan = make_batches(remainder, config.n_batches, holdout)
        holdout_rows = table[table["patient_id"].isin(holdout)]
        eval_sets = {t: holdout_rows for t in range(1, config.n_batches)}
        return SchemaSplit(schema, seed, plan, remainder, eval_sets)
    if schema == PROSPECTIVE:
        plan = make_batches(table, config.n_batches)
        eval_sets = {t: plan.rows_in(table, t) for t in range(1, config.n_batches)}
        return SchemaSplit(schema, seed, plan, table, eval_sets)
    raise ConfigError(f"Unknown schema '{schema}'")


def _group_counts(rows: pd.DataFrame, attributes: Sequence[str]) -> Dict[str, int]:
    counts = {}
    for name in attributes:
        counts[f"n_train_a_{name}"] = int((rows[name] == "A").sum())
        counts[f"n_train_b_{name}"] = int((rows[name] == "B").sum())
    return counts


def train_phase(cohort: Cohort, split: SchemaSplit, strategy: str, phase: int,
                config: ExperimentConfig) -> PhaseModels:
    """Main model, bootstrap ensemble, Rashomon set and abstainer of one phase."""
    key = (split.schema, split.seed, strategy, phase)
    features = cohort.feature_names(config.train.include_protected)
    base = derive_seed(config.master_seed, *key)
    train = training_set_for(strategy, phase, split.plan, split.table, derive_seed(base, "subset"))
    cfg = TrainConfig(config.train.learning_rate, config.train.l2, config.train.max_iter, config.train.tol,
                      base, config.train.include_protected)
    context = "/".join(str(k) for k in key)

    main = fit_or_fallback(train, features, cfg, config.learner, config.decision_threshold, context)
    boot = bootstrap_ensemble(train, config.bootstrap, derive_seed(base, "bootstrap"), features, cfg,
                              config.learner, config.decision_threshold)

    rashomon: List[Model] = []
    n_candidates = 0
    fit_part, validation = patient_split(train, RASHOMON_VALIDATION_FRACTION, derive_seed(base, "rashomon-split"))
    try:
        result = rashomon_set(fit_part, validation, config.rashomon_m, config.rashomon_epsilon,
                              derive_seed(base, "rashomon"), features, cfg, config.learner,
                              config.decision_threshold)
        rashomon = result.models
        n_candidates = config.rashomon_m
    except RashomonError as e:
        logger.warning(f"[RUN] {context}: Rashomon set unavailable ({e}); multiplicity metrics undefined")

    abstainer = None
    if config.abstention:
        use_model_scale = main.kind != KIND_CONSTANT
        try:
            abstainer = calibrate(train, features, config.abstention_k, config.abstention_alpha,
                                  derive_seed(base, "calibration"),
                                  mean=main.mean if use_model_scale else None,
                                  scale=main.scale if use_model_scale else None)
        except CalibrationError as e:
            logger.warning(f"[RUN] {context}: abstention disabled for this phase ({e})")

    summary = {
        "schema": split.schema,
        "seed": split.seed,
        "strategy": strategy,
        "phase": phase,
        "n_train": int(len(train)),
        "n_train_positive": int(train["label"].sum()),
        "n_train_patients": int(train["patient_id"].nunique()),
        "model_kind": main.kind,
        "converged": bool(main.converged),
        "n_iter": int(main.n_iter),
        "rashomon_candidates": n_candidates,
        "rashomon_size": len(rashomon),
        "tau": abstainer.tau if abstainer is not None else np.nan,
    }
    summary.update(_group_counts(train, cohort.attribute_names))
    logger.debug(f"[RUN] {context}: trained on {len(train)} rows")
    return PhaseModels(main, boot, rashomon, abstainer, frozenset(train["patient_id"]), summary)


def evaluate_phase(models: PhaseModels, eval_rows: pd.DataFrame, key: PhaseKey,
                   feature_names: Sequence[str], decision_threshold: float) -> pd.DataFrame:
    """
    Ledger rows of one phase.

    Raises:
        InvariantError: If a training patient appears in the evaluation set
    """
    leaked = models.train_patients & set(eval_rows["patient_id"])
    if leaked:
        raise InvariantError(f"{len(leaked)} patient(s) in both training and evaluation sets at {key}")
    eval_rows = eval_rows.sort_values("instance_id", kind="mergesort")
    x = eval_rows[list(feature_names)].to_numpy(dtype=float)
    n = len(eval_rows)

    scores = models.main.predict_proba(x) if n else np.empty(0)
    if models.abstainer is not None and n:
        distances, abstained = decide_many(models.abstainer, x)
        tau = models.abstainer.tau
    else:
        distances, abstained, tau = np.full(n, np.nan), np.zeros(n, dtype=bool), np.nan
    preds = pd.array((scores >= decision_threshold).astype(int), dtype="Int64")
    preds[abstained] = pd.NA

    boot = np.column_stack([m.predict(x) for m in models.boot]) if n else np.empty((0, len(models.boot)))
    if models.rashomon and n:
        rashomon_strings = pack_predictions(np.column_stack([m.predict(x) for m in models.rashomon]))
    else:
        rashomon_strings = [""] * n

    return pd.DataFrame({
        "schema": key.schema,
        "seed": key.seed,
        "strategy": key.strategy,
        "phase": key.phase,
        "instance_id": eval_rows["instance_id"].to_numpy(),
        "score": scores,
        "pred": preds,
        "abstained": abstained,
        "distance": distances,
        "tau": tau,
        "boot_preds": pack_predictions(boot),
        "rashomon_preds": rashomon_strings,
    }, columns=LEDGER_COLUMNS)


def _run_arm(cohort: Cohort, split: SchemaSplit, strategy: str, phases: Sequence[int],
             config: ExperimentConfig) -> Tuple[List[pd.DataFrame], List[Dict[str, Any]]]:
    """
    Train and evaluate a list of phases of one strategy. For "none" the phase-1 models
    are reused at every phase.
    """
    features = cohort.feature_names(config.train.include_protected)
    frames, summaries = [], []
    frozen: Optional[PhaseModels] = None
    for phase in phases:
        eval_rows = split.eval_sets[phase]
        if strategy == "none":
            frozen = frozen or train_phase(cohort, split, strategy, 1, config)
            models = frozen
            summary = dict(models.summary, phase=phase)
        else:
            models = train_phase(cohort, split, strategy, phase, config)
            summary = models.summary
        if eval_rows.empty:
            logger.warning(f"[RUN] {split.schema}/{split.seed}/{strategy}: phase {phase} has no evaluation instances; skipped")
            continue
        summary["n_eval"] = int(len(eval_rows))
        key = PhaseKey(split.schema, split.seed, strategy, phase)
        frames.append(evaluate_phase(models, eval_rows, key, features, config.decision_threshold))
        summaries.append(summary)
    return frames, summaries


def _run(cohort: Cohort, config: ExperimentConfig, schemas: Sequence[str]) -> Tuple[pd.DataFrame, pd.DataFrame]:
    jobs: List[Tuple[SchemaSplit, str, List[int]]] = []
    phases = list(range(1, config.n_batches))
    for schema in schemas:
        for seed in range(config.n_seeds):
            split = make_split(cohort, config, schema, seed)
            for strategy in config.strategies:
                if strategy == "none":
                    jobs.append((split, strategy, phases))
                else:
                    jobs.extend((split, strategy, [t]) for t in phases)
    logger.info(f"[RUN] {len(jobs)} jobs over schemas {list(schemas)}, {config.n_seeds} seed(s), "
                f"{len(config.strategies)} strategies, {config.n_workers} worker(s)")

    def _job(job: Tuple[SchemaSplit, str, List[int]]):
        split, strategy, job_phases = job
        return _run_arm(cohort, split, strategy, job_phases, config)

    if config.n_workers > 1:
        with ThreadPoolExecutor(max_workers=config.n_workers) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = [_job(job) for job in jobs]

    frames = [f for fs, _ in results for f in fs]
    summaries = [s for _, ss in results for s in ss]
    ledger = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=LEDGER_COLUMNS)
    ledger = ledger.sort_values(["schema", "seed", "strategy", "phase", "instance_id"], kind="mergesort")
    training = pd.DataFrame(summaries)
    if not training.empty:
        training = training.sort_values(["schema", "seed", "strategy", "phase"], kind="mergesort")
    return ledger.reset_index(drop=True), training.reset_index(drop=True)


def run_prospective(cohort: Cohort, config: ExperimentConfig) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Train on past batches, evaluate on the next chronological batch, for every seed."""
    return _run(cohort, config, [PROSPECTIVE])


def run_retrospective(cohort: Cohort, config: ExperimentConfig) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Evaluate every phase's model on one stratified patient-level holdout per seed."""
    return _run(cohort, config, [RETROSPECTIVE])


def run_experiment(cohort: Cohort, config: ExperimentConfig) -> ExperimentResult:
    """Run every configured schema; returns the ledger, instance index and training summary."""
    ledger, training = _run(cohort, config, list(config.schemas))
    logger.info(f"[RUN] Ledger complete: {len(ledger)} rows")
    return ExperimentResult(ledger, cohort.instances(), training)


# ============================================================================
# BENCHMARKING
# ============================================================================

def benchmark_learners(cohort: Cohort, kinds: Sequence[str], n_seeds: int, seed: int,
                       cfg: TrainConfig, bootstrap: int = 10, decision_threshold: float = 0.5) -> pd.DataFrame:
    """
    Compare learner kinds in both awareness modes over repeated patient-level 80/20
    splits.

    Returns:
        DataFrame with kind, include_protected, mean_auc, auc_sd, mean_sc, n_seeds
    """
    rows = []
    for kind in kinds:
        for include_protected in (False, True):
            features = cohort.feature_names(include_protected)
            aucs, scs = [], []
            for s in range(n_seeds):
                split_seed = derive_seed(seed, "benchmark", s)
                train, test = patient_split(cohort.table, 0.2, split_seed)
                model = fit_or_fallback(train, features, cfg, kind, decision_threshold, f"benchmark/{kind}/{s}")
                value = auc(model.predict_proba_frame(test), test["label"].to_numpy())
                if is_defined(value):
                    aucs.append(float(value))
                boot = bootstrap_ensemble(train, bootstrap, derive_seed(split_seed, "bootstrap"), features, cfg,
                                          kind, decision_threshold)
                x_test = test[features].to_numpy(dtype=float)
                scs.append(float(self_consistency_matrix(np.column_stack([m.predict(x_test) for m in boot])).mean()))
            rows.append({
                "kind": kind,
                "include_protected": include_protected,
                "mean_auc": float(np.mean(aucs)) if aucs else np.nan,
                "auc_sd": float(np.std(aucs, ddof=1)) if len(aucs) > 1 else 0.0,
                "mean_sc": float(np.mean(scs)) if scs else np.nan,
                "n_seeds": n_seeds,
            })
            logger.info(f"Benchmark {kind} (aware={include_protected}): AUC {rows[-1]['mean_auc']:.3f}")
    return pd.DataFrame(rows)


# ============================================================================
# RUN DIRECTORY IO
# ============================================================================

def write_table(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


def read_ledger(path: Union[str, Path]) -> pd.DataFrame:
    """Read a ledger CSV back with the dtypes it was written with."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Ledger not found: {path}")
    ledger = pd.read_csv(
        path,
        dtype={"schema": str, "strategy": str, "instance_id": str, "boot_preds": str,
               "rashomon_preds": str, "seed": int, "phase": int},
        keep_default_na=False,
        na_values={"score": [""], "distance": [""], "tau": [""], "pred": [""]},
        float_precision="round_trip",
    )
    missing = [c for c in LEDGER_COLUMNS if c not in ledger.columns]
    if missing:
        raise SchemaError(f"Ledger is missing column(s): {', '.join(missing)}")
    ledger["pred"] = ledger["pred"].astype("Int64")
    ledger["abstained"] = ledger["abstained"].map({"True": True, "False": False, True: True, False: False}).astype(bool)
    return ledger[LEDGER_COLUMNS]


def read_instances(path: Union[str, Path], attributes: Sequence[str]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Instance index not found: {path}")
    instances = pd.read_csv(path, dtype=str, keep_default_na=False)
    instances["label"] = instances["label"].astype(int)
    for name in attributes:
        instances[name] = instances[name].where(instances[name] != "", None)
    return instances


def read_training(path: Union[str, Path]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Training summary not found: {path}")
    return pd.read_csv(path, float_precision="round_trip")
