"""
Configuration loading.

Run and cohort configurations are flat key-value YAML documents layered over the
bundled presets in src/presets/. Unknown keys are rejected with a ConfigError that
names the key. Environment defaults come from a .env file via python-dotenv.
"""

import os
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import yaml
from dotenv import load_dotenv

from src.errors import ConfigError

logger = logging.getLogger(__name__)

load_dotenv()

PRESETS_DIR = Path(__file__).parent / "presets"
DEFAULT_RUN_PRESET = PRESETS_DIR / "default_run.yaml"
DEFAULT_COHORT_PRESET = PRESETS_DIR / "default_cohort.yaml"

STRATEGIES = ("none", "last", "subset", "full")
SCHEMAS = ("prospective", "retrospective")
LEARNER_KINDS = ("logreg", "naive_bayes")


def default_output_dir() -> str:
    return os.getenv("RETRAIN_AUDIT_OUTPUT_DIR", "./runs")


def default_workers() -> int:
    try:
        return max(1, int(os.getenv("RETRAIN_AUDIT_WORKERS", "1")))
    except ValueError:
        logger.warning("RETRAIN_AUDIT_WORKERS is not an integer; using 1 worker")
        return 1


def default_log_level() -> str:
    return os.getenv("RETRAIN_AUDIT_LOG_LEVEL", "INFO").upper()


@dataclass
class RunConfig:
    """Fully resolved configuration of one experiment run."""
    weekly_csv: Optional[str] = None
    meta_csv: Optional[str] = None
    output_dir: str = field(default_factory=default_output_dir)
    column_map: Dict[str, str] = field(default_factory=dict)

    strategies: List[str] = field(default_factory=lambda: list(STRATEGIES))
    schemas: List[str] = field(default_factory=lambda: list(SCHEMAS))
    n_batches: int = 6
    holdout_fraction: float = 0.10
    n_seeds: int = 10
    bootstrap: int = 30
    rashomon_m: int = 20
    rashomon_epsilon: float = 0.01

    protected_attributes: List[str] = field(default_factory=lambda: ["sex", "age", "education", "income"])
    age_threshold: Optional[float] = None
    education_threshold: Optional[Union[int, str]] = "bachelor"
    income_threshold: Optional[Union[int, str]] = None

    learner: str = "logreg"
    learning_rate: float = 0.1
    l2: float = 1e-3
    max_iter: int = 500
    tol: float = 1e-8
    include_protected: bool = False
    decision_threshold: float = 0.5

    abstention: bool = True
    abstention_k: int = 5
    abstention_alpha: float = 0.05

    high_abstention_fraction: float = 0.10
    flip_instability_fraction: float = 0.20
    low_sc_threshold: float = 0.75

    master_seed: int = 0
    n_workers: int = field(default_factory=default_workers)
    pediatric_only: bool = False
    registry: bool = True

    def validate(self) -> "RunConfig":
        """Check value ranges; raises ConfigError on the first violation."""
        bad_strategies = [s for s in self.strategies if s not in STRATEGIES]
        if bad_strategies or not self.strategies:
            raise ConfigError(f"strategies: unknown or empty {bad_strategies or self.strategies}")
        bad_schemas = [s for s in self.schemas if s not in SCHEMAS]
        if bad_schemas or not self.schemas:
            raise ConfigError(f"schemas: unknown or empty {bad_schemas or self.schemas}")
        if self.learner not in LEARNER_KINDS:
            raise ConfigError(f"learner: must be one of {LEARNER_KINDS}, got '{self.learner}'")
        checks = [
            ("n_batches", self.n_batches >= 2, ">= 2"),
            ("holdout_fraction", 0.0 < self.holdout_fraction < 1.0, "in (0, 1)"),
            ("n_seeds", self.n_seeds >= 1, ">= 1"),
            ("bootstrap", self.bootstrap >= 2, ">= 2"),
            ("rashomon_m", self.rashomon_m >= 2, ">= 2"),
            ("rashomon_epsilon", self.rashomon_epsilon >= 0.0, ">= 0"),
            ("learning_rate", self.learning_rate > 0.0, "> 0"),
            ("l2", self.l2 >= 0.0, ">= 0"),
            ("max_iter", self.max_iter >= 1, ">= 1"),
            ("tol", self.tol >= 0.0, ">= 0"),
            ("decision_threshold", 0.0 < self.decision_threshold < 1.0, "in (0, 1)"),
            ("abstention_k", self.abstention_k >= 1, ">= 1"),
            ("abstention_alpha", 0.0 < self.abstention_alpha < 1.0, "in (0, 1)"),
            ("high_abstention_fraction", 0.0 <= self.high_abstention_fraction <= 1.0, "in [0, 1]"),
            ("flip_instability_fraction", 0.0 <= self.flip_instability_fraction <= 1.0, "in [0, 1]"),
            ("n_workers", self.n_workers >= 1, ">= 1"),
        ]
        for key, ok, rule in checks:
            if not ok:
                raise ConfigError(f"{key}: must be {rule}, got {getattr(self, key)!r}")
        bad_attrs = [a for a in self.protected_attributes if a not in ("sex", "age", "education", "income")]
        if bad_attrs or not self.protected_attributes:
            raise ConfigError(f"protected_attributes: unknown or empty {bad_attrs or self.protected_attributes}")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def read_flat_document(path: Union[str, Path]) -> Dict[str, Any]:
    """
    Read a flat key-value YAML (or JSON) document.

    Raises:
        FileNotFoundError: If the file does not exist
        ConfigError: If the document is not a mapping or cannot be parsed
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Configuration file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"Could not parse {path}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a flat key-value mapping")
    return data


def parse_overrides(pairs: Optional[List[str]]) -> Dict[str, Any]:
    """Parse `key=value` strings; values are read as YAML scalars or lists."""
    overrides: Dict[str, Any] = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"Override '{pair}' is not of the form key=value")
        key, raw = pair.split("=", 1)
        try:
            overrides[key.strip()] = yaml.safe_load(raw)
        except yaml.YAMLError as e:
            raise ConfigError(f"Override '{pair}' has an unparseable value: {e}") from e
    return overrides


def check_keys(data: Mapping[str, Any], allowed: List[str], source: str) -> None:
    for key in data:
        if key not in allowed:
            raise ConfigError(f"Unknown configuration key '{key}' in {source}")


def _coerce_lists(values: Dict[str, Any], keys: List[str]) -> None:
    for key in keys:
        if isinstance(values.get(key), str):
            values[key] = [v.strip() for v in values[key].split(",") if v.strip()]


def _coerce_floats(values: Dict[str, Any]) -> None:
    # YAML reads "1e-3" as a string
    for f in fields(RunConfig):
        value = values.get(f.name)
        if f.type is float and isinstance(value, (str, int)) and not isinstance(value, bool):
            try:
                values[f.name] = float(value)
            except ValueError as e:
                raise ConfigError(f"{f.name}: expected a number, got {value!r}") from e


def load_run_config(path: Optional[Union[str, Path]] = None,
                    overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Load a RunConfig: preset defaults, then the user file, then overrides.

    Args:
        path: Optional user configuration file
        overrides: Optional key → value overrides (e.g. from `--set key=value`)

    Returns:
        Validated RunConfig

    Raises:
        ConfigError: Unknown key or out-of-range value
        FileNotFoundError: If `path` does not exist
    """
    allowed = [f.name for f in fields(RunConfig)]
    values: Dict[str, Any] = {}
    if DEFAULT_RUN_PRESET.exists():
        preset = read_flat_document(DEFAULT_RUN_PRESET)
        check_keys(preset, allowed, str(DEFAULT_RUN_PRESET))
        values.update(preset)
    if path is not None:
        user = read_flat_document(path)
        check_keys(user, allowed, str(path))
        values.update(user)
        logger.info(f"Loaded run configuration from {path}")
    if overrides:
        check_keys(overrides, allowed, "overrides")
        values.update(overrides)

    _coerce_lists(values, ["strategies", "schemas", "protected_attributes"])
    _coerce_floats(values)
    # Unset env-backed keys fall back to environment defaults
    for key in ("output_dir", "n_workers"):
        if values.get(key) is None:
            values.pop(key, None)
    try:
        config = RunConfig(**values)
    except TypeError as e:
        raise ConfigError(f"Invalid run configuration: {e}") from e
    return config.validate()


def load_cohort_values(path: Optional[Union[str, Path]] = None,
                       overrides: Optional[Mapping[str, Any]] = None) -> Dict[str, Any]:
    """Flat cohort keys: preset defaults, then the user file, then overrides."""
    values: Dict[str, Any] = {}
    if DEFAULT_COHORT_PRESET.exists():
        values.update(read_flat_document(DEFAULT_COHORT_PRESET))
    allowed = list(values)
    if path is not None:
        user = read_flat_document(path)
        check_keys(user, allowed, str(path))
        values.update(user)
        logger.info(f"Loaded cohort configuration from {path}")
    if overrides:
        check_keys(overrides, allowed, "overrides")
        values.update(overrides)
    return values


def load_cohort_spec(path: Optional[Union[str, Path]] = None,
                     overrides: Optional[Mapping[str, Any]] = None):
    """
    Load a synthetic CohortSpec from a flat document layered over the cohort preset.

    Raises:
        ConfigError: Unknown key or infeasible marginals
    """
    from src.synthgen import CohortSpec

    return CohortSpec.from_flat(load_cohort_values(path, overrides))


def preset_path(name: str) -> Path:
    """Resolve a bundled preset by name (with or without the .yaml suffix)."""
    candidate = PRESETS_DIR / (name if name.endswith(".yaml") else f"{name}.yaml")
    if not candidate.exists():
        raise ConfigError(f"Unknown preset '{name}'")
    return candidate
