"""
Binary classifiers used for every retraining phase.

L2-regularized logistic regression trained by full-batch gradient descent from zero
weights, Gaussian naive Bayes, and a constant-score fallback. Features are z-scored
with statistics of the training split only. Training is deterministic: rows are put
in a canonical order before fitting, so permuting the training table does not change
the fitted parameters.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import expit, logsumexp

from src.errors import SchemaError, TrainingError

logger = logging.getLogger(__name__)

KIND_LOGREG = "logreg"
KIND_NAIVE_BAYES = "naive_bayes"
KIND_CONSTANT = "constant"

NB_VAR_SMOOTHING = 1e-9


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    l2: float = 1e-3
    max_iter: int = 500
    tol: float = 1e-8
    seed: int = 0
    include_protected: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise TrainingError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.max_iter < 1:
            raise TrainingError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.l2 < 0:
            raise TrainingError(f"l2 must be >= 0, got {self.l2}")


@dataclass
class Model:
    """
    A fitted classifier with its standardizer.

    `weights`/`bias` are used by logreg; `class_means`/`class_vars`/`class_log_priors`
    by naive Bayes; `constant_score` by the fallback model.
    """
    kind: str
    feature_names: List[str]
    mean: np.ndarray
    scale: np.ndarray
    decision_threshold: float = 0.5
    weights: Optional[np.ndarray] = None
    bias: float = 0.0
    class_means: Optional[np.ndarray] = None
    class_vars: Optional[np.ndarray] = None
    class_log_priors: Optional[np.ndarray] = None
    constant_score: Optional[float] = None
    converged: bool = True
    n_iter: int = 0
    config: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.scale

    def _as_matrix(self, x: Union[np.ndarray, Sequence[float]]) -> Tuple[np.ndarray, bool]:
        arr = np.asarray(x, dtype=float)
        single = arr.ndim == 1
        if single:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2 or arr.shape[1] != self.n_features:
            raise SchemaError(f"Expected {self.n_features} features, got shape {np.shape(x)}")
        if not np.all(np.isfinite(arr)):
            raise SchemaError("Non-finite feature value")
        return arr, single

    def predict_proba(self, x: Union[np.ndarray, Sequence[float]]) -> Union[float, np.ndarray]:
        """
        Probability of the positive class.

        Args:
            x: One feature vector (returns a float) or a 2-D matrix (returns an array)
        """
        arr, single = self._as_matrix(x)
        if self.kind == KIND_CONSTANT:
            scores = np.full(arr.shape[0], float(self.constant_score))
        elif self.kind == KIND_LOGREG:
            scores = expit(self.standardize(arr) @ self.weights + self.bias)
        elif self.kind == KIND_NAIVE_BAYES:
            scores = self._nb_posterior(self.standardize(arr))
        else:
            raise SchemaError(f"Unknown model kind '{self.kind}'")
        return float(scores[0]) if single else scores

    def _nb_posterior(self, xs: np.ndarray) -> np.ndarray:
        joint = np.empty((xs.shape[0], 2))
        for c in range(2):
            var = self.class_vars[c]
            log_lik = -0.5 * np.sum(np.log(2.0 * np.pi * var) + (xs - self.class_means[c]) ** 2 / var, axis=1)
            joint[:, c] = self.class_log_priors[c] + log_lik
        return np.exp(joint[:, 1] - logsumexp(joint, axis=1))

    def predict(self, x: Union[np.ndarray, Sequence[float]]) -> Union[int, np.ndarray]:
        """1 iff score >= decision_threshold."""
        scores = self.predict_proba(x)
        if np.isscalar(scores):
            return int(scores >= self.decision_threshold)
        return (scores >= self.decision_threshold).astype(int)

    def matrix_from_frame(self, frame: pd.DataFrame) -> np.ndarray:
        missing = [c for c in self.feature_names if c not in frame.columns]
        if missing:
            raise SchemaError(f"Missing feature column(s): {', '.join(missing)}")
        return frame[self.feature_names].to_numpy(dtype=float)

    def predict_proba_frame(self, frame: pd.DataFrame) -> np.ndarray:
        if frame.empty:
            return np.empty(0)
        return self.predict_proba(self.matrix_from_frame(frame))

    def to_dict(self) -> Dict[str, Any]:
        """JSON-serializable representation."""
        def _list(a):
            return None if a is None else np.asarray(a).tolist()
        return {
            "kind": self.kind,
            "feature_names": list(self.feature_names),
            "mean": _list(self.mean),
            "scale": _list(self.scale),
            "decision_threshold": self.decision_threshold,
            "weights": _list(self.weights),
            "bias": self.bias,
            "class_means": _list(self.class_means),
            "class_vars": _list(self.class_vars),
            "class_log_priors": _list(self.class_log_priors),
            "constant_score": self.constant_score,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "config": dict(self.config),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Model":
        def _arr(key):
            return None if data.get(key) is None else np.asarray(data[key], dtype=float)
        return cls(
            kind=data["kind"],
            feature_names=list(data["feature_names"]),
            mean=_arr("mean"),
            scale=_arr("scale"),
            decision_threshold=float(data.get("decision_threshold", 0.5)),
            weights=_arr("weights"),
            bias=float(data.get("bias", 0.0)),
            class_means=_arr("class_means"),
            class_vars=_arr("class_vars"),
            class_log_priors=_arr("class_log_priors"),
            constant_score=data.get("constant_score"),
            converged=bool(data.get("converged", True)),
            n_iter=int(data.get("n_iter", 0)),
            config=dict(data.get("config", {})),
        )


def _standardizer(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Column means, scales (constant columns get 1) and the constant-column mask."""
    mean = x.mean(axis=0)
    sd = x.std(axis=0)
    constant = sd <= 0.0
    scale = np.where(constant, 1.0, sd)
    return mean, scale, constant


def _canonical_order(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    keys = np.column_stack([x, y]).T[::-1]
    return np.lexsort(keys)


def _check_inputs(x: np.ndarray, y: np.ndarray, feature_names: Sequence[str]) -> None:
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise SchemaError(f"Feature matrix {x.shape} does not match {y.shape[0]} labels")
    if x.shape[1] != len(feature_names):
        raise SchemaError(f"{x.shape[1]} feature columns but {len(feature_names)} names")
    if not np.all(np.isfinite(x)):
        raise TrainingError("Non-finite feature value in training data")
    classes = set(np.unique(y).tolist())
    if not classes <= {0, 1}:
        raise TrainingError(f"Labels must be binary, got {sorted(classes)}")
    if len(classes) < 2:
        raise TrainingError("Single-class training set")


def loss_and_gradient(weights: np.ndarray, bias: float, xs: np.ndarray, y: np.ndarray,
                      l2: float) -> Tuple[float, np.ndarray, float]:
    """
    Mean negative log-likelihood plus (l2/2)·||w||² and its gradient.

    Args:
        weights: Weight vector over standardized features
        bias: Intercept (not regularized)
        xs: Standardized feature matrix
        y: Binary labels
        l2: Regularization strength

    Returns:
        (loss, gradient wrt weights, gradient wrt bias)
    """
    z = xs @ weights + bias
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * weights @ weights)
    residual = expit(z) - y
    grad_w = xs.T @ residual / len(y) + l2 * weights
    grad_b = float(np.mean(residual))
    return loss, grad_w, grad_b


def _fit_logreg(xs: np.ndarray, y: np.ndarray, constant: np.ndarray,
                cfg: TrainConfig) -> Tuple[np.ndarray, float, bool, int]:
    weights = np.zeros(xs.shape[1])
    bias = 0.0
    free = ~constant
    converged = False
    n_iter = 0
    for n_iter in range(1, cfg.max_iter + 1):
        _, grad_w, grad_b = loss_and_gradient(weights, bias, xs, y, cfg.l2)
        grad_w = np.where(free, grad_w, 0.0)
        if np.sqrt(grad_w @ grad_w + grad_b * grad_b) <= cfg.tol:
            converged = True
            break
        weights = weights - cfg.learning_rate * grad_w
        bias = bias - cfg.learning_rate * grad_b
    return weights, bias, converged, n_iter


def fit(x: np.ndarray, y: np.ndarray, cfg: TrainConfig, feature_names: Sequence[str],
        kind: str = KIND_LOGREG, decision_threshold: float = 0.5) -> Model:
    """
    Fit a classifier on a feature matrix.

    Args:
        x: (n, d) feature matrix
        y: (n,) binary labels
        cfg: Training hyperparameters
        feature_names: Column names of `x`
        kind: "logreg" or "naive_bayes"
        decision_threshold: Threshold used by predict

    Returns:
        Fitted Model

    Raises:
        TrainingError: Single-class labels or non-finite features
        SchemaError: Shape mismatch
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y).astype(int)
    _check_inputs(x, y, feature_names)

    order = _canonical_order(x, y)
    x, y = x[order], y[order]
    mean, scale, constant = _standardizer(x)
    xs = (x - mean) / scale
    config = {"learning_rate": cfg.learning_rate, "l2": cfg.l2, "max_iter": cfg.max_iter,
              "tol": cfg.tol, "seed": cfg.seed, "include_protected": cfg.include_protected}

    if kind == KIND_LOGREG:
        weights, bias, converged, n_iter = _fit_logreg(xs, y, constant, cfg)
        if not converged:
            logger.debug(f"logreg stopped at max_iter={cfg.max_iter} without reaching tol={cfg.tol}")
        return Model(kind=kind, feature_names=list(feature_names), mean=mean, scale=scale,
                     decision_threshold=decision_threshold, weights=weights, bias=float(bias),
                     converged=converged, n_iter=n_iter, config=config)

    if kind == KIND_NAIVE_BAYES:
        var_floor = NB_VAR_SMOOTHING * max(float(np.max(xs.var(axis=0))), 1.0)
        means = np.vstack([xs[y == c].mean(axis=0) for c in (0, 1)])
        variances = np.vstack([xs[y == c].var(axis=0) for c in (0, 1)]) + var_floor
        priors = np.log(np.array([np.mean(y == 0), np.mean(y == 1)]))
        return Model(kind=kind, feature_names=list(feature_names), mean=mean, scale=scale,
                     decision_threshold=decision_threshold, class_means=means, class_vars=variances,
                     class_log_priors=priors, config=config)

    raise TrainingError(f"Unknown learner kind '{kind}'")


def fit_frame(table: pd.DataFrame, feature_names: Sequence[str], cfg: TrainConfig,
              kind: str = KIND_LOGREG, decision_threshold: float = 0.5) -> Model:
    """fit() over the named columns of a table with a `label` column."""
    missing = [c for c in feature_names if c not in table.columns]
    if missing:
        raise SchemaError(f"Missing feature column(s): {', '.join(missing)}")
    return fit(table[list(feature_names)].to_numpy(dtype=float), table["label"].to_numpy(),
               cfg, feature_names, kind=kind, decision_threshold=decision_threshold)


def constant_model(score: float, feature_names: Sequence[str], decision_threshold: float = 0.5) -> Model:
    """Fallback model scoring every instance with the same probability."""
    d = len(feature_names)
    return Model(kind=KIND_CONSTANT, feature_names=list(feature_names), mean=np.zeros(d),
                 scale=np.ones(d), decision_threshold=decision_threshold, constant_score=float(score))


def fit_or_fallback(table: pd.DataFrame, feature_names: Sequence[str], cfg: TrainConfig,
                    kind: str = KIND_LOGREG, decision_threshold: float = 0.5,
                    context: str = "") -> Model:
    """
    Fit, falling back to a constant-score model at the training base rate when the
    training set has a single class.
    """
    try:
        return fit_frame(table, feature_names, cfg, kind=kind, decision_threshold=decision_threshold)
    except TrainingError as e:
        base_rate = float(table["label"].mean()) if len(table) else 0.0
        logger.warning(f"Training failed{' for ' + context if context else ''}: {e}; "
                       f"using constant-score model ({base_rate:.3f})")
        return constant_model(base_rate, feature_names, decision_threshold)
