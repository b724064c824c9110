"""Learners for unit-interval targets trained on binomial cross-entropy.

All three kinds model ``sigmoid(f(x))`` and minimise

    -[y log sigmoid(f) + (1 - y) log(1 - sigmoid(f))]

for fractional targets ``y`` in ``[0, 1]``, so a Likert outcome on the
probability scale and a binary exposure indicator go through the same code.
"""

from __future__ import annotations

import pickle
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from ._gbtree import GBTreeCore, cross_entropy, logit, sigmoid
from .errors import DegenerateTargetWarning, SignatureMismatch, TooFewRows

KINDS = ("gbtree", "linear_logistic", "intercept_only")
MODEL_FORMAT_VERSION = 1
MIN_ROWS = 10


@dataclass(frozen=True)
class LearnerSpec:
    kind: str = "gbtree"
    tree_count: int = 300
    max_depth: int = 4
    learning_rate: float = 0.1
    min_child_samples: int = 20
    cat_smoothing: float = 1.0
    l2_leaf_reg: float = 3.0
    subsample: float = 1.0
    max_bins: int = 255
    ridge: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown learner kind {self.kind!r}; choose from {KINDS}")
        if self.tree_count < 1:
            raise ValueError("tree_count must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must be in (0, 1]")
        if not 2 <= self.max_bins <= 255:
            raise ValueError("max_bins must be in [2, 255]")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any] | str) -> "LearnerSpec":
        if isinstance(d, str):
            return cls(kind=d)
        return cls(**d)

    def with_seed(self, seed: int) -> "LearnerSpec":
        return replace(self, seed=int(seed))


@dataclass(frozen=True)
class FeatureSignature:
    names: tuple[str, ...]
    categorical: tuple[str, ...]
    categories: dict[str, tuple[str, ...]] = field(default_factory=dict, compare=False)

    @classmethod
    def of(cls, frame: pd.DataFrame) -> "FeatureSignature":
        cats = tuple(c for c in frame.columns if _is_categorical(frame[c]))
        return cls(
            names=tuple(frame.columns),
            categorical=cats,
            categories={c: tuple(sorted(map(str, frame[c].unique()))) for c in cats},
        )

    def check(self, frame: pd.DataFrame) -> None:
        other = FeatureSignature.of(frame)
        if other.names != self.names or other.categorical != self.categorical:
            raise SignatureMismatch(
                f"expected columns {self.names} (categorical {self.categorical}), "
                f"got {other.names} (categorical {other.categorical})"
            )


def _is_categorical(col: pd.Series) -> bool:
    return not pd.api.types.is_numeric_dtype(col) or isinstance(col.dtype, pd.CategoricalDtype)


class _LinearLogistic:
    """Ridge-penalised logistic regression fitted by damped Newton steps.

    Numeric columns are standardised, categorical ones one-hot encoded over
    the training levels. The intercept is unpenalised, which keeps the mean
    prediction equal to the mean target at convergence.
    """

    def __init__(self, ridge: float):
        self.ridge = ridge
        self.center: dict[str, float] = {}
        self.scale: dict[str, float] = {}
        self.levels: dict[str, tuple[str, ...]] = {}
        self.coef = np.zeros(0)

    def _design(self, frame: pd.DataFrame) -> np.ndarray:
        cols = [np.ones(len(frame))]
        for name in frame.columns:
            if name in self.levels:
                vals = frame[name].astype(str).to_numpy()
                cols.extend((vals == lv).astype(float) for lv in self.levels[name])
            else:
                cols.append((frame[name].to_numpy(float) - self.center[name]) / self.scale[name])
        return np.column_stack(cols)

    def fit(self, frame: pd.DataFrame, target: np.ndarray, categorical: set[str]):
        for name in frame.columns:
            if name in categorical:
                self.levels[name] = tuple(sorted(map(str, frame[name].unique())))
            else:
                x = frame[name].to_numpy(float)
                sd = float(x.std())
                self.center[name] = float(x.mean())
                self.scale[name] = sd if sd > 0 else 1.0
        X = self._design(frame)
        penalty = np.full(X.shape[1], self.ridge)
        penalty[0] = 0.0
        m = float(np.clip(target.mean(), 1e-6, 1 - 1e-6))
        beta = np.zeros(X.shape[1])
        beta[0] = logit(m)

        def objective(b):
            f = X @ b
            return float(np.sum(np.logaddexp(0.0, f) - target * f) + 0.5 * np.sum(penalty * b * b))

        obj = objective(beta)
        for _ in range(200):
            p = sigmoid(X @ beta)
            grad = X.T @ (p - target) + penalty * beta
            if np.max(np.abs(grad)) < 1e-10 * max(1, len(target)):
                break
            w = np.maximum(p * (1 - p), 1e-12)
            hess = (X * w[:, None]).T @ X + np.diag(penalty) + 1e-12 * np.eye(X.shape[1])
            direction = np.linalg.solve(hess, grad)
            step = 1.0
            while step > 1e-10:
                cand = beta - step * direction
                cand_obj = objective(cand)
                if cand_obj <= obj:
                    break
                step /= 2
            else:
                break
            if obj - cand_obj < 1e-15 * max(1.0, abs(obj)) and step < 1:
                beta, obj = cand, cand_obj
                break
            beta, obj = cand, cand_obj
        self.coef = beta
        return self

    def decision_function(self, frame: pd.DataFrame, categorical: set[str]) -> np.ndarray:
        return self._design(frame) @ self.coef


@dataclass(frozen=True, eq=False)
class FittedModel:
    kind: str
    spec: LearnerSpec
    signature: FeatureSignature
    params: Any
    degenerate_target: bool = False
    loss_history: tuple[float, ...] = ()

    def predict(self, features: pd.DataFrame) -> np.ndarray:
        return predict(self, features)


def fit(features: pd.DataFrame, target, spec: LearnerSpec | None = None) -> FittedModel:
    """Fit ``spec`` on ``features`` against a target in ``[0, 1]``.

    A constant target falls back to an intercept-only fit and sets
    ``degenerate_target`` (a :class:`DegenerateTargetWarning` is emitted).
    """
    spec = spec or LearnerSpec()
    y = np.asarray(target, dtype=float)
    if len(y) != len(features):
        raise ValueError("features and target lengths differ")
    if len(y) < MIN_ROWS:
        raise TooFewRows(f"need at least {MIN_ROWS} rows to fit, got {len(y)}")
    if np.any((y < 0) | (y > 1)) or np.isnan(y).any():
        raise ValueError("targets must lie in [0, 1]")
    signature = FeatureSignature.of(features)
    categorical = set(signature.categorical)
    kind = spec.kind
    degenerate = bool(np.ptp(y) == 0)
    if degenerate and kind != "intercept_only":
        warnings.warn("constant target; using an intercept-only fit", DegenerateTargetWarning,
                      stacklevel=2)
        kind = "intercept_only"

    history: tuple[float, ...] = ()
    if kind == "intercept_only":
        params = float(np.clip(y.mean(), 1e-12, 1 - 1e-12))
    elif kind == "linear_logistic":
        params = _LinearLogistic(spec.ridge).fit(features, y, categorical)
    else:
        params = GBTreeCore(spec.tree_count, spec.max_depth, spec.learning_rate,
                            spec.min_child_samples, spec.cat_smoothing, spec.seed,
                            spec.l2_leaf_reg, spec.subsample, spec.max_bins)
        params.fit(features, y, categorical)
        history = tuple(params.loss_history)
    return FittedModel(kind, spec, signature, params, degenerate, history)


def predict(model: FittedModel, features: pd.DataFrame) -> np.ndarray:
    """Predicted mean of the target, strictly inside ``(0, 1)``."""
    model.signature.check(features)
    if model.kind == "intercept_only":
        return np.full(len(features), model.params)
    f = model.params.decision_function(features, set(model.signature.categorical))
    return np.clip(sigmoid(f), 1e-12, 1 - 1e-12)


def log_loss(target, pred) -> float:
    """Mean binomial cross-entropy of predictions ``pred`` against ``target``."""
    p = np.clip(np.asarray(pred, float), 1e-15, 1 - 1e-15)
    return cross_entropy(np.asarray(target, float), logit(p))


def fold_ids(n: int, k: int, seed: int) -> np.ndarray:
    """Balanced fold labels ``0..k-1``, shuffled deterministically by ``seed``."""
    rng = np.random.default_rng(seed)
    return rng.permutation(np.arange(n) % k)


def cross_fit(features: pd.DataFrame, target, spec: LearnerSpec, k: int = 5,
              seed: int = 0) -> tuple[np.ndarray, list[FittedModel], np.ndarray]:
    """Out-of-fold predictions: each unit is scored by the model that did not see its fold.

    Returns ``(oof_predictions, models, folds)``.
    """
    y = np.asarray(target, dtype=float)
    n = len(y)
    if k < 2:
        raise ValueError("k must be at least 2")
    if n < 5 * k and k != n:
        raise TooFewRows(f"need at least {5 * k} rows for {k}-fold cross-fitting, got {n}")
    folds = fold_ids(n, k, seed)
    oof = np.empty(n)
    models = []
    for j in range(k):
        train = folds != j
        if train.sum() == 0:
            raise TooFewRows("empty training fold")
        m = _fit_quiet(features[train], y[train], spec, allow_small=(k == n))
        oof[~train] = predict(m, features[~train])
        models.append(m)
    return oof, models, folds


def _fit_quiet(features, target, spec, allow_small=False):
    if allow_small and len(target) < MIN_ROWS and spec.kind == "intercept_only":
        signature = FeatureSignature.of(features)
        return FittedModel("intercept_only", spec, signature,
                           float(np.clip(np.mean(target), 1e-12, 1 - 1e-12)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateTargetWarning)
        return fit(features, target, spec)


def save_model(model: FittedModel, path: str | Path) -> None:
    with open(path, "wb") as fh:
        pickle.dump({"format_version": MODEL_FORMAT_VERSION, "model": model}, fh,
                    protocol=pickle.HIGHEST_PROTOCOL)


def load_model(path: str | Path) -> FittedModel:
    with open(path, "rb") as fh:
        blob = pickle.load(fh)
    if not isinstance(blob, dict) or blob.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported model file format")
    return blob["model"]
