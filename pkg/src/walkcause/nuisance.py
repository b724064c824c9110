"""Outcome regression and propensity fitting for a scenario."""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from .data import (
    ExposureAssignment,
    ObservationTable,
    ScenarioSpec,
    composite_exposure,
    counterfactual_treatments,
)
from .errors import DegenerateScenario, PositivityWarning
from .learners import FittedModel, LearnerSpec, cross_fit, fit, predict

MIN_GROUP = 10
POSITIVITY_FLAG = 0.05
# Exposure is a weak signal; light leaf regularisation overfits it badly
# (out-of-fold loss above the intercept-only baseline), heavy regularisation does not.
PROPENSITY_L2 = 300.0


@dataclass(frozen=True)
class EstimationConfig:
    outcome_learner: LearnerSpec = LearnerSpec("gbtree")
    propensity_learner: LearnerSpec = LearnerSpec("gbtree", l2_leaf_reg=PROPENSITY_L2)
    cross_fit_folds: int = 5
    clip_lo: float = 0.01
    clip_hi: float = 0.99
    bootstrap_reps: int = 200
    fluctuation: str = "linear"
    psm_caliper: float = 0.05
    psm_replacement: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.clip_lo < self.clip_hi < 1:
            raise ValueError("clip bounds must satisfy 0 < clip_lo < clip_hi < 1")
        if self.cross_fit_folds == 1 or self.cross_fit_folds < 0:
            raise ValueError("cross_fit_folds must be 0 (off) or >= 2")
        if self.fluctuation not in ("linear", "logistic"):
            raise ValueError("fluctuation must be 'linear' or 'logistic'")
        if self.bootstrap_reps < 0:
            raise ValueError("bootstrap_reps must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["outcome_learner"] = self.outcome_learner.to_dict()
        d["propensity_learner"] = self.propensity_learner.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EstimationConfig":
        d = dict(d)
        for key in ("outcome_learner", "propensity_learner"):
            if key in d and not isinstance(d[key], LearnerSpec):
                d[key] = LearnerSpec.from_dict(d[key])
        return cls(**d)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def load(cls, path: str | Path) -> "EstimationConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def derive_seed(*parts: int) -> int:
    ss = np.random.SeedSequence([abs(int(p)) for p in parts])
    return int(ss.generate_state(1)[0] & 0x7FFFFFFF)


@dataclass(frozen=True, eq=False)
class OutcomeFit:
    """Outcome regression of ``y*`` on covariates and every treatment column.

    The fit does not depend on the scenario; counterfactual predictions for any
    scenario come from overwriting the active treatment columns only.
    """

    models: tuple[FittedModel, ...]
    folds: np.ndarray | None
    bootstrap: tuple[tuple[np.ndarray, FittedModel], ...] = ()

    def predict_frame(self, features: pd.DataFrame) -> np.ndarray:
        if self.folds is None:
            return predict(self.models[0], features)
        out = np.empty(len(features))
        for j, model in enumerate(self.models):
            rows = self.folds == j
            if rows.any():
                out[rows] = predict(model, features[rows])
        return out

    def counterfactuals(self, table: ObservationTable, scenario: ScenarioSpec
                        ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(q0_exposed, q0_control, q0_observed)`` on the probability scale."""
        scenario.validate(table.H)
        q1 = self.predict_frame(table.features(counterfactual_treatments(table, scenario, 1)))
        q0 = self.predict_frame(table.features(counterfactual_treatments(table, scenario, 0)))
        sub = table.treatments[:, list(scenario.active)]
        all_on, all_off = sub.all(axis=1), (sub == 0).all(axis=1)
        q_obs = np.where(all_on, q1, q0)
        mixed = ~(all_on | all_off)
        if mixed.any():
            q_obs[mixed] = self.predict_frame(table.features())[mixed]
        return q1, q0, q_obs

    def bootstrap_effects(self, table: ObservationTable, scenario: ScenarioSpec) -> np.ndarray:
        """Plug-in effect (probability scale) for each bootstrap refit."""
        f1 = table.features(counterfactual_treatments(table, scenario, 1))
        f0 = table.features(counterfactual_treatments(table, scenario, 0))
        out = []
        for idx, model in self.bootstrap:
            out.append(float(np.mean(predict(model, f1.iloc[idx]) - predict(model, f0.iloc[idx]))))
        return np.array(out)


def fit_outcome_model(table: ObservationTable, config: EstimationConfig,
                      with_bootstrap: bool | None = None) -> OutcomeFit:
    """Fit the outcome regression (cross-fitted when configured).

    Bootstrap refits (``config.bootstrap_reps`` of them, single full fits on
    resampled rows) are attached for g-formula standard errors.
    """
    features, target = table.features(), table.y_star
    spec = config.outcome_learner.with_seed(derive_seed(config.seed, 1))
    k = config.cross_fit_folds
    if k >= 2:
        _, models, folds = cross_fit(features, target, spec, k, seed=derive_seed(config.seed, 2))
        fitted = OutcomeFit(tuple(models), folds)
    else:
        fitted = OutcomeFit((_fit_silent(features, target, spec),), None)
    if with_bootstrap is None:
        with_bootstrap = config.bootstrap_reps > 0
    if with_bootstrap and config.bootstrap_reps > 0:
        boots = []
        for b in range(config.bootstrap_reps):
            rng = np.random.default_rng(derive_seed(config.seed, 3, b))
            idx = rng.integers(0, table.n, table.n)
            boots.append((idx, _fit_silent(features.iloc[idx], target[idx], spec)))
        fitted = replace(fitted, bootstrap=tuple(boots))
    return fitted


def _fit_silent(features, target, spec):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fit(features, target, spec)


@dataclass(frozen=True, eq=False)
class PropensityFit:
    propensity: np.ndarray  # NaN for ineligible units
    raw: np.ndarray
    clipped_low: int
    clipped_high: int

    @property
    def clipped_fraction(self) -> float:
        n = int(np.isfinite(self.raw).sum())
        return (self.clipped_low + self.clipped_high) / n if n else 0.0


def clip_propensity(raw: np.ndarray, lo: float, hi: float) -> tuple[np.ndarray, int, int]:
    raw = np.asarray(raw, dtype=float)
    finite = np.isfinite(raw)
    low = int((raw[finite] < lo).sum())
    high = int((raw[finite] > hi).sum())
    return np.where(finite, np.clip(raw, lo, hi), np.nan), low, high


def fit_propensity(table: ObservationTable, scenario: ScenarioSpec, config: EstimationConfig,
                   exposure: ExposureAssignment | None = None) -> PropensityFit:
    """P(exposed | X) fitted on eligible units only, then clipped."""
    exposure = exposure or composite_exposure(table, scenario)
    if exposure.n_exposed < MIN_GROUP or exposure.n_control < MIN_GROUP:
        raise DegenerateScenario(
            f"scenario {scenario.label(table.treatment_names)} needs >= {MIN_GROUP} exposed and "
            f"control units (has {exposure.n_exposed}/{exposure.n_control})"
        )
    elig = exposure.eligible
    features = table.covariates[elig].reset_index(drop=True)
    target = exposure.exposed[elig].astype(float)
    seed = derive_seed(config.seed, 4, *scenario.active)
    spec = config.propensity_learner.with_seed(seed)
    k = config.cross_fit_folds
    if k >= 2 and len(target) >= 5 * k:
        scores, _, _ = cross_fit(features, target, spec, k, seed=derive_seed(seed, 5))
    else:
        scores = predict(_fit_silent(features, target, spec), features)
    raw = np.full(table.n, np.nan)
    raw[elig] = scores
    clipped, low, high = clip_propensity(raw, config.clip_lo, config.clip_hi)
    result = PropensityFit(clipped, raw, low, high)
    if result.clipped_fraction > POSITIVITY_FLAG:
        warnings.warn(
            f"{100 * result.clipped_fraction:.1f}% of propensities clipped to "
            f"[{config.clip_lo}, {config.clip_hi}] for scenario "
            f"{scenario.label(table.treatment_names)}",
            PositivityWarning, stacklevel=2)
    return result


@dataclass(frozen=True, eq=False)
class NuisanceEstimates:
    scenario: ScenarioSpec
    q0_exposed: np.ndarray
    q0_control: np.ndarray
    q0_observed: np.ndarray
    propensity: np.ndarray | None
    eligibility: ExposureAssignment
    clip_lo: float = 0.01
    clip_hi: float = 0.99
    clipped_fraction: float = 0.0
    outcome: OutcomeFit | None = field(default=None, repr=False)


def fit_nuisance(table: ObservationTable, scenario: ScenarioSpec, config: EstimationConfig,
                 outcome: OutcomeFit | None = None, propensity: bool = True) -> NuisanceEstimates:
    """Both nuisance functions for ``scenario``; ``outcome`` may be shared across scenarios."""
    exposure = composite_exposure(table, scenario)
    outcome = outcome or fit_outcome_model(table, config)
    q1, q0, q_obs = outcome.counterfactuals(table, scenario)
    prop = fit_propensity(table, scenario, config, exposure) if propensity else None
    return NuisanceEstimates(
        scenario=scenario,
        q0_exposed=q1,
        q0_control=q0,
        q0_observed=q_obs,
        propensity=None if prop is None else prop.propensity,
        eligibility=exposure,
        clip_lo=config.clip_lo,
        clip_hi=config.clip_hi,
        clipped_fraction=0.0 if prop is None else prop.clipped_fraction,
        outcome=outcome,
    )

