"""Synthetic confounded data, the counterfactual oracle and the estimator benchmark."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd

from .data import LikertScale, ObservationTable, ScenarioSpec
from .errors import ZeroTruth

log = logging.getLogger(__name__)

# Replicate index reserved for the oracle draw, disjoint from 0..replicates-1.
ORACLE_STREAM = 0x7FFFFFFF

# stream ids for the counter-based generator
_COVARIATE, _TREATMENT, _NOISE = 0, 1, 2


@dataclass(frozen=True)
class SimulationConfig:
    n: int = 5000
    p: int = 5
    H: int = 5
    beta: float = 0.5
    alpha_coeff: float = 1e-5
    treatment_effect: float = 1.0
    covariate_effect: float = 0.1
    noise_sd: float = 0.1
    confounders: int = 3
    scale: LikertScale = LikertScale(1, 7)
    discretize: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 0 <= self.beta <= 1:
            raise ValueError("beta must lie in [0, 1]")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        if not 0 < self.confounders <= self.p:
            raise ValueError("confounders must be between 1 and p")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scale"] = [self.scale.min_value, self.scale.max_value]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationConfig":
        d = dict(d)
        if "scale" in d and not isinstance(d["scale"], LikertScale):
            lo, hi = d["scale"]
            d["scale"] = LikertScale(int(lo), int(hi))
        return cls(**d)


def stream(seed: int, *key: int) -> np.random.Generator:
    """Philox generator keyed by ``(seed, *key)``; independent of call order."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *map(int, key)])
    return np.random.Generator(np.random.Philox(ss))


def expit(x):
    return 1.0 / (1.0 + np.exp(-x))


def assignment_probability(X: np.ndarray, config: SimulationConfig) -> np.ndarray:
    """P(T_j = 1 | X), identical for every treatment j, clamped to [0, 1]."""
    X = np.atleast_2d(X)
    prob = (config.alpha_coeff * X.sum(axis=1)
            + config.beta * expit(X[:, :config.confounders].sum(axis=1)) / 2
            + (1 - config.beta) * 0.5)
    return np.clip(prob, 0.0, 1.0)


def outcome_function(treatments: np.ndarray, X: np.ndarray, noise: np.ndarray,
                     config: SimulationConfig) -> np.ndarray:
    lo, hi = config.scale.min_value, config.scale.max_value
    raw = (lo + config.treatment_effect * treatments.sum(axis=1)
           + config.covariate_effect * X.sum(axis=1) + noise)
    return np.clip(raw, lo, hi)


@dataclass(frozen=True, eq=False)
class LatentDraw:
    X: np.ndarray
    treatments: np.ndarray
    noise: np.ndarray
    propensity: np.ndarray


def draw_latent(config: SimulationConfig, n: int, seed: int) -> LatentDraw:
    X = np.column_stack([stream(seed, _COVARIATE, j).normal(1.0, 1.0, n)
                         for j in range(config.p)])
    prob = assignment_probability(X, config)
    T = np.column_stack([(stream(seed, _TREATMENT, j).random(n) < prob).astype(np.int8)
                         for j in range(config.H)])
    noise = stream(seed, _NOISE).normal(0.0, config.noise_sd, n) if config.noise_sd > 0 \
        else np.zeros(n)
    return LatentDraw(X, T, noise, prob)


@dataclass(frozen=True, eq=False)
class SimulatedData:
    table: ObservationTable
    latent: LatentDraw
    y_continuous: np.ndarray
    y_likert: np.ndarray


def covariate_names(p: int) -> list[str]:
    return [f"X{i + 1}" for i in range(p)]


def treatment_names(H: int) -> list[str]:
    return [f"T{j + 1}" for j in range(H)]


def generate_dataset(config: SimulationConfig, seed: int | None = None) -> SimulatedData:
    """Draw one dataset: covariates N(1, 1), confounded treatments, clipped outcome."""
    seed = config.seed if seed is None else seed
    lat = draw_latent(config, config.n, seed)
    y = outcome_function(lat.treatments, lat.X, lat.noise, config)
    y_likert = np.clip(np.rint(y), config.scale.min_value, config.scale.max_value)
    table = ObservationTable(
        covariates=pd.DataFrame(lat.X, columns=covariate_names(config.p)),
        treatments=lat.treatments,
        outcome=y_likert if config.discretize else y,
        scale=config.scale,
        treatment_names=tuple(treatment_names(config.H)),
        outcome_name="Y",
    )
    return SimulatedData(table, lat, y, y_likert)


class CounterfactualOracle:
    """Monte Carlo ground truth from one large latent draw shared by all scenarios."""

    def __init__(self, config: SimulationConfig, n_oracle: int = 1_000_000, seed: int = 0):
        self.config = config
        self.latent = draw_latent(config, n_oracle, seed)
        self._base = (config.scale.min_value
                      + config.covariate_effect * self.latent.X.sum(axis=1)
                      + self.latent.noise)

    def contrasts(self, scenario: ScenarioSpec) -> np.ndarray:
        cfg = self.config
        others = [j for j in range(cfg.H) if j not in scenario.active]
        rest = self.latent.treatments[:, others].sum(axis=1) * cfg.treatment_effect
        lo, hi = cfg.scale.min_value, cfg.scale.max_value
        shift = cfg.treatment_effect * len(scenario)
        y1 = np.clip(self._base + rest + shift, lo, hi)
        y0 = np.clip(self._base + rest, lo, hi)
        return y1 - y0

    def cate(self, scenario: ScenarioSpec) -> float:
        return float(self.contrasts(scenario).mean())

    def cate_with_se(self, scenario: ScenarioSpec) -> tuple[float, float]:
        d = self.contrasts(scenario)
        return float(d.mean()), float(d.std(ddof=1) / np.sqrt(len(d)))


def true_cate(config: SimulationConfig, scenario: ScenarioSpec, n_oracle: int = 1_000_000,
              seed: int = 0) -> float:
    """Counterfactual effect (Likert points) of switching the active treatments on vs off."""
    scenario.validate(config.H)
    return CounterfactualOracle(config, n_oracle, seed).cate(scenario)


def percentage_error(psi_hat: float, psi_true: float) -> float:
    """Relative error ``(psi_hat - psi_true) / psi_true``."""
    if psi_true == 0:
        raise ZeroTruth("true effect is zero; percentage error undefined")
    return (psi_hat - psi_true) / psi_true


# --------------------------------------------------------------------------- benchmark

BENCHMARK_ESTIMATORS = ("raw_difference", "g_formula", "iptw", "tmle")


@dataclass(frozen=True)
class BenchmarkConfig:
    betas: tuple[float, ...] = (0.15, 0.5, 0.85)
    replicates: int = 50
    intervention_counts: tuple[int, ...] = (1, 2, 3, 4, 5)
    estimators: tuple[str, ...] = BENCHMARK_ESTIMATORS
    simulation: SimulationConfig = SimulationConfig()
    estimation: "object | None" = None  # nuisance.EstimationConfig; None -> benchmark default
    n_oracle: int = 1_000_000
    seed: int = 0
    reverse_scenarios: bool = False

    def to_dict(self) -> dict:
        from .nuisance import EstimationConfig
        est = self.estimation or benchmark_estimation_config()
        return {
            "betas": list(self.betas),
            "replicates": self.replicates,
            "intervention_counts": list(self.intervention_counts),
            "estimators": list(self.estimators),
            "simulation": self.simulation.to_dict(),
            "estimation": est.to_dict() if isinstance(est, EstimationConfig) else est,
            "n_oracle": self.n_oracle,
            "seed": self.seed,
            "reverse_scenarios": self.reverse_scenarios,
        }


def benchmark_estimation_config(seed: int = 0):
    from .learners import LearnerSpec
    from .nuisance import EstimationConfig
    return EstimationConfig(
        outcome_learner=LearnerSpec("linear_logistic"),
        propensity_learner=LearnerSpec("linear_logistic"),
        cross_fit_folds=0,
        bootstrap_reps=0,
        seed=seed,
    )


def scenario_for_count(k: int, H: int, reverse: bool = False) -> ScenarioSpec:
    """``{T1..Tk}``, or ``{TH..TH-k+1}`` with ``reverse``."""
    idx = tuple(range(H - 1, H - 1 - k, -1)) if reverse else tuple(range(k))
    return ScenarioSpec(tuple(sorted(idx)))


def replicate_seed(master: int, beta: float, replicate: int) -> int:
    ss = np.random.SeedSequence([int(master), int(round(beta * 1_000_000)), int(replicate)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


@dataclass
class BenchmarkReport:
    rows: pd.DataFrame
    truths: pd.DataFrame
    summary: pd.DataFrame = field(default_factory=pd.DataFrame)


def _run_replicate(args) -> list[dict]:
    from .estimators import run_estimators
    from .nuisance import fit_nuisance, fit_outcome_model

    bcfg, beta, rep, truths = args
    sim = replace(bcfg.simulation, beta=beta)
    est = replace(bcfg.estimation or benchmark_estimation_config(),
                  seed=replicate_seed(bcfg.seed, beta, rep) % (2 ** 31))
    data = generate_dataset(sim, replicate_seed(bcfg.seed, beta, rep))
    table = data.table
    rows = []
    try:
        outcome = fit_outcome_model(table, est)
    except Exception as exc:  # recorded per cell, the grid keeps going
        outcome = exc
    for k in bcfg.intervention_counts:
        scenario = scenario_for_count(k, sim.H, bcfg.reverse_scenarios)
        truth = truths[(beta, k)]
        results: dict[str, object] = {}
        try:
            if isinstance(outcome, Exception):
                raise outcome
            nuis = fit_nuisance(table, scenario, est, outcome=outcome)
            results = run_estimators(table, scenario, nuis, bcfg.estimators, est)
        except Exception as exc:
            results = {name: exc for name in bcfg.estimators}
        for name in bcfg.estimators:
            res = results.get(name)
            row = {"estimator": name, "beta": beta, "scenario": scenario.label(table.treatment_names),
                   "n_interventions": k, "replicate": rep, "psi_hat": np.nan,
                   "psi_true": truth, "percentage_error": np.nan, "error": ""}
            if isinstance(res, Exception) or res is None:
                row["error"] = f"{type(res).__name__}: {res}"
            else:
                row["psi_hat"] = res.psi_likert
                row["percentage_error"] = percentage_error(res.psi_likert, truth)
            rows.append(row)
    return rows


def compute_truths(bcfg: BenchmarkConfig) -> dict[tuple[float, int], float]:
    truths = {}
    for b_idx, beta in enumerate(bcfg.betas):
        sim = replace(bcfg.simulation, beta=beta)
        oracle = CounterfactualOracle(sim, bcfg.n_oracle,
                                      replicate_seed(bcfg.seed, beta, ORACLE_STREAM))
        for k in bcfg.intervention_counts:
            truths[(beta, k)] = oracle.cate(scenario_for_count(k, sim.H, bcfg.reverse_scenarios))
    return truths


def summarize_benchmark(rows: pd.DataFrame) -> pd.DataFrame:
    """Mean, sd and a 95% band of percentage error per (estimator, beta, #interventions)."""
    ok = rows[rows["error"] == ""].copy()
    ok["abs_percentage_error"] = ok["percentage_error"].abs()
    g = ok.groupby(["estimator", "beta", "n_interventions"], sort=True)
    out = g.agg(mean=("percentage_error", "mean"), sd=("percentage_error", "std"),
                mean_abs=("abs_percentage_error", "mean"), count=("percentage_error", "size"))
    half = 1.96 * out["sd"].fillna(0.0) / np.sqrt(out["count"])
    out["band_lo"] = out["mean"] - half
    out["band_hi"] = out["mean"] + half
    return out.reset_index()


def run_benchmark(bcfg: BenchmarkConfig, workers: int = 1) -> BenchmarkReport:
    """Run the (beta x replicate x #interventions x estimator) grid.

    Output is keyed and sorted, so it does not depend on ``workers``.
    """
    truths = compute_truths(bcfg)
    tasks = [(bcfg, beta, rep, truths) for beta in bcfg.betas for rep in range(bcfg.replicates)]
    rows: list[dict] = []
    if workers <= 1:
        for t in tasks:
            rows.extend(_run_replicate(t))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for chunk in pool.map(_run_replicate, tasks, chunksize=1):
                rows.extend(chunk)
    order = {name: i for i, name in enumerate(bcfg.estimators)}
    frame = pd.DataFrame(rows)
    frame["_est"] = frame["estimator"].map(order)
    frame = frame.sort_values(["beta", "replicate", "n_interventions", "_est"],
                              kind="mergesort").drop(columns="_est").reset_index(drop=True)
    truth_frame = pd.DataFrame(
        [{"beta": b, "n_interventions": k, "psi_true": v} for (b, k), v in sorted(truths.items())])
    return BenchmarkReport(frame, truth_frame, summarize_benchmark(frame))
