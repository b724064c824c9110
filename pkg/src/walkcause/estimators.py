"""Effect estimators for joint-treatment scenarios and the scenario sweep.

Every estimator works on the probability scale ``y* = (y - min) / max`` and
reports through :class:`CateEstimate`, which converts to Likert points and to
percent of the scale width.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import pandas as pd

from .data import (
    LikertScale,
    ObservationTable,
    ScenarioSpec,
    composite_exposure,
    enumerate_scenarios,
    format_number,
)
from .errors import DegenerateScenario, NoMatches
from .nuisance import (
    EstimationConfig,
    NuisanceEstimates,
    OutcomeFit,
    derive_seed,
    fit_nuisance,
    fit_outcome_model,
)

log = logging.getLogger(__name__)

Z95 = 1.959963984540054
ESTIMATORS = ("raw_difference", "g_formula", "iptw", "psm", "tmle")


@dataclass(frozen=True)
class CateEstimate:
    scenario: ScenarioSpec
    estimator: str
    psi_star: float
    se_star: float
    scale: LikertScale
    n_exposed: int
    n_control: int
    n_ineligible: int
    label: str = ""
    details: dict = field(default_factory=dict, compare=False)

    @property
    def psi_likert(self) -> float:
        return self.psi_star * self.scale.max_value

    @property
    def psi_percent(self) -> float:
        return 100.0 * self.psi_likert / self.scale.width

    @property
    def se_percent(self) -> float:
        return 100.0 * self.se_star * self.scale.max_value / self.scale.width

    @property
    def ci95(self) -> tuple[float, float]:
        half = Z95 * self.se_percent
        return self.psi_percent - half, self.psi_percent + half

    @property
    def significant(self) -> bool:
        lo, hi = self.ci95
        return bool(lo > 0 or hi < 0)


def _estimate(name, scenario, psi_star, se_star, table, exposure, **details) -> CateEstimate:
    return CateEstimate(
        scenario=scenario,
        estimator=name,
        psi_star=float(psi_star),
        se_star=float(se_star),
        scale=table.scale,
        n_exposed=exposure.n_exposed,
        n_control=exposure.n_control,
        n_ineligible=exposure.n_ineligible,
        label=scenario.label(table.treatment_names),
        details=details,
    )


def _weighted_mean(y: np.ndarray, w: np.ndarray) -> float:
    # rescale so equal weights reduce to a plain mean bit-for-bit
    w = w / np.max(w)
    return float(np.sum(y * w) / np.sum(w))


# --------------------------------------------------------------------------- estimators


def raw_difference(table: ObservationTable, scenario: ScenarioSpec,
                   nuisance: NuisanceEstimates | None = None) -> CateEstimate:
    """Unadjusted difference in mean outcome, exposed minus control.

    The standard error uses the pooled two-sample variance.
    """
    exposure = composite_exposure(table, scenario)
    y = table.y_star
    y1, y0 = y[exposure.exposed], y[exposure.control]
    n1, n0 = len(y1), len(y0)
    psi = _weighted_mean(y1, np.ones(n1)) - _weighted_mean(y0, np.ones(n0))
    if n1 + n0 > 2:
        ss = np.sum((y1 - y1.mean()) ** 2) + np.sum((y0 - y0.mean()) ** 2)
        se = math.sqrt(ss / (n1 + n0 - 2) * (1 / n1 + 1 / n0))
    else:
        se = float("nan")
    return _estimate("raw_difference", scenario, psi, se, table, exposure)


def g_formula(table: ObservationTable, scenario: ScenarioSpec,
              nuisance: NuisanceEstimates) -> CateEstimate:
    """Plug-in standardisation: mean over all units of predicted exposed minus control."""
    psi = float(np.mean(nuisance.q0_exposed - nuisance.q0_control))
    se = float("nan")
    boots = None
    if nuisance.outcome is not None and nuisance.outcome.bootstrap:
        boots = nuisance.outcome.bootstrap_effects(table, scenario)
        se = float(np.std(boots, ddof=1)) if len(boots) > 1 else float("nan")
    return _estimate("g_formula", scenario, psi, se, table, nuisance.eligibility,
                     bootstrap_reps=0 if boots is None else len(boots))


def _require_propensity(nuisance: NuisanceEstimates) -> np.ndarray:
    if nuisance.propensity is None:
        raise ValueError("propensity scores are required for this estimator")
    return nuisance.propensity


def iptw(table: ObservationTable, scenario: ScenarioSpec,
         nuisance: NuisanceEstimates) -> CateEstimate:
    """Hajek (normalised) inverse-probability-weighted difference on eligible units.

    The standard error comes from the influence function with the propensity
    treated as known.
    """
    exposure = nuisance.eligibility
    if exposure.n_exposed == 0 or exposure.n_control == 0:
        raise DegenerateScenario("iptw needs exposed and control units")
    e = _require_propensity(nuisance)
    y = table.y_star
    a1, a0 = exposure.exposed, exposure.control
    w1, w0 = 1.0 / e[a1], 1.0 / (1.0 - e[a0])
    mu1, mu0 = _weighted_mean(y[a1], w1), _weighted_mean(y[a0], w0)
    psi = mu1 - mu0
    n_elig = exposure.n_exposed + exposure.n_control
    phi = np.concatenate([
        w1 * (y[a1] - mu1) / (w1.sum() / n_elig),
        -w0 * (y[a0] - mu0) / (w0.sum() / n_elig),
    ])
    se = math.sqrt(float(np.sum(phi ** 2))) / n_elig
    return _estimate("iptw", scenario, psi, se, table, exposure)


def match_nearest(e_exposed: np.ndarray, e_control: np.ndarray, caliper: float,
                  replacement: bool = True) -> np.ndarray:
    """Index into ``e_control`` of each exposed unit's match, -1 when outside the caliper.

    Distance ties go to the lowest control index.
    """
    e_exposed = np.asarray(e_exposed, float)
    e_control = np.asarray(e_control, float)
    matches = np.full(len(e_exposed), -1, dtype=np.int64)
    if len(e_control) == 0:
        return matches
    if replacement:
        order = np.argsort(e_control, kind="stable")
        vals = e_control[order]
        pos = np.searchsorted(vals, e_exposed, side="left")
        for i, (x, p) in enumerate(zip(e_exposed, pos)):
            cands = []
            if p < len(vals):
                cands.append(order[p])
            if p > 0:
                first = np.searchsorted(vals, vals[p - 1], side="left")
                cands.append(order[first])
            best = min(cands, key=lambda c: (abs(x - e_control[c]), c))
            if abs(x - e_control[best]) <= caliper:
                matches[i] = best
        return matches
    available = np.ones(len(e_control), dtype=bool)
    for i, x in enumerate(e_exposed):
        if not available.any():
            break
        dist = np.where(available, np.abs(e_control - x), np.inf)
        best = int(np.argmin(dist))
        if dist[best] <= caliper:
            matches[i] = best
            available[best] = False
    return matches


def _psm_effect(y1, e1, y0, e0, caliper, replacement):
    m = match_nearest(e1, e0, caliper, replacement)
    ok = m >= 0
    if not ok.any():
        raise NoMatches(f"no exposed unit has a control within caliper {caliper}")
    return float(np.mean(y1[ok] - y0[m[ok]])), int((~ok).sum())


def psm(table: ObservationTable, scenario: ScenarioSpec, nuisance: NuisanceEstimates,
        caliper: float = 0.05, replacement: bool = True, bootstrap_reps: int = 0,
        seed: int = 0) -> CateEstimate:
    """1-nearest-neighbour propensity matching of exposed units to controls.

    Returns the mean matched-pair difference (an effect on the exposed);
    exposed units without a control inside ``caliper`` are dropped and
    counted in ``details["n_dropped"]``.
    """
    exposure = nuisance.eligibility
    e = _require_propensity(nuisance)
    y = table.y_star
    y1, e1 = y[exposure.exposed], e[exposure.exposed]
    y0, e0 = y[exposure.control], e[exposure.control]
    psi, dropped = _psm_effect(y1, e1, y0, e0, caliper, replacement)
    se = float("nan")
    if bootstrap_reps > 1:
        effects = []
        for b in range(bootstrap_reps):
            rng = np.random.default_rng(derive_seed(seed, 11, *scenario.active, b))
            i1 = rng.integers(0, len(y1), len(y1))
            i0 = rng.integers(0, len(y0), len(y0))
            try:
                effects.append(_psm_effect(y1[i1], e1[i1], y0[i0], e0[i0], caliper,
                                           replacement)[0])
            except NoMatches:
                continue
        if len(effects) > 1:
            se = float(np.std(effects, ddof=1))
    return _estimate("psm", scenario, psi, se, table, exposure, n_dropped=dropped,
                     caliper=caliper, replacement=replacement)


def tmle_update(q0, e, exposed, y_star):
    """Targeted prediction at the observed treatment, ``Q0 + (A - e)/(e(1 - e)) * (y* - Q0)``."""
    q0, e, a, y = (np.asarray(v, dtype=float) for v in (q0, e, exposed, y_star))
    return q0 + (a - e) / (e * (1 - e)) * (y - q0)


def _expit(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _logit(p):
    p = np.clip(p, 1e-9, 1 - 1e-9)
    return np.log(p) - np.log1p(-p)


def _logistic_epsilon(offset, clever, y, iters=50):
    eps = 0.0
    for _ in range(iters):
        p = _expit(offset + eps * clever)
        grad = np.sum(clever * (p - y))
        hess = np.sum(clever ** 2 * p * (1 - p))
        if hess <= 0:
            break
        step = grad / hess
        eps -= step
        if abs(step) < 1e-12:
            break
    return eps


def tmle(table: ObservationTable, scenario: ScenarioSpec, nuisance: NuisanceEstimates,
         fluctuation: str = "linear") -> CateEstimate:
    """Targeted estimate of the scenario effect.

    ``fluctuation="linear"`` applies the one-step correction on the probability
    scale: an exposed unit's residual, weighted by ``1/e``, moves its exposed
    prediction, a control unit's residual, weighted by ``1/(1-e)``, moves its
    control prediction, so the per-unit contrast gains
    ``(A - e)/(e(1 - e)) * (y* - Q0)``.
    Ineligible units keep their initial predictions, and the correction is
    scaled by ``n / n_eligible`` so that it averages over eligible units.
    ``"logistic"`` fits a single fluctuation parameter on the logit scale
    instead, which keeps targeted predictions inside ``(0, 1)``.

    The standard error is ``sd(IC) / sqrt(n)`` from the empirical influence curve.
    """
    exposure = nuisance.eligibility
    if exposure.n_exposed == 0 or exposure.n_control == 0:
        raise DegenerateScenario("tmle needs exposed and control units")
    e = _require_propensity(nuisance)
    n = table.n
    elig = exposure.eligible
    a = exposure.exposed.astype(float)
    y = table.y_star
    q1, q0, qo = nuisance.q0_exposed, nuisance.q0_control, nuisance.q0_observed
    share = elig.sum() / n
    resid = np.where(elig, y - qo, 0.0)
    h1 = np.where(elig, a / np.where(elig, e, 1.0), 0.0)
    h0 = np.where(elig, (1 - a) / np.where(elig, 1 - e, 1.0), 0.0)

    if fluctuation == "linear":
        q1_star = q1 + h1 * resid / share
        q0_star = q0 + h0 * resid / share
        diff = q1_star - q0_star
        psi = float(np.mean(diff))
        ic = diff - psi
    elif fluctuation == "logistic":
        clever = h1 - h0
        eps = _logistic_epsilon(_logit(qo[elig]), clever[elig], y[elig])
        e_safe = np.where(elig, e, 0.5)
        q1_star = np.where(elig, _expit(_logit(q1) + eps / e_safe), q1)
        q0_star = np.where(elig, _expit(_logit(q0) - eps / (1 - e_safe)), q0)
        qo_star = np.where(a == 1, q1_star, q0_star)
        diff = q1_star - q0_star
        psi = float(np.mean(diff))
        ic = diff + clever * np.where(elig, y - qo_star, 0.0) / share - psi
    else:
        raise ValueError(f"unknown fluctuation {fluctuation!r}")
    se = float(np.std(ic, ddof=1) / math.sqrt(n))
    return _estimate("tmle", scenario, psi, se, table, exposure, fluctuation=fluctuation,
                     q1_star=q1_star, q0_star=q0_star)


def run_estimators(table: ObservationTable, scenario: ScenarioSpec,
                   nuisance: NuisanceEstimates, names: Iterable[str],
                   config: EstimationConfig) -> dict[str, CateEstimate | Exception]:
    """Run each named estimator, capturing failures per estimator."""
    out: dict[str, CateEstimate | Exception] = {}
    for name in names:
        try:
            if name == "raw_difference":
                out[name] = raw_difference(table, scenario, nuisance)
            elif name == "g_formula":
                out[name] = g_formula(table, scenario, nuisance)
            elif name == "iptw":
                out[name] = iptw(table, scenario, nuisance)
            elif name == "psm":
                out[name] = psm(table, scenario, nuisance, config.psm_caliper,
                                config.psm_replacement, config.bootstrap_reps, config.seed)
            elif name == "tmle":
                out[name] = tmle(table, scenario, nuisance, config.fluctuation)
            else:
                raise ValueError(f"unknown estimator {name!r}")
        except Exception as exc:  # one failing cell must not stop the others
            out[name] = exc
    return out


# --------------------------------------------------------------------------- sweep


@dataclass(frozen=True)
class ResultRow:
    scenario_id: int
    scenario: ScenarioSpec
    label: str
    estimator: str
    estimate: CateEstimate | None = None
    error: str = ""


RESULT_COLUMNS = ["scenario_id", "n_interventions", "active_treatments", "estimator",
                  "psi_percent", "se_percent", "ci_lo", "ci_hi", "significant",
                  "psi_likert", "n_exposed", "n_control", "n_ineligible", "error"]


@dataclass
class ResultsTable:
    rows: list[ResultRow]
    treatment_names: tuple[str, ...]
    scale: LikertScale

    @property
    def failures(self) -> list[ResultRow]:
        return [r for r in self.rows if r.error]

    def estimates(self, estimator: str | None = None) -> list[CateEstimate]:
        return [r.estimate for r in self.rows
                if r.estimate is not None and (estimator is None or r.estimator == estimator)]

    def to_frame(self) -> pd.DataFrame:
        records = []
        for r in self.rows:
            rec = {"scenario_id": r.scenario_id, "n_interventions": len(r.scenario),
                   "active_treatments": r.label, "estimator": r.estimator, "error": r.error}
            est = r.estimate
            if est is not None:
                lo, hi = est.ci95
                rec.update(psi_percent=est.psi_percent, se_percent=est.se_percent,
                           ci_lo=lo, ci_hi=hi, significant=est.significant,
                           psi_likert=est.psi_likert, n_exposed=est.n_exposed,
                           n_control=est.n_control, n_ineligible=est.n_ineligible)
            records.append(rec)
        return pd.DataFrame.from_records(records, columns=RESULT_COLUMNS)

    def write_csv(self, path: str | Path, digits: int = 6) -> None:
        frame = self.to_frame()
        write_frame_csv(frame, path, digits)

    def by_interventions(self, estimator: str) -> pd.DataFrame:
        """Per treatment and scenario size: mean effect over scenarios containing it.

        The band is ``mean +/- 1.96 * sqrt(sum se^2) / m`` over the ``m``
        scenarios averaged.
        """
        records = []
        ests = self.estimates(estimator)
        for j, name in enumerate(self.treatment_names):
            for k in range(1, len(self.treatment_names) + 1):
                sel = [e for e in ests if len(e.scenario) == k and j in e.scenario.active]
                if not sel:
                    continue
                psi = np.array([e.psi_percent for e in sel])
                se = np.array([e.se_percent for e in sel])
                mean = float(psi.mean())
                half = Z95 * float(np.sqrt(np.sum(se ** 2))) / len(sel)
                records.append({"treatment": name, "n_interventions": k, "scenarios": len(sel),
                                "mean_psi_percent": mean, "band_lo": mean - half,
                                "band_hi": mean + half})
        return pd.DataFrame.from_records(
            records, columns=["treatment", "n_interventions", "scenarios", "mean_psi_percent",
                              "band_lo", "band_hi"])


def write_frame_csv(frame: pd.DataFrame, path: str | Path, digits: int | None = None) -> None:
    """RFC 4180 CSV with deterministic number formatting."""

    def cell(v):
        if isinstance(v, (bool, np.bool_)):
            return "true" if v else "false"
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        if isinstance(v, (float, np.floating)):
            if np.isnan(v):
                return ""
            return format_number(round(float(v), digits)) if digits is not None else format_number(v)
        if v is None or (isinstance(v, float) and np.isnan(v)):
            return ""
        return str(v)

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(list(frame.columns))
        for rec in frame.itertuples(index=False):
            w.writerow([cell(v) for v in rec])


def _sweep_scenario(args) -> list[ResultRow]:
    table, sid, scenario, names, config, outcome = args
    label = scenario.label(table.treatment_names)
    needs_nuisance = any(n != "raw_difference" for n in names)
    needs_prop = any(n in ("iptw", "psm", "tmle") for n in names)
    rows = []
    nuis: NuisanceEstimates | Exception | None = None
    if needs_nuisance:
        try:
            nuis = fit_nuisance(table, scenario, config, outcome=outcome, propensity=needs_prop)
        except Exception as exc:
            nuis = exc
    for name in names:
        try:
            if name == "raw_difference":
                res = run_estimators(table, scenario, None, [name], config)[name]
            elif isinstance(nuis, Exception):
                res = nuis
            else:
                res = run_estimators(table, scenario, nuis, [name], config)[name]
        except Exception as exc:
            res = exc
        if isinstance(res, Exception):
            rows.append(ResultRow(sid, scenario, label, name, None,
                                  f"{type(res).__name__}: {res}"))
        else:
            rows.append(ResultRow(sid, scenario, label, name, res))
    return rows


def scenario_sweep(table: ObservationTable, config: EstimationConfig,
                   estimators: Sequence[str] = ("raw_difference", "g_formula", "iptw", "tmle"),
                   scenarios: Sequence[ScenarioSpec] | None = None,
                   workers: int = 1, outcome: OutcomeFit | None = None) -> ResultsTable:
    """Estimate every scenario with every estimator; failures are kept as error rows.

    The outcome regression is fitted once and shared, since it does not depend
    on the scenario. A previously fitted ``outcome`` may be passed in.
    """
    unknown = [e for e in estimators if e not in ESTIMATORS]
    if unknown:
        raise ValueError(f"unknown estimators {unknown}; choose from {ESTIMATORS}")
    scenarios = list(scenarios) if scenarios is not None else enumerate_scenarios(table.H)
    if outcome is None and any(e != "raw_difference" for e in estimators):
        outcome = fit_outcome_model(table, config, with_bootstrap="g_formula" in estimators)
    tasks = [(table, i + 1, s, tuple(estimators), config, outcome)
             for i, s in enumerate(scenarios)]
    rows: list[ResultRow] = []
    if workers <= 1:
        for t in tasks:
            rows.extend(_sweep_scenario(t))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for chunk in pool.map(_sweep_scenario, tasks):
                rows.extend(chunk)
    return ResultsTable(rows, table.treatment_names, table.scale)


# --------------------------------------------------------------------------- identity


def interaction_decomposition_check(cells) -> float:
    """Max |LHS - RHS| of the two-treatment decomposition identity over units.

    ``cells`` maps ``(a, b)`` for ``a, b in {0, 1}`` to per-unit predictions
    ``E[Y | first=a, second=b, X]`` (or is an ``n x 4`` array ordered
    11, 10, 01, 00). The identity is

        psi_1(X | 2=1) + psi_1(X | 2=0) + psi_2(X | 1=1) + psi_2(X | 1=0)
            = 2 * psi_12(X)
    """
    if isinstance(cells, dict):
        p11, p10, p01, p00 = (np.asarray(cells[k], float) for k in
                              ((1, 1), (1, 0), (0, 1), (0, 0)))
    else:
        arr = np.asarray(cells, float)
        p11, p10, p01, p00 = arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]
    lhs = (p11 - p01) + (p10 - p00) + (p11 - p10) + (p01 - p00)
    rhs = 2 * (p11 - p00)
    return float(np.max(np.abs(lhs - rhs)))


def interaction_cells(model_predict: Callable[[np.ndarray], np.ndarray],
                      table: ObservationTable, pair: tuple[int, int]) -> dict:
    """Predictions of a fitted outcome function at the four settings of a treatment pair."""
    cells = {}
    for a in (0, 1):
        for b in (0, 1):
            t = np.array(table.treatments, copy=True)
            t[:, pair[0]] = a
            t[:, pair[1]] = b
            cells[(a, b)] = model_predict(t)
    return cells
