"""Covariate balance (ASMD) and positivity summaries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .data import ObservationTable, ScenarioSpec, composite_exposure
from .errors import DegenerateScenario

POSITIVITY_FLAG = 0.05


@dataclass
class BalanceReport:
    scenario: ScenarioSpec
    label: str
    weighting: str
    rows: pd.DataFrame  # covariate, asmd_unadjusted, asmd_weighted, zero_variance, n_interventions

    def asmd(self, covariate: str, weighted: bool = False) -> float:
        col = "asmd_weighted" if weighted else "asmd_unadjusted"
        return float(self.rows.set_index("covariate").loc[covariate, col])


def expand_covariates(table: ObservationTable) -> pd.DataFrame:
    """Numeric covariates as-is, categorical ones as one indicator per level."""
    cols = {}
    for name in table.covariate_names:
        col = table.covariates[name]
        if name in table.categorical:
            for level in sorted(col.unique()):
                cols[f"{name}={level}"] = (col == level).to_numpy(float)
        else:
            cols[name] = col.to_numpy(float)
    return pd.DataFrame(cols)


def _asmd_column(x, exposed, control, w):
    s2e = x[exposed].var(ddof=1)
    s2c = x[control].var(ddof=1)
    denom = np.sqrt((s2e + s2c) / 2)
    me = np.sum(w[exposed] * x[exposed]) / np.sum(w[exposed])
    mc = np.sum(w[control] * x[control]) / np.sum(w[control])
    if not denom > 0:
        return 0.0, True
    return float(abs(me - mc) / denom), False


def asmd(table: ObservationTable, scenario: ScenarioSpec,
         weights: np.ndarray | None = None, weighting: str = "iptw") -> BalanceReport:
    """Absolute standardized mean differences between exposed and control units.

    ``|mean_e - mean_c| / sqrt((s2_e + s2_c) / 2)``, with group variances
    always unweighted; ``weights`` only enter the means of the adjusted
    column. A covariate constant within both groups gets ASMD 0 and the
    ``zero_variance`` flag.
    """
    exposure = composite_exposure(table, scenario)
    if exposure.n_exposed < 2 or exposure.n_control < 2:
        raise DegenerateScenario("ASMD needs at least two exposed and two control units")
    exp, ctl = exposure.exposed, exposure.control
    ones = np.ones(table.n)
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        if w.shape != (table.n,) or np.any(w[exposure.eligible] < 0):
            raise ValueError("weights must be a non-negative per-unit vector")
    frame = expand_covariates(table)
    records = []
    for name in frame.columns:
        x = frame[name].to_numpy()
        raw, zero = _asmd_column(x, exp, ctl, ones)
        adj = _asmd_column(x, exp, ctl, w)[0] if weights is not None else np.nan
        records.append({"covariate": name, "asmd_unadjusted": raw, "asmd_weighted": adj,
                        "zero_variance": zero, "n_interventions": len(scenario)})
    return BalanceReport(scenario, scenario.label(table.treatment_names),
                         weighting if weights is not None else "none", pd.DataFrame(records))


def iptw_weights(propensity: np.ndarray, exposed: np.ndarray, control: np.ndarray) -> np.ndarray:
    """``1/e`` for exposed, ``1/(1-e)`` for control, 0 for ineligible units."""
    e = np.asarray(propensity, dtype=float)
    w = np.zeros(len(e))
    w[exposed] = 1.0 / e[exposed]
    w[control] = 1.0 / (1.0 - e[control])
    return w


@dataclass
class PositivityReport:
    deciles: np.ndarray
    n: int
    clipped_low: int
    clipped_high: int
    flagged: bool
    min: float = float("nan")
    max: float = float("nan")
    extra: dict = field(default_factory=dict)

    @property
    def clipped_fraction(self) -> float:
        return (self.clipped_low + self.clipped_high) / self.n if self.n else 0.0


def positivity_report(propensity, clip_lo: float = 0.01, clip_hi: float = 0.99,
                      threshold: float = POSITIVITY_FLAG) -> PositivityReport:
    """Deciles of ``e`` and counts at the clip bounds; flags when more than 5% sit there.

    Ineligible units (NaN) are ignored. Values at or beyond a bound count as clipped.
    """
    e = np.asarray(propensity, dtype=float)
    e = e[np.isfinite(e)]
    if len(e) == 0:
        return PositivityReport(np.full(9, np.nan), 0, 0, 0, False)
    low = int(np.sum(e <= clip_lo))
    high = int(np.sum(e >= clip_hi))
    deciles = np.quantile(e, np.arange(1, 10) / 10)
    report = PositivityReport(deciles, len(e), low, high, False, float(e.min()), float(e.max()))
    report.flagged = report.clipped_fraction > threshold
    return report
