from __future__ import annotations

import numpy as np
import pandas as pd
import pytest

from walkcause.data import LikertScale, ObservationTable, composite_exposure
from walkcause.nuisance import NuisanceEstimates

STREET_ATTRIBUTES = ("LM", "BC", "RS", "OS", "GT")


def make_table(X, T, Y, names=STREET_ATTRIBUTES, scale=LikertScale(1, 7), categorical=()):
    X = pd.DataFrame(X) if not isinstance(X, pd.DataFrame) else X
    if not all(isinstance(c, str) for c in X.columns):
        X.columns = [f"X{i + 1}" for i in range(X.shape[1])]
    T = np.asarray(T)
    return ObservationTable(X, T, np.asarray(Y, float), scale, tuple(names[:T.shape[1]]),
                            categorical=categorical)


def os_only_table(n=400, seed=0):
    """Random binary treatments; the outcome is 6 when OS is on and 3 otherwise."""
    rng = np.random.default_rng(seed)
    T = rng.integers(0, 2, size=(n, 5))
    X = rng.normal(1.0, 1.0, size=(n, 3))
    Y = np.where(T[:, 3] == 1, 6.0, 3.0)
    return make_table(X, T, Y)


def manual_nuisance(table, scenario, q1, q0, e=None):
    exposure = composite_exposure(table, scenario)
    sub = table.treatments[:, list(scenario.active)]
    q_obs = np.where(sub.all(axis=1), q1, q0)
    prop = None if e is None else np.where(exposure.eligible, e, np.nan)
    return NuisanceEstimates(scenario, np.asarray(q1, float), np.asarray(q0, float), q_obs,
                             prop, exposure)


@pytest.fixture
def os_table():
    return os_only_table()


@pytest.fixture(scope="session")
def full_benchmark():
    """Default grid: three betas, 50 replicates, n=5000, counts 1..5, four estimators."""
    import time

    from walkcause.simulation import BenchmarkConfig, run_benchmark
    start = time.perf_counter()
    report = run_benchmark(BenchmarkConfig(seed=0), workers=1)
    report.elapsed = time.perf_counter() - start
    return report
