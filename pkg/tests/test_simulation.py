from __future__ import annotations

import math

import numpy as np
import pytest

from walkcause.data import ScenarioSpec
from walkcause.errors import ZeroTruth
from walkcause.simulation import (
    BenchmarkConfig,
    CounterfactualOracle,
    SimulationConfig,
    assignment_probability,
    generate_dataset,
    outcome_function,
    percentage_error,
    run_benchmark,
    scenario_for_count,
    true_cate,
)

ALL5 = ScenarioSpec((0, 1, 2, 3, 4))


def _phi(z):
    return math.exp(-z * z / 2) / math.sqrt(2 * math.pi)


def _Phi(z):
    return 0.5 * (1 + math.erf(z / math.sqrt(2)))


def _expected_excess(mu, sd, c):
    """E[(Z - c)+] for Z ~ N(mu, sd)."""
    z = (mu - c) / sd
    return sd * _phi(z) + (mu - c) * _Phi(z)


def test_assignment_probability_example():
    p = assignment_probability(np.ones((1, 5)), SimulationConfig(beta=0.5))
    assert float(p[0]) == pytest.approx(5e-5 + 0.5 * 0.952574126822433 / 2 + 0.25, abs=1e-12)
    assert round(float(p[0]), 5) == 0.48819


def test_beta_zero_is_randomized():
    X = np.random.default_rng(0).normal(1, 1, (100, 5))
    p = assignment_probability(X, SimulationConfig(beta=0.0))
    np.testing.assert_allclose(p, 0.5 + 1e-5 * X.sum(axis=1), atol=1e-15)


def test_outcome_example():
    y = outcome_function(np.ones((1, 5)), np.ones((1, 5)), np.zeros(1), SimulationConfig())
    assert float(y[0]) == pytest.approx(6.5, abs=1e-12)


def test_outcome_is_clipped():
    y = outcome_function(np.ones((2, 5)), np.full((2, 5), 30.0), np.array([0.0, -100.0]),
                         SimulationConfig())
    assert y.tolist() == [7.0, 1.0]


def test_noise_free_truth_is_exactly_one():
    cfg = SimulationConfig(noise_sd=0.0, covariate_effect=0.0)
    assert true_cate(cfg, ScenarioSpec((0,)), 10_000) == 1.0


def test_single_treatment_truth_near_one():
    truth = true_cate(SimulationConfig(), ScenarioSpec((0,)), 1_000_000)
    assert truth == pytest.approx(1.0, abs=0.01)
    assert truth <= 1.0


def test_all_five_truth_matches_analytic_clipping():
    cfg = SimulationConfig()
    mean, se = CounterfactualOracle(cfg, 1_000_000, seed=3).cate_with_se(ALL5)
    # all on: 6 + Z clipped at 7; all off: 1 + Z clipped at 1; Z ~ N(0.5, sqrt(0.05 + 0.01))
    sd = math.sqrt(0.05 + 0.01)
    analytic = 5 - _expected_excess(0.5, sd, 1.0) - _expected_excess(-0.5, sd, 0.0)
    assert mean < 5
    assert mean == pytest.approx(analytic, abs=4 * se + 1e-4)


def test_truth_increases_with_active_count():
    oracle = CounterfactualOracle(SimulationConfig(), 200_000, seed=1)
    truths = [oracle.cate(scenario_for_count(k, 5)) for k in range(1, 6)]
    assert all(b > a for a, b in zip(truths, truths[1:]))


@pytest.mark.parametrize("hat, truth, expected", [(1.05, 1.0, 0.05), (1.0, 1.0, 0.0),
                                                  (0.9, 1.0, -0.10)])
def test_percentage_error(hat, truth, expected):
    assert percentage_error(hat, truth) == pytest.approx(expected, abs=1e-12)


def test_percentage_error_zero_truth():
    with pytest.raises(ZeroTruth):
        percentage_error(0.1, 0.0)


def test_dataset_is_deterministic_and_stream_keyed():
    a = generate_dataset(SimulationConfig(n=300), 5)
    b = generate_dataset(SimulationConfig(n=300), 5)
    assert a.table.equals(b.table)
    c = generate_dataset(SimulationConfig(n=300, H=3), 5)
    np.testing.assert_array_equal(a.latent.X, c.latent.X)
    np.testing.assert_array_equal(a.table.treatments[:, :3], c.table.treatments)


def test_discretized_outcome_is_integer():
    d = generate_dataset(SimulationConfig(n=200, discretize=True), 1)
    assert np.all(d.table.outcome == np.rint(d.table.outcome))


def test_config_round_trip():
    cfg = SimulationConfig(n=10, beta=0.2, discretize=True)
    assert SimulationConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        SimulationConfig(beta=1.5)


def test_small_grid_cardinality_and_worker_invariance():
    bcfg = BenchmarkConfig(replicates=2, n_oracle=50_000, simulation=SimulationConfig(n=500))
    one = run_benchmark(bcfg, workers=1)
    two = run_benchmark(bcfg, workers=2)
    assert len(one.rows) == 3 * 2 * 5 * 4
    assert one.rows.equals(two.rows)


# ---------------------------------------------------------------- default grid

def _mean_abs(report, estimator, beta, k=1):
    s = report.summary
    row = s[(s.estimator == estimator) & (s.beta == beta) & (s.n_interventions == k)]
    return float(row["mean_abs"].iloc[0])


def test_default_grid_has_3000_rows(full_benchmark):
    assert len(full_benchmark.rows) == 3000
    assert (full_benchmark.rows["error"] == "").all()


def test_high_confounding_ordering(full_benchmark):
    raw = _mean_abs(full_benchmark, "raw_difference", 0.85)
    assert _mean_abs(full_benchmark, "tmle", 0.85) < raw
    assert _mean_abs(full_benchmark, "g_formula", 0.85) < raw


def test_g_formula_beats_raw_at_medium_confounding(full_benchmark):
    s = full_benchmark.summary
    sel = (s.beta == 0.5) & (s.n_interventions == 1)
    mean = s[sel].set_index("estimator")["mean"]
    assert abs(mean["g_formula"]) < abs(mean["raw_difference"])


def test_iptw_competitive_at_low_confounding(full_benchmark):
    s = full_benchmark.summary
    sub = s[(s.beta == 0.15) & (s.n_interventions == 1)].set_index("estimator")
    iptw = sub.loc["iptw", "mean_abs"]
    best = sub.loc[["g_formula", "tmle"], "mean_abs"].min()
    best_name = sub.loc[["g_formula", "tmle"], "mean_abs"].idxmin()
    band = 1.96 * sub.loc[best_name, "sd"] / math.sqrt(sub.loc[best_name, "count"])
    print(f"iptw mean |error| {iptw:.4f}, best {best_name} {best:.4f}, band {band:.4f}")
    assert iptw <= best or iptw - best <= band
