from __future__ import annotations

import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_table, manual_nuisance, os_only_table
from walkcause.data import LikertScale, ScenarioSpec, to_probability_scale
from walkcause.errors import DegenerateScenario, NoMatches
from walkcause.estimators import (
    RESULT_COLUMNS,
    CateEstimate,
    ResultRow,
    ResultsTable,
    g_formula,
    interaction_cells,
    interaction_decomposition_check,
    iptw,
    match_nearest,
    psm,
    raw_difference,
    scenario_sweep,
    tmle,
    tmle_update,
)
from walkcause.learners import LearnerSpec
from walkcause.nuisance import EstimationConfig

SCALE = LikertScale(1, 7)
OS = ScenarioSpec((0,))
LINEAR = EstimationConfig(outcome_learner=LearnerSpec("linear_logistic"),
                          propensity_learner=LearnerSpec("linear_logistic"),
                          cross_fit_folds=0, bootstrap_reps=10)


def single(y, a, X=None):
    y = np.asarray(y, float)
    X = np.zeros((len(y), 1)) if X is None else X
    return make_table(X, np.asarray(a)[:, None], y, names=("OS",))


# ---------------------------------------------------------------- raw difference

def test_raw_difference_arithmetic():
    est = raw_difference(single([6, 6, 3, 3], [1, 1, 0, 0]), OS)
    assert est.psi_likert == pytest.approx(3.0, abs=1e-12)
    assert (est.n_exposed, est.n_control, est.n_ineligible) == (2, 2, 0)


def test_raw_difference_symmetric_groups():
    est = raw_difference(single([2, 5, 7, 2, 5, 7], [1, 1, 1, 0, 0, 0]), OS)
    assert est.psi_likert == 0.0


def test_raw_difference_needs_both_groups():
    with pytest.raises(DegenerateScenario):
        raw_difference(single([2, 5, 7], [1, 1, 1]), OS)


# ---------------------------------------------------------------- g-formula

def test_g_formula_substitution():
    table = single([4] * 6, [1, 1, 1, 0, 0, 0])
    est = g_formula(table, OS, manual_nuisance(table, OS, np.full(6, 0.6), np.full(6, 0.4)))
    assert est.psi_star == pytest.approx(0.2, abs=1e-15)
    assert est.psi_likert == pytest.approx(1.4, abs=1e-12)
    assert round(est.psi_percent, 2) == 23.33


def test_g_formula_perfect_fit_equals_raw():
    table = os_only_table()
    sc = ScenarioSpec((3,))
    nu = manual_nuisance(table, sc, np.full(table.n, 5 / 7), np.full(table.n, 2 / 7))
    assert g_formula(table, sc, nu).psi_star == pytest.approx(
        raw_difference(table, sc).psi_star, abs=1e-15)


def test_g_formula_bootstrap_se():
    table = os_only_table(n=300, seed=8)
    res = scenario_sweep(table, LINEAR, ["g_formula"], [ScenarioSpec((3,))])
    est = res.estimates("g_formula")[0]
    assert est.details["bootstrap_reps"] == 10
    assert np.isfinite(est.se_star) and est.se_star >= 0


# ---------------------------------------------------------------- iptw

@pytest.mark.parametrize("e", [0.5, 0.3])
def test_iptw_constant_propensity_is_raw(e):
    rng = np.random.default_rng(1)
    table = single(rng.integers(1, 8, 40), rng.integers(0, 2, 40))
    nu = manual_nuisance(table, OS, np.zeros(40), np.zeros(40), e=np.full(40, e))
    assert iptw(table, OS, nu).psi_star == raw_difference(table, OS).psi_star


def test_iptw_weighted_mean_example():
    # exposed (Y=7, e=0.7) and (Y=5, e=0.35); controls at Y=1
    table = single([7, 5, 1, 1], [1, 1, 0, 0])
    nu = manual_nuisance(table, OS, np.zeros(4), np.zeros(4), e=np.array([0.7, 0.35, 0.5, 0.5]))
    est = iptw(table, OS, nu)
    expected = (7 / 0.7 + 5 / 0.35) / (1 / 0.7 + 1 / 0.35)
    assert round(expected, 3) == 5.667
    assert est.psi_likert + 1 == pytest.approx(expected, abs=1e-12)


def test_iptw_requires_propensity():
    table = single([7, 5, 1, 1], [1, 1, 0, 0])
    with pytest.raises(ValueError):
        iptw(table, OS, manual_nuisance(table, OS, np.zeros(4), np.zeros(4)))


# ---------------------------------------------------------------- matching

def test_match_nearest_example():
    m = match_nearest(np.array([0.30]), np.array([0.31, 0.90]), caliper=0.05)
    assert m.tolist() == [0]
    table = single([6, 4, 7], [1, 0, 0])
    nu = manual_nuisance(table, OS, np.zeros(3), np.zeros(3), e=np.array([0.30, 0.31, 0.90]))
    assert psm(table, OS, nu).psi_likert == pytest.approx(2.0, abs=1e-12)


def test_caliper_excludes_everything():
    table = single([6, 4], [1, 0])
    nu = manual_nuisance(table, OS, np.zeros(2), np.zeros(2), e=np.array([0.30, 0.31]))
    with pytest.raises(NoMatches):
        psm(table, OS, nu, caliper=0.001)


def test_match_ties_go_to_lowest_index():
    # exactly representable distances: 0.375, 0.25, 0.25
    assert match_nearest(np.array([0.5]), np.array([0.875, 0.25, 0.75]), 0.5).tolist() == [1]
    assert match_nearest(np.array([0.5]), np.array([0.75, 0.75]), 0.5).tolist() == [0]
    assert match_nearest(np.array([0.5]), np.array([0.75, 0.25]), 0.5).tolist() == [0]


def test_match_without_replacement_uses_each_control_once():
    m = match_nearest(np.array([0.5, 0.5, 0.5]), np.array([0.5, 0.52]), 0.1, replacement=False)
    assert m.tolist() == [0, 1, -1]


@given(st.lists(st.floats(0.01, 0.99), min_size=1, max_size=20),
       st.lists(st.floats(0.01, 0.99), min_size=1, max_size=20))
def test_match_with_replacement_is_nearest(e1, e0):
    e1, e0 = np.array(e1), np.array(e0)
    m = match_nearest(e1, e0, caliper=1.0)
    for i, j in enumerate(m):
        d = np.abs(e0 - e1[i])
        assert d[j] == d.min()
        assert j == int(np.flatnonzero(d == d.min())[0])


def test_psm_null_effect_near_zero():
    estimates = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        n = 400
        e = rng.uniform(0.2, 0.8, n)
        a = (rng.uniform(size=n) < 0.5).astype(int)
        table = single(rng.uniform(1, 7, n), a)
        nu = manual_nuisance(table, OS, np.zeros(n), np.zeros(n), e=e)
        estimates.append(psm(table, OS, nu).psi_likert)
    assert abs(np.mean(estimates)) < 0.15


def test_psm_bootstrap_se_and_dropped():
    rng = np.random.default_rng(3)
    n = 200
    table = single(rng.uniform(1, 7, n), rng.integers(0, 2, n))
    e = rng.uniform(0.1, 0.9, n)
    est = psm(table, OS, manual_nuisance(table, OS, np.zeros(n), np.zeros(n), e=e),
              bootstrap_reps=20, seed=1)
    assert np.isfinite(est.se_star)
    assert est.details["n_dropped"] >= 0


# ---------------------------------------------------------------- tmle

def test_tmle_update_example():
    assert float(tmle_update(0.5, 0.25, 1, 0.8)) == pytest.approx(1.7, abs=1e-12)
    assert (1 - 0.25) / (0.25 * 0.75) == 4


def test_tmle_zero_residuals_equals_g_formula():
    rng = np.random.default_rng(2)
    n = 60
    a = rng.integers(0, 2, n)
    y = rng.integers(1, 8, n).astype(float)
    table = single(y, a)
    ys = to_probability_scale(y, SCALE)
    q1 = np.where(a == 1, ys, rng.uniform(size=n))
    q0 = np.where(a == 0, ys, rng.uniform(size=n))
    nu = manual_nuisance(table, OS, q1, q0, e=rng.uniform(0.2, 0.8, n))
    assert tmle(table, OS, nu).psi_star == g_formula(table, OS, nu).psi_star


def test_tmle_corrects_a_biased_outcome_model():
    # outcome model ignores treatment entirely; true propensity known
    rng = np.random.default_rng(5)
    n = 20000
    x = rng.normal(size=n)
    e = 1 / (1 + np.exp(-x))
    a = (rng.uniform(size=n) < e).astype(int)
    y = np.clip(3 + 2 * a + x + rng.normal(0, 0.3, n), 1, 7)
    table = single(y, a, X=x[:, None])
    nu = manual_nuisance(table, OS, np.full(n, table.y_star.mean()),
                         np.full(n, table.y_star.mean()), e=e)
    est = tmle(table, OS, nu)
    assert g_formula(table, OS, nu).psi_likert == 0.0
    assert est.psi_likert == pytest.approx(2.0, abs=0.1)


def test_tmle_logistic_fluctuation_stays_in_unit_interval():
    # misspecified outcome model, correct (randomised) propensity
    table = os_only_table(n=300, seed=4)
    sc = ScenarioSpec((3,))
    n = table.n
    nu = manual_nuisance(table, sc, np.full(n, 0.6), np.full(n, 0.3), e=np.full(n, 0.5))
    est = tmle(table, sc, nu, fluctuation="logistic")
    for v in (est.details["q1_star"], est.details["q0_star"]):
        assert np.all((v > 0) & (v < 1))
    assert est.psi_star == pytest.approx(3 / 7, abs=0.05)


def test_tmle_ineligible_units_keep_initial_predictions():
    table = os_only_table(n=300, seed=6)
    sc = ScenarioSpec((0, 1))
    rng = np.random.default_rng(1)
    q1, q0 = rng.uniform(0.3, 0.7, table.n), rng.uniform(0.3, 0.7, table.n)
    nu = manual_nuisance(table, sc, q1, q0, e=rng.uniform(0.2, 0.8, table.n))
    est = tmle(table, sc, nu)
    inel = ~nu.eligibility.eligible
    np.testing.assert_array_equal(est.details["q1_star"][inel], q1[inel])
    np.testing.assert_array_equal(est.details["q0_star"][inel], q0[inel])


# ---------------------------------------------------------------- sweep and report

def test_os_dominates_singletons():
    table = os_only_table(n=400, seed=7)
    res = scenario_sweep(table, LINEAR, ["raw_difference", "g_formula", "iptw", "tmle"],
                         [ScenarioSpec((j,)) for j in range(5)])
    for name in ("raw_difference", "g_formula", "iptw", "tmle"):
        psi = [e.psi_star for e in res.estimates(name)]
        assert int(np.argmax(psi)) == 3


def test_sweep_reports_failures_per_row():
    table = os_only_table(n=300, seed=9)
    T = np.array(table.treatments)
    T[:, 2] = 0
    broken = make_table(table.covariates, T, table.outcome)
    res = scenario_sweep(broken, LINEAR)
    assert len(res.rows) == 31 * 4
    failed = {r.label for r in res.failures}
    assert failed and all("RS" in lab for lab in failed)
    assert any(not r.error for r in res.rows)


def test_result_row_layout(tmp_path):
    psi_star = 3.83 * SCALE.width / (100 * SCALE.max_value)
    est = CateEstimate(ScenarioSpec((3,)), "tmle", psi_star, 0.5 * psi_star / 3.83,
                       SCALE, 100, 100, 0, label="OS")
    res = ResultsTable([ResultRow(4, ScenarioSpec((3,)), "OS", "tmle", est)],
                       ("LM", "BC", "RS", "OS", "GT"), SCALE)
    res.write_csv(tmp_path / "r.csv", digits=2)
    with open(tmp_path / "r.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == RESULT_COLUMNS
    assert rows[0]["scenario_id"] == "4"
    assert rows[0]["active_treatments"] == "OS"
    assert rows[0]["psi_percent"] == "3.83"
    assert rows[0]["significant"] == "true"


def test_by_interventions_band():
    table = os_only_table(n=400, seed=10)
    res = scenario_sweep(table, LINEAR, ["raw_difference"])
    frame = res.by_interventions("raw_difference")
    assert len(frame) == 5 * 5
    row = frame[(frame.treatment == "OS") & (frame.n_interventions == 1)].iloc[0]
    est = [e for e in res.estimates("raw_difference") if e.scenario.active == (3,)][0]
    assert row.mean_psi_percent == pytest.approx(est.psi_percent)
    assert row.band_hi - row.mean_psi_percent == pytest.approx(1.959963984540054 * est.se_percent)


# ---------------------------------------------------------------- interaction identity

def test_decomposition_example():
    cells = {(1, 1): [1.0], (1, 0): [0.6], (0, 1): [0.5], (0, 0): [0.0]}
    assert interaction_decomposition_check(cells) == 0.0


def test_additive_predictions_have_no_conditional_difference():
    rng = np.random.default_rng(0)
    base, a, b = rng.normal(size=50), 0.3, -0.2
    cells = {(i, j): base + i * a + j * b for i in (0, 1) for j in (0, 1)}
    np.testing.assert_allclose(cells[(1, 1)] - cells[(0, 1)], cells[(1, 0)] - cells[(0, 0)],
                               atol=1e-15)
    assert interaction_decomposition_check(cells) <= 1e-12


@settings(max_examples=50)
@given(st.integers(0, 2 ** 32 - 1))
def test_decomposition_holds_for_random_tables(seed):
    arr = np.random.default_rng(seed).uniform(size=(30, 4))
    assert interaction_decomposition_check(arr) <= 1e-12


def test_interaction_cells_from_model():
    table = os_only_table(n=50, seed=1)
    cells = interaction_cells(lambda t: t[:, 0] * 2.0 + t[:, 1] + t[:, 0] * t[:, 1], table, (0, 1))
    assert cells[(1, 1)][0] == 4.0 and cells[(0, 0)][0] == 0.0
    assert interaction_decomposition_check(cells) <= 1e-12
