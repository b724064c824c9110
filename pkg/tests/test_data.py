from __future__ import annotations

import json

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st

from conftest import make_table
from walkcause.data import (
    CONTROL,
    EXPOSED,
    INELIGIBLE,
    CovariateSpec,
    DatasetSchema,
    LikertScale,
    ScenarioSpec,
    composite_exposure,
    counterfactual_treatments,
    enumerate_scenarios,
    exposure_labels,
    from_probability_scale,
    load_csv,
    to_probability_scale,
    write_csv,
)
from walkcause.design import generate_design
from walkcause.errors import (
    DegenerateScenario,
    EmptyDataset,
    MissingColumn,
    NonBinaryTreatment,
    OutcomeOutOfScale,
    OutOfScale,
)

SCALE = LikertScale(1, 7)


def survey_schema():
    return DatasetSchema(
        covariates=(CovariateSpec("age"), CovariateSpec("gender", "categorical")),
        treatments=("LM", "BC", "RS", "OS", "GT"),
        outcome="walkability",
    )


def write_survey(path, n=1180, seed=0, overrides=None):
    rng = np.random.default_rng(seed)
    frame = pd.DataFrame({
        "age": rng.integers(18, 80, n),
        "gender": rng.choice(["female", "male", "other"], n),
        **{t: rng.integers(0, 2, n) for t in ("LM", "BC", "RS", "OS", "GT")},
        "walkability": rng.integers(1, 8, n),
    })
    for (col, row), value in (overrides or {}).items():
        frame[col] = frame[col].astype(object)
        frame.loc[row, col] = value
    frame.to_csv(path, index=False)
    return frame


# ---------------------------------------------------------------- loading

def test_load_survey_shaped_csv(tmp_path):
    write_survey(tmp_path / "d.csv")
    table = load_csv(tmp_path / "d.csv", survey_schema())
    assert table.n == 1180 and table.H == 5
    assert table.categorical == ("gender",)
    assert table.treatments.dtype == np.int8


def test_treatment_cell_two_is_rejected(tmp_path):
    write_survey(tmp_path / "d.csv", overrides={("OS", 3): 2})
    with pytest.raises(NonBinaryTreatment):
        load_csv(tmp_path / "d.csv", survey_schema())


def test_outcome_eight_is_out_of_scale(tmp_path):
    write_survey(tmp_path / "d.csv", overrides={("walkability", 0): 8})
    with pytest.raises(OutcomeOutOfScale):
        load_csv(tmp_path / "d.csv", survey_schema())


def test_missing_column_and_empty_file(tmp_path):
    frame = write_survey(tmp_path / "d.csv", n=20)
    frame.drop(columns="GT").to_csv(tmp_path / "m.csv", index=False)
    with pytest.raises(MissingColumn):
        load_csv(tmp_path / "m.csv", survey_schema())
    frame.iloc[:0].to_csv(tmp_path / "e.csv", index=False)
    with pytest.raises(EmptyDataset):
        load_csv(tmp_path / "e.csv", survey_schema())


def test_csv_round_trip_is_lossless(tmp_path):
    write_survey(tmp_path / "d.csv", n=50)
    table = load_csv(tmp_path / "d.csv", survey_schema())
    write_csv(table, tmp_path / "out.csv")
    table.schema().dump(tmp_path / "schema.json")
    again = load_csv(tmp_path / "out.csv", DatasetSchema.load(tmp_path / "schema.json"))
    assert again.equals(table)
    assert open(tmp_path / "out.csv", "rb").read().count(b"\r\n") == 51


def test_schema_json_round_trip():
    schema = survey_schema()
    assert DatasetSchema.from_dict(json.loads(json.dumps(schema.to_dict()))) == schema


# ---------------------------------------------------------------- transform

@pytest.mark.parametrize("y, expected", [(1, 0.0), (7, 6 / 7), (4, 3 / 7)])
def test_to_probability_scale(y, expected):
    assert to_probability_scale(y, SCALE) == pytest.approx(expected, abs=1e-12)


def test_to_probability_scale_spec_decimals():
    assert round(to_probability_scale(7, SCALE), 9) == 0.857142857
    assert round(to_probability_scale(4, SCALE), 9) == 0.428571429


@pytest.mark.parametrize("y_star, expected", [(0.0, 1.0), (6 / 7, 7.0)])
def test_from_probability_scale(y_star, expected):
    assert from_probability_scale(y_star, SCALE) == pytest.approx(expected, abs=1e-12)


def test_round_trip_exact_on_likert_points():
    for y in range(1, 8):
        assert from_probability_scale(to_probability_scale(y, SCALE), SCALE) == y


def test_transform_rejects_out_of_scale():
    with pytest.raises(OutOfScale):
        to_probability_scale(0, SCALE)
    with pytest.raises(OutOfScale):
        to_probability_scale([1, 8], SCALE)


@given(st.integers(0, 5), st.integers(1, 9), st.floats(0, 1))
def test_round_trip_any_scale(lo, width, frac):
    scale = LikertScale(lo, lo + width)
    y = lo + frac * width
    y_star = to_probability_scale(y, scale)
    assert 0.0 <= y_star <= 1.0
    assert from_probability_scale(y_star, scale) == pytest.approx(y, abs=1e-9)


def test_negative_floor_rejected():
    with pytest.raises(ValueError):
        LikertScale(-3, 3)


# ---------------------------------------------------------------- scenarios

def test_enumerate_five():
    sc = enumerate_scenarios(5)
    names = ("LM", "BC", "RS", "OS", "GT")
    assert len(sc) == 31
    assert sc[0].label(names) == "LM"
    assert sc[-1].label(names) == "LM+BC+RS+OS+GT"


def test_enumerate_small():
    assert enumerate_scenarios(1) == [ScenarioSpec((0,))]
    assert len(enumerate_scenarios(3)) == 7


@given(st.integers(1, 8))
def test_enumerate_is_all_nonempty_subsets(H):
    sc = enumerate_scenarios(H)
    assert len(sc) == 2 ** H - 1
    assert len({s.active for s in sc}) == len(sc)
    assert [len(s) for s in sc] == sorted(len(s) for s in sc)


def test_scenario_parse():
    names = ("LM", "BC", "RS", "OS", "GT")
    assert ScenarioSpec.parse("LM+BC", names) == ScenarioSpec((0, 1))
    assert ScenarioSpec.parse("4", names) == ScenarioSpec((3,))
    with pytest.raises(ValueError):
        ScenarioSpec.parse("XX", names)


def test_exposure_singleton():
    T = np.array([[0, 0, 0, 1, 0], [1, 1, 1, 0, 1]])
    labels = exposure_labels(T, ScenarioSpec((3,)))
    assert labels.tolist() == [EXPOSED, CONTROL]


def test_exposure_mixed_pattern_is_ineligible():
    T = np.array([[1, 0, 0, 0, 0], [1, 1, 0, 0, 0], [0, 0, 1, 1, 1]])
    labels = exposure_labels(T, ScenarioSpec((0, 1)))
    assert labels.tolist() == [INELIGIBLE, EXPOSED, CONTROL]


def test_reference_design_all_five_scenario():
    # The last profile of the reference design is (0,0,1,0,0): mixed, not a control.
    design = generate_design(5)
    labels = exposure_labels(design.profiles, ScenarioSpec((0, 1, 2, 3, 4)))
    assert labels[0] == EXPOSED
    assert (labels[1:] == INELIGIBLE).all()
    table = make_table(np.zeros((8, 1)), design.profiles, np.full(8, 4.0))
    with pytest.raises(DegenerateScenario):
        composite_exposure(table, ScenarioSpec((0, 1, 2, 3, 4)))


def test_counterfactual_treatments_touch_active_only():
    rng = np.random.default_rng(1)
    T = rng.integers(0, 2, (30, 5))
    table = make_table(rng.normal(size=(30, 2)), T, np.full(30, 3.0))
    cf = counterfactual_treatments(table, ScenarioSpec((0, 1)), 1)
    assert (cf[:, :2] == 1).all()
    assert (cf[:, 2:] == T[:, 2:]).all()
    assert (counterfactual_treatments(table, ScenarioSpec((0, 1)), 0)[:, :2] == 0).all()


def test_table_is_immutable():
    table = make_table(np.zeros((3, 1)), np.eye(3, 5, dtype=int), [1, 2, 3])
    with pytest.raises(ValueError):
        table.treatments[0, 0] = 1
