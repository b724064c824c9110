"""Dataset abstraction, Likert scaling, scenario enumeration and composite exposures."""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd

from .errors import (
    DegenerateScenario,
    EmptyDataset,
    MissingColumn,
    NonBinaryTreatment,
    OutcomeOutOfScale,
    OutOfScale,
    SchemaError,
)

EXPOSED, CONTROL, INELIGIBLE = 1, 0, -1


@dataclass(frozen=True)
class LikertScale:
    min_value: int = 1
    max_value: int = 7

    def __post_init__(self):
        for v in (self.min_value, self.max_value):
            if not float(v).is_integer():
                raise ValueError(f"Likert bounds must be integers, got {v!r}")
        if self.min_value >= self.max_value:
            raise ValueError("min_value must be below max_value")
        if self.min_value < 0:
            # (y - min) / max only stays inside [0, 1] for a non-negative floor
            raise ValueError("min_value must be >= 0")

    @property
    def width(self) -> int:
        return self.max_value - self.min_value

    def contains(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return (y >= self.min_value) & (y <= self.max_value)


def to_probability_scale(y, scale: LikertScale):
    """Map Likert values onto the modelling scale, ``(y - min) / max``.

    The denominator is the scale ceiling, so a 1-7 scale lands on ``[0, 6/7]``.
    Scalars return a float, array-likes an ndarray.
    """
    arr = np.asarray(y, dtype=float)
    if not np.all(scale.contains(arr)):
        raise OutOfScale(f"values outside [{scale.min_value}, {scale.max_value}]")
    out = (arr - scale.min_value) / scale.max_value
    return float(out) if out.ndim == 0 else out


def from_probability_scale(y_star, scale: LikertScale):
    """Inverse of :func:`to_probability_scale`; not clamped."""
    arr = np.asarray(y_star, dtype=float)
    out = arr * scale.max_value + scale.min_value
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CovariateSpec:
    name: str
    type: str = "numeric"

    def __post_init__(self):
        if self.type not in ("numeric", "categorical"):
            raise SchemaError(f"covariate {self.name!r}: unknown type {self.type!r}")


@dataclass(frozen=True)
class DatasetSchema:
    covariates: tuple[CovariateSpec, ...]
    treatments: tuple[str, ...]
    outcome: str
    scale: LikertScale = LikertScale()
    respondent_id: str | None = None

    def __post_init__(self):
        names = [c.name for c in self.covariates] + list(self.treatments) + [self.outcome]
        if self.respondent_id:
            names.append(self.respondent_id)
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise SchemaError(f"duplicate column names in schema: {dupes}")
        if not self.treatments:
            raise SchemaError("schema needs at least one treatment column")

    @property
    def categorical(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.covariates if c.type == "categorical")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DatasetSchema":
        covs = []
        for c in d.get("covariates", []):
            if isinstance(c, str):
                covs.append(CovariateSpec(c))
            else:
                covs.append(CovariateSpec(c["name"], c.get("type", "numeric")))
        outcome = d["outcome"]
        return cls(
            covariates=tuple(covs),
            treatments=tuple(d["treatments"]),
            outcome=outcome["name"],
            scale=LikertScale(int(outcome.get("min", 1)), int(outcome.get("max", 7))),
            respondent_id=d.get("respondent_id"),
        )

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "covariates": [{"name": c.name, "type": c.type} for c in self.covariates],
            "treatments": list(self.treatments),
            "outcome": {
                "name": self.outcome,
                "min": self.scale.min_value,
                "max": self.scale.max_value,
            },
        }
        if self.respondent_id:
            d["respondent_id"] = self.respondent_id
        return d

    @classmethod
    def load(cls, path: str | Path) -> "DatasetSchema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def dump(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ObservationTable:
    """Units x (covariates, binary treatments, bounded outcome).

    Outcomes are real values inside the Likert bounds: survey files hold
    integers, simulated data keeps the continuous clipped response.
    """

    covariates: pd.DataFrame
    treatments: np.ndarray
    outcome: np.ndarray
    scale: LikertScale
    treatment_names: tuple[str, ...]
    outcome_name: str = "Y"
    categorical: tuple[str, ...] = ()
    respondent_id: np.ndarray | None = None
    respondent_name: str | None = None

    def __post_init__(self):
        cov = self.covariates.reset_index(drop=True).copy()
        for name in cov.columns:
            if name in self.categorical:
                cov[name] = cov[name].astype(str).astype(object)
            else:
                cov[name] = pd.to_numeric(cov[name]).astype(float)
        treat = np.asarray(self.treatments)
        if treat.ndim == 1:
            treat = treat[:, None]
        out = np.asarray(self.outcome, dtype=float)
        n = len(out)
        if n == 0:
            raise EmptyDataset("dataset has no rows")
        if treat.shape != (n, len(self.treatment_names)) or len(cov) != n:
            raise SchemaError("covariates, treatments and outcome disagree on row count")
        if not np.isin(treat, (0, 1)).all():
            raise NonBinaryTreatment("treatment cells must be 0 or 1")
        if np.isnan(out).any():
            raise SchemaError("outcome has missing values")
        if not self.scale.contains(out).all():
            raise OutcomeOutOfScale(
                f"outcome outside [{self.scale.min_value}, {self.scale.max_value}]"
            )
        names = list(cov.columns) + list(self.treatment_names) + [self.outcome_name]
        if len(set(names)) != len(names):
            raise SchemaError("column names must be unique")
        if cov.isna().any().any():
            raise SchemaError("covariates have missing values")
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "treatments", _readonly(treat.astype(np.int8)))
        object.__setattr__(self, "outcome", _readonly(out))
        object.__setattr__(self, "treatment_names", tuple(self.treatment_names))
        object.__setattr__(self, "categorical", tuple(self.categorical))
        if self.respondent_id is not None:
            object.__setattr__(self, "respondent_id", _readonly(np.asarray(self.respondent_id)))

    @property
    def n(self) -> int:
        return len(self.outcome)

    @property
    def H(self) -> int:
        return self.treatments.shape[1]

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return tuple(self.covariates.columns)

    @property
    def y_star(self) -> np.ndarray:
        return to_probability_scale(self.outcome, self.scale)

    def features(self, treatments: np.ndarray | None = None) -> pd.DataFrame:
        """Covariates plus treatment columns, optionally with a substituted treatment matrix."""
        t = self.treatments if treatments is None else treatments
        frame = self.covariates.copy()
        for j, name in enumerate(self.treatment_names):
            frame[name] = t[:, j].astype(float)
        return frame

    def take(self, idx: np.ndarray) -> "ObservationTable":
        idx = np.asarray(idx)
        return ObservationTable(
            covariates=self.covariates.iloc[idx],
            treatments=self.treatments[idx],
            outcome=self.outcome[idx],
            scale=self.scale,
            treatment_names=self.treatment_names,
            outcome_name=self.outcome_name,
            categorical=self.categorical,
            respondent_id=None if self.respondent_id is None else self.respondent_id[idx],
            respondent_name=self.respondent_name,
        )

    def schema(self) -> DatasetSchema:
        return DatasetSchema(
            covariates=tuple(
                CovariateSpec(c, "categorical" if c in self.categorical else "numeric")
                for c in self.covariate_names
            ),
            treatments=self.treatment_names,
            outcome=self.outcome_name,
            scale=self.scale,
            respondent_id=self.respondent_name,
        )

    def equals(self, other: "ObservationTable") -> bool:
        same_ids = (self.respondent_id is None) == (other.respondent_id is None)
        if same_ids and self.respondent_id is not None:
            same_ids = list(map(str, self.respondent_id)) == list(map(str, other.respondent_id))
        return (
            same_ids
            and self.scale == other.scale
            and self.treatment_names == other.treatment_names
            and self.outcome_name == other.outcome_name
            and self.categorical == other.categorical
            and self.covariates.equals(other.covariates)
            and np.array_equal(self.treatments, other.treatments)
            and np.array_equal(self.outcome, other.outcome)
        )


def format_number(x) -> str:
    """Shortest round-trip text for a float; integral values drop the ``.0``."""
    x = float(x)
    if np.isnan(x):
        return ""
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def load_csv(path: str | Path, schema: DatasetSchema) -> ObservationTable:
    """Read and validate a dataset file described by ``schema``."""
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    if frame.empty:
        raise EmptyDataset(f"{path}: no data rows")
    needed = [c.name for c in schema.covariates] + list(schema.treatments) + [schema.outcome]
    if schema.respondent_id:
        needed.append(schema.respondent_id)
    for name in needed:
        if name not in frame.columns:
            raise MissingColumn(f"{path}: column {name!r} not found")

    def numeric(col: str, error=SchemaError) -> np.ndarray:
        raw = frame[col].str.strip()
        if (raw == "").any():
            raise error(f"column {col!r} has missing cells")
        try:
            return raw.astype(float).to_numpy()
        except ValueError as exc:
            raise error(f"column {col!r}: {exc}") from None

    cov = {}
    for c in schema.covariates:
        if c.type == "categorical":
            if (frame[c.name] == "").any():
                raise SchemaError(f"column {c.name!r} has missing cells")
            cov[c.name] = frame[c.name].to_numpy(dtype=object)
        else:
            cov[c.name] = numeric(c.name)
    treat = np.column_stack([numeric(t, NonBinaryTreatment) for t in schema.treatments])
    if not np.isin(treat, (0.0, 1.0)).all():
        bad = sorted({frame[t][i] for t in schema.treatments for i in
                      np.flatnonzero(~np.isin(numeric(t, NonBinaryTreatment), (0.0, 1.0)))})
        raise NonBinaryTreatment(f"{path}: non-binary treatment values {bad}")
    y = numeric(schema.outcome, OutcomeOutOfScale)
    if not schema.scale.contains(y).all():
        raise OutcomeOutOfScale(
            f"{path}: outcome outside [{schema.scale.min_value}, {schema.scale.max_value}]"
        )
    return ObservationTable(
        covariates=pd.DataFrame(cov, columns=[c.name for c in schema.covariates]),
        treatments=treat.astype(np.int8),
        outcome=y,
        scale=schema.scale,
        treatment_names=schema.treatments,
        outcome_name=schema.outcome,
        categorical=schema.categorical,
        respondent_id=None if not schema.respondent_id else frame[schema.respondent_id].to_numpy(),
        respondent_name=schema.respondent_id,
    )


def write_csv(table: ObservationTable, path: str | Path,
              extra: dict[str, np.ndarray] | None = None) -> None:
    """Write ``table`` so that :func:`load_csv` with ``table.schema()`` restores it."""
    extra = extra or {}
    header = []
    if table.respondent_name:
        header.append(table.respondent_name)
    header += list(table.covariate_names) + list(table.treatment_names) + [table.outcome_name]
    header += list(extra)
    cols = []
    if table.respondent_name:
        cols.append([str(v) for v in table.respondent_id])
    for name in table.covariate_names:
        if name in table.categorical:
            cols.append(list(table.covariates[name]))
        else:
            cols.append([format_number(v) for v in table.covariates[name]])
    for j in range(table.H):
        cols.append([str(int(v)) for v in table.treatments[:, j]])
    cols.append([format_number(v) for v in table.outcome])
    for values in extra.values():
        cols.append([format_number(v) for v in values])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        w.writerows(zip(*cols))


@dataclass(frozen=True, order=True)
class ScenarioSpec:
    """A non-empty set of treatment indices (0-based) switched jointly on vs off."""

    active: tuple[int, ...]

    def __post_init__(self):
        active = tuple(int(i) for i in self.active)
        if not active:
            raise ValueError("scenario needs at least one active treatment")
        if len(set(active)) != len(active):
            raise ValueError(f"duplicate treatment indices in {active}")
        object.__setattr__(self, "active", active)

    def __len__(self) -> int:
        return len(self.active)

    def validate(self, H: int) -> None:
        if any(i < 0 or i >= H for i in self.active):
            raise ValueError(f"scenario {self.active} invalid for {H} treatments")

    def label(self, names: Sequence[str]) -> str:
        return "+".join(names[i] for i in self.active)

    @classmethod
    def parse(cls, text: str, names: Sequence[str]) -> "ScenarioSpec":
        """Parse ``"LM+BC"`` / ``"LM,BC"`` or 1-based indices like ``"1+2"``."""
        parts = [p.strip() for p in text.replace(",", "+").split("+") if p.strip()]
        idx = []
        for p in parts:
            if p in names:
                idx.append(list(names).index(p))
            elif p.isdigit() and 1 <= int(p) <= len(names):
                idx.append(int(p) - 1)
            else:
                raise ValueError(f"unknown treatment {p!r}; expected one of {list(names)}")
        return cls(tuple(idx))


def enumerate_scenarios(H: int) -> list[ScenarioSpec]:
    """All non-empty treatment subsets, by size then lexicographically."""
    if H < 1:
        raise ValueError("H must be at least 1")
    return [
        ScenarioSpec(combo)
        for k in range(1, H + 1)
        for combo in itertools.combinations(range(H), k)
    ]


@dataclass(frozen=True, eq=False)
class ExposureAssignment:
    labels: np.ndarray
    scenario: ScenarioSpec

    @property
    def exposed(self) -> np.ndarray:
        return self.labels == EXPOSED

    @property
    def control(self) -> np.ndarray:
        return self.labels == CONTROL

    @property
    def eligible(self) -> np.ndarray:
        return self.labels != INELIGIBLE

    @property
    def n_exposed(self) -> int:
        return int(self.exposed.sum())

    @property
    def n_control(self) -> int:
        return int(self.control.sum())

    @property
    def n_ineligible(self) -> int:
        return int((~self.eligible).sum())

    def counts(self) -> dict[str, int]:
        return {"exposed": self.n_exposed, "control": self.n_control,
                "ineligible": self.n_ineligible}


def exposure_labels(treatments: np.ndarray, scenario: ScenarioSpec) -> np.ndarray:
    sub = np.asarray(treatments)[:, list(scenario.active)]
    labels = np.full(len(sub), INELIGIBLE, dtype=np.int8)
    labels[sub.all(axis=1)] = EXPOSED
    labels[(sub == 0).all(axis=1)] = CONTROL
    return labels


def composite_exposure(table: ObservationTable, scenario: ScenarioSpec,
                       require_both: bool = True) -> ExposureAssignment:
    """Label units exposed (all active = 1), control (all active = 0) or ineligible."""
    scenario.validate(table.H)
    labels = exposure_labels(table.treatments, scenario)
    labels.setflags(write=False)
    out = ExposureAssignment(labels, scenario)
    if require_both and (out.n_exposed == 0 or out.n_control == 0):
        raise DegenerateScenario(
            f"scenario {scenario.label(table.treatment_names)}: "
            f"{out.n_exposed} exposed, {out.n_control} control units"
        )
    return out


def counterfactual_treatments(table: ObservationTable, scenario: ScenarioSpec,
                              value: int) -> np.ndarray:
    """Treatment matrix with the active columns forced to ``value``, others as observed."""
    t = np.array(table.treatments, copy=True)
    t[:, list(scenario.active)] = value
    return t
