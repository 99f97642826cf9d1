"""Data structures for the two-study setting and their file ingestion.

The index study contributes individual patient data (IPD): a covariate
matrix, a binary treatment indicator and an outcome per subject.  The
competitor study contributes only published aggregates: covariate means,
a relative-effect point estimate and its variance.  Covariates are
identified by name at the file boundary and by column index internally.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np

from .errors import DataValidationError

TREATMENT_COLUMN = "treatment"
OUTCOME_COLUMN = "outcome"


def _frozen_array(values, dtype=np.float64) -> np.ndarray:
    out = np.array(values, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class IndexPatientData:
    """Per-subject data for the index (A vs C) trial.

    Attributes:
        covariates: (n, k) matrix of baseline covariates.
        treatment: length-n vector with entries in {0, 1}; 1 = active treatment.
        outcome: length-n outcome vector.
        effect_modifier_columns: ordered, duplicate-free column indices of the
            covariates treated as marginal effect modifiers.
        covariate_names: column names, used to reconcile against aggregate
            summaries at the file boundary.
    """

    covariates: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    effect_modifier_columns: tuple[int, ...]
    covariate_names: tuple[str, ...]

    def __post_init__(self):
        cov = _frozen_array(self.covariates)
        trt = _frozen_array(self.treatment, dtype=np.int64)
        out = _frozen_array(self.outcome)
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "treatment", trt)
        object.__setattr__(self, "outcome", out)
        object.__setattr__(
            self, "effect_modifier_columns", tuple(int(j) for j in self.effect_modifier_columns)
        )
        object.__setattr__(self, "covariate_names", tuple(str(c) for c in self.covariate_names))

        if cov.ndim != 2:
            raise DataValidationError("covariates must be a 2-d matrix")
        n, k = cov.shape
        if n < 2:
            raise DataValidationError(f"need at least 2 subjects, got {n}")
        if k < 1:
            raise DataValidationError("need at least 1 covariate column")
        if trt.shape != (n,) or out.shape != (n,):
            raise DataValidationError("treatment/outcome length must match the covariate rows")
        if len(self.covariate_names) != k:
            raise DataValidationError("covariate_names length must match the covariate columns")
        if not np.all(np.isfinite(cov)):
            raise DataValidationError("covariates contain non-finite entries")
        if not np.all(np.isfinite(out)):
            raise DataValidationError("outcome contains non-finite entries")
        if not np.all((trt == 0) | (trt == 1)):
            raise DataValidationError("treatment entries must be 0 or 1")
        if not np.any(trt == 1):
            raise DataValidationError("treated arm empty: no subject with treatment=1")
        if not np.any(trt == 0):
            raise DataValidationError("comparator arm empty: no subject with treatment=0")

        ems = self.effect_modifier_columns
        if len(ems) == 0:
            raise DataValidationError("effect_modifier_columns must not be empty")
        if len(set(ems)) != len(ems):
            raise DataValidationError("effect_modifier_columns contains duplicates")
        if any(j < 0 or j >= k for j in ems):
            raise DataValidationError("effect_modifier_columns index out of range")

    @property
    def n_subjects(self) -> int:
        return self.covariates.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    @property
    def effect_modifier_names(self) -> tuple[str, ...]:
        return tuple(self.covariate_names[j] for j in self.effect_modifier_columns)

    def effect_modifiers(self) -> np.ndarray:
        """The (n, p) submatrix of effect-modifier columns, in declared order."""
        return self.covariates[:, list(self.effect_modifier_columns)]


@dataclass(frozen=True)
class AggregateSummary:
    """Published aggregates for the competitor (B vs C) trial.

    ``covariate_means`` maps covariate names to published means;
    ``effect_estimate`` and ``effect_variance`` describe the B vs C
    relative effect on the linear-predictor scale.
    """

    covariate_means: Mapping[str, float]
    effect_estimate: float
    effect_variance: float
    sample_size: int | None = None

    def __post_init__(self):
        means = {str(k): float(v) for k, v in dict(self.covariate_means).items()}
        object.__setattr__(self, "covariate_means", MappingProxyType(means))
        object.__setattr__(self, "effect_estimate", float(self.effect_estimate))
        object.__setattr__(self, "effect_variance", float(self.effect_variance))
        for name, value in means.items():
            if not np.isfinite(value):
                raise DataValidationError(f"covariate mean for {name!r} is not finite")
        if not np.isfinite(self.effect_estimate):
            raise DataValidationError("effect_estimate is not finite")
        if not np.isfinite(self.effect_variance) or self.effect_variance < 0:
            raise DataValidationError("effect_variance must be a non-negative real")
        if self.sample_size is not None:
            object.__setattr__(self, "sample_size", int(self.sample_size))
            if self.sample_size <= 0:
                raise DataValidationError("sample_size must be positive")


def _parse_cell(raw: str, line_no: int, column: str) -> float:
    text = raw.strip()
    if text == "":
        raise DataValidationError(f"missing value at line {line_no}, column {column!r}")
    try:
        return float(text)
    except ValueError:
        raise DataValidationError(
            f"non-numeric value {raw!r} at line {line_no}, column {column!r}"
        ) from None


def load_ipd(path, effect_modifier_names: Sequence[str]) -> IndexPatientData:
    """Load index-trial IPD from a CSV file.

    The file must have a header row containing ``treatment``, ``outcome``
    and at least one covariate column; every other column is taken as a
    covariate, in file order.  ``effect_modifier_names`` selects the
    covariate subset used for trial-assignment weighting.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataValidationError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for required in (TREATMENT_COLUMN, OUTCOME_COLUMN):
            if required not in header:
                raise DataValidationError(f"{path}: missing required column {required!r}")
        if len(set(header)) != len(header):
            raise DataValidationError(f"{path}: duplicate column names in header")
        cov_names = [h for h in header if h not in (TREATMENT_COLUMN, OUTCOME_COLUMN)]
        if not cov_names:
            raise DataValidationError(f"{path}: no covariate columns found")

        col_of = {name: i for i, name in enumerate(header)}
        rows: list[list[float]] = []
        treatment: list[int] = []
        outcome: list[float] = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(cell.strip() == "" for cell in row):
                continue
            if len(row) != len(header):
                raise DataValidationError(
                    f"{path}: line {line_no} has {len(row)} fields, expected {len(header)}"
                )
            t_val = _parse_cell(row[col_of[TREATMENT_COLUMN]], line_no, TREATMENT_COLUMN)
            if t_val not in (0.0, 1.0):
                raise DataValidationError(
                    f"treatment must be 0 or 1 at line {line_no}, got {t_val!r}"
                )
            treatment.append(int(t_val))
            outcome.append(_parse_cell(row[col_of[OUTCOME_COLUMN]], line_no, OUTCOME_COLUMN))
            rows.append([_parse_cell(row[col_of[c]], line_no, c) for c in cov_names])

    if not rows:
        raise DataValidationError(f"{path}: no data rows")

    em_names = list(effect_modifier_names)
    if not em_names:
        raise DataValidationError("effect_modifier_names must not be empty")
    missing = [name for name in em_names if name not in cov_names]
    if missing:
        raise DataValidationError(f"effect modifier(s) not among covariate columns: {missing}")
    em_columns = tuple(cov_names.index(name) for name in em_names)

    return IndexPatientData(
        covariates=np.array(rows, dtype=np.float64),
        treatment=np.array(treatment, dtype=np.int64),
        outcome=np.array(outcome, dtype=np.float64),
        effect_modifier_columns=em_columns,
        covariate_names=tuple(cov_names),
    )


def save_ipd(ipd: IndexPatientData, path) -> None:
    """Write IPD back to CSV; numeric round trip is exact (repr formatting)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([TREATMENT_COLUMN, OUTCOME_COLUMN, *ipd.covariate_names])
        for i in range(ipd.n_subjects):
            writer.writerow(
                [
                    int(ipd.treatment[i]),
                    repr(float(ipd.outcome[i])),
                    *(repr(float(v)) for v in ipd.covariates[i]),
                ]
            )


def csv_covariate_names(path) -> tuple[str, ...]:
    """Covariate column names from an IPD CSV header, in file order."""
    with open(path, newline="", encoding="utf-8") as fh:
        try:
            header = next(csv.reader(fh))
        except StopIteration:
            raise DataValidationError(f"{path}: empty file") from None
    header = [h.strip() for h in header]
    names = tuple(h for h in header if h not in (TREATMENT_COLUMN, OUTCOME_COLUMN))
    if not names:
        raise DataValidationError(f"{path}: no covariate columns found")
    return names


def load_ald(path) -> AggregateSummary:
    """Load competitor-trial aggregates from a JSON document.

    Required fields: ``covariate_means`` (name -> value map),
    ``effect_estimate``, ``effect_variance``; optional ``sample_size``.
    """
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataValidationError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise DataValidationError(f"{path}: top-level JSON value must be an object")
    for required in ("covariate_means", "effect_estimate", "effect_variance"):
        if required not in doc:
            raise DataValidationError(f"{path}: missing required field {required!r}")
    means = doc["covariate_means"]
    if not isinstance(means, dict) or not means:
        raise DataValidationError(f"{path}: covariate_means must be a non-empty object")
    try:
        return AggregateSummary(
            covariate_means={k: float(v) for k, v in means.items()},
            effect_estimate=float(doc["effect_estimate"]),
            effect_variance=float(doc["effect_variance"]),
            sample_size=doc.get("sample_size"),
        )
    except (TypeError, ValueError) as exc:
        raise DataValidationError(f"{path}: {exc}") from None


def center_covariates(ipd: IndexPatientData, summary: AggregateSummary) -> np.ndarray:
    """Center the effect-modifier columns on the competitor means.

    Returns the (n, p) matrix with column j equal to the j-th effect
    modifier minus the competitor mean published under the same name.
    """
    centered = np.empty((ipd.n_subjects, len(ipd.effect_modifier_columns)), dtype=np.float64)
    for out_col, j in enumerate(ipd.effect_modifier_columns):
        name = ipd.covariate_names[j]
        if name not in summary.covariate_means:
            raise DataValidationError(
                f"effect modifier {name!r} has no matching mean in the aggregate summary"
            )
        centered[:, out_col] = ipd.covariates[:, j] - summary.covariate_means[name]
    return centered
