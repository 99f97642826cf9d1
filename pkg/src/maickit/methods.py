"""The four analysis methods and the full-data estimation pipeline."""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .data_model import AggregateSummary, IndexPatientData
from .estimation import weighted_outcome_regression
from .maic_weights import (
    TrialWeightFit,
    TrialWeightOptions,
    WeightVector,
    ess,
    fit_trial_weights,
    truncate_weights,
)
from .propensity import PropensityFit, PropensityOptions, combine_weights, fit_propensity


class Method(enum.Enum):
    """Weighting method for the index-trial analysis."""

    MAIC = "MAIC"
    TWO_STAGE_MAIC = "2SMAIC"
    TRUNCATED_MAIC = "T-MAIC"
    TRUNCATED_TWO_STAGE_MAIC = "T-2SMAIC"

    @property
    def two_stage(self) -> bool:
        return self in (Method.TWO_STAGE_MAIC, Method.TRUNCATED_TWO_STAGE_MAIC)

    @property
    def truncated(self) -> bool:
        return self in (Method.TRUNCATED_MAIC, Method.TRUNCATED_TWO_STAGE_MAIC)

    @classmethod
    def parse(cls, name: str) -> "Method":
        for member in cls:
            if member.value == name:
                return member
        raise ValueError(f"unknown method {name!r}; expected one of "
                         f"{[m.value for m in cls]}")


ALL_METHODS = tuple(Method)


@dataclass(frozen=True)
class PlugInResult:
    """Full-data (no resampling) estimate with stage-by-stage diagnostics."""

    method: Method
    delta_10: float
    trial_fit: TrialWeightFit
    propensity_fit: PropensityFit | None
    final_weights: WeightVector
    ess_trial: float
    ess_combined: float | None
    ess_final: float


def plug_in_estimate(
    ipd: IndexPatientData,
    summary: AggregateSummary,
    method: Method,
    truncation_percentile: float = 95.0,
    trial_opts: TrialWeightOptions | None = None,
    propensity_opts: PropensityOptions | None = None,
) -> PlugInResult:
    """Run the full method pipeline on the original sample.

    center -> fit trial weights -> [fit propensity -> combine]
    -> [truncate] -> weighted regression of outcome on treatment.
    """
    trial_fit = fit_trial_weights(ipd, summary, trial_opts)
    weights = trial_fit.weights
    propensity_fit = None
    ess_combined = None
    if method.two_stage:
        propensity_fit = fit_propensity(ipd, propensity_opts)
        weights = combine_weights(weights, propensity_fit, ipd.treatment)
        ess_combined = ess(weights)
    if method.truncated:
        weights = truncate_weights(weights, truncation_percentile)
    delta_10 = weighted_outcome_regression(ipd, weights)
    return PlugInResult(
        method=method,
        delta_10=delta_10,
        trial_fit=trial_fit,
        propensity_fit=propensity_fit,
        final_weights=weights,
        ess_trial=trial_fit.ess,
        ess_combined=ess_combined,
        ess_final=ess(weights),
    )
