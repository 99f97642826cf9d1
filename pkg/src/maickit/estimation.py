"""Marginal effect estimation and the anchored indirect comparison.

The within-trial A vs C effect comes from a weighted regression of outcome
on treatment (equivalently, the difference of weighted arm means under the
identity link).  The anchored A vs B contrast subtracts the published
B vs C estimate; the two variances are summed because the studies are
independent, and Wald intervals use normal quantiles.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .data_model import IndexPatientData
from .errors import DataValidationError
from .maic_weights import WeightVector


class EffectScale(enum.Enum):
    MEAN_DIFFERENCE = "mean_difference"
    LOG_ODDS_RATIO = "log_odds_ratio"


@dataclass(frozen=True)
class EffectEstimate:
    point: float
    variance: float
    ci_lower: float
    ci_upper: float
    scale: EffectScale
    level: float

    def __post_init__(self):
        if self.variance < 0:
            raise DataValidationError("variance must be non-negative")
        if not 0 < self.level < 1:
            raise DataValidationError("confidence level must lie in (0, 1)")
        if not (self.ci_lower <= self.point <= self.ci_upper):
            raise DataValidationError("confidence interval must bracket the point estimate")


def wald_interval(point: float, variance: float, level: float) -> tuple[float, float]:
    z = norm.ppf(0.5 * (1.0 + level))
    half = z * np.sqrt(variance)
    return float(point - half), float(point + half)


def make_effect_estimate(
    point: float, variance: float, scale: EffectScale, level: float = 0.95
) -> EffectEstimate:
    lo, hi = wald_interval(point, variance, level)
    return EffectEstimate(
        point=float(point), variance=float(variance), ci_lower=lo, ci_upper=hi,
        scale=scale, level=level,
    )


def weighted_marginal_mean(outcomes: np.ndarray, weights: np.ndarray) -> float:
    """Weighted average of observed outcomes within one arm."""
    y = np.asarray(outcomes, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if y.size == 0:
        raise DataValidationError("cannot average an empty arm")
    if y.shape != w.shape:
        raise DataValidationError("outcomes and weights lengths differ")
    return float((y * w).sum() / w.sum())


def marginal_effect(mu1: float, mu0: float, scale: EffectScale) -> float:
    """Difference of linear predictions under the requested link."""
    if scale is EffectScale.MEAN_DIFFERENCE:
        return float(mu1 - mu0)
    if scale is EffectScale.LOG_ODDS_RATIO:
        for mu in (mu1, mu0):
            if not 0.0 < mu < 1.0:
                raise DataValidationError(
                    f"log-odds effects need means strictly inside (0, 1), got {mu}"
                )
        return float(np.log(mu1 / (1.0 - mu1)) - np.log(mu0 / (1.0 - mu0)))
    raise ValueError(f"unknown effect scale {scale!r}")


def weighted_outcome_regression(ipd: IndexPatientData, weights: WeightVector) -> float:
    """Treatment coefficient of the weighted regression of outcome on treatment.

    The model has an intercept and the binary treatment indicator only, so
    it is saturated: the coefficient equals the difference of the per-arm
    weighted outcome means.
    """
    w = weights.values
    t = ipd.treatment.astype(np.float64)
    y = ipd.outcome
    if w.size != t.size:
        raise DataValidationError("weights length must match the number of subjects")
    if not np.any(t == 1) or not np.any(t == 0):
        raise DataValidationError("both treatment arms must be non-empty")
    # Weighted least squares on the design (1, t): 2x2 normal equations.
    sw = w.sum()
    swt = (w * t).sum()
    swy = (w * y).sum()
    swty = (w * t * y).sum()
    lhs = np.array([[sw, swt], [swt, swt]])
    rhs = np.array([swy, swty])
    coef = np.linalg.solve(lhs, rhs)
    return float(coef[1])


def anchored_comparison(
    delta_10: EffectEstimate, delta_20_est: float, delta_20_var: float, level: float = 0.95
) -> EffectEstimate:
    """A vs B contrast through the common comparator.

    Point estimates subtract; the independent within-study variances add;
    the interval is Wald-type on the combined variance.
    """
    if delta_20_var < 0:
        raise DataValidationError("competitor effect variance must be non-negative")
    point = delta_10.point - float(delta_20_est)
    variance = delta_10.variance + float(delta_20_var)
    return make_effect_estimate(point, variance, delta_10.scale, level)
