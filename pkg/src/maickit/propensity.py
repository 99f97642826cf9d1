"""Treatment-assignment model for the index trial and weight combination.

The propensity score is fitted by plain maximum likelihood (Newton-Raphson
on the binomial log-likelihood, i.e. iteratively reweighted least squares)
with all covariates entering as main effects.  Inverse-probability-of-
treatment weights rescale the trial-assignment odds weights, yielding the
combined weights of the two-stage approach.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data_model import IndexPatientData
from .errors import NonConvergence, PerfectSeparation, RankDeficient
from .maic_weights import WeightKind, WeightVector


@dataclass(frozen=True)
class PropensityOptions:
    score_tol: float = 1e-10
    max_iter: int = 100
    separation_bound: float = 50.0


@dataclass(frozen=True)
class PropensityFit:
    beta0: float
    beta1: np.ndarray
    propensity_scores: np.ndarray
    converged: bool
    iterations: int


def _log_likelihood(eta: np.ndarray, t: np.ndarray) -> float:
    # log expit(eta) for t=1, log(1 - expit(eta)) for t=0, stably.
    return float(np.sum(t * eta - np.logaddexp(0.0, eta)))


def fit_propensity(
    ipd: IndexPatientData, opts: PropensityOptions | None = None
) -> PropensityFit:
    """Maximum-likelihood logistic regression of treatment on all covariates.

    Zero-variance covariate columns carry no information and are excluded
    from the fit (their coefficients are reported as 0); with no informative
    covariates the model reduces to intercept-only.  Raises
    ``PerfectSeparation`` when the likelihood is unbounded,
    ``RankDeficient`` when the remaining design is collinear and
    ``NonConvergence`` when the iteration cap is hit.
    """
    opts = opts or PropensityOptions()
    x = ipd.covariates
    t = ipd.treatment.astype(np.float64)
    n, k = x.shape

    keep = [j for j in range(k) if np.ptp(x[:, j]) > 0]
    design = np.column_stack([np.ones(n), x[:, keep]])
    d = design.shape[1]
    if np.linalg.matrix_rank(design) < d:
        raise RankDeficient("propensity design matrix is rank deficient")

    beta = np.zeros(d)
    eta = design @ beta
    loglik = _log_likelihood(eta, t)
    converged = False
    iterations = 0
    for iterations in range(1, opts.max_iter + 1):
        prob = expit(eta)
        score = design.T @ (t - prob)
        if np.max(np.abs(score)) <= opts.score_tol:
            converged = True
            iterations -= 1
            break
        info = (design * (prob * (1.0 - prob))[:, None]).T @ design
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise PerfectSeparation(
                "information matrix singular: fitted probabilities degenerate"
            ) from None
        # Tolerate float-noise decreases near the optimum, where the Newton
        # step moves the log-likelihood by less than one ULP.
        slack = 1e-12 * abs(loglik)
        scale = 1.0
        for _ in range(40):
            candidate = beta + scale * step
            eta_new = design @ candidate
            loglik_new = _log_likelihood(eta_new, t)
            if np.isfinite(loglik_new) and loglik_new >= loglik - slack:
                break
            scale *= 0.5
        beta = beta + scale * step
        eta = design @ beta
        loglik = _log_likelihood(eta, t)
        if np.max(np.abs(beta)) > opts.separation_bound:
            raise PerfectSeparation(
                "coefficients diverged: treatment groups are (quasi-)separated"
            )
    else:
        prob = expit(eta)
        score = design.T @ (t - prob)
        if np.max(np.abs(score)) <= opts.score_tol:
            converged = True
    if not converged:
        raise NonConvergence(
            f"propensity model did not meet the score tolerance in {opts.max_iter} iterations"
        )

    prob = expit(design @ beta)
    treated = t == 1
    if np.all(np.minimum(prob[treated], 1 - prob[treated]) < 1e-10) or np.all(
        np.minimum(prob[~treated], 1 - prob[~treated]) < 1e-10
    ):
        raise PerfectSeparation("fitted probabilities degenerate within an arm")
    if np.any(prob <= 0) or np.any(prob >= 1):
        raise PerfectSeparation("fitted probabilities reached the unit-interval boundary")

    beta1 = np.zeros(k)
    beta1[keep] = beta[1:]
    return PropensityFit(
        beta0=float(beta[0]),
        beta1=beta1,
        propensity_scores=prob,
        converged=True,
        iterations=iterations,
    )


def ipt_weights(fit: PropensityFit, treatment: np.ndarray) -> np.ndarray:
    """Inverse probability of the treatment actually assigned; always >= 1."""
    t = np.asarray(treatment)
    e = fit.propensity_scores
    return np.where(t == 1, 1.0 / e, 1.0 / (1.0 - e))


def combine_weights(
    trial_weights: WeightVector, fit: PropensityFit, treatment: np.ndarray
) -> WeightVector:
    """Rescale trial-odds weights by inverse-probability-of-treatment weights."""
    if trial_weights.kind is not WeightKind.TRIAL_ODDS:
        raise ValueError("combine_weights expects untruncated trial-odds weights")
    t = np.asarray(treatment)
    if len(trial_weights) != t.size or t.size != fit.propensity_scores.size:
        raise ValueError("weights, propensity scores and treatment lengths differ")
    combined = trial_weights.values * ipt_weights(fit, t)
    return WeightVector(combined, WeightKind.COMBINED)
