"""Ordinary nonparametric bootstrap of the within-trial marginal effect.

Only the index-trial IPD is resampled; the competitor aggregates are fixed.
Every resample re-estimates the trial-assignment model (and, for two-stage
methods, the treatment-assignment model).  Resamples are solved as one
vectorized batch, so results depend only on (inputs, seed), never on
worker scheduling.  Resamples that fail (lost arm, infeasible balance,
separation, non-convergence) are discarded and counted.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from ._engine import solve_logistic_batch, solve_trial_batch
from .data_model import AggregateSummary, IndexPatientData, center_covariates
from .errors import TooManyFailures
from .methods import Method


@dataclass(frozen=True)
class BootstrapResult:
    point: float
    se: float
    replicates: np.ndarray
    n_failed: int
    requested: int


@dataclass(frozen=True)
class BootstrapOptions:
    max_failure_rate: float = 0.05
    truncation_percentile: float = 95.0
    grad_tol: float = 1e-10
    score_tol: float = 1e-10
    max_iter: int = 100
    divergence_bound: float = 1e4
    separation_bound: float = 50.0


def draw_resample_indices(n: int, B: int, seed) -> np.ndarray:
    """(B, n) subject indices drawn with replacement from one seeded stream.

    ``seed`` may be an integer or a ``numpy.random.SeedSequence``.  Drawing
    the whole block up front keeps the bootstrap a pure function of
    (inputs, seed) regardless of how the lanes are later executed.
    """
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng = np.random.Generator(np.random.PCG64(seq))
    return rng.integers(0, n, size=(B, n))


def _arm_difference(w: np.ndarray, t: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-lane difference of weighted arm means (treated minus comparator)."""
    wt = w * t
    wc = w - wt
    with np.errstate(invalid="ignore", divide="ignore"):
        return (wt * y).sum(axis=1) / wt.sum(axis=1) - (wc * y).sum(axis=1) / wc.sum(axis=1)


def _truncate_rows(w: np.ndarray, percentile: float) -> np.ndarray:
    cutoffs = np.percentile(w, percentile, axis=1, method="linear")
    return np.minimum(w, cutoffs[:, None])


def estimate_for_indices(
    ipd: IndexPatientData,
    summary: AggregateSummary,
    methods: Iterable[Method],
    indices: np.ndarray,
    opts: BootstrapOptions | None = None,
) -> Mapping[Method, tuple[np.ndarray, np.ndarray]]:
    """Run the method pipelines on explicit resample index rows.

    Returns, per method, the lane estimates and a boolean mask of lanes
    that produced a valid estimate.  Exposed separately from
    ``bootstrap_effect`` so callers (and tests) can force specific
    resamples, e.g. the identity permutation.
    """
    opts = opts or BootstrapOptions()
    methods = tuple(dict.fromkeys(methods))
    indices = np.asarray(indices)
    z_star = center_covariates(ipd, summary)

    zb = z_star[indices]
    tb = ipd.treatment[indices].astype(np.float64)
    yb = ipd.outcome[indices]
    n = ipd.n_subjects
    arm_ok = (tb.sum(axis=1) > 0) & (tb.sum(axis=1) < n)

    _, w_trial, trial_ok = solve_trial_batch(
        zb,
        grad_tol=opts.grad_tol,
        max_iter=opts.max_iter,
        divergence_bound=opts.divergence_bound,
    )

    w_combined = None
    prop_ok = None
    if any(m.two_stage for m in methods):
        design = np.column_stack([np.ones(n), ipd.covariates])
        Xb = design[indices]
        _, probs, prop_ok = solve_logistic_batch(
            Xb,
            tb,
            score_tol=opts.score_tol,
            max_iter=opts.max_iter,
            separation_bound=opts.separation_bound,
        )
        with np.errstate(invalid="ignore", divide="ignore"):
            w_combined = w_trial * np.where(tb == 1, 1.0 / probs, 1.0 / (1.0 - probs))

    out: dict[Method, tuple[np.ndarray, np.ndarray]] = {}
    for method in methods:
        if method.two_stage:
            w = w_combined
            ok = trial_ok & prop_ok & arm_ok
        else:
            w = w_trial
            ok = trial_ok & arm_ok
        if method.truncated:
            w = _truncate_rows(w, opts.truncation_percentile)
        estimates = _arm_difference(w, tb, yb)
        ok = ok & np.isfinite(estimates)
        out[method] = (estimates, ok)
    return out


def bootstrap_effect(
    ipd: IndexPatientData,
    summary: AggregateSummary,
    method: Method,
    B: int,
    seed,
    opts: BootstrapOptions | None = None,
) -> BootstrapResult:
    """Bootstrap the A vs C marginal effect under the given method.

    Draws B resamples of the IPD with replacement, reruns the full weight
    pipeline on each, and summarizes the replicate estimates (mean and
    standard deviation with denominator length-1).  Raises
    ``TooManyFailures`` when the discarded fraction exceeds
    ``opts.max_failure_rate``.
    """
    opts = opts or BootstrapOptions()
    if B < 2:
        raise ValueError("bootstrap needs at least 2 resamples")
    indices = draw_resample_indices(ipd.n_subjects, B, seed)
    estimates, ok = estimate_for_indices(ipd, summary, [method], indices, opts)[method]
    n_failed = int(B - ok.sum())
    if n_failed > opts.max_failure_rate * B:
        raise TooManyFailures(
            f"{n_failed} of {B} bootstrap resamples failed "
            f"(limit {opts.max_failure_rate:.0%}); overlap is likely pathological",
            n_failed=n_failed,
            requested=B,
        )
    replicates = estimates[ok]
    if replicates.size < 2:
        raise TooManyFailures(
            "fewer than 2 usable bootstrap replicates", n_failed=n_failed, requested=B
        )
    return BootstrapResult(
        point=float(replicates.mean()),
        se=float(replicates.std(ddof=1)),
        replicates=replicates,
        n_failed=n_failed,
        requested=B,
    )
