"""Trial-assignment odds weights by method of moments.

The weights solve a convex problem: minimizing ``Q(a) = sum_i exp(zs_i a)``
over the coefficient vector ``a``, where ``zs`` holds the effect-modifier
values centered on the competitor-study means.  At the minimum the weighted
effect-modifier means equal the published targets exactly; the gradient of
``Q`` is the unnormalized balance residual, which makes it the natural
convergence criterion.  Only the coefficients are estimated; the logistic
intercept merely rescales the weights, which are relative.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .data_model import AggregateSummary, IndexPatientData, center_covariates
from .errors import DataValidationError, InfeasibleBalance, NonConvergence


class WeightKind(enum.Enum):
    TRIAL_ODDS = "trial_odds"
    COMBINED = "combined"
    TRUNCATED_TRIAL_ODDS = "truncated_trial_odds"
    TRUNCATED_COMBINED = "truncated_combined"


_TRUNCATED_OF = {
    WeightKind.TRIAL_ODDS: WeightKind.TRUNCATED_TRIAL_ODDS,
    WeightKind.COMBINED: WeightKind.TRUNCATED_COMBINED,
    WeightKind.TRUNCATED_TRIAL_ODDS: WeightKind.TRUNCATED_TRIAL_ODDS,
    WeightKind.TRUNCATED_COMBINED: WeightKind.TRUNCATED_COMBINED,
}


@dataclass(frozen=True)
class WeightVector:
    """Positive per-subject weights tagged by provenance.

    Weights are relative: any positive rescaling is equivalent downstream.
    """

    values: np.ndarray
    kind: WeightKind

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if vals.ndim != 1 or vals.size == 0:
            raise DataValidationError("weights must form a non-empty 1-d vector")
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            raise DataValidationError("weights must be finite and strictly positive")

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class ColumnFeasibility:
    column: int
    feasible: bool
    direction: str | None  # "all_below_target" | "all_above_target" | None


@dataclass(frozen=True)
class FeasibilityReport:
    columns: tuple[ColumnFeasibility, ...]

    @property
    def feasible(self) -> bool:
        return all(c.feasible for c in self.columns)

    def describe(self) -> str:
        lines = []
        for col in self.columns:
            if col.feasible:
                lines.append(f"column {col.column}: feasible")
            else:
                what = "below" if col.direction == "all_below_target" else "above"
                lines.append(f"column {col.column}: infeasible, all values {what} target")
        return "\n".join(lines)


@dataclass(frozen=True)
class TrialWeightOptions:
    """Solver settings for the method-of-moments fit."""

    grad_tol: float = 1e-10
    balance_tol: float = 1e-8
    max_iter: int = 500
    start: np.ndarray | None = None
    divergence_bound: float = 1e4


@dataclass(frozen=True)
class TrialWeightFit:
    alpha1: np.ndarray
    weights: WeightVector
    converged: bool
    iterations: int
    final_gradient_norm: float
    ess: float


def objective_q(alpha1: np.ndarray, z_star: np.ndarray) -> float:
    """Sum of exponentiated linear predictors; +inf signals overflow."""
    with np.errstate(over="ignore"):
        return float(np.exp(z_star @ np.asarray(alpha1, dtype=np.float64)).sum())


def gradient_q(alpha1: np.ndarray, z_star: np.ndarray) -> np.ndarray:
    """Analytic gradient of the objective: the unnormalized balance residual."""
    with np.errstate(over="ignore"):
        w = np.exp(z_star @ np.asarray(alpha1, dtype=np.float64))
        return w @ z_star


def _hessian_q(alpha1: np.ndarray, z_star: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        w = np.exp(z_star @ alpha1)
        return (z_star * w[:, None]).T @ z_star


def check_feasibility(z_star: np.ndarray) -> FeasibilityReport:
    """Flag centered columns whose values all lie strictly on one side of zero.

    A column containing an exact zero attains the target and is feasible.
    """
    z_star = np.asarray(z_star, dtype=np.float64)
    cols = []
    for j in range(z_star.shape[1]):
        col = z_star[:, j]
        if np.all(col > 0):
            cols.append(ColumnFeasibility(j, False, "all_above_target"))
        elif np.all(col < 0):
            cols.append(ColumnFeasibility(j, False, "all_below_target"))
        else:
            cols.append(ColumnFeasibility(j, True, None))
    return FeasibilityReport(tuple(cols))


class _Diverged(Exception):
    pass


def fit_balancing_coefficients(
    z_star: np.ndarray, opts: TrialWeightOptions | None = None
) -> tuple[np.ndarray, int, float]:
    """Minimize the objective over the coefficient vector.

    Returns (alpha1, iterations, final_gradient_norm).  BFGS with the
    analytic gradient does the bulk of the work; a few guarded Newton
    steps polish the solution when the line search stalls short of the
    gradient tolerance.
    """
    opts = opts or TrialWeightOptions()
    z_star = np.asarray(z_star, dtype=np.float64)
    n, p = z_star.shape

    report = check_feasibility(z_star)
    if not report.feasible:
        raise InfeasibleBalance(
            "no feasible balancing solution exists:\n" + report.describe(), report=report
        )

    x0 = np.zeros(p) if opts.start is None else np.asarray(opts.start, dtype=np.float64)

    def _callback(xk):
        if np.max(np.abs(xk)) > opts.divergence_bound:
            raise _Diverged

    try:
        res = optimize.minimize(
            objective_q,
            x0,
            args=(z_star,),
            jac=gradient_q,
            method="BFGS",
            callback=_callback,
            options={"gtol": opts.grad_tol, "maxiter": opts.max_iter},
        )
    except _Diverged:
        raise InfeasibleBalance(
            "balancing coefficients diverged during optimization "
            "(near-separation: a covariate barely straddles its target)",
            report=report,
        ) from None

    alpha = np.asarray(res.x, dtype=np.float64)
    iterations = int(res.nit)
    grad_norm = float(np.max(np.abs(gradient_q(alpha, z_star))))

    # Newton polish: the BFGS line search can stop on precision loss a few
    # orders of magnitude short of gtol; Q is convex so full Newton steps
    # with backtracking close the gap in a handful of iterations.
    polish = 0
    while grad_norm > opts.grad_tol and polish < 50:
        if np.max(np.abs(alpha)) > opts.divergence_bound:
            raise InfeasibleBalance(
                "balancing coefficients diverged during optimization", report=report
            )
        grad = gradient_q(alpha, z_star)
        try:
            step = np.linalg.solve(_hessian_q(alpha, z_star), grad)
        except np.linalg.LinAlgError:
            break
        q_old = objective_q(alpha, z_star)
        # Allow float-noise-level increases: near the optimum the step can
        # move Q by less than one ULP and a strict descent test would stall.
        slack = 1e-12 * abs(q_old)
        scale = 1.0
        for _ in range(60):
            candidate = alpha - scale * step
            q_new = objective_q(candidate, z_star)
            if np.isfinite(q_new) and q_new <= q_old + slack:
                break
            scale *= 0.5
        else:
            break
        alpha = alpha - scale * step
        grad_norm = float(np.max(np.abs(gradient_q(alpha, z_star))))
        polish += 1
        iterations += 1

    if grad_norm > opts.grad_tol:
        raise NonConvergence(
            f"balancing solver stopped with gradient norm {grad_norm:.3e} "
            f"> tolerance {opts.grad_tol:.1e}"
        )
    return alpha, iterations, grad_norm


def fit_trial_weights(
    ipd: IndexPatientData,
    summary: AggregateSummary,
    opts: TrialWeightOptions | None = None,
) -> TrialWeightFit:
    """Estimate trial-assignment odds weights for the index trial.

    Centers the effect modifiers on the competitor means, solves the
    method-of-moments problem, and returns weights ``exp(zs_i a)`` whose
    weighted effect-modifier means hit the published targets within
    ``balance_tol``.
    """
    opts = opts or TrialWeightOptions()
    z_star = center_covariates(ipd, summary)
    alpha, iterations, grad_norm = fit_balancing_coefficients(z_star, opts)

    with np.errstate(over="ignore"):
        values = np.exp(z_star @ alpha)
    if not np.all(np.isfinite(values)) or np.any(values <= 0):
        raise InfeasibleBalance(
            "weights overflowed or underflowed at the fitted solution "
            "(near-separation)",
            report=check_feasibility(z_star),
        )

    balance = np.abs(values @ z_star) / values.sum()
    if np.max(balance) > opts.balance_tol:
        raise NonConvergence(
            f"weighted effect-modifier means miss their targets by "
            f"{np.max(balance):.3e} > balance tolerance {opts.balance_tol:.1e}"
        )

    weights = WeightVector(values, WeightKind.TRIAL_ODDS)
    return TrialWeightFit(
        alpha1=alpha,
        weights=weights,
        converged=True,
        iterations=iterations,
        final_gradient_norm=grad_norm,
        ess=ess(weights),
    )


def ess(weights: WeightVector | np.ndarray) -> float:
    """Kish effective sample size, (sum w)^2 / sum w^2."""
    values = weights.values if isinstance(weights, WeightVector) else np.asarray(weights)
    return float(values.sum() ** 2 / (values**2).sum())


def truncate_weights(weights: WeightVector, percentile: float) -> WeightVector:
    """Cap weights above the given empirical percentile at that percentile.

    The cutoff uses linear interpolation between order statistics
    (position ``h = (n - 1) * percentile / 100 + 1``), the numpy default.
    """
    if not 0 < percentile <= 100:
        raise DataValidationError("percentile must lie in (0, 100]")
    cutoff = np.percentile(weights.values, percentile, method="linear")
    return WeightVector(np.minimum(weights.values, cutoff), _TRUNCATED_OF[weights.kind])
