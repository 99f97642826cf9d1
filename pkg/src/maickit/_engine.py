"""Vectorized solvers that fit many small weight models at once.

Bootstrap inference refits the trial-assignment (and, for two-stage
methods, the treatment-assignment) model on every resample.  Fitting the
resamples one at a time dominates runtime, so these solvers run damped
Newton iterations across a whole batch of resampled datasets: arrays are
shaped (B, n, ...) with one lane per resample and every reduction is
lane-local.  Lanes that diverge, separate or lose a treatment arm are
flagged and frozen instead of aborting the batch.

Agreement with the single-instance reference fitters is covered by tests.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

_BACKTRACK_LIMIT = 50


def _sanitized_solve(hess: np.ndarray, grad: np.ndarray, active: np.ndarray):
    """Solve hess @ step = grad per lane, neutralizing inactive/singular lanes.

    Returns (step, newly_failed) where newly_failed marks active lanes whose
    systems were singular or non-finite.
    """
    B, p, _ = hess.shape
    eye = np.eye(p)
    safe_h = np.where(active[:, None, None], hess, eye)
    safe_g = np.where(active[:, None], grad, 0.0)
    bad = active & ~(
        np.all(np.isfinite(safe_h), axis=(1, 2)) & np.all(np.isfinite(safe_g), axis=1)
    )
    if bad.any():
        safe_h[bad] = eye
        safe_g[bad] = 0.0
    try:
        step = np.linalg.solve(safe_h, safe_g[..., None])[..., 0]
    except np.linalg.LinAlgError:
        dets = np.linalg.det(safe_h)
        singular = ~np.isfinite(dets) | (np.abs(dets) < 1e-300)
        bad |= active & singular
        safe_h[singular] = eye
        safe_g[singular] = 0.0
        step = np.linalg.solve(safe_h, safe_g[..., None])[..., 0]
    if bad.any():
        step[bad] = 0.0
    return step, bad


def solve_trial_batch(
    z: np.ndarray,
    grad_tol: float = 1e-10,
    max_iter: int = 80,
    divergence_bound: float = 1e4,
):
    """Fit the covariate-balancing coefficients for each lane of ``z``.

    ``z`` has shape (B, n, p): centered effect modifiers per resample.
    Returns ``(alpha, weights, ok)`` with shapes (B, p), (B, n), (B,).
    Lanes whose columns lie strictly on one side of zero are infeasible and
    reported with ``ok=False``, as are diverging or non-converged lanes.
    """
    z = np.asarray(z, dtype=np.float64)
    B, n, p = z.shape
    alpha = np.zeros((B, p))
    weights = np.ones((B, n))
    q = np.full(B, float(n))

    infeasible = ((z.min(axis=1) > 0) | (z.max(axis=1) < 0)).any(axis=1)
    ok = ~infeasible
    converged = np.zeros(B, dtype=bool)

    zT = z.transpose(0, 2, 1)
    for _ in range(max_iter):
        grad = np.matmul(weights[:, None, :], z)[:, 0, :]
        gnorm = np.abs(grad).max(axis=1)
        converged |= ok & (gnorm <= grad_tol)
        active = ok & ~converged
        if not active.any():
            break

        hess = np.matmul(zT, z * weights[..., None])
        step, failed = _sanitized_solve(hess, grad, active)
        if failed.any():
            ok &= ~failed
            active &= ~failed

        # Objective comparisons tolerate float-noise-level increases: near
        # the optimum the Newton step moves Q by less than one ULP and a
        # strict descent test would spuriously exhaust the backtracking.
        slack = 1e-12 * np.abs(q) + 1e-300
        scale = np.ones(B)
        candidate = alpha - step
        with np.errstate(over="ignore"):
            w_new = np.exp(np.matmul(z, candidate[..., None])[..., 0])
        q_new = w_new.sum(axis=1)
        bad = active & ~(np.isfinite(q_new) & (q_new <= q + slack))
        for _ in range(_BACKTRACK_LIMIT):
            if not bad.any():
                break
            idx = bad.nonzero()[0]
            scale[idx] *= 0.5
            cand_b = alpha[idx] - scale[idx, None] * step[idx]
            with np.errstate(over="ignore"):
                w_b = np.exp(np.matmul(z[idx], cand_b[..., None])[..., 0])
            q_b = w_b.sum(axis=1)
            candidate[idx] = cand_b
            w_new[idx] = w_b
            q_new[idx] = q_b
            bad[idx] = ~(np.isfinite(q_b) & (q_b <= q[idx] + slack[idx]))
        if bad.any():
            ok &= ~bad
            active &= ~bad

        alpha[active] = candidate[active]
        weights[active] = w_new[active]
        q[active] = q_new[active]

        diverged = active & (np.abs(alpha).max(axis=1) > divergence_bound)
        degenerate = active & ~(np.isfinite(q) & (q > 0))
        if (diverged | degenerate).any():
            ok &= ~(diverged | degenerate)

    ok &= converged
    return alpha, weights, ok


def solve_logistic_batch(
    X: np.ndarray,
    t: np.ndarray,
    score_tol: float = 1e-10,
    max_iter: int = 100,
    separation_bound: float = 50.0,
):
    """Maximum-likelihood logistic regression per lane.

    ``X`` has shape (B, n, d) (intercept column included); ``t`` is the
    (B, n) binary response.  Returns ``(beta, probs, ok)``; lanes with an
    empty response class, separation, a singular information matrix or no
    convergence come back with ``ok=False``.
    """
    X = np.asarray(X, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    B, n, d = X.shape
    beta = np.zeros((B, d))
    eta = np.zeros((B, n))
    loglik = np.full(B, -n * np.log(2.0))

    n_ones = t.sum(axis=1)
    ok = (n_ones > 0) & (n_ones < n)
    converged = np.zeros(B, dtype=bool)

    XT = X.transpose(0, 2, 1)
    for _ in range(max_iter):
        prob = expit(eta)
        score = np.matmul((t - prob)[:, None, :], X)[:, 0, :]
        converged |= ok & (np.abs(score).max(axis=1) <= score_tol)
        active = ok & ~converged
        if not active.any():
            break

        info = np.matmul(XT, X * (prob * (1.0 - prob))[..., None])
        step, failed = _sanitized_solve(info, score, active)
        if failed.any():
            ok &= ~failed
            active &= ~failed

        # Same float-noise slack as the trial solver, on the log-likelihood.
        slack = 1e-12 * np.abs(loglik) + 1e-300
        scale = np.ones(B)
        candidate = beta + step
        eta_new = np.matmul(X, candidate[..., None])[..., 0]
        ll_new = np.sum(t * eta_new - np.logaddexp(0.0, eta_new), axis=1)
        bad = active & ~(np.isfinite(ll_new) & (ll_new >= loglik - slack))
        for _ in range(_BACKTRACK_LIMIT):
            if not bad.any():
                break
            idx = bad.nonzero()[0]
            scale[idx] *= 0.5
            cand_b = beta[idx] + scale[idx, None] * step[idx]
            eta_b = np.matmul(X[idx], cand_b[..., None])[..., 0]
            ll_b = np.sum(t[idx] * eta_b - np.logaddexp(0.0, eta_b), axis=1)
            candidate[idx] = cand_b
            eta_new[idx] = eta_b
            ll_new[idx] = ll_b
            bad[idx] = ~(np.isfinite(ll_b) & (ll_b >= loglik[idx] - slack[idx]))
        if bad.any():
            ok &= ~bad
            active &= ~bad

        beta[active] = candidate[active]
        eta[active] = eta_new[active]
        loglik[active] = ll_new[active]

        separated = active & (np.abs(beta).max(axis=1) > separation_bound)
        if separated.any():
            ok &= ~separated

    ok &= converged
    probs = expit(eta)
    degenerate = ok & (np.any(probs <= 0.0, axis=1) | np.any(probs >= 1.0, axis=1))
    if degenerate.any():
        ok &= ~degenerate
    return beta, probs, ok
