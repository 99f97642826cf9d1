import os

# Single-threaded BLAS: batched reductions must not depend on a thread pool,
# or byte-determinism across worker counts would be lost.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest

from maickit import AggregateSummary, IndexPatientData


@pytest.fixture
def two_point_ipd() -> IndexPatientData:
    """Single covariate taking values {0, 1}; the classic closed-form case."""
    return IndexPatientData(
        covariates=np.array([[0.0], [1.0], [0.0], [1.0]]),
        treatment=np.array([1, 0, 1, 0]),
        outcome=np.array([1.0, 2.0, 3.0, 4.0]),
        effect_modifier_columns=(0,),
        covariate_names=("x1",),
    )


@pytest.fixture
def two_point_summary() -> AggregateSummary:
    return AggregateSummary(
        covariate_means={"x1": 0.75}, effect_estimate=-0.2, effect_variance=0.04
    )


def random_feasible_instance(rng: np.random.Generator, n: int, p: int):
    """Centered covariate matrix whose columns all straddle zero.

    The target mean is drawn strictly between each column's min and max,
    so a balancing solution exists by construction.
    """
    z = rng.normal(size=(n, p)) * rng.uniform(0.5, 2.0, size=p)
    lo = z.min(axis=0)
    hi = z.max(axis=0)
    target = lo + rng.uniform(0.25, 0.75, size=p) * (hi - lo)
    return z - target


def make_ipd(x, t, y, em_columns=None, names=None) -> IndexPatientData:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] != len(t):
        x = x.T
    k = x.shape[1]
    return IndexPatientData(
        covariates=x,
        treatment=np.asarray(t),
        outcome=np.asarray(y, dtype=float),
        effect_modifier_columns=tuple(range(k)) if em_columns is None else tuple(em_columns),
        covariate_names=tuple(f"x{j+1}" for j in range(k)) if names is None else tuple(names),
    )
