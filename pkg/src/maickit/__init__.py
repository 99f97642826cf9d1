"""Anchored matching-adjusted indirect comparison toolkit.

Implements trial-assignment odds weighting by method of moments (MAIC),
its two-stage extension combining a treatment-assignment propensity model
(2SMAIC), percentile weight truncation, nonparametric bootstrap inference,
and a Monte Carlo harness measuring bias, precision, efficiency and
coverage across overlap scenarios.
"""

__version__ = "0.1.0"

from .bootstrap import BootstrapOptions, BootstrapResult, bootstrap_effect
from .data_model import (
    AggregateSummary,
    IndexPatientData,
    center_covariates,
    load_ald,
    load_ipd,
    save_ipd,
)
from .errors import (
    DataValidationError,
    InfeasibleBalance,
    MaicError,
    NonConvergence,
    PerfectSeparation,
    RankDeficient,
    TooManyFailures,
)
from .estimation import (
    EffectEstimate,
    EffectScale,
    anchored_comparison,
    make_effect_estimate,
    marginal_effect,
    weighted_marginal_mean,
    weighted_outcome_regression,
)
from .maic_weights import (
    FeasibilityReport,
    TrialWeightFit,
    TrialWeightOptions,
    WeightKind,
    WeightVector,
    check_feasibility,
    ess,
    fit_trial_weights,
    gradient_q,
    objective_q,
    truncate_weights,
)
from .methods import ALL_METHODS, Method, PlugInResult, plug_in_estimate
from .propensity import (
    PropensityFit,
    PropensityOptions,
    combine_weights,
    fit_propensity,
    ipt_weights,
)
from .sim_harness import (
    MethodMetrics,
    ScenarioConfig,
    build_scenarios,
    compute_metrics,
    default_scenario_grid,
    generate_competitor_ald,
    generate_index_trial,
    run_grid,
    run_replicate,
    true_ac_effect_in_competitor,
)

__all__ = [name for name in dir() if not name.startswith("_")]
