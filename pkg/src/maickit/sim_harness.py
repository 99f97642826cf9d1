"""Monte Carlo performance study of the four weighting methods.

Each replicate simulates one index trial (IPD) and one competitor trial
(reduced to aggregates), analyzes the same dataset with MAIC, 2SMAIC and
their weight-truncated variants using shared bootstrap resamples, and
records the anchored A vs B estimate with its Wald interval.  Replicates
derive independent RNG streams from (base_seed, scenario, replicate,
purpose), so results are reproducible regardless of how work is scheduled
across processes.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache, partial
from typing import Mapping, Sequence

import numpy as np

from .bootstrap import BootstrapOptions, draw_resample_indices, estimate_for_indices
from .data_model import AggregateSummary, IndexPatientData
from .errors import DataValidationError, InfeasibleBalance, NonConvergence
from .maic_weights import fit_trial_weights
from .methods import ALL_METHODS, Method

_PURPOSE_INDEX = 0
_PURPOSE_COMPETITOR = 1
_PURPOSE_BOOTSTRAP = 2

OVERLAP_LEVELS = (("strong", 0.5), ("moderate", 0.4), ("poor", 0.3))
INDEX_SAMPLE_SIZES = (140, 200)

METRICS_HEADER = [
    "scenario", "method", "bias", "bias_mcse", "ese", "ese_mcse",
    "mse", "mse_mcse", "coverage", "coverage_mcse", "n_used", "n_discarded",
]
ESTIMATES_HEADER = ["scenario", "method", "replicate", "delta_12", "ci_lower", "ci_upper"]


@dataclass(frozen=True)
class ScenarioConfig:
    """One cell of the simulation grid plus the shared study parameters."""

    n_index: int
    index_cov_means: tuple[float, ...]
    label: str = ""
    scenario_id: int = 0
    n_competitor: int = 300
    k: int = 3
    competitor_cov_means: tuple[float, ...] = (0.6, 0.6, 0.6)
    cov_sd: float = 0.4
    pairwise_corr: float = 0.2
    beta0: float = 5.0
    beta1: tuple[float, ...] = (2.0, 2.0, 2.0)
    beta2: tuple[float, ...] = (1.0, 1.0, 1.0)
    beta_t: float = -2.0
    error_sd: float = 1.0
    n_replicates: int = 5000
    bootstrap_B: int = 2000
    truncation_percentile: float = 95.0
    base_seed: int = 20220901
    true_delta_12: float = 0.0
    allocation: str = "fixed"  # "fixed": exact 1:1 split; "bernoulli": coin flips
    max_failure_rate: float = 0.05
    level: float = 0.95

    def __post_init__(self):
        for name in ("index_cov_means", "competitor_cov_means", "beta1", "beta2"):
            value = getattr(self, name)
            if np.isscalar(value):
                value = (float(value),) * self.k
            object.__setattr__(self, name, tuple(float(v) for v in value))
            if len(getattr(self, name)) != self.k:
                raise DataValidationError(f"{name} must have length k={self.k}")
        if self.n_index < 2 or self.n_competitor < 2:
            raise DataValidationError("trial sample sizes must be at least 2")
        if self.cov_sd <= 0:
            raise DataValidationError("cov_sd must be positive")
        if not -1.0 < self.pairwise_corr < 1.0:
            raise DataValidationError("pairwise_corr must lie in (-1, 1)")
        if self.k > 1 and self.pairwise_corr <= -1.0 / (self.k - 1):
            raise DataValidationError("equicorrelation matrix is not positive definite")
        if self.error_sd < 0:
            raise DataValidationError("error_sd must be non-negative")
        if self.allocation not in ("fixed", "bernoulli"):
            raise DataValidationError("allocation must be 'fixed' or 'bernoulli'")
        if self.n_replicates < 2 or self.bootstrap_B < 2:
            raise DataValidationError("n_replicates and bootstrap_B must be at least 2")


def covariance_matrix(cfg: ScenarioConfig) -> np.ndarray:
    """Equicorrelated covariance: sd^2 on the diagonal, sd^2*corr off it."""
    var = cfg.cov_sd**2
    sigma = np.full((cfg.k, cfg.k), var * cfg.pairwise_corr)
    np.fill_diagonal(sigma, var)
    return sigma


def true_ac_effect_in_competitor(cfg: ScenarioConfig) -> float:
    """Analytic marginal A vs C effect in the competitor population.

    Mean differences are collapsible, so this equals the conditional effect
    evaluated at the competitor covariate means.
    """
    return cfg.beta_t + float(np.dot(cfg.beta2, cfg.competitor_cov_means))


def replicate_stream(cfg: ScenarioConfig, replicate_index: int, purpose: int) -> np.random.Generator:
    """Independent generator for one (scenario, replicate, purpose) triple.

    Streams come from numpy's splittable SeedSequence keyed on the triple;
    the normal sampler is the PCG64 generator's ziggurat implementation.
    """
    seq = np.random.SeedSequence(
        cfg.base_seed, spawn_key=(cfg.scenario_id, replicate_index, purpose)
    )
    return np.random.Generator(np.random.PCG64(seq))


def _assign_treatment(n: int, allocation: str, rng: np.random.Generator) -> np.ndarray:
    if allocation == "fixed":
        t = np.zeros(n, dtype=np.int64)
        t[rng.permutation(n)[: n // 2]] = 1
        return t
    while True:
        t = rng.integers(0, 2, size=n)
        if 0 < t.sum() < n:
            return t.astype(np.int64)


def _simulate_trial(
    cfg: ScenarioConfig, n: int, means: Sequence[float], rng: np.random.Generator
):
    chol = np.linalg.cholesky(covariance_matrix(cfg))
    x = np.asarray(means) + rng.standard_normal((n, cfg.k)) @ chol.T
    t = _assign_treatment(n, cfg.allocation, rng)
    y = (
        cfg.beta0
        + x @ np.asarray(cfg.beta1)
        + (cfg.beta_t + x @ np.asarray(cfg.beta2)) * t
        + rng.standard_normal(n) * cfg.error_sd
    )
    return x, t, y


def generate_index_trial(cfg: ScenarioConfig, rng: np.random.Generator) -> IndexPatientData:
    """Simulate the index (A vs C) trial; every covariate is an effect modifier."""
    x, t, y = _simulate_trial(cfg, cfg.n_index, cfg.index_cov_means, rng)
    return IndexPatientData(
        covariates=x,
        treatment=t,
        outcome=y,
        effect_modifier_columns=tuple(range(cfg.k)),
        covariate_names=tuple(f"x{j + 1}" for j in range(cfg.k)),
    )


def generate_competitor_ald(cfg: ScenarioConfig, rng: np.random.Generator) -> AggregateSummary:
    """Simulate the competitor (B vs C) trial and reduce it to aggregates.

    Covariates collapse to sample means; the outcome collapses to the
    unadjusted regression of outcome on treatment, whose coefficient for a
    binary regressor is the difference of arm means, with the classical
    homoskedastic (nominal) squared standard error.
    """
    x, t, y = _simulate_trial(cfg, cfg.n_competitor, cfg.competitor_cov_means, rng)
    n1 = int(t.sum())
    n0 = int(t.size - n1)
    mean1 = float(y[t == 1].mean())
    mean0 = float(y[t == 0].mean())
    rss = float(((y - np.where(t == 1, mean1, mean0)) ** 2).sum())
    s2 = rss / (t.size - 2)
    return AggregateSummary(
        covariate_means={f"x{j + 1}": float(x[:, j].mean()) for j in range(cfg.k)},
        effect_estimate=mean1 - mean0,
        effect_variance=s2 * (1.0 / n1 + 1.0 / n0),
        sample_size=cfg.n_competitor,
    )


@lru_cache(maxsize=8)
def _normal_quantile(level: float) -> float:
    from scipy.stats import norm

    return float(norm.ppf(0.5 * (1.0 + level)))


@dataclass(frozen=True)
class MethodRecord:
    delta_12: float
    var_12: float
    ci_lower: float
    ci_upper: float
    covered: bool


@dataclass(frozen=True)
class ReplicateOutcome:
    records: Mapping[Method, MethodRecord] | None
    discarded_reason: str | None = None

    @property
    def discarded(self) -> bool:
        return self.records is None


def run_replicate(cfg: ScenarioConfig, replicate_index: int) -> ReplicateOutcome:
    """Simulate and analyze one replicate with all four methods.

    The four methods share the dataset and the bootstrap resample indices,
    which removes spurious between-method Monte Carlo noise.  The replicate
    is discarded when trial weights cannot be fitted on the full dataset
    or when any method loses more than the allowed share of resamples.
    """
    ipd = generate_index_trial(cfg, replicate_stream(cfg, replicate_index, _PURPOSE_INDEX))
    ald = generate_competitor_ald(
        cfg, replicate_stream(cfg, replicate_index, _PURPOSE_COMPETITOR)
    )

    try:
        fit_trial_weights(ipd, ald)
    except (InfeasibleBalance, NonConvergence) as exc:
        return ReplicateOutcome(records=None, discarded_reason=type(exc).__name__)

    boot_seq = np.random.SeedSequence(
        cfg.base_seed, spawn_key=(cfg.scenario_id, replicate_index, _PURPOSE_BOOTSTRAP)
    )
    indices = draw_resample_indices(cfg.n_index, cfg.bootstrap_B, boot_seq)
    opts = BootstrapOptions(
        max_failure_rate=cfg.max_failure_rate,
        truncation_percentile=cfg.truncation_percentile,
    )
    lane_results = estimate_for_indices(ipd, ald, ALL_METHODS, indices, opts)

    z = _normal_quantile(cfg.level)
    records = {}
    for method in ALL_METHODS:
        estimates, ok = lane_results[method]
        n_failed = int(cfg.bootstrap_B - ok.sum())
        if n_failed > cfg.max_failure_rate * cfg.bootstrap_B or ok.sum() < 2:
            return ReplicateOutcome(
                records=None,
                discarded_reason=f"TooManyFailures[{method.value}]",
            )
        replicates = estimates[ok]
        delta_10 = float(replicates.mean())
        var_10 = float(replicates.std(ddof=1) ** 2)
        delta_12 = delta_10 - ald.effect_estimate
        var_12 = var_10 + ald.effect_variance
        half = z * np.sqrt(var_12)
        lo, hi = delta_12 - half, delta_12 + half
        records[method] = MethodRecord(
            delta_12=delta_12,
            var_12=var_12,
            ci_lower=float(lo),
            ci_upper=float(hi),
            covered=bool(lo <= cfg.true_delta_12 <= hi),
        )
    return ReplicateOutcome(records=records)


@dataclass(frozen=True)
class MethodMetrics:
    method: str
    bias: float
    bias_mcse: float
    ese: float
    ese_mcse: float
    mse: float
    mse_mcse: float
    coverage: float
    coverage_mcse: float
    n_used: int
    n_discarded: int


def compute_metrics(
    estimates: np.ndarray,
    covered: np.ndarray,
    true_delta: float,
    method: str = "",
    n_discarded: int = 0,
) -> MethodMetrics:
    """Performance measures and their Monte Carlo standard errors.

    bias = mean - true; ese = sample SD (denominator N-1); mse = mean
    squared error about the true value; coverage = fraction of intervals
    containing the true value.  MCSEs: ese/sqrt(N) for bias,
    ese/sqrt(2(N-1)) for the ESE, the SD of the squared errors over
    sqrt(N) for the MSE, and the binomial formula for coverage.
    """
    estimates = np.asarray(estimates, dtype=np.float64)
    covered = np.asarray(covered, dtype=bool)
    n = estimates.size
    if n < 2:
        raise DataValidationError("need at least 2 replicate records to compute metrics")
    if covered.size != n:
        raise DataValidationError("estimates and coverage flags must align")

    bias = float(estimates.mean() - true_delta)
    ese = float(estimates.std(ddof=1))
    sq_err = (estimates - true_delta) ** 2
    mse = float(sq_err.mean())
    coverage = float(covered.mean())
    return MethodMetrics(
        method=method,
        bias=bias,
        bias_mcse=ese / np.sqrt(n),
        ese=ese,
        ese_mcse=ese / np.sqrt(2.0 * (n - 1)),
        mse=mse,
        mse_mcse=float(np.sqrt(((sq_err - mse) ** 2).sum() / (n * (n - 1)))),
        coverage=coverage,
        coverage_mcse=float(np.sqrt(coverage * (1.0 - coverage) / n)),
        n_used=n,
        n_discarded=int(n_discarded),
    )


def default_scenario_grid(**overrides) -> list[ScenarioConfig]:
    """The six-scenario factorial grid: overlap level x index sample size.

    Ordered strong -> moderate -> poor overlap, ascending n within each
    level.  Keyword overrides apply to every scenario (e.g. n_replicates,
    bootstrap_B, base_seed).
    """
    scenarios = []
    for overlap_label, mu in OVERLAP_LEVELS:
        for n in INDEX_SAMPLE_SIZES:
            k = int(overrides.get("k", 3))
            scenarios.append(
                ScenarioConfig(
                    n_index=n,
                    index_cov_means=(mu,) * k,
                    label=f"{overlap_label}_n{n}",
                    scenario_id=len(scenarios),
                    **overrides,
                )
            )
    return scenarios


def build_scenarios(config: Mapping) -> list[ScenarioConfig]:
    """Build the scenario list from a flat config mapping.

    Keys mirror ScenarioConfig field names.  An optional "scenarios" list
    supplies per-scenario overrides (at least n_index and index_cov_means);
    without it the default six-scenario grid is generated from the base
    values.
    """
    config = dict(config)
    scenario_entries = config.pop("scenarios", None)
    field_names = set(ScenarioConfig.__dataclass_fields__)
    unknown = set(config) - field_names
    if unknown:
        raise DataValidationError(f"unknown config keys: {sorted(unknown)}")
    base = {k: v for k, v in config.items() if k not in ("label", "scenario_id")}

    def _make(kwargs):
        try:
            return ScenarioConfig(**kwargs)
        except TypeError as exc:
            raise DataValidationError(f"incomplete scenario config: {exc}") from None

    if scenario_entries is None:
        if "n_index" in base or "index_cov_means" in base:
            # flat config describing a single scenario
            single = dict(base)
            single["label"] = config.get("label", "scenario_0")
            single["scenario_id"] = 0
            return [_make(single)]
        return default_scenario_grid(**base)
    scenarios = []
    for i, entry in enumerate(scenario_entries):
        merged = dict(base)
        merged.update(entry)
        unknown = set(merged) - field_names
        if unknown:
            raise DataValidationError(f"unknown scenario keys: {sorted(unknown)}")
        merged.setdefault("label", f"scenario_{i}")
        merged["scenario_id"] = i
        scenarios.append(_make(merged))
    labels = [s.label for s in scenarios]
    if len(set(labels)) != len(labels):
        raise DataValidationError("scenario labels must be unique")
    return scenarios


@dataclass(frozen=True)
class GridResult:
    metrics: list  # (scenario_label, MethodMetrics) pairs in output order
    estimates: list  # dict rows matching ESTIMATES_HEADER


def _replicate_task(cfg: ScenarioConfig, replicate_index: int):
    outcome = run_replicate(cfg, replicate_index)
    if outcome.discarded:
        return replicate_index, outcome.discarded_reason, None
    packed = {
        m.value: (r.delta_12, r.var_12, r.ci_lower, r.ci_upper, r.covered)
        for m, r in outcome.records.items()
    }
    return replicate_index, None, packed


def run_grid(
    scenarios: Sequence[ScenarioConfig],
    threads: int | None = None,
    progress=None,
) -> GridResult:
    """Run every scenario and aggregate metrics plus per-replicate estimates.

    ``threads`` caps the worker processes (1 disables multiprocessing).
    Outputs are a pure function of the scenario configs: replicates carry
    their own RNG streams and results are assembled in index order.
    """
    metrics_rows = []
    estimate_rows = []
    for cfg in scenarios:
        outcomes: dict[int, tuple] = {}
        task = partial(_replicate_task, cfg)
        indices = range(cfg.n_replicates)
        if threads is None or threads > 1:
            chunk = max(1, cfg.n_replicates // (64 * (threads or 8)))
            with ProcessPoolExecutor(max_workers=threads) as pool:
                for rep, reason, packed in pool.map(task, indices, chunksize=chunk):
                    outcomes[rep] = (reason, packed)
                    if progress is not None:
                        progress(cfg.label, rep)
        else:
            for rep in indices:
                rep, reason, packed = task(rep)
                outcomes[rep] = (reason, packed)
                if progress is not None:
                    progress(cfg.label, rep)

        n_discarded = sum(1 for reason, _ in outcomes.values() if reason is not None)
        per_method_estimates = {m: [] for m in ALL_METHODS}
        per_method_covered = {m: [] for m in ALL_METHODS}
        for rep in range(cfg.n_replicates):
            reason, packed = outcomes[rep]
            if reason is not None:
                continue
            for m in ALL_METHODS:
                d12, _, lo, hi, cov = packed[m.value]
                per_method_estimates[m].append(d12)
                per_method_covered[m].append(cov)
                estimate_rows.append(
                    {
                        "scenario": cfg.label,
                        "method": m.value,
                        "replicate": rep,
                        "delta_12": d12,
                        "ci_lower": lo,
                        "ci_upper": hi,
                    }
                )
        for m in ALL_METHODS:
            metrics_rows.append(
                (
                    cfg.label,
                    compute_metrics(
                        np.array(per_method_estimates[m]),
                        np.array(per_method_covered[m]),
                        cfg.true_delta_12,
                        method=m.value,
                        n_discarded=n_discarded,
                    ),
                )
            )
    return GridResult(metrics=metrics_rows, estimates=estimate_rows)


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_metrics_csv(result: GridResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for label, m in result.metrics:
            writer.writerow(
                [
                    label, m.method, _fmt(m.bias), _fmt(m.bias_mcse), _fmt(m.ese),
                    _fmt(m.ese_mcse), _fmt(m.mse), _fmt(m.mse_mcse), _fmt(m.coverage),
                    _fmt(m.coverage_mcse), m.n_used, m.n_discarded,
                ]
            )


def write_estimates_csv(result: GridResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ESTIMATES_HEADER)
        for row in result.estimates:
            writer.writerow(
                [
                    row["scenario"], row["method"], row["replicate"],
                    _fmt(row["delta_12"]), _fmt(row["ci_lower"]), _fmt(row["ci_upper"]),
                ]
            )
