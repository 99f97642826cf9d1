"""Command-line entry point.

Subcommands: ``analyze`` (one dataset, one method), ``simulate`` (the
Monte Carlo grid), ``metrics`` (recompute performance measures from an
estimates file) and ``validate`` (schema and feasibility checks).

Exit codes: 0 success; 1 usage, I/O or validation failure; 2 statistical
infeasibility (no balancing solution, separation, non-convergence, or too
many failed bootstrap resamples).
"""

import os

# Cap BLAS threading before numpy loads: reductions must not depend on a
# worker-count-driven thread pool, or output bytes would too.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import csv
import hashlib
import json
import sys
from dataclasses import replace

import click
import numpy as np

from . import __version__
from .bootstrap import BootstrapOptions, bootstrap_effect
from .data_model import center_covariates, csv_covariate_names, load_ald, load_ipd
from .errors import (
    DataValidationError,
    InfeasibleBalance,
    MaicError,
    NonConvergence,
    PerfectSeparation,
    TooManyFailures,
)
from .estimation import EffectScale, anchored_comparison, make_effect_estimate
from .maic_weights import TrialWeightOptions, check_feasibility
from .methods import Method, plug_in_estimate
from .propensity import ipt_weights
from .sim_harness import (
    ESTIMATES_HEADER,
    METRICS_HEADER,
    build_scenarios,
    compute_metrics,
    run_grid,
    write_estimates_csv,
    write_metrics_csv,
)

_METHOD_NAMES = [m.value for m in Method]


@click.group()
@click.version_option(version=__version__, prog_name="maic")
def cli():
    """Anchored matching-adjusted indirect comparison toolkit."""


def _parse_effect_modifiers(option_value, ipd_path):
    if option_value:
        return [name.strip() for name in option_value.split(",") if name.strip()]
    return list(csv_covariate_names(ipd_path))


@cli.command()
@click.argument("ipd_csv", type=click.Path(exists=True, dir_okay=False))
@click.argument("ald_json", type=click.Path(exists=True, dir_okay=False))
@click.option("--method", "method_name", type=click.Choice(_METHOD_NAMES), default="MAIC",
              show_default=True)
@click.option("--effect-modifiers", default=None,
              help="Comma-separated covariate names used for trial-assignment "
                   "balancing [default: all covariate columns].")
@click.option("--bootstrap", "-B", "bootstrap_b", type=int, default=2000, show_default=True,
              help="Bootstrap resamples; 0 disables resampling (plug-in estimate only).")
@click.option("--seed", type=int, default=12345, show_default=True)
@click.option("--max-failure-rate", type=float, default=0.05, show_default=True,
              help="Largest tolerated fraction of failed bootstrap resamples.")
@click.option("--truncation-percentile", type=float, default=95.0, show_default=True)
@click.option("--balance-tol", type=float, default=1e-8, show_default=True)
@click.option("--grad-tol", type=float, default=1e-10, show_default=True)
@click.option("--max-iter", type=int, default=500, show_default=True)
@click.option("--level", type=float, default=0.95, show_default=True)
@click.option("--output-dir", type=click.Path(file_okay=False), default=".", show_default=True)
@click.option("--diagnostics", is_flag=True, help="Write per-subject weight diagnostics CSV.")
def analyze(ipd_csv, ald_json, method_name, effect_modifiers, bootstrap_b, seed,
            max_failure_rate, truncation_percentile, balance_tol, grad_tol, max_iter,
            level, output_dir, diagnostics):
    """Estimate the anchored A vs B effect from IPD_CSV and ALD_JSON."""
    method = Method.parse(method_name)
    em_names = _parse_effect_modifiers(effect_modifiers, ipd_csv)
    ipd = load_ipd(ipd_csv, em_names)
    ald = load_ald(ald_json)

    trial_opts = TrialWeightOptions(
        grad_tol=grad_tol, balance_tol=balance_tol, max_iter=max_iter
    )
    plug = plug_in_estimate(
        ipd, ald, method,
        truncation_percentile=truncation_percentile,
        trial_opts=trial_opts,
    )

    boot = None
    if bootstrap_b > 0:
        boot = bootstrap_effect(
            ipd, ald, method, bootstrap_b, seed,
            BootstrapOptions(
                max_failure_rate=max_failure_rate,
                truncation_percentile=truncation_percentile,
                grad_tol=grad_tol,
            ),
        )

    delta_10 = boot.point if boot is not None else plug.delta_10
    var_10 = boot.se**2 if boot is not None else None
    report = {
        "method": method.value,
        "scale": EffectScale.MEAN_DIFFERENCE.value,
        "level": level,
        "n_subjects": ipd.n_subjects,
        "delta_10": delta_10,
        "var_10": var_10,
        "delta_20": ald.effect_estimate,
        "var_20": ald.effect_variance,
        "ess_trial": plug.ess_trial,
        "ess_combined": plug.ess_combined,
        "ess_final": plug.ess_final,
        "weight_summary": {
            "min": float(plug.final_weights.values.min()),
            "max": float(plug.final_weights.values.max()),
            "n": ipd.n_subjects,
        },
        "bootstrap": None,
        "plug_in_delta_10": plug.delta_10,
    }
    if boot is not None:
        estimate = anchored_comparison(
            make_effect_estimate(boot.point, boot.se**2, EffectScale.MEAN_DIFFERENCE, level),
            ald.effect_estimate,
            ald.effect_variance,
            level,
        )
        report.update(
            delta_12=estimate.point,
            var_12=estimate.variance,
            ci=[estimate.ci_lower, estimate.ci_upper],
        )
        report["bootstrap"] = {
            "requested": boot.requested,
            "n_failed": boot.n_failed,
            "se": boot.se,
        }
    else:
        report.update(delta_12=plug.delta_10 - ald.effect_estimate, var_12=None, ci=None)

    os.makedirs(output_dir, exist_ok=True)
    out_path = os.path.join(output_dir, "analysis.json")
    payload = json.dumps(report, indent=2, sort_keys=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(payload + "\n")
    click.echo(payload)

    if diagnostics:
        per_subject = os.path.join(output_dir, "diagnostics.csv")
        summary_csv = os.path.join(output_dir, "diagnostics_summary.csv")
        _write_diagnostics(per_subject, summary_csv, ipd, plug)
        click.echo(f"diagnostics written to {per_subject} and {summary_csv}", err=True)


def _write_diagnostics(path, summary_path, ipd, plug):
    two_stage = plug.propensity_fit is not None
    header = ["subject", "treatment", "trial_weight"]
    if two_stage:
        header += ["propensity", "ipt_weight", "combined_weight"]
    header.append("final_weight")
    trial_w = plug.trial_fit.weights.values
    final_w = plug.final_weights.values
    if two_stage:
        e_hat = plug.propensity_fit.propensity_scores
        ipt = ipt_weights(plug.propensity_fit, ipd.treatment)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(ipd.n_subjects):
            row = [i, int(ipd.treatment[i]), repr(float(trial_w[i]))]
            if two_stage:
                row += [repr(float(e_hat[i])), repr(float(ipt[i])),
                        repr(float(trial_w[i] * ipt[i]))]
            row.append(repr(float(final_w[i])))
            writer.writerow(row)

    summaries = [
        ("n_subjects", ipd.n_subjects),
        ("min_final_weight", float(final_w.min())),
        ("max_final_weight", float(final_w.max())),
        ("ess_trial", plug.ess_trial),
    ]
    if two_stage:
        summaries.append(("ess_combined", plug.ess_combined))
    summaries.append(("ess_final", plug.ess_final))
    with open(summary_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["quantity", "value"])
        for name, value in summaries:
            writer.writerow([name, repr(float(value))])


def _atomic_write_all(writes):
    """Stage every file to a temp path, then commit with renames.

    A failure while staging leaves no partial outputs behind.
    """
    staged = []
    try:
        for path, write_fn in writes:
            tmp = path + ".tmp"
            write_fn(tmp)
            staged.append((tmp, path))
        for tmp, path in staged:
            os.replace(tmp, path)
    except BaseException:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.remove(tmp)
        raise


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="JSON config; keys mirror ScenarioConfig field names.")
@click.option("--replicates", type=int, default=None, help="Override n_replicates.")
@click.option("--bootstrap", "-B", "bootstrap_b", type=int, default=None,
              help="Override bootstrap_B.")
@click.option("--seed", type=int, default=None, help="Override base_seed.")
@click.option("--truncation-percentile", type=float, default=None)
@click.option("--threads", type=int, default=None,
              help="Worker processes [default: all cores]. Never affects the outputs.")
@click.option("--output-dir", type=click.Path(file_okay=False), default=".", show_default=True)
def simulate(config_path, replicates, bootstrap_b, seed, truncation_percentile, threads,
             output_dir):
    """Run the simulation grid; writes metrics.csv, estimates.csv and a manifest."""
    config = {}
    if config_path is not None:
        with open(config_path, encoding="utf-8") as fh:
            try:
                config = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataValidationError(f"{config_path}: invalid JSON ({exc})") from None
    scenarios = build_scenarios(config)

    overrides = {}
    if replicates is not None:
        overrides["n_replicates"] = replicates
    if bootstrap_b is not None:
        overrides["bootstrap_B"] = bootstrap_b
    if seed is not None:
        overrides["base_seed"] = seed
    if truncation_percentile is not None:
        overrides["truncation_percentile"] = truncation_percentile
    if overrides:
        scenarios = [replace(cfg, **overrides) for cfg in scenarios]

    result = run_grid(scenarios, threads=threads or os.cpu_count())

    os.makedirs(output_dir, exist_ok=True)
    resolved = [
        {k: getattr(cfg, k) for k in sorted(cfg.__dataclass_fields__)} for cfg in scenarios
    ]
    config_blob = json.dumps(resolved, sort_keys=True, default=list)
    manifest = {
        "tool": "maic simulate",
        "version": __version__,
        "numpy_version": np.__version__,
        "base_seed": scenarios[0].base_seed,
        "n_replicates": scenarios[0].n_replicates,
        "bootstrap_B": scenarios[0].bootstrap_B,
        "scenarios": [cfg.label for cfg in scenarios],
        "config_sha256": hashlib.sha256(config_blob.encode()).hexdigest(),
        "config": resolved,
    }
    def _write_manifest(p):
        with open(p, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(manifest, indent=2, sort_keys=True, default=list) + "\n")

    _atomic_write_all(
        [
            (os.path.join(output_dir, "metrics.csv"), lambda p: write_metrics_csv(result, p)),
            (os.path.join(output_dir, "estimates.csv"),
             lambda p: write_estimates_csv(result, p)),
            (os.path.join(output_dir, "manifest.json"), _write_manifest),
        ]
    )
    click.echo(f"wrote {output_dir}/metrics.csv, estimates.csv, manifest.json", err=True)


@cli.command("metrics")
@click.option("--estimates", "estimates_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", default="metrics.csv", show_default=True)
@click.option("--true-delta", type=float, default=0.0, show_default=True)
@click.option("--replicates", "expected_replicates", type=int, default=None,
              help="Intended replicates per scenario, used to infer the discarded "
                   "count [default: max replicate index + 1].")
def metrics_cmd(estimates_path, out_path, true_delta, expected_replicates):
    """Recompute performance metrics from an estimates.csv file."""
    groups: dict[tuple[str, str], dict[str, list]] = {}
    order: list[tuple[str, str]] = []
    max_rep: dict[str, int] = {}
    with open(estimates_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(ESTIMATES_HEADER) - set(reader.fieldnames or [])
        if missing:
            raise DataValidationError(
                f"{estimates_path}: missing columns {sorted(missing)}"
            )
        for row in reader:
            key = (row["scenario"], row["method"])
            if key not in groups:
                groups[key] = {"delta": [], "covered": []}
                order.append(key)
            delta = float(row["delta_12"])
            groups[key]["delta"].append(delta)
            groups[key]["covered"].append(
                float(row["ci_lower"]) <= true_delta <= float(row["ci_upper"])
            )
            scen = row["scenario"]
            max_rep[scen] = max(max_rep.get(scen, -1), int(row["replicate"]))

    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for scenario, method in order:
            data = groups[(scenario, method)]
            n_used = len(data["delta"])
            expected = expected_replicates or (max_rep[scenario] + 1)
            m = compute_metrics(
                np.array(data["delta"]), np.array(data["covered"]), true_delta,
                method=method, n_discarded=max(0, expected - n_used),
            )
            writer.writerow(
                [
                    scenario, method, repr(m.bias), repr(m.bias_mcse), repr(m.ese),
                    repr(m.ese_mcse), repr(m.mse), repr(m.mse_mcse), repr(m.coverage),
                    repr(m.coverage_mcse), m.n_used, m.n_discarded,
                ]
            )
    click.echo(f"wrote {out_path}", err=True)


@cli.command()
@click.argument("ipd_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--ald", "ald_json", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--effect-modifiers", default=None)
def validate(ipd_csv, ald_json, effect_modifiers):
    """Validate input files; with --ald, also run the feasibility check."""
    em_names = _parse_effect_modifiers(effect_modifiers, ipd_csv)
    ipd = load_ipd(ipd_csv, em_names)
    click.echo(
        f"IPD ok: {ipd.n_subjects} subjects, {ipd.n_covariates} covariates, "
        f"{int(ipd.treatment.sum())} treated / {int((1 - ipd.treatment).sum())} comparator, "
        f"effect modifiers: {', '.join(ipd.effect_modifier_names)}"
    )
    if ald_json is not None:
        ald = load_ald(ald_json)
        click.echo(
            f"ALD ok: effect {ald.effect_estimate} (variance {ald.effect_variance}), "
            f"{len(ald.covariate_means)} covariate means"
        )
        report = check_feasibility(center_covariates(ipd, ald))
        click.echo(report.describe())
        if not report.feasible:
            raise InfeasibleBalance("balancing is infeasible for this pair of files",
                                    report=report)
        click.echo("feasibility: ok")


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        sys.exit(1)
    except click.ClickException as exc:
        exc.show()
        sys.exit(1)
    except InfeasibleBalance as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except (PerfectSeparation, NonConvergence, TooManyFailures) as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        sys.exit(2)
    except (DataValidationError, MaicError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    return 0


if __name__ == "__main__":
    main()
