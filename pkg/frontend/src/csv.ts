/**
 * Readers for the two CSV schemas produced by the simulation harness:
 * per-replicate estimates and per-scenario/method performance metrics.
 */

import fs from "node:fs";
import Papa from "papaparse";

export interface EstimateRow {
  scenario: string;
  method: string;
  replicate: number;
  delta_12: number;
  ci_lower: number;
  ci_upper: number;
}

export interface MetricsRow {
  scenario: string;
  method: string;
  bias: number;
  bias_mcse: number;
  ese: number;
  ese_mcse: number;
  mse: number;
  mse_mcse: number;
  coverage: number;
  coverage_mcse: number;
  n_used: number;
  n_discarded: number;
}

const ESTIMATE_COLUMNS = ["scenario", "method", "replicate", "delta_12", "ci_lower", "ci_upper"];
const METRICS_COLUMNS = [
  "scenario", "method", "bias", "bias_mcse", "ese", "ese_mcse",
  "mse", "mse_mcse", "coverage", "coverage_mcse", "n_used", "n_discarded",
];

function parseStrict(path: string, requiredColumns: string[]): Record<string, string>[] {
  const text = fs.readFileSync(path, "utf-8");
  const parsed = Papa.parse<Record<string, string>>(text.trim(), {
    header: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    const first = parsed.errors[0];
    throw new Error(`${path}: CSV parse error at row ${first.row}: ${first.message}`);
  }
  const fields = parsed.meta.fields ?? [];
  const missing = requiredColumns.filter((c) => !fields.includes(c));
  if (missing.length > 0) {
    throw new Error(`${path}: missing required column(s): ${missing.join(", ")}`);
  }
  return parsed.data;
}

function toNumber(raw: string, path: string, column: string, rowIndex: number): number {
  const value = Number(raw);
  if (raw === "" || Number.isNaN(value)) {
    throw new Error(`${path}: non-numeric ${column}=${JSON.stringify(raw)} at data row ${rowIndex + 1}`);
  }
  return value;
}

export function readEstimates(path: string): EstimateRow[] {
  return parseStrict(path, ESTIMATE_COLUMNS).map((row, i) => ({
    scenario: row.scenario,
    method: row.method,
    replicate: toNumber(row.replicate, path, "replicate", i),
    delta_12: toNumber(row.delta_12, path, "delta_12", i),
    ci_lower: toNumber(row.ci_lower, path, "ci_lower", i),
    ci_upper: toNumber(row.ci_upper, path, "ci_upper", i),
  }));
}

export function readMetrics(path: string): MetricsRow[] {
  return parseStrict(path, METRICS_COLUMNS).map((row, i) => ({
    scenario: row.scenario,
    method: row.method,
    bias: toNumber(row.bias, path, "bias", i),
    bias_mcse: toNumber(row.bias_mcse, path, "bias_mcse", i),
    ese: toNumber(row.ese, path, "ese", i),
    ese_mcse: toNumber(row.ese_mcse, path, "ese_mcse", i),
    mse: toNumber(row.mse, path, "mse", i),
    mse_mcse: toNumber(row.mse_mcse, path, "mse_mcse", i),
    coverage: toNumber(row.coverage, path, "coverage", i),
    coverage_mcse: toNumber(row.coverage_mcse, path, "coverage_mcse", i),
    n_used: toNumber(row.n_used, path, "n_used", i),
    n_discarded: toNumber(row.n_discarded, path, "n_discarded", i),
  }));
}

/** Scenario labels in first-appearance order (the harness writes them in
 * strong -> moderate -> poor order, ascending sample size within). */
export function scenarioOrder(rows: { scenario: string }[]): string[] {
  const seen: string[] = [];
  for (const row of rows) {
    if (!seen.includes(row.scenario)) seen.push(row.scenario);
  }
  return seen;
}

export function methodOrder(rows: { method: string }[]): string[] {
  const seen: string[] = [];
  for (const row of rows) {
    if (!seen.includes(row.method)) seen.push(row.method);
  }
  return seen;
}
