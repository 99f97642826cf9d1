/**
 * Renders the simulation-study figure: one panel per scenario containing
 * ridgeline densities of the per-replicate treatment-effect estimates for
 * each method, a vertical reference at the true value (zero), and a table
 * of the performance metrics with Monte Carlo standard errors in
 * parentheses.  Table values are formatted straight from metrics.csv, with
 * no recomputation.
 *
 * Usage: figures --estimates <csv> --metrics <csv> --out <svg> [--true-value 0]
 */

import fs from "node:fs";
import path from "node:path";
import { parseArgs } from "node:util";

import {
  EstimateRow,
  MetricsRow,
  methodOrder,
  readEstimates,
  readMetrics,
  scenarioOrder,
} from "./csv.js";
import { kdeCurve } from "./kde.js";
import { polylinePath, tag, ticks } from "./svg.js";

const METHOD_COLORS: Record<string, string> = {
  MAIC: "#c23b22",
  "2SMAIC": "#1f6fb2",
  "T-MAIC": "#e08f2e",
  "T-2SMAIC": "#2e8b57",
};
const FALLBACK_COLORS = ["#7a5195", "#374c80", "#bc5090", "#ffa600"];

const PANEL_W = 470;
const RIDGE_H = 46;
const AXIS_H = 28;
const TITLE_H = 26;
const ROW_H = 15;
const TABLE_PAD = 10;
const MARGIN = 18;
const LABEL_W = 78;

export interface FigureSpec {
  estimatesPath: string;
  metricsPath: string;
  outPath: string;
  trueValue?: number;
}

function prettyScenario(label: string): string {
  const match = /^(strong|moderate|poor)_n(\d+)$/.exec(label);
  if (match) return `${match[1][0].toUpperCase()}${match[1].slice(1)} overlap, n = ${match[2]}`;
  return label;
}

export function formatMetric(value: number, mcse: number): string {
  return `${value.toFixed(3)} (${mcse.toFixed(3)})`;
}

interface PanelData {
  scenario: string;
  methods: string[];
  estimates: Map<string, number[]>;
  metrics: Map<string, MetricsRow>;
}

function groupPanels(estimates: EstimateRow[], metrics: MetricsRow[]): PanelData[] {
  const scenarios = scenarioOrder(metrics);
  const panels: PanelData[] = [];
  for (const scenario of scenarios) {
    const scenarioMetrics = metrics.filter((r) => r.scenario === scenario);
    const methods = methodOrder(scenarioMetrics);
    const est = new Map<string, number[]>();
    const met = new Map<string, MetricsRow>();
    for (const method of methods) {
      const values = estimates
        .filter((r) => r.scenario === scenario && r.method === method)
        .map((r) => r.delta_12);
      if (values.length < 2) {
        throw new Error(
          `scenario ${JSON.stringify(scenario)} method ${JSON.stringify(method)} has ` +
            `${values.length} estimate rows; need at least 2 to draw a density`
        );
      }
      est.set(method, values);
      met.set(method, scenarioMetrics.find((r) => r.method === method)!);
    }
    panels.push({ scenario, methods, estimates: est, metrics: met });
  }
  return panels;
}

function renderPanel(panel: PanelData, x0: number, y0: number, trueValue: number): string {
  const parts: string[] = [];
  const nMethods = panel.methods.length;
  const plotW = PANEL_W - LABEL_W - 24;
  const plotX = x0 + LABEL_W;
  const plotTop = y0 + TITLE_H;
  const plotH = nMethods * RIDGE_H;

  parts.push(
    tag("text", {
      x: x0, y: y0 + 14, "font-size": 14, "font-weight": "bold", fill: "#222",
    }, [], prettyScenario(panel.scenario))
  );

  const curves = panel.methods.map((m) => kdeCurve(panel.estimates.get(m)!));
  let lo = Math.min(trueValue, ...curves.map((c) => c.x[0]));
  let hi = Math.max(trueValue, ...curves.map((c) => c.x[c.x.length - 1]));
  const pad = 0.04 * (hi - lo);
  lo -= pad;
  hi += pad;
  const sx = (v: number) => plotX + ((v - lo) / (hi - lo)) * plotW;

  // ridgelines, bottom method drawn last so overlaps read naturally
  panel.methods.forEach((method, i) => {
    const curve = curves[i];
    const baseline = plotTop + (i + 1) * RIDGE_H;
    const peak = Math.max(...curve.density);
    const scaleY = (RIDGE_H * 1.45) / peak;
    const xs = curve.x.map(sx);
    const ys = curve.density.map((d) => baseline - d * scaleY);
    const outline = polylinePath(xs, ys);
    const area =
      outline +
      `L${xs[xs.length - 1].toFixed(2)},${baseline.toFixed(2)}` +
      `L${xs[0].toFixed(2)},${baseline.toFixed(2)}Z`;
    const color = METHOD_COLORS[method] ?? FALLBACK_COLORS[i % FALLBACK_COLORS.length];
    parts.push(tag("path", { d: area, fill: color, "fill-opacity": 0.35, stroke: "none" }));
    parts.push(tag("path", { d: outline, fill: "none", stroke: color, "stroke-width": 1.2 }));
    parts.push(
      tag("text", {
        x: x0 + LABEL_W - 8, y: baseline - 4, "font-size": 11, "text-anchor": "end",
        fill: "#333",
      }, [], method)
    );
  });

  // reference line at the true value
  parts.push(
    tag("line", {
      x1: sx(trueValue), x2: sx(trueValue), y1: plotTop + 2, y2: plotTop + plotH + 4,
      stroke: "#444", "stroke-dasharray": "4,3", "stroke-width": 1, class: "true-value-line",
    })
  );

  // x axis
  const axisY = plotTop + plotH + 6;
  parts.push(tag("line", { x1: plotX, x2: plotX + plotW, y1: axisY, y2: axisY, stroke: "#555" }));
  for (const t of ticks(lo, hi, 5)) {
    parts.push(tag("line", { x1: sx(t), x2: sx(t), y1: axisY, y2: axisY + 4, stroke: "#555" }));
    parts.push(
      tag("text", {
        x: sx(t), y: axisY + 15, "font-size": 10, "text-anchor": "middle", fill: "#333",
      }, [], String(Number(t.toFixed(6))))
    );
  }

  // metrics table
  const tableTop = axisY + AXIS_H + TABLE_PAD;
  const headers = ["Method", "Bias", "ESE", "MSE", "Cov"];
  const colX = [x0, x0 + 92, x0 + 186, x0 + 280, x0 + 374];
  headers.forEach((h, i) => {
    parts.push(
      tag("text", {
        x: colX[i], y: tableTop, "font-size": 11, "font-weight": "bold", fill: "#222",
      }, [], h)
    );
  });
  panel.methods.forEach((method, r) => {
    const m = panel.metrics.get(method)!;
    const y = tableTop + (r + 1) * ROW_H;
    const cells = [
      method,
      formatMetric(m.bias, m.bias_mcse),
      formatMetric(m.ese, m.ese_mcse),
      formatMetric(m.mse, m.mse_mcse),
      formatMetric(m.coverage, m.coverage_mcse),
    ];
    cells.forEach((cell, i) => {
      parts.push(
        tag("text", { x: colX[i], y, "font-size": 10.5, fill: "#222", class: "metric-cell" },
            [], cell)
      );
    });
  });

  return tag("g", { class: `panel panel-${panel.scenario}` }, parts);
}

export function renderFigure(spec: FigureSpec): string {
  const estimates = readEstimates(spec.estimatesPath);
  const metrics = readMetrics(spec.metricsPath);
  const estScenarios = new Set(estimates.map((r) => r.scenario));
  for (const row of metrics) {
    if (!estScenarios.has(row.scenario)) {
      throw new Error(
        `scenario ${JSON.stringify(row.scenario)} appears in metrics but not in estimates`
      );
    }
  }
  const trueValue = spec.trueValue ?? 0;
  const panels = groupPanels(estimates, metrics);

  const columns = Math.min(2, panels.length);
  const rows = Math.ceil(panels.length / columns);
  const nMethods = Math.max(...panels.map((p) => p.methods.length));
  const panelH =
    TITLE_H + nMethods * RIDGE_H + 6 + AXIS_H + TABLE_PAD + (nMethods + 1) * ROW_H + 26;
  const width = MARGIN * 2 + columns * PANEL_W + (columns - 1) * 14;
  const height = MARGIN * 2 + rows * panelH + 18;

  const body: string[] = [
    tag("rect", { x: 0, y: 0, width, height, fill: "white" }),
  ];
  panels.forEach((panel, i) => {
    const col = i % columns;
    const row = Math.floor(i / columns);
    body.push(renderPanel(panel, MARGIN + col * (PANEL_W + 14), MARGIN + row * panelH, trueValue));
  });
  body.push(
    tag("text", {
      x: MARGIN, y: height - 8, "font-size": 9.5, fill: "#666",
    }, [], "Densities: Gaussian kernel estimate, Silverman bandwidth. " +
           "Dashed line marks the true value. MCSEs in parentheses.")
  );

  const svg =
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" ` +
    `viewBox="0 0 ${width} ${height}" font-family="Helvetica, Arial, sans-serif">` +
    body.join("") +
    "</svg>";
  return svg;
}

export function main(argv = process.argv.slice(2)): void {
  const { values } = parseArgs({
    args: argv,
    options: {
      estimates: { type: "string" },
      metrics: { type: "string" },
      out: { type: "string" },
      "true-value": { type: "string", default: "0" },
    },
  });
  if (!values.estimates || !values.metrics || !values.out) {
    throw new Error("usage: figures --estimates <csv> --metrics <csv> --out <svg>");
  }
  const svg = renderFigure({
    estimatesPath: values.estimates,
    metricsPath: values.metrics,
    outPath: values.out,
    trueValue: Number(values["true-value"]),
  });
  fs.mkdirSync(path.dirname(path.resolve(values.out)), { recursive: true });
  fs.writeFileSync(values.out, svg, "utf-8");
  console.log(`wrote ${values.out}`);
}

const isDirectRun =
  process.argv[1] !== undefined &&
  path.resolve(process.argv[1]) === path.resolve(new URL(import.meta.url).pathname);
if (isDirectRun) {
  try {
    main();
  } catch (err) {
    console.error(String(err instanceof Error ? err.message : err));
    process.exit(1);
  }
}
