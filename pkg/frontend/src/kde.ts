/** Gaussian kernel density estimation with Silverman's bandwidth rule. */

export function silvermanBandwidth(values: number[]): number {
  const n = values.length;
  if (n < 2) throw new Error("need at least 2 values for a bandwidth");
  const mean = values.reduce((a, b) => a + b, 0) / n;
  const sd = Math.sqrt(values.reduce((a, b) => a + (b - mean) ** 2, 0) / (n - 1));
  const sorted = [...values].sort((a, b) => a - b);
  const quantile = (q: number) => {
    const h = (n - 1) * q;
    const lo = Math.floor(h);
    const hi = Math.min(lo + 1, n - 1);
    return sorted[lo] + (h - lo) * (sorted[hi] - sorted[lo]);
  };
  const iqr = quantile(0.75) - quantile(0.25);
  const spread = Math.min(sd, iqr / 1.34) || sd;
  const h = 0.9 * spread * Math.pow(n, -0.2);
  if (!(h > 0)) throw new Error("degenerate sample: zero bandwidth");
  return h;
}

export function kdeCurve(
  values: number[],
  gridPoints = 160,
  padBandwidths = 3
): { x: number[]; density: number[] } {
  const h = silvermanBandwidth(values);
  const lo = Math.min(...values) - padBandwidths * h;
  const hi = Math.max(...values) + padBandwidths * h;
  const x: number[] = [];
  const density: number[] = [];
  const norm = 1 / (values.length * h * Math.sqrt(2 * Math.PI));
  for (let i = 0; i < gridPoints; i++) {
    const xi = lo + ((hi - lo) * i) / (gridPoints - 1);
    let sum = 0;
    for (const v of values) {
      const u = (xi - v) / h;
      sum += Math.exp(-0.5 * u * u);
    }
    x.push(xi);
    density.push(norm * sum);
  }
  return { x, density };
}
