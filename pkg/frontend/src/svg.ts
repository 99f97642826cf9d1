/** Minimal SVG text assembly helpers (no DOM dependency). */

export function esc(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function tag(
  name: string,
  attrs: Record<string, string | number>,
  children: string[] = [],
  text?: string
): string {
  const attrText = Object.entries(attrs)
    .map(([k, v]) => `${k}="${v}"`)
    .join(" ");
  const body = text !== undefined ? esc(text) : children.join("");
  if (body === "") return `<${name} ${attrText}/>`;
  return `<${name} ${attrText}>${body}</${name}>`;
}

export function polylinePath(xs: number[], ys: number[], close = false): string {
  const pieces = xs.map((x, i) => `${i === 0 ? "M" : "L"}${x.toFixed(2)},${ys[i].toFixed(2)}`);
  return pieces.join("") + (close ? "Z" : "");
}

/** Round-ish tick positions covering [lo, hi]. */
export function ticks(lo: number, hi: number, count = 5): number[] {
  const span = hi - lo;
  if (!(span > 0)) return [lo];
  const step = Math.pow(10, Math.floor(Math.log10(span / count)));
  const err = (span / count) / step;
  const mult = err >= 7.5 ? 10 : err >= 3.5 ? 5 : err >= 1.5 ? 2 : 1;
  const tick = step * mult;
  const start = Math.ceil(lo / tick) * tick;
  const out: number[] = [];
  for (let v = start; v <= hi + 1e-12; v += tick) out.push(Number(v.toFixed(10)));
  return out;
}
