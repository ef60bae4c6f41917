// Hand-rolled SVG line chart: pure string generation so geometry is
// testable without a renderer.

import type { SeriesPoint } from "./live.js";

export const SERIES_COLORS = [
  "#2563eb", "#dc2626", "#16a34a", "#9333ea", "#ea580c", "#0891b2", "#ca8a04",
];

export function niceCeiling(maxValue: number): number {
  if (maxValue <= 0) return 1;
  const magnitude = 10 ** Math.floor(Math.log10(maxValue));
  for (const step of [1, 2, 5, 10]) {
    if (maxValue <= step * magnitude) return step * magnitude;
  }
  return 10 * magnitude;
}

export function polylinePoints(
  points: SeriesPoint[],
  width: number,
  height: number,
  maxY: number,
): string {
  if (points.length === 0) return "";
  if (points.length === 1) {
    const y = height - (points[0].mbps / maxY) * height;
    return `0,${round2(y)}`;
  }
  const t0 = points[0].t;
  const t1 = points[points.length - 1].t;
  const span = Math.max(1e-9, t1 - t0);
  return points
    .map((p) => {
      const x = ((p.t - t0) / span) * width;
      const y = height - (Math.min(p.mbps, maxY) / maxY) * height;
      return `${round2(x)},${round2(y)}`;
    })
    .join(" ");
}

function round2(value: number): number {
  return Math.round(value * 100) / 100;
}

export function chartMax(series: Map<string, SeriesPoint[]>): number {
  let max = 0;
  for (const points of series.values()) {
    for (const p of points) max = Math.max(max, p.mbps);
  }
  return niceCeiling(max);
}

export function renderChartSvg(
  series: Map<string, SeriesPoint[]>,
  width = 640,
  height = 240,
): string {
  const maxY = chartMax(series);
  const lines: string[] = [];
  const labels: string[] = [];
  let index = 0;
  for (const [name, points] of [...series.entries()].sort(([a], [b]) => a.localeCompare(b))) {
    const color = SERIES_COLORS[index % SERIES_COLORS.length];
    lines.push(
      `<polyline fill="none" stroke="${color}" stroke-width="1.5" ` +
        `points="${polylinePoints(points, width, height, maxY)}"/>`,
    );
    labels.push(
      `<tspan fill="${color}">&#9632;</tspan> ${escapeXml(name)}`,
    );
    index += 1;
  }
  const gridY = [0.25, 0.5, 0.75].map((f) => {
    const y = round2(height * f);
    return `<line x1="0" y1="${y}" x2="${width}" y2="${y}" stroke="#e5e7eb"/>`;
  });
  return (
    `<svg viewBox="0 0 ${width} ${height + 24}" xmlns="http://www.w3.org/2000/svg" class="chart">` +
    `<text x="4" y="12" class="axis">${round2(maxY)} Mbps</text>` +
    gridY.join("") +
    lines.join("") +
    `<text x="4" y="${height + 18}" class="legend">${labels.join("   ")}</text>` +
    `</svg>`
  );
}

export function escapeXml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}
