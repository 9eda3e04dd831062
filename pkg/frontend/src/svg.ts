/**
 * Static SVG renderer for the figure model.
 *
 * Pure string assembly from the figure's numbers: the same figure always
 * renders byte-identical markup, which is what makes image diffs in
 * review meaningful.
 */

import { Bar, Figure, Point, Series } from "./figure.js";

const W = 640;
const H = 420;
const M = { top: 40, right: 150, bottom: 48, left: 64 };
const PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

interface Scale {
  (v: number): number;
}

function linScale(lo: number, hi: number, outLo: number, outHi: number): Scale {
  const span = hi - lo || 1;
  return (v) => outLo + ((v - lo) / span) * (outHi - outLo);
}

function fmt(v: number): string {
  return Number(v.toPrecision(6)).toString();
}

function extent(values: number[]): [number, number] {
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of values) {
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  return [lo, hi];
}

function ticks(lo: number, hi: number, n = 5): number[] {
  const span = hi - lo || 1;
  const step = span / (n - 1);
  return Array.from({ length: n }, (_, i) => lo + i * step);
}

function axes(fig: Figure, sx: Scale, sy: Scale, xt: number[], yt: number[]): string {
  const parts: string[] = [];
  const x0 = M.left;
  const x1 = W - M.right;
  const y0 = H - M.bottom;
  const y1 = M.top;
  parts.push(`<line x1="${x0}" y1="${y0}" x2="${x1}" y2="${y0}" stroke="black"/>`);
  parts.push(`<line x1="${x0}" y1="${y0}" x2="${x0}" y2="${y1}" stroke="black"/>`);
  for (const t of xt) {
    const x = fmt(sx(t));
    parts.push(`<line x1="${x}" y1="${y0}" x2="${x}" y2="${y0 + 5}" stroke="black"/>`);
    parts.push(
      `<text x="${x}" y="${y0 + 18}" font-size="11" text-anchor="middle">${fmt(t)}</text>`,
    );
  }
  for (const t of yt) {
    const y = fmt(sy(t));
    parts.push(`<line x1="${x0 - 5}" y1="${y}" x2="${x0}" y2="${y}" stroke="black"/>`);
    parts.push(
      `<text x="${x0 - 8}" y="${y}" font-size="11" text-anchor="end" dominant-baseline="middle">${fmt(t)}</text>`,
    );
  }
  parts.push(
    `<text x="${(x0 + x1) / 2}" y="${H - 10}" font-size="12" text-anchor="middle">${fig.xLabel}</text>`,
  );
  parts.push(
    `<text x="16" y="${(y0 + y1) / 2}" font-size="12" text-anchor="middle" transform="rotate(-90 16 ${(y0 + y1) / 2})">${fig.yLabel}</text>`,
  );
  parts.push(
    `<text x="${(x0 + x1) / 2}" y="24" font-size="14" text-anchor="middle">${fig.title}</text>`,
  );
  return parts.join("\n");
}

function renderSeries(series: Series[], sx: Scale, sy: Scale): string {
  const parts: string[] = [];
  series.forEach((s, i) => {
    const color = PALETTE[i % PALETTE.length]!;
    const pts = s.points.map((p: Point) => `${fmt(sx(p.x))},${fmt(sy(p.y))}`).join(" ");
    parts.push(`<polyline points="${pts}" fill="none" stroke="${color}" stroke-width="1.5"/>`);
    for (const p of s.points) {
      parts.push(
        `<circle cx="${fmt(sx(p.x))}" cy="${fmt(sy(p.y))}" r="3" fill="${color}"/>`,
      );
    }
    const last = s.points[s.points.length - 1];
    if (s.annotation !== undefined && last !== undefined) {
      parts.push(
        `<text x="${fmt(sx(last.x) + 6)}" y="${fmt(sy(last.y) - 6)}" font-size="11" fill="${color}">${s.annotation}</text>`,
      );
    }
    const ly = M.top + 16 * i;
    parts.push(`<rect x="${W - M.right + 10}" y="${ly - 9}" width="10" height="10" fill="${color}"/>`);
    parts.push(`<text x="${W - M.right + 26}" y="${ly}" font-size="11">${s.label}</text>`);
  });
  return parts.join("\n");
}

function renderBars(bars: Bar[], sy: Scale): string {
  const parts: string[] = [];
  const x0 = M.left;
  const x1 = W - M.right;
  const slot = (x1 - x0) / bars.length;
  const y0 = H - M.bottom;
  bars.forEach((b, i) => {
    const color = PALETTE[i % PALETTE.length]!;
    const bx = x0 + i * slot + slot * 0.15;
    const by = sy(b.value);
    parts.push(
      `<rect x="${fmt(bx)}" y="${fmt(by)}" width="${fmt(slot * 0.7)}" height="${fmt(y0 - by)}" fill="${color}"/>`,
    );
    parts.push(
      `<text x="${fmt(bx + slot * 0.35)}" y="${y0 + 18}" font-size="10" text-anchor="middle">${b.label}</text>`,
    );
    parts.push(
      `<text x="${fmt(bx + slot * 0.35)}" y="${fmt(by - 4)}" font-size="10" text-anchor="middle">${fmt(b.value)}</text>`,
    );
  });
  return parts.join("\n");
}

export function renderSvg(fig: Figure): string {
  let body: string;
  if (fig.bars.length > 0) {
    const [, hi] = extent(fig.bars.map((b) => b.value));
    const sy = linScale(0, hi, H - M.bottom, M.top);
    const sx = linScale(0, 1, M.left, W - M.right);
    body = axes(fig, sx, sy, [], ticks(0, hi)) + "\n" + renderBars(fig.bars, sy);
  } else {
    const allPts = fig.series.flatMap((s) => s.points);
    const [xlo, xhi] = extent(allPts.map((p) => p.x));
    const [ylo, yhi] = extent(allPts.map((p) => p.y));
    const sx = linScale(xlo, xhi, M.left, W - M.right);
    const sy = linScale(ylo, yhi, H - M.bottom, M.top);
    body =
      axes(fig, sx, sy, ticks(xlo, xhi), ticks(ylo, yhi)) +
      "\n" +
      renderSeries(fig.series, sx, sy);
  }
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" width="${W}" height="${H}" viewBox="0 0 ${W} ${H}">\n` +
    `<rect width="${W}" height="${H}" fill="white"/>\n${body}\n</svg>\n`
  );
}
