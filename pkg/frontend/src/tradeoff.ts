/**
 * Recall against cost ratio, one line per (eps, delta).
 *
 * The ratio denominator is the all-pairs baseline at the same instance
 * size, so a point at x=0.05 reads "a twentieth of the naive cost". Each
 * line walks the stop percentiles from aggressive pruning to none;
 * tighter budgets pad more and sit further right at equal recall.
 */

import { SweepFrame, mean } from "./frame.js";
import { Figure, MissingBaseline, Series } from "./figure.js";
import { ResultRow } from "./schema.js";

export function buildTradeoffFigure(frame: SweepFrame): Figure {
  const byProto = frame.groupBy(frame.rows, (r) => r.protocol);
  const apc = byProto.get("apc");
  if (apc === undefined) {
    throw new MissingBaseline("no apc rows to take the cost ratio against");
  }
  const baseline = new Map<string, number>();
  for (const [key, rows] of frame.groupBy(apc, (r) => `${r.nA}|${r.delta}`)) {
    baseline.set(key, mean(rows.map((r) => r.cost)));
  }

  const lines = frame.groupBy(
    frame.rows.filter((r) => r.protocol !== "apc"),
    (r) => `${r.nA}|${r.eps}|${r.delta}`,
  );
  const series: Series[] = [];
  const sortedKeys = [...lines.keys()].sort((a, b) => {
    const ea = Number(a.split("|")[1]);
    const eb = Number(b.split("|")[1]);
    return ea - eb || a.localeCompare(b);
  });
  for (const key of sortedKeys) {
    const rows = lines.get(key)!;
    const [nStr, eps, delta] = key.split("|") as [string, string, string];
    const base = baseline.get(`${nStr}|${delta}`);
    if (base === undefined) {
      throw new MissingBaseline(`no apc rows at n=${nStr} delta=${delta}`);
    }
    const byStop = frame.groupBy(rows, (r) => String(r.stopPercentile));
    const stops = [...byStop.keys()].map(Number).sort((a, b) => b - a);
    const points = stops.map((stop) => {
      const group = byStop.get(String(stop))!;
      return {
        x: mean(group.map((r: ResultRow) => r.cost)) / base,
        y: mean(group.map((r: ResultRow) => r.recall)),
      };
    });
    series.push({ label: `eps=${eps} delta=${delta}`, points });
  }
  return {
    title: "recall vs cost ratio",
    xLabel: "cost / all-pairs cost",
    yLabel: "recall",
    series,
    bars: [],
  };
}

/**
 * Cheapest cost ratio at which a line reaches the given recall: linear
 * interpolation between the neighboring checkpoints when the line
 * crosses the target, or the first checkpoint when even the most
 * aggressive suppression already clears it. The figure-level ordering
 * claims ("smaller budget sits further right") are statements about
 * this value.
 */
export function ratioAtRecall(s: Series, recall: number): number {
  const pts = [...s.points].sort((a, b) => a.x - b.x);
  const first = pts[0];
  if (first !== undefined && first.y >= recall) return first.x;
  for (let i = 0; i + 1 < pts.length; i++) {
    const lo = pts[i]!;
    const hi = pts[i + 1]!;
    if (lo.y <= recall && recall <= hi.y) {
      if (hi.y === lo.y) return lo.x;
      return lo.x + ((recall - lo.y) / (hi.y - lo.y)) * (hi.x - lo.x);
    }
  }
  throw new RangeError(`${s.label} never reaches recall ${recall}`);
}
