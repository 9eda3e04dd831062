/**
 * Row grouping over a parsed results table.
 *
 * Checkpointed runs write one row per stop percentile; the row with the
 * smallest percentile in a (protocol, n, eps, delta, trial) group is the
 * full run for that trial, since lower thresholds keep more groups.
 */

import { ResultRow, parseResults } from "./schema.js";

export function mean(xs: number[]): number {
  let s = 0;
  for (const x of xs) s += x;
  return s / xs.length;
}

export class SweepFrame {
  constructor(public readonly rows: ResultRow[]) {}

  static fromText(text: string): SweepFrame {
    return new SweepFrame(parseResults(text));
  }

  /** One row per trial: the lowest-percentile (most complete) row. */
  finalRows(): ResultRow[] {
    const best = new Map<string, ResultRow>();
    for (const r of this.rows) {
      const key = [r.protocol, r.nA, r.eps, r.delta, r.trial].join("|");
      const cur = best.get(key);
      if (cur === undefined || r.stopPercentile < cur.stopPercentile) {
        best.set(key, r);
      }
    }
    return [...best.values()];
  }

  groupBy<K extends string>(rows: ResultRow[], keyOf: (r: ResultRow) => K): Map<K, ResultRow[]> {
    const out = new Map<K, ResultRow[]>();
    for (const r of rows) {
      const k = keyOf(r);
      const bucket = out.get(k);
      if (bucket === undefined) out.set(k, [r]);
      else bucket.push(r);
    }
    return out;
  }

  protocols(): string[] {
    return [...new Set(this.rows.map((r) => r.protocol))].sort();
  }
}
