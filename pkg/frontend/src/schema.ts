/**
 * The frozen results schema, as written by the sweep harness.
 *
 * This package never computes costs or recalls itself; everything it draws
 * comes out of a file with this exact header. The magic line carries the
 * schema version, so a harness-side change that would silently skew a
 * figure fails loudly here instead.
 */

export const CSV_MAGIC = "# privlink-results v1";

export const COLUMNS = [
  "protocol", "n_a", "n_b", "eps", "delta", "trial",
  "cost", "recall", "wall_ms", "stop_percentile", "gamma",
] as const;

export interface ResultRow {
  protocol: string;
  nA: number;
  nB: number;
  eps: number;
  delta: number;
  trial: number;
  cost: number;
  recall: number;
  wallMs: number;
  stopPercentile: number;
  gamma: number | null;
}

export class SchemaMismatch extends Error {}

function num(field: string, raw: string, line: number): number {
  const v = Number(raw);
  if (raw === "" || !Number.isFinite(v)) {
    throw new SchemaMismatch(`line ${line}: ${field} is not a number: ${JSON.stringify(raw)}`);
  }
  return v;
}

export function parseResults(text: string): ResultRow[] {
  const lines = text.split("\n");
  if ((lines[0] ?? "").trim() !== CSV_MAGIC) {
    throw new SchemaMismatch(`bad magic line: ${JSON.stringify(lines[0] ?? "")}`);
  }
  const header = (lines[1] ?? "").trim();
  if (header !== COLUMNS.join(",")) {
    throw new SchemaMismatch(`column mismatch: ${JSON.stringify(header)}`);
  }
  const rows: ResultRow[] = [];
  for (let i = 2; i < lines.length; i++) {
    const line = (lines[i] ?? "").trim();
    if (line === "" || line.startsWith("#")) continue;
    const parts = line.split(",");
    if (parts.length !== COLUMNS.length) {
      throw new SchemaMismatch(`line ${i + 1}: ${parts.length} fields, want ${COLUMNS.length}`);
    }
    rows.push({
      protocol: parts[0]!,
      nA: num("n_a", parts[1]!, i + 1),
      nB: num("n_b", parts[2]!, i + 1),
      eps: num("eps", parts[3]!, i + 1),
      delta: num("delta", parts[4]!, i + 1),
      trial: num("trial", parts[5]!, i + 1),
      cost: num("cost", parts[6]!, i + 1),
      recall: num("recall", parts[7]!, i + 1),
      wallMs: num("wall_ms", parts[8]!, i + 1),
      stopPercentile: num("stop_percentile", parts[9]!, i + 1),
      gamma: parts[10] === "" ? null : num("gamma", parts[10]!, i + 1),
    });
  }
  return rows;
}
