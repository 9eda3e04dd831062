/**
 * plot scaling|tradeoff|opt --in results.csv --out fig.svg
 *
 * Exit codes: 0 ok, 2 usage, 1 anything else (unreadable file, schema
 * mismatch, not enough data for the requested figure).
 */

import { readFileSync, writeFileSync } from "node:fs";
import { parseArgs } from "node:util";

import { SweepFrame } from "./frame.js";
import { Figure } from "./figure.js";
import { buildOptFigure } from "./opt.js";
import { buildScalingFigure } from "./scaling.js";
import { renderSvg } from "./svg.js";
import { buildTradeoffFigure } from "./tradeoff.js";

const BUILDERS: Record<string, (frame: SweepFrame) => Figure> = {
  scaling: buildScalingFigure,
  tradeoff: buildTradeoffFigure,
  opt: buildOptFigure,
};

const USAGE = "usage: plot scaling|tradeoff|opt --in results.csv --out fig.svg";

export function main(argv: string[]): number {
  let parsed;
  try {
    parsed = parseArgs({
      args: argv,
      allowPositionals: true,
      options: { in: { type: "string" }, out: { type: "string" } },
    });
  } catch (err) {
    console.error(`${(err as Error).message}\n${USAGE}`);
    return 2;
  }
  const kind = parsed.positionals[0];
  const input = parsed.values.in;
  const output = parsed.values.out;
  if (kind === undefined || input === undefined || output === undefined || !(kind in BUILDERS)) {
    console.error(USAGE);
    return 2;
  }
  try {
    const frame = SweepFrame.fromText(readFileSync(input, "ascii"));
    writeFileSync(output, renderSvg(BUILDERS[kind]!(frame)));
  } catch (err) {
    console.error(`error: ${(err as Error).constructor.name}: ${(err as Error).message}`);
    return 1;
  }
  return 0;
}

if (process.argv[1] !== undefined && import.meta.url === `file://${process.argv[1]}`) {
  process.exit(main(process.argv.slice(2)));
}
