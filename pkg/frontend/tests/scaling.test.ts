// Scaling figure from the committed preset output.
//
// The all-pairs line must annotate slope 2.00: its costs are exactly n^2,
// so the log-log fit is 2 up to float noise. The padded-run slope lands
// near 1.15 on this fixture and must stay within the near-linear band.

import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import { SweepFrame } from "../src/frame";
import { InsufficientPoints } from "../src/figure";
import { buildScalingFigure } from "../src/scaling";
import { CSV_MAGIC, COLUMNS } from "../src/schema";

const text = readFileSync(new URL("../fixtures/scaling.csv", import.meta.url), "ascii");

describe("buildScalingFigure", () => {
  it("annotates the all-pairs line with slope 2.00", () => {
    const fig = buildScalingFigure(SweepFrame.fromText(text));
    const apc = fig.series.find((s) => s.label === "apc eps=1.6")!;
    expect(apc.annotation).toBe("slope 2.00");
  });

  it("keeps the padded run in the near-linear band", () => {
    const fig = buildScalingFigure(SweepFrame.fromText(text));
    const lp = fig.series.find((s) => s.label === "lp eps=1.6")!;
    const slope = Number(lp.annotation!.replace("slope ", ""));
    expect(slope).toBeGreaterThanOrEqual(1.0);
    expect(slope).toBeLessThanOrEqual(1.3);
  });

  it("walks n in increasing order with one point per size", () => {
    const fig = buildScalingFigure(SweepFrame.fromText(text));
    for (const s of fig.series) {
      const xs = s.points.map((p) => p.x);
      expect(xs).toEqual([...xs].sort((a, b) => a - b));
      expect(xs.length).toBe(4);
    }
  });

  it("is a pure function of the file", () => {
    const a = buildScalingFigure(SweepFrame.fromText(text));
    const b = buildScalingFigure(SweepFrame.fromText(text));
    expect(a).toEqual(b);
  });

  it("refuses a single-size table", () => {
    const single =
      `${CSV_MAGIC}\n${COLUMNS.join(",")}\n` +
      "apc,100,100,1.6,1e-05,0,10000,1.0,5.0,0,\n" +
      "apc,100,100,1.6,1e-05,1,10000,1.0,5.0,0,\n";
    expect(() => buildScalingFigure(SweepFrame.fromText(single))).toThrow(InsufficientPoints);
  });
});
