/**
 * Cost-vs-size figure: log10 mean cost against log10 n, one line per
 * (protocol, eps), annotated with the fitted slope.
 */

import { SweepFrame, mean } from "./frame.js";
import { fitLine } from "./fit.js";
import { Figure, InsufficientPoints, Series } from "./figure.js";

export function buildScalingFigure(frame: SweepFrame): Figure {
  const groups = frame.groupBy(frame.finalRows(), (r) => `${r.protocol}|${r.eps}`);
  const series: Series[] = [];
  for (const key of [...groups.keys()].sort()) {
    const rows = groups.get(key)!;
    const [protocol, eps] = key.split("|") as [string, string];
    const byN = frame.groupBy(rows, (r) => String(r.nA));
    const ns = [...byN.keys()].map(Number).sort((a, b) => a - b);
    if (ns.length < 2) {
      throw new InsufficientPoints(
        `${protocol} eps=${eps}: ${ns.length} distinct n, need >= 2 for a slope`,
      );
    }
    const points = ns.map((n) => ({
      x: Math.log10(n),
      y: Math.log10(mean(byN.get(String(n))!.map((r) => r.cost))),
    }));
    const fit = fitLine(points.map((p) => p.x), points.map((p) => p.y));
    series.push({
      label: `${protocol} eps=${eps}`,
      points,
      annotation: `slope ${fit.slope.toFixed(2)}`,
    });
  }
  return {
    title: "comparison cost vs data size",
    xLabel: "log10 n",
    yLabel: "log10 mean cost",
    series,
    bars: [],
  };
}
