/**
 * Bar chart of mean full-run cost per (protocol, eps): the picture of what
 * each optimization step buys at one instance size.
 */

import { SweepFrame, mean } from "./frame.js";
import { Figure, InsufficientPoints } from "./figure.js";

export function buildOptFigure(frame: SweepFrame): Figure {
  const finals = frame.finalRows();
  if (finals.length === 0) throw new InsufficientPoints("no rows");
  const groups = frame.groupBy(finals, (r) => `${r.protocol}|${r.eps}`);
  const bars = [...groups.keys()].sort().map((key) => {
    const [protocol, eps] = key.split("|") as [string, string];
    return {
      label: `${protocol} eps=${eps}`,
      value: mean(groups.get(key)!.map((r) => r.cost)),
    };
  });
  return {
    title: "mean full-run cost by variant",
    xLabel: "variant",
    yLabel: "mean cost",
    series: [],
    bars,
  };
}
