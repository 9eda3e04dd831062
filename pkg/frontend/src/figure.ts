/** Figure model shared by the builders and the SVG renderer. */

export interface Point {
  x: number;
  y: number;
}

export interface Series {
  label: string;
  points: Point[];
  /** Drawn next to the last point, e.g. a fitted slope. */
  annotation?: string;
}

export interface Bar {
  label: string;
  value: number;
}

export interface Figure {
  title: string;
  xLabel: string;
  yLabel: string;
  series: Series[];
  bars: Bar[];
}

export class InsufficientPoints extends Error {}
export class MissingBaseline extends Error {}
