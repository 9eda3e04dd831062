/** Least-squares line fit; slope is all the figures ever annotate. */

export interface LineFit {
  slope: number;
  intercept: number;
}

export function fitLine(xs: number[], ys: number[]): LineFit {
  if (xs.length !== ys.length || xs.length < 2) {
    throw new Error(`need >= 2 paired points, got ${xs.length}/${ys.length}`);
  }
  const n = xs.length;
  let sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (let i = 0; i < n; i++) {
    const x = xs[i]!;
    const y = ys[i]!;
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const denom = n * sxx - sx * sx;
  if (denom === 0) throw new Error("degenerate fit: all x equal");
  const slope = (n * sxy - sx * sy) / denom;
  return { slope, intercept: (sy - slope * sx) / n };
}
