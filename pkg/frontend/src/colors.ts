/** Colormaps: diverging for similarity in [-1, 1], categorical for parts. */

export type Rgb = [number, number, number];

/**
 * Blue (-1) through white (0) to red (+1). The clicked face's
 * self-similarity of 1 lands exactly on the colormap maximum.
 */
export function diverging(value: number): Rgb {
  const v = Math.max(-1, Math.min(1, value));
  if (v >= 0) {
    return [1, 1 - v, 1 - v];
  }
  return [1 + v, 1 + v, 1];
}

export const DIVERGING_MAX: Rgb = diverging(1);

/** 20 visually distinct part colors, cycled beyond that. */
const CATEGORICAL: Rgb[] = [
  [0.122, 0.467, 0.706], [0.682, 0.780, 0.910], [1.000, 0.498, 0.055],
  [1.000, 0.733, 0.471], [0.173, 0.627, 0.173], [0.596, 0.875, 0.541],
  [0.839, 0.153, 0.157], [1.000, 0.596, 0.588], [0.580, 0.404, 0.741],
  [0.773, 0.690, 0.835], [0.549, 0.337, 0.294], [0.769, 0.612, 0.580],
  [0.890, 0.467, 0.761], [0.969, 0.714, 0.824], [0.498, 0.498, 0.498],
  [0.780, 0.780, 0.780], [0.737, 0.741, 0.133], [0.859, 0.859, 0.553],
  [0.090, 0.745, 0.812], [0.620, 0.855, 0.898],
];

export function categorical(index: number): Rgb {
  return CATEGORICAL[((index % 20) + 20) % 20];
}

/** HSL hue (s=0.65, l=0.55) to RGB; used for nesting-consistent part hues. */
export function hueToRgb(hue: number): Rgb {
  const h = ((hue % 1) + 1) % 1;
  const s = 0.65;
  const l = 0.55;
  const c = (1 - Math.abs(2 * l - 1)) * s;
  const x = c * (1 - Math.abs(((h * 6) % 2) - 1));
  const m = l - c / 2;
  let r = 0, g = 0, b = 0;
  if (h < 1 / 6) [r, g, b] = [c, x, 0];
  else if (h < 2 / 6) [r, g, b] = [x, c, 0];
  else if (h < 3 / 6) [r, g, b] = [0, c, x];
  else if (h < 4 / 6) [r, g, b] = [0, x, c];
  else if (h < 5 / 6) [r, g, b] = [x, 0, c];
  else [r, g, b] = [c, 0, x];
  return [r + m, g + m, b + m];
}

/** Per-face triangle colors (3 vertices per face) from per-face RGB values. */
export function fillFaceColors(
  out: Float32Array,
  face: number,
  rgb: Rgb
): void {
  const base = face * 9;
  for (let v = 0; v < 3; v++) {
    out[base + v * 3] = rgb[0];
    out[base + v * 3 + 1] = rgb[1];
    out[base + v * 3 + 2] = rgb[2];
  }
}

export function similarityColors(values: ArrayLike<number>, out?: Float32Array): Float32Array {
  const colors = out ?? new Float32Array(values.length * 9);
  for (let f = 0; f < values.length; f++) {
    fillFaceColors(colors, f, diverging(values[f]));
  }
  return colors;
}

export function segmentationColors(
  labels: ArrayLike<number>,
  hues?: ArrayLike<number>,
  out?: Float32Array
): Float32Array {
  const colors = out ?? new Float32Array(labels.length * 9);
  for (let f = 0; f < labels.length; f++) {
    const lab = labels[f];
    const rgb = hues ? hueToRgb(hues[lab]) : categorical(lab);
    fillFaceColors(colors, f, rgb);
  }
  return colors;
}
