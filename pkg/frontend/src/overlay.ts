// Pure pixel-buffer builders for the canvas layers.

export interface Rgba {
  r: number;
  g: number;
  b: number;
  a: number; // 0..255
}

export const EXPANSION_COLOR: Rgba = { r: 255, g: 64, b: 32, a: 128 }; // 50% red-orange

/** RGBA buffer (width*height*4) with `color` where the mask is set, clear elsewhere. */
export function maskToRgba(mask: Uint8Array, width: number, height: number,
                           color: Rgba = EXPANSION_COLOR) {
  if (mask.length !== width * height) {
    throw new Error(`mask has ${mask.length} entries, expected ${width * height}`);
  }
  const out = new Uint8ClampedArray(width * height * 4);
  for (let i = 0; i < mask.length; i++) {
    if (mask[i]) {
      const o = i * 4;
      out[o] = color.r;
      out[o + 1] = color.g;
      out[o + 2] = color.b;
      out[o + 3] = color.a;
    }
  }
  return out;
}

/** Count of opaque (mask-set) pixels in a buffer built by maskToRgba. */
export function overlayPopcount(rgba: Uint8ClampedArray): number {
  let n = 0;
  for (let i = 3; i < rgba.length; i += 4) {
    if (rgba[i] !== 0) n++;
  }
  return n;
}
