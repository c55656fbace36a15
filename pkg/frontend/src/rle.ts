import type { RleMask } from './types.js';

/** Decode service run-length runs into a binary mask (row-major Uint8Array). */
export function rleDecode(mask: RleMask): Uint8Array {
  const total = mask.width * mask.height;
  const out = new Uint8Array(total);
  let pos = 0;
  let val = 0;
  for (const run of mask.runs) {
    if (run < 0) throw new Error(`negative run length ${run}`);
    if (val) out.fill(1, pos, pos + run);
    pos += run;
    val ^= 1;
  }
  if (pos !== total) {
    throw new Error(`runs sum to ${pos}, expected ${total}`);
  }
  return out;
}

/** Inverse of rleDecode; used by round-trip tests. */
export function rleEncode(data: Uint8Array, width: number, height: number): RleMask {
  if (data.length !== width * height) {
    throw new Error(`mask has ${data.length} entries, expected ${width * height}`);
  }
  const runs: number[] = [];
  let current = 0;
  let run = 0;
  for (let i = 0; i < data.length; i++) {
    const v = data[i] ? 1 : 0;
    if (v === current) {
      run++;
    } else {
      runs.push(run);
      current = v;
      run = 1;
    }
  }
  runs.push(run);
  return { width, height, runs };
}

export function popcount(data: Uint8Array): number {
  let n = 0;
  for (let i = 0; i < data.length; i++) n += data[i];
  return n;
}
