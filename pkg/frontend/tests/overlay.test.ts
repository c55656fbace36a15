import { describe, expect, it } from 'vitest';

import { EXPANSION_COLOR, maskToRgba, overlayPopcount } from '../src/overlay.js';
import { rleDecode } from '../src/rle.js';

describe('maskToRgba', () => {
  it('colors exactly the set pixels at 50% alpha', () => {
    const mask = new Uint8Array([0, 1, 1, 0]);
    const rgba = maskToRgba(mask, 2, 2);
    expect(rgba[3]).toBe(0);                       // clear
    expect(rgba[7]).toBe(EXPANSION_COLOR.a);       // set
    expect(rgba[4]).toBe(EXPANSION_COLOR.r);
    expect(EXPANSION_COLOR.a).toBe(128);           // 50% blend, matching the server overlay
  });

  it('overlay popcount equals the stats expanded_count for a decoded response', () => {
    const resp = {
      mask: { width: 4, height: 3, runs: [2, 5, 3, 2] },
      stats: { seed_count: 1, expanded_count: 7, coverage: 7 / 12 },
    };
    const mask = rleDecode(resp.mask);
    const rgba = maskToRgba(mask, 4, 3);
    expect(overlayPopcount(rgba)).toBe(resp.stats.expanded_count);
  });

  it('rejects a size mismatch', () => {
    expect(() => maskToRgba(new Uint8Array(3), 2, 2)).toThrow(/expected/);
  });
});
