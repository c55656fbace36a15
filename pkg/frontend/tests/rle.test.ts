import { describe, expect, it } from 'vitest';

import { popcount, rleDecode, rleEncode } from '../src/rle.js';

describe('rleDecode', () => {
  it('decodes an all-zero mask', () => {
    const mask = rleDecode({ width: 4, height: 2, runs: [8] });
    expect(Array.from(mask)).toEqual([0, 0, 0, 0, 0, 0, 0, 0]);
  });

  it('decodes an all-one mask (leading zero run)', () => {
    const mask = rleDecode({ width: 2, height: 2, runs: [0, 4] });
    expect(Array.from(mask)).toEqual([1, 1, 1, 1]);
  });

  it('decodes a mixed mask row-major', () => {
    // 0 1 1 0 / 1 1 0 0
    const mask = rleDecode({ width: 4, height: 2, runs: [1, 2, 1, 2, 2] });
    expect(Array.from(mask)).toEqual([0, 1, 1, 0, 1, 1, 0, 0]);
  });

  it('rejects runs that do not sum to the pixel count', () => {
    expect(() => rleDecode({ width: 2, height: 2, runs: [1, 2] })).toThrow(/runs sum/);
  });

  it('rejects negative runs', () => {
    expect(() => rleDecode({ width: 2, height: 2, runs: [5, -1] })).toThrow(/negative/);
  });
});

describe('round trip', () => {
  it('encode(decode(x)) == x for server-shaped fixtures', () => {
    const fixtures = [
      { width: 3, height: 3, runs: [9] },
      { width: 3, height: 3, runs: [0, 9] },
      { width: 5, height: 2, runs: [2, 3, 4, 1] },
      { width: 1, height: 7, runs: [0, 1, 1, 1, 1, 1, 1, 1] },
    ];
    for (const fx of fixtures) {
      const decoded = rleDecode(fx);
      const encoded = rleEncode(decoded, fx.width, fx.height);
      expect(encoded.runs).toEqual(fx.runs);
    }
  });

  it('random masks survive decode(encode(m))', () => {
    let seed = 1234;
    const rand = () => (seed = (seed * 1103515245 + 12345) % 2 ** 31) / 2 ** 31;
    for (let trial = 0; trial < 20; trial++) {
      const w = 1 + Math.floor(rand() * 16);
      const h = 1 + Math.floor(rand() * 16);
      const data = new Uint8Array(w * h);
      for (let i = 0; i < data.length; i++) data[i] = rand() < 0.5 ? 1 : 0;
      const back = rleDecode(rleEncode(data, w, h));
      expect(Array.from(back)).toEqual(Array.from(data));
      expect(popcount(back)).toBe(popcount(data));
    }
  });
});
