"""Run-length encoding for binary masks on the service/UI wire.

Runs alternate over row-major order and the first run counts zeros, so an
all-ones mask encodes as [0, n]. Sum of runs always equals width*height.
"""

from __future__ import annotations

import numpy as np

from .raster import LabelMask


def rle_encode(mask: LabelMask) -> list[int]:
    flat = mask.data.ravel()
    n = flat.size
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], change, [n]))
    runs = np.diff(bounds).tolist()
    if flat[0] == 1:
        runs = [0] + runs
    return [int(r) for r in runs]


def rle_decode(runs: list[int], width: int, height: int) -> LabelMask:
    total = sum(runs)
    if total != width * height:
        raise ValueError(f"runs sum to {total}, expected {width * height}")
    if any(r < 0 for r in runs):
        raise ValueError("negative run length")
    flat = np.zeros(width * height, dtype=np.uint8)
    pos = 0
    val = 0
    for r in runs:
        if val:
            flat[pos:pos + r] = 1
        pos += r
        val ^= 1
    return LabelMask(flat.reshape(height, width))
