"""Tile scenes into fixed-size non-overlapping patches and reassemble predictions.

Reflect padding is the default so scene borders do not acquire artificial
change edges; the extract -> reassemble round trip is bit-exact for every
raster size and pad mode.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .raster import BandRaster, RasterError

MIN_PATCH = 8


@dataclass
class PatchGrid:
    patch_h: int
    patch_w: int
    rows: int
    cols: int
    orig_h: int
    orig_w: int
    pad_mode: str

    def __post_init__(self):
        if self.rows * self.patch_h < self.orig_h or self.cols * self.patch_w < self.orig_w:
            raise ValueError("patch grid does not cover the raster")
        if (self.rows - 1) * self.patch_h >= self.orig_h or (self.cols - 1) * self.patch_w >= self.orig_w:
            raise ValueError("patch grid is not minimal")

    @property
    def count(self) -> int:
        return self.rows * self.cols

    def to_json(self) -> dict:
        return {
            "patch_h": self.patch_h, "patch_w": self.patch_w,
            "rows": self.rows, "cols": self.cols,
            "orig_h": self.orig_h, "orig_w": self.orig_w,
            "pad_mode": self.pad_mode,
        }


def extract_patches(r: BandRaster, patch_h: int, patch_w: int,
                    pad_mode: str = "reflect") -> tuple[list[BandRaster], PatchGrid]:
    """Split into row-major patches over a minimally padded canvas.

    Falls back to zero padding (with a warning) when the required reflect
    pad exceeds what the raster can mirror, i.e. when a patch is more
    than twice the raster along an axis.
    """
    if patch_h < MIN_PATCH or patch_w < MIN_PATCH:
        raise ValueError(f"patch dimensions must be >= {MIN_PATCH}, got {patch_h}x{patch_w}")
    if pad_mode not in ("reflect", "zero"):
        raise ValueError(f"unknown pad mode {pad_mode!r}")
    h, w = r.height, r.width
    rows = -(-h // patch_h)
    cols = -(-w // patch_w)
    pad_h = rows * patch_h - h
    pad_w = cols * patch_w - w
    mode = pad_mode
    if mode == "reflect" and (pad_h > h - 1 or pad_w > w - 1):
        warnings.warn("reflect padding undefined for patches larger than 2x the raster; "
                      "using zero padding", stacklevel=2)
        mode = "zero"
    if mode == "reflect":
        padded = np.pad(r.data, ((0, 0), (0, pad_h), (0, pad_w)), mode="reflect")
    else:
        padded = np.pad(r.data, ((0, 0), (0, pad_h), (0, pad_w)), mode="constant")
    grid = PatchGrid(patch_h=patch_h, patch_w=patch_w, rows=rows, cols=cols,
                     orig_h=h, orig_w=w, pad_mode=mode)
    patches = []
    for i in range(rows):
        for j in range(cols):
            tile = padded[:, i * patch_h:(i + 1) * patch_h, j * patch_w:(j + 1) * patch_w]
            patches.append(BandRaster(tile.copy(), band_names=r.band_names, nodata=r.nodata))
    return patches, grid


def reassemble(patches: list[BandRaster], grid: PatchGrid) -> BandRaster:
    """Stitch row-major patches back together and crop to the original size."""
    if len(patches) != grid.count:
        raise ValueError(f"expected {grid.count} patches, got {len(patches)}")
    bands = patches[0].bands
    for p in patches:
        if (p.height, p.width) != (grid.patch_h, grid.patch_w) or p.bands != bands:
            raise RasterError(
                f"patch shape {p.bands}x{p.height}x{p.width} does not match grid "
                f"{bands}x{grid.patch_h}x{grid.patch_w}")
    canvas = np.zeros((bands, grid.rows * grid.patch_h, grid.cols * grid.patch_w),
                      dtype=np.float32)
    for idx, p in enumerate(patches):
        i, j = divmod(idx, grid.cols)
        canvas[:, i * grid.patch_h:(i + 1) * grid.patch_h,
               j * grid.patch_w:(j + 1) * grid.patch_w] = p.data
    out = canvas[:, :grid.orig_h, :grid.orig_w]
    return BandRaster(out.copy(), band_names=patches[0].band_names, nodata=patches[0].nodata)
