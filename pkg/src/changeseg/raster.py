"""Multi-band raster container, file format, resampling and spectral indices.

The on-disk format is deliberately simple so round trips are byte-exact:
a JSON header ``<name>.json`` next to a raw little-endian float32 payload
``<name>.bin``, band-sequential, row-major within each band. GeoTIFF/JP2,
projections and atmospheric correction are out of scope; co-registration
is assumed done upstream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

RASTER_ORDER = "band_sequential_row_major"

# Canonical band names used by the spectral indices.
BAND_RED = "R"
BAND_GREEN = "G"
BAND_BLUE = "B"
BAND_NIR = "NIR"


class RasterError(ValueError):
    """Malformed raster data or header."""


@dataclass
class BandRaster:
    """W x H x B float32 raster.

    ``data`` has shape (bands, height, width), C-contiguous, which matches
    the band-sequential row-major payload layout exactly.
    """

    data: np.ndarray
    band_names: list[str] | None = None
    nodata: float | None = None

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise RasterError(f"raster data must be 3-d (bands, h, w), got shape {self.data.shape}")
        b, h, w = self.data.shape
        if b < 1 or h < 1 or w < 1:
            raise RasterError(f"raster dimensions must be >= 1, got bands={b} h={h} w={w}")
        if self.band_names is not None and len(self.band_names) != b:
            raise RasterError(f"{len(self.band_names)} band names for {b} bands")
        self._check_finite()

    def _check_finite(self):
        bad = ~np.isfinite(self.data)
        if self.nodata is not None:
            if np.isnan(self.nodata):
                bad &= ~np.isnan(self.data)
            else:
                bad &= self.data != np.float32(self.nodata)
        if bad.any():
            raise RasterError("non-finite values without declared nodata")

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def band_index(self, name: str) -> int:
        if self.band_names is None or name not in self.band_names:
            raise RasterError(f"raster has no band named {name!r} (band_names={self.band_names})")
        return self.band_names.index(name)

    def band(self, name: str) -> np.ndarray:
        return self.data[self.band_index(name)]

    def nodata_mask(self) -> np.ndarray:
        """(h, w) bool mask, True where ANY band is nodata."""
        if self.nodata is None:
            return np.zeros((self.height, self.width), dtype=bool)
        if np.isnan(self.nodata):
            return np.isnan(self.data).any(axis=0)
        return (self.data == np.float32(self.nodata)).any(axis=0)

    def pixels(self) -> np.ndarray:
        """(h*w, bands) float32 view of the pixel vectors, row-major."""
        return self.data.reshape(self.bands, -1).T


@dataclass
class StackedInput:
    """8-band stack of a pre/post pair: bands [pre R,G,B,NIR, post R,G,B,NIR]."""

    raster: BandRaster

    def __post_init__(self):
        if self.raster.bands != 8:
            raise RasterError(f"stacked input must have exactly 8 bands, got {self.raster.bands}")

    @property
    def width(self) -> int:
        return self.raster.width

    @property
    def height(self) -> int:
        return self.raster.height

    def pre(self) -> BandRaster:
        names = self.raster.band_names
        return BandRaster(self.raster.data[:4].copy(),
                          band_names=[n[4:] for n in names[:4]] if names else None,
                          nodata=self.raster.nodata)

    def post(self) -> BandRaster:
        names = self.raster.band_names
        return BandRaster(self.raster.data[4:].copy(),
                          band_names=[n[5:] for n in names[4:]] if names else None,
                          nodata=self.raster.nodata)

    def pixels(self) -> np.ndarray:
        return self.raster.pixels()


@dataclass
class LabelMask:
    """Binary H x W mask; holds seed sets, expanded labels, predictions, references."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise RasterError(f"label mask must be 2-d, got shape {arr.shape}")
        vals = np.unique(arr)
        if not np.isin(vals, (0, 1)).all():
            raise RasterError("label mask values must be 0 or 1")
        self.data = arr.astype(np.uint8)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def popcount(self) -> int:
        return int(self.data.sum())

    def to_raster(self) -> BandRaster:
        return BandRaster(self.data[None].astype(np.float32), band_names=["label"])

    @classmethod
    def from_raster(cls, r: BandRaster) -> "LabelMask":
        if r.bands != 1:
            raise RasterError(f"label mask raster must have 1 band, got {r.bands}")
        return cls(r.data[0])


# ---------------------------------------------------------------------------
# file format


def _header_dict(r: BandRaster, payload_name: str) -> dict:
    return {
        "width": r.width,
        "height": r.height,
        "bands": r.bands,
        "dtype": "f32",
        "order": RASTER_ORDER,
        "band_names": r.band_names,
        "nodata": r.nodata,
        "payload": payload_name,
    }


def header_bytes(r: BandRaster, payload_name: str) -> bytes:
    """Canonical serialized header; shared by file and HTTP export paths."""
    return (json.dumps(_header_dict(r, payload_name), indent=2) + "\n").encode()


def payload_bytes(r: BandRaster) -> bytes:
    return np.ascontiguousarray(r.data, dtype="<f4").tobytes()


def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix == ".json":
        p = p.with_suffix("")
    return p.with_suffix(".json"), p.with_suffix(".bin")


def save_raster(r: BandRaster, path) -> Path:
    """Write ``<stem>.json`` + ``<stem>.bin``; returns the header path."""
    hdr, bin_ = _paths(path)
    hdr.write_bytes(header_bytes(r, bin_.name))
    bin_.write_bytes(payload_bytes(r))
    return hdr


def load_raster(path) -> BandRaster:
    hdr_path, _ = _paths(path)
    if not hdr_path.exists():
        raise RasterError(f"missing raster header {hdr_path}")
    try:
        hdr = json.loads(hdr_path.read_text())
    except json.JSONDecodeError as e:
        raise RasterError(f"invalid raster header {hdr_path}: {e}") from e
    for key in ("width", "height", "bands", "dtype", "order", "payload"):
        if key not in hdr:
            raise RasterError(f"raster header {hdr_path} missing field {key!r}")
    if hdr["dtype"] != "f32":
        raise RasterError(f"unsupported dtype {hdr['dtype']!r}")
    if hdr["order"] != RASTER_ORDER:
        raise RasterError(f"unsupported order {hdr['order']!r}")
    w, h, b = int(hdr["width"]), int(hdr["height"]), int(hdr["bands"])
    payload_path = hdr_path.parent / hdr["payload"]
    if not payload_path.exists():
        raise RasterError(f"missing raster payload {payload_path}")
    raw = payload_path.read_bytes()
    expected = w * h * b * 4
    if len(raw) != expected:
        raise RasterError(
            f"payload size mismatch: header declares {expected} bytes "
            f"({b} bands x {h} x {w}), payload has {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4").reshape(b, h, w)
    return BandRaster(data.copy(), band_names=hdr.get("band_names"), nodata=hdr.get("nodata"))


def to_png(r: BandRaster, path, bands: tuple[int, ...] | None = None) -> Path:
    """8-bit PNG export (per-band minmax stretch), for visualization only."""
    from PIL import Image

    if bands is None:
        bands = (0, 1, 2) if r.bands >= 3 else (0,)
    chans = []
    for b in bands:
        band = r.data[b].astype(np.float64)
        lo, hi = band.min(), band.max()
        scaled = np.full_like(band, 127.0) if hi <= lo else (band - lo) / (hi - lo) * 255.0
        chans.append(np.clip(scaled, 0, 255).astype(np.uint8))
    img = Image.fromarray(chans[0], mode="L") if len(chans) == 1 else \
        Image.fromarray(np.stack(chans, axis=-1), mode="RGB")
    p = Path(path)
    img.save(p, format="PNG")
    return p


# ---------------------------------------------------------------------------
# operations


def _nearest_indices(n_src: int, n_dst: int) -> np.ndarray:
    # pixel-center convention, rounding half up
    src = (np.arange(n_dst, dtype=np.float64) + 0.5) * (n_src / n_dst) - 0.5
    return np.clip(np.floor(src + 0.5).astype(np.int64), 0, n_src - 1)


def _bilinear_axis(n_src: int, n_dst: int):
    src = (np.arange(n_dst, dtype=np.float64) + 0.5) * (n_src / n_dst) - 0.5
    src = np.clip(src, 0.0, n_src - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_src - 1)
    return i0, i1, src - i0


def resample(r: BandRaster, target_w: int, target_h: int, method: str = "bilinear") -> BandRaster:
    """Resample to target dimensions with ``nearest`` or ``bilinear``.

    Bilinear outputs nodata wherever any of the four contributing source
    pixels is nodata; interpolating across a gap would invent values.
    """
    if target_w < 1 or target_h < 1:
        raise RasterError(f"target dimensions must be >= 1, got {target_w}x{target_h}")
    if method == "nearest":
        ri = _nearest_indices(r.height, target_h)
        ci = _nearest_indices(r.width, target_w)
        out = r.data[:, ri[:, None], ci[None, :]]
        return BandRaster(out, band_names=r.band_names, nodata=r.nodata)
    if method != "bilinear":
        raise RasterError(f"unknown resample method {method!r}")

    r0, r1, fr = _bilinear_axis(r.height, target_h)
    c0, c1, fc = _bilinear_axis(r.width, target_w)
    d = r.data.astype(np.float64)
    v00 = d[:, r0[:, None], c0[None, :]]
    v01 = d[:, r0[:, None], c1[None, :]]
    v10 = d[:, r1[:, None], c0[None, :]]
    v11 = d[:, r1[:, None], c1[None, :]]
    # lerp as a + w*(b-a): exact for constant inputs
    top = v00 + fc[None, None, :] * (v01 - v00)
    bot = v10 + fc[None, None, :] * (v11 - v10)
    out = top + fr[None, :, None] * (bot - top)
    if r.nodata is not None:
        nd = r.nodata_mask()
        bad = nd[r0[:, None], c0[None, :]] | nd[r0[:, None], c1[None, :]] | \
            nd[r1[:, None], c0[None, :]] | nd[r1[:, None], c1[None, :]]
        out[:, bad] = r.nodata
    return BandRaster(out.astype(np.float32), band_names=r.band_names, nodata=r.nodata)


def stack(pre: BandRaster, post: BandRaster) -> StackedInput:
    """Concatenate a co-registered pre/post 4-band pair along the channel axis."""
    if pre.bands != 4 or post.bands != 4:
        raise RasterError(f"stack needs two 4-band rasters, got {pre.bands} and {post.bands}")
    if (pre.height, pre.width) != (post.height, post.width):
        raise RasterError(
            f"dimension mismatch: pre {pre.width}x{pre.height} vs post {post.width}x{post.height}"
            " (resample first)")
    data = np.concatenate([pre.data, post.data], axis=0)
    pre_names = pre.band_names or [BAND_RED, BAND_GREEN, BAND_BLUE, BAND_NIR]
    post_names = post.band_names or [BAND_RED, BAND_GREEN, BAND_BLUE, BAND_NIR]
    names = [f"pre_{n}" for n in pre_names] + [f"post_{n}" for n in post_names]
    nodata = pre.nodata if pre.nodata is not None else post.nodata
    return StackedInput(BandRaster(data, band_names=names, nodata=nodata))


@dataclass
class BandStats:
    """Per-band normalization statistics, reusable at inference time."""

    mode: str
    params: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"mode": self.mode, "params": self.params}

    @classmethod
    def from_json(cls, d: dict) -> "BandStats":
        return cls(mode=d["mode"], params=list(d["params"]))


_SD_FLOOR = 1e-12


def normalize(r: BandRaster, mode: str = "per_band_minmax") -> tuple[BandRaster, BandStats]:
    """Normalize each band; returns the scaled raster plus the stats applied.

    minmax maps each band to [0,1]; a constant band maps to all 0.5
    (documented convention). standardize maps to mean 0 / sd 1 with the
    sd clamped below by 1e-12. nodata pixels are excluded from the stats
    and passed through unchanged.
    """
    stats = BandStats(mode=mode)
    valid = ~r.nodata_mask()
    if not valid.any():
        raise RasterError("normalize: no valid pixels")
    out = r.data.astype(np.float64).copy()
    for b in range(r.bands):
        band = out[b]
        vals = band[valid]
        if mode == "per_band_minmax":
            lo, hi = float(vals.min()), float(vals.max())
            stats.params.append({"min": lo, "max": hi})
            band[valid] = 0.5 if hi <= lo else (vals - lo) / (hi - lo)
        elif mode == "per_band_standardize":
            mean = float(vals.mean())
            sd = max(float(vals.std()), _SD_FLOOR)
            stats.params.append({"mean": mean, "sd": sd})
            band[valid] = (vals - mean) / sd
        else:
            raise RasterError(f"unknown normalize mode {mode!r}")
    if r.nodata is not None:
        out[:, ~valid] = r.nodata
    return BandRaster(out.astype(np.float32), band_names=r.band_names, nodata=r.nodata), stats


def apply_normalization(r: BandRaster, stats: BandStats) -> BandRaster:
    """Re-apply training-time statistics to a new raster (inference path)."""
    if len(stats.params) != r.bands:
        raise RasterError(f"stats for {len(stats.params)} bands, raster has {r.bands}")
    valid = ~r.nodata_mask()
    out = r.data.astype(np.float64).copy()
    for b, p in enumerate(stats.params):
        band = out[b]
        vals = band[valid]
        if stats.mode == "per_band_minmax":
            lo, hi = p["min"], p["max"]
            band[valid] = 0.5 if hi <= lo else (vals - lo) / (hi - lo)
        elif stats.mode == "per_band_standardize":
            band[valid] = (vals - p["mean"]) / p["sd"]
        else:
            raise RasterError(f"unknown normalize mode {stats.mode!r}")
    if r.nodata is not None:
        out[:, ~valid] = r.nodata
    return BandRaster(out.astype(np.float32), band_names=r.band_names, nodata=r.nodata)


def spectral_index(r: BandRaster, kind: str) -> BandRaster:
    """NDVI = (NIR-R)/(NIR+R) or NDWI = (G-NIR)/(G+NIR); 0/0 yields 0."""
    if kind == "NDVI":
        a, b = r.band(BAND_NIR), r.band(BAND_RED)
    elif kind == "NDWI":
        a, b = r.band(BAND_GREEN), r.band(BAND_NIR)
    else:
        raise RasterError(f"unknown spectral index {kind!r}")
    num = a.astype(np.float64) - b
    den = a.astype(np.float64) + b
    out = np.divide(num, den, out=np.zeros_like(num), where=den != 0)
    return BandRaster(out[None].astype(np.float32), band_names=[kind])


def cva_magnitude(pre: BandRaster, post: BandRaster) -> BandRaster:
    """Change-vector magnitude: per-pixel Euclidean norm of the band difference."""
    if pre.data.shape != post.data.shape:
        raise RasterError(
            f"dimension mismatch: {pre.data.shape} vs {post.data.shape}")
    diff = pre.data.astype(np.float64) - post.data.astype(np.float64)
    mag = np.sqrt((diff * diff).sum(axis=0))
    return BandRaster(mag[None].astype(np.float32), band_names=["cva"])
