"""Confusion counts, UA/PA/IoU scoring and commission/omission difference maps.

UA (user accuracy) is precision |P&G|/|P|, PA (producer accuracy) is
recall |P&G|/|G|, IoU is |P&G|/|P|G|union. Zero denominators yield None
(an explicit undefined marker that serializes to JSON null), never NaN.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import BandRaster, LabelMask

# difference-map colors (RGB bytes)
COLOR_TP = (128, 128, 128)  # gray: predicted affected, correct
COLOR_FP = (255, 0, 0)      # red: commission error
COLOR_FN = (0, 0, 255)      # blue: omission error
COLOR_TN = (255, 255, 255)  # white: background, correct


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_json(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


@dataclass
class MetricsReport:
    ua: float | None
    pa: float | None
    iou: float | None
    counts: ConfusionCounts

    def to_json(self) -> dict:
        return {"ua": self.ua, "pa": self.pa, "iou": self.iou,
                "counts": self.counts.to_json()}


def _check_pair(pred: LabelMask, ref: LabelMask):
    if pred.data.shape != ref.data.shape:
        raise ValueError(
            f"dimension mismatch: pred {pred.width}x{pred.height} vs ref {ref.width}x{ref.height}")


def confusion(pred: LabelMask, ref: LabelMask) -> ConfusionCounts:
    _check_pair(pred, ref)
    p = pred.data.astype(bool)
    g = ref.data.astype(bool)
    return ConfusionCounts(
        tp=int((p & g).sum()),
        fp=int((p & ~g).sum()),
        fn=int((~p & g).sum()),
        tn=int((~p & ~g).sum()),
    )


def _ratio(num: int, den: int) -> float | None:
    return None if den == 0 else num / den


def compute_metrics(counts: ConfusionCounts) -> MetricsReport:
    return MetricsReport(
        ua=_ratio(counts.tp, counts.tp + counts.fp),
        pa=_ratio(counts.tp, counts.tp + counts.fn),
        iou=_ratio(counts.tp, counts.tp + counts.fp + counts.fn),
        counts=counts,
    )


def evaluate(pred: LabelMask, ref: LabelMask) -> MetricsReport:
    return compute_metrics(confusion(pred, ref))


def difference_map(pred: LabelMask, ref: LabelMask) -> BandRaster:
    """3-band byte-valued raster: TP gray, FP red, FN blue, TN white."""
    _check_pair(pred, ref)
    p = pred.data.astype(bool)
    g = ref.data.astype(bool)
    out = np.empty((3, pred.height, pred.width), dtype=np.float32)
    for ch in range(3):
        band = out[ch]
        band[...] = COLOR_TN[ch]
        band[p & g] = COLOR_TP[ch]
        band[p & ~g] = COLOR_FP[ch]
        band[~p & g] = COLOR_FN[ch]
    return BandRaster(out, band_names=["R", "G", "B"])


def difference_map_png(pred: LabelMask, ref: LabelMask, path):
    """Write the difference map as an 8-bit PNG (exact colors, no stretch)."""
    from PIL import Image

    rgb = difference_map(pred, ref).data.astype(np.uint8)
    Image.fromarray(np.moveaxis(rgb, 0, -1), mode="RGB").save(path, format="PNG")
    return path
