"""Synthetic pre/post scene pairs with known ground truth.

Stands in for real satellite case studies so every pipeline stage is
testable at desk scale. All randomness flows through the pinned
splitmix64-seeded xoshiro256++ stream (see rng.py), so a seed fully
determines the scene across platforms and implementations.

Draw order for generate_scene (pinned for reproducibility):
  1. background cosine fields, bands 0..3, 4 components each
     (amplitude, u-freq, v-freq, phase per component)
  2. ellipse parameters per region (semi-axes a b, angle, center x y)
  3. post-image noise, bands 0..3, row-major normals
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .raster import BandRaster, LabelMask, StackedInput, stack
from .labelex import SeedSet
from .rng import Xoshiro256PP

BAND_NAMES = ["R", "G", "B", "NIR"]

# background field: 4 cosine components per band, amplitudes in this range
_N_COMPONENTS = 4
_AMP_LO, _AMP_HI = 0.01, 0.04
_BASE_LEVEL = 0.5
# ellipse semi-axes as a fraction of min(width, height)
_AXIS_LO, _AXIS_HI = 0.05, 0.12


@dataclass
class SceneSpec:
    width: int = 256
    height: int = 256
    n_regions: int = 3
    spectral_shift: tuple[float, float, float, float] = (0.25, 0.15, 0.10, -0.30)
    noise_sd: float = 0.02
    background_smoothness: float = 2.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.width < 32 or self.height < 32:
            raise ValueError(f"scene must be at least 32x32, got {self.width}x{self.height}")
        if self.noise_sd < 0:
            raise ValueError(f"noise_sd must be >= 0, got {self.noise_sd}")
        if len(self.spectral_shift) != 4:
            raise ValueError("spectral_shift must have 4 per-band entries")

    def snr(self) -> float:
        """Separation of the affected cluster over per-band noise scale."""
        shift = math.sqrt(sum(s * s for s in self.spectral_shift))
        if self.noise_sd == 0:
            return math.inf
        return shift / (self.noise_sd * 2.0)

    def to_json(self) -> dict:
        return {
            "width": self.width, "height": self.height, "n_regions": self.n_regions,
            "spectral_shift": list(self.spectral_shift), "noise_sd": self.noise_sd,
            "background_smoothness": self.background_smoothness, "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        if "spectral_shift" in d:
            d["spectral_shift"] = tuple(d["spectral_shift"])
        return cls(**d)


def _background(rng: Xoshiro256PP, spec: SceneSpec) -> np.ndarray:
    """Smooth per-band fields: base level + seeded low-frequency cosine mixture."""
    w, h = spec.width, spec.height
    xs = np.arange(w, dtype=np.float64) / w
    ys = np.arange(h, dtype=np.float64) / h
    gx, gy = np.meshgrid(xs, ys)  # (h, w)
    s = spec.background_smoothness
    bands = np.empty((4, h, w), dtype=np.float64)
    for b in range(4):
        acc = np.full((h, w), _BASE_LEVEL, dtype=np.float64)
        for _ in range(_N_COMPONENTS):
            amp = _AMP_LO + (_AMP_HI - _AMP_LO) * rng.uniform()
            u = (2.0 * rng.uniform() - 1.0) * s
            v = (2.0 * rng.uniform() - 1.0) * s
            phase = 2.0 * math.pi * rng.uniform()
            acc += amp * np.cos(2.0 * math.pi * (u * gx + v * gy) + phase)
        bands[b] = acc
    return bands


def _ellipse_union(rng: Xoshiro256PP, spec: SceneSpec) -> np.ndarray:
    """Union of n_regions random ellipses, each fully inside the frame."""
    w, h = spec.width, spec.height
    m = min(w, h)
    cols = np.arange(w, dtype=np.float64) + 0.5
    rows = np.arange(h, dtype=np.float64) + 0.5
    gx, gy = np.meshgrid(cols, rows)
    mask = np.zeros((h, w), dtype=bool)
    for _ in range(spec.n_regions):
        a = (_AXIS_LO + (_AXIS_HI - _AXIS_LO) * rng.uniform()) * m
        b = (_AXIS_LO + (_AXIS_HI - _AXIS_LO) * rng.uniform()) * m
        theta = math.pi * rng.uniform()
        margin = max(a, b) + 1.0
        if w - 2 * margin <= 0 or h - 2 * margin <= 0:
            raise ValueError("scene too small to place affected regions")
        cx = margin + rng.uniform() * (w - 2 * margin)
        cy = margin + rng.uniform() * (h - 2 * margin)
        ct, st = math.cos(theta), math.sin(theta)
        dx, dy = gx - cx, gy - cy
        u = (ct * dx + st * dy) / a
        v = (-st * dx + ct * dy) / b
        mask |= u * u + v * v <= 1.0
    return mask


def generate_scene(spec: SceneSpec) -> tuple[BandRaster, BandRaster, LabelMask]:
    """Deterministic (pre, post, truth): post = pre + shift inside truth + noise."""
    rng = Xoshiro256PP(spec.rng_seed)
    pre = _background(rng, spec)
    truth = _ellipse_union(rng, spec)
    post = pre.copy()
    shift = np.asarray(spec.spectral_shift, dtype=np.float64)
    post[:, truth] += shift[:, None]
    if spec.noise_sd > 0:
        for b in range(4):
            noise = rng.normals(spec.width * spec.height).reshape(spec.height, spec.width)
            post[b] += spec.noise_sd * noise
    pre_r = BandRaster(pre.astype(np.float32), band_names=list(BAND_NAMES))
    post_r = BandRaster(post.astype(np.float32), band_names=list(BAND_NAMES))
    return pre_r, post_r, LabelMask(truth.astype(np.uint8))


def sample_seeds(truth: LabelMask, fraction: float, seed: int) -> SeedSet:
    """ceil(fraction * |truth|) truth pixels, sampled uniformly without replacement."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    coords = np.argwhere(truth.data == 1)  # row-major order
    if len(coords) == 0:
        raise ValueError("truth mask is empty")
    m = math.ceil(fraction * len(coords))
    rng = Xoshiro256PP(seed)
    picked = rng.sample_indices(len(coords), m)
    return SeedSet(sorted((int(r), int(c)) for r, c in coords[picked]))


@dataclass
class PlantedCluster:
    """Fixture with exact cluster membership, for coverage-style statistics."""

    x: StackedInput
    truth: LabelMask
    spec: dict = field(default_factory=dict)


def planted_cluster(width: int = 64, height: int = 64, n_cluster: int = 500,
                    shift: tuple[float, float, float, float] = (0.3, 0.3, 0.3, 0.3),
                    noise_sd: float = 0.05, seed: int = 42) -> PlantedCluster:
    """Scene whose affected pixels are an exact-count Gaussian cluster.

    Background pixels are i.i.d. N(base, noise_sd^2) per band in both
    images; exactly n_cluster pixels (positions sampled without
    replacement) additionally receive the per-band shift in the post
    image. Membership is known exactly, so expansion coverage can be
    scored against planted truth.
    """
    n_px = width * height
    if not 0 < n_cluster < n_px:
        raise ValueError(f"n_cluster must be in (0, {n_px}), got {n_cluster}")
    rng = Xoshiro256PP(seed)
    pre = _BASE_LEVEL + noise_sd * rng.normals(4 * n_px).reshape(4, height, width)
    post = _BASE_LEVEL + noise_sd * rng.normals(4 * n_px).reshape(4, height, width)
    flat = rng.sample_indices(n_px, n_cluster)
    truth = np.zeros(n_px, dtype=np.uint8)
    truth[flat] = 1
    truth = truth.reshape(height, width)
    sh = np.asarray(shift, dtype=np.float64)
    post[:, truth == 1] += sh[:, None]
    x = stack(BandRaster(pre.astype(np.float32), band_names=list(BAND_NAMES)),
              BandRaster(post.astype(np.float32), band_names=list(BAND_NAMES)))
    return PlantedCluster(x=x, truth=LabelMask(truth),
                          spec={"width": width, "height": height, "n_cluster": n_cluster,
                                "shift": list(shift), "noise_sd": noise_sd, "seed": seed})
