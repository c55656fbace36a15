"""Seed-label expansion: PCA projection, Gaussian confidence region, chi-squared threshold.

A small analyst-drawn seed set is grown into a dense label mask: project
every pixel's stacked spectral vector into a reduced k-dimensional PCA
space, fit a Gaussian to the projected seed pixels, and accept every
pixel whose squared Mahalanobis distance from the seed cluster falls
below the chi-squared alpha-quantile with k degrees of freedom. Seeds
are always kept (the expanded set is a union with the seed set).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .chi2 import chi2_quantile  # noqa: F401  (re-exported as part of this module's surface)
from .raster import LabelMask, StackedInput

__all__ = [
    "SeedSet", "PcaModel", "GaussianModel", "ExpansionConfig", "ExpansionStats",
    "rasterize_polygons", "seeds_from_geojson", "fit_pca", "project",
    "fit_gaussian", "chi2_quantile", "mahalanobis", "expand_labels",
    "gaussian_ci_classifier",
]

DEFAULT_RIDGE_SCALE = 1e-6


@dataclass
class SeedSet:
    """Analyst-annotated seed pixels as (row, col) coordinates."""

    coords: list[tuple[int, int]]

    def __post_init__(self):
        if len(set(self.coords)) != len(self.coords):
            raise ValueError("seed set contains duplicate coordinates")

    def __len__(self) -> int:
        return len(self.coords)

    def validate_bounds(self, width: int, height: int):
        for r, c in self.coords:
            if not (0 <= r < height and 0 <= c < width):
                raise ValueError(f"seed ({r},{c}) outside raster domain {width}x{height}")

    def to_mask(self, width: int, height: int) -> LabelMask:
        m = np.zeros((height, width), dtype=np.uint8)
        for r, c in self.coords:
            m[r, c] = 1
        return LabelMask(m)

    def flat_indices(self, width: int) -> np.ndarray:
        return np.array([r * width + c for r, c in self.coords], dtype=np.int64)


@dataclass
class PcaModel:
    """Top-k principal axes of the pixel cloud: mean, orthonormal rows, variances."""

    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.components = np.asarray(self.components, dtype=np.float64)
        self.explained_variance = np.asarray(self.explained_variance, dtype=np.float64)
        k, d = self.components.shape
        if not 1 <= k <= d:
            raise ValueError(f"need 1 <= k <= d, got k={k} d={d}")
        gram = self.components @ self.components.T
        if not np.allclose(gram, np.eye(k), atol=1e-5):
            raise ValueError("PCA components are not orthonormal")
        if np.any(np.diff(self.explained_variance) > 1e-12):
            raise ValueError("explained_variance must be non-increasing")

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def d(self) -> int:
        return self.components.shape[1]


@dataclass
class GaussianModel:
    """Gaussian fitted to projected seeds: mean, ridged covariance, SPD inverse."""

    mu: np.ndarray
    sigma: np.ndarray
    sigma_inv: np.ndarray
    ridge: float

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        self.sigma_inv = np.asarray(self.sigma_inv, dtype=np.float64)
        if not np.allclose(self.sigma, self.sigma.T, atol=1e-6):
            raise ValueError("covariance not symmetric")
        if not np.allclose(self.sigma @ self.sigma_inv, np.eye(len(self.mu)), atol=1e-4):
            raise ValueError("sigma_inv is not the inverse of sigma")

    @property
    def k(self) -> int:
        return len(self.mu)


@dataclass
class ExpansionConfig:
    """Knobs of the expansion: PCA dims k, confidence alpha, covariance ridge.

    ridge=None applies the default 1e-6 * trace(cov)/k regularizer; with
    fewer than ~10 seed polygons the raw seed covariance is often
    near-singular. fit_population selects the PCA fitting population
    (projecting all pixels is the default). subsample caps the PCA
    population at a pixel count, drawn with subsample_seed.
    """

    k: int = 2
    alpha: float = 0.95
    ridge: float | None = None
    fit_population: str = "all_pixels"
    subsample: int | None = None
    subsample_seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.fit_population not in ("all_pixels", "seeds_only"):
            raise ValueError(f"unknown fit_population {self.fit_population!r}")


@dataclass
class ExpansionStats:
    seed_count: int
    expanded_count: int
    coverage: float
    alpha: float
    k: int
    tau2: float

    def to_json(self) -> dict:
        return {
            "seed_count": self.seed_count,
            "expanded_count": self.expanded_count,
            "coverage": self.coverage,
            "alpha": self.alpha,
            "k": self.k,
            "tau2": self.tau2,
        }


# ---------------------------------------------------------------------------
# seed rasterization


def _point_on_ring(x: float, y: float, ring: np.ndarray, tol: float = 1e-9) -> bool:
    n = len(ring)
    for i in range(n):
        x1, y1 = ring[i]
        x2, y2 = ring[(i + 1) % n]
        cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        if abs(cross) > tol * max(1.0, abs(x2 - x1) + abs(y2 - y1)):
            continue
        if min(x1, x2) - tol <= x <= max(x1, x2) + tol and \
                min(y1, y2) - tol <= y <= max(y1, y2) + tol:
            return True
    return False


def _even_odd_inside(x: float, y: float, ring: np.ndarray) -> bool:
    # classic crossing-number test (PNPOLY)
    inside = False
    n = len(ring)
    j = n - 1
    for i in range(n):
        xi, yi = ring[i]
        xj, yj = ring[j]
        if (yi > y) != (yj > y):
            x_int = xi + (y - yi) * (xj - xi) / (yj - yi)
            if x < x_int:
                inside = not inside
        j = i
    return inside


def rasterize_polygons(polygons: list, width: int, height: int) -> SeedSet:
    """Pixels whose centers fall inside any polygon under the even-odd rule.

    Polygon vertices are (x, y) in pixel units with integer coordinates at
    pixel centers: the pixel (row, col) has its center at (x=col, y=row).
    Centers lying exactly on a ring edge count as outside (documented
    convention, keeps tests exact).
    """
    rings = []
    for poly in polygons:
        ring = np.asarray(poly, dtype=np.float64)
        if ring.ndim != 2 or ring.shape[1] != 2 or len(ring) < 3:
            raise ValueError(f"degenerate polygon ring with {len(ring)} vertices")
        if len(ring) > 3 and np.allclose(ring[0], ring[-1]):
            ring = ring[:-1]  # drop explicit closing vertex
        if len(ring) < 3:
            raise ValueError("degenerate polygon ring after closing-vertex removal")
        rings.append(ring)

    hit: set[tuple[int, int]] = set()
    for ring in rings:
        c_lo = max(0, int(np.floor(ring[:, 0].min())))
        c_hi = min(width - 1, int(np.ceil(ring[:, 0].max())))
        r_lo = max(0, int(np.floor(ring[:, 1].min())))
        r_hi = min(height - 1, int(np.ceil(ring[:, 1].max())))
        for row in range(r_lo, r_hi + 1):
            y = float(row)
            for col in range(c_lo, c_hi + 1):
                x = float(col)
                if (row, col) in hit:
                    continue
                if _point_on_ring(x, y, ring):
                    continue
                if _even_odd_inside(x, y, ring):
                    hit.add((row, col))
    if not hit:
        warnings.warn("rasterize_polygons produced an empty seed set", stacklevel=2)
    return SeedSet(sorted(hit))


def seeds_from_geojson(doc: dict | str, width: int, height: int) -> SeedSet:
    """Rasterize a GeoJSON-style FeatureCollection of Polygons in pixel coords."""
    if isinstance(doc, str):
        doc = json.loads(doc)
    if doc.get("type") != "FeatureCollection":
        raise ValueError("expected a GeoJSON FeatureCollection")
    rings = []
    for feat in doc.get("features", []):
        geom = feat.get("geometry") or {}
        gtype = geom.get("type")
        if gtype == "Polygon":
            rings.extend(geom["coordinates"])
        elif gtype == "MultiPolygon":
            for poly in geom["coordinates"]:
                rings.extend(poly)
        else:
            raise ValueError(f"unsupported geometry type {gtype!r} (Polygon only)")
    if not rings:
        return SeedSet([])
    return rasterize_polygons(rings, width, height)


# ---------------------------------------------------------------------------
# fitting


def _pca_from_matrix(pixels: np.ndarray, k: int) -> PcaModel:
    n, d = pixels.shape
    if k > d:
        raise ValueError(f"k={k} exceeds pixel dimension d={d}")
    if n < k + 1:
        raise ValueError(f"need at least k+1={k + 1} pixels to fit PCA, got {n}")
    mean = pixels.mean(axis=0)
    cov = np.cov(pixels, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:k]
    comps = evecs[:, order].T.copy()
    var = np.maximum(evals[order], 0.0)
    # deterministic sign: largest-magnitude entry of each component positive
    for row in comps:
        idx = int(np.argmax(np.abs(row)))
        if row[idx] < 0:
            row *= -1.0
    return PcaModel(mean=mean, components=comps, explained_variance=var)


def fit_pca(x: StackedInput, cfg: ExpansionConfig, seeds: SeedSet | None = None) -> PcaModel:
    """Fit the top-k principal axes of the stacked pixel cloud.

    The population is every pixel by default; ``seeds_only`` restricts it
    to the seed pixels (requires ``seeds``). An optional seeded subsample
    caps the population size.
    """
    pixels = x.pixels().astype(np.float64)
    if cfg.fit_population == "seeds_only":
        if seeds is None or len(seeds) == 0:
            raise ValueError("fit_population='seeds_only' requires a non-empty seed set")
        pixels = pixels[seeds.flat_indices(x.width)]
    if cfg.subsample is not None and cfg.subsample < len(pixels):
        rng = np.random.default_rng(cfg.subsample_seed)
        idx = rng.choice(len(pixels), size=cfg.subsample, replace=False)
        pixels = pixels[np.sort(idx)]
    return _pca_from_matrix(pixels, cfg.k)


def project(model: PcaModel, pixels: np.ndarray) -> np.ndarray:
    """Center and project (n, d) pixel vectors to (n, k) PCA coordinates."""
    pixels = np.asarray(pixels, dtype=np.float64)
    single = pixels.ndim == 1
    if single:
        pixels = pixels[None]
    if pixels.shape[1] != model.d:
        raise ValueError(f"pixel dimension {pixels.shape[1]} != model dimension {model.d}")
    out = (pixels - model.mean) @ model.components.T
    return out[0] if single else out


def fit_gaussian(projected_seeds: np.ndarray, ridge: float | None = None) -> GaussianModel:
    """Sample mean + (m-1)-divisor covariance of projected seeds, plus ridge.

    ridge=None applies 1e-6 * trace(cov)/k. The inverse comes from a
    Cholesky (SPD) solve; a covariance still singular after the ridge is
    an error, never silently patched.
    """
    pts = np.asarray(projected_seeds, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    m, k = pts.shape
    if m < 2:
        raise ValueError(f"need at least 2 seed pixels to fit a Gaussian, got {m}")
    mu = pts.mean(axis=0)
    cov = np.atleast_2d(np.cov(pts, rowvar=False, ddof=1))
    if ridge is None:
        ridge = DEFAULT_RIDGE_SCALE * float(np.trace(cov)) / k
    sigma = cov + ridge * np.eye(k)
    try:
        cho = scipy.linalg.cho_factor(sigma, lower=True)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
        raise ValueError(f"seed covariance singular even after ridge={ridge:g}") from e
    sigma_inv = scipy.linalg.cho_solve(cho, np.eye(k))
    sigma_inv = 0.5 * (sigma_inv + sigma_inv.T)
    return GaussianModel(mu=mu, sigma=sigma, sigma_inv=sigma_inv, ridge=float(ridge))


def mahalanobis_sq(model: GaussianModel, p: np.ndarray) -> np.ndarray | float:
    """Squared Mahalanobis distance; avoids a sqrt per pixel on hot paths."""
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    if single:
        p = p[None]
    if p.shape[1] != model.k:
        raise ValueError(f"point dimension {p.shape[1]} != model dimension {model.k}")
    diff = p - model.mu
    d2 = np.einsum("ni,ij,nj->n", diff, model.sigma_inv, diff)
    d2 = np.maximum(d2, 0.0)
    return float(d2[0]) if single else d2


def mahalanobis(model: GaussianModel, p: np.ndarray) -> np.ndarray | float:
    """sqrt((p-mu)^T Sigma^-1 (p-mu)), >= 0."""
    return np.sqrt(mahalanobis_sq(model, p))


# ---------------------------------------------------------------------------
# expansion


def _threshold_mask(x: StackedInput, seeds: SeedSet, d2: np.ndarray, tau2: float) -> LabelMask:
    mask = (d2 < tau2).reshape(x.height, x.width)
    for r, c in seeds.coords:
        mask[r, c] = True
    return LabelMask(mask.astype(np.uint8))


def expand_labels(x: StackedInput, seeds: SeedSet, cfg: ExpansionConfig,
                  pca: PcaModel | None = None) -> tuple[LabelMask, ExpansionStats]:
    """Grow the seed set into a dense mask via the PCA confidence region.

    A pixel is labeled iff it is a seed or its projected vector lies
    within Mahalanobis distance tau of the seed cluster, where
    tau^2 is the chi-squared alpha-quantile with k degrees of freedom.
    Comparison is done on squared distances (algebraically identical).
    A precomputed ``pca`` (e.g. a per-session cache) may be supplied; it
    must equal what fit_pca would return for (x, cfg).
    """
    if len(seeds) == 0:
        raise ValueError("seed set is empty")
    seeds.validate_bounds(x.width, x.height)
    if pca is None:
        pca = fit_pca(x, cfg, seeds=seeds)
    elif pca.k != cfg.k:
        raise ValueError(f"cached PCA has k={pca.k}, config wants k={cfg.k}")
    all_proj = project(pca, x.pixels())
    seed_proj = all_proj[seeds.flat_indices(x.width)]
    gauss = fit_gaussian(seed_proj, ridge=cfg.ridge)
    tau2 = chi2_quantile(cfg.k, cfg.alpha)
    d2 = mahalanobis_sq(gauss, all_proj)
    mask = _threshold_mask(x, seeds, d2, tau2)
    n = mask.popcount()
    stats = ExpansionStats(
        seed_count=len(seeds),
        expanded_count=n,
        coverage=n / (x.width * x.height),
        alpha=cfg.alpha,
        k=cfg.k,
        tau2=tau2,
    )
    return mask, stats


def gaussian_ci_classifier(x: StackedInput, seeds: SeedSet, cfg: ExpansionConfig) -> LabelMask:
    """Confidence-interval classifier in raw 8-band space (no PCA).

    Stand-in reference generator mirroring operational confidence-bound
    mapping products; identical thresholding rule with k = band count.
    """
    if len(seeds) == 0:
        raise ValueError("seed set is empty")
    seeds.validate_bounds(x.width, x.height)
    pixels = x.pixels().astype(np.float64)
    seed_vecs = pixels[seeds.flat_indices(x.width)]
    gauss = fit_gaussian(seed_vecs, ridge=cfg.ridge)
    d = pixels.shape[1]
    tau2 = chi2_quantile(d, cfg.alpha)
    d2 = mahalanobis_sq(gauss, pixels)
    return _threshold_mask(x, seeds, d2, tau2)
