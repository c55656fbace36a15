"""HTTP API for the interactive annotation loop.

Sessions hold a stacked scene; the analyst PUTs seed polygons, previews
expansions at chosen (alpha, pc) and exports the label mask. Expansion
responses decode byte-identically to the CLI ``expand`` output for the
same inputs: both paths call labelex.expand_labels on the raw stack
(normalization here is display-only, for preview rendering).

Error bodies are stage-tagged JSON ({"stage": ..., "message": ...}),
mirroring the CLI's "[stage] message" convention.
"""

from __future__ import annotations

import base64
import io
import threading
import uuid
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel

from . import raster as raster_mod
from .labelex import ExpansionConfig, ExpansionStats, PcaModel, SeedSet, expand_labels, \
    fit_pca, seeds_from_geojson
from .raster import BandRaster, LabelMask, RasterError, StackedInput, header_bytes, \
    load_raster, payload_bytes
from .rle import rle_encode

MAX_PIXELS = 64_000_000  # 64 MPix upload ceiling
PREVIEW_LAYERS = ("pre", "post", "expansion", "overlay")
OVERLAY_COLOR = (255, 0, 0)
# fixed zip entry timestamps keep re-exports byte-identical
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


class ServiceError(Exception):
    def __init__(self, status: int, stage: str, message: str):
        super().__init__(message)
        self.status = status
        self.stage = stage
        self.message = message


@dataclass
class Session:
    id: str
    stack: StackedInput
    seeds: SeedSet | None = None
    pca_cache: dict[int, PcaModel] = field(default_factory=dict)
    expansion_cache: dict[tuple[int, float], tuple[LabelMask, ExpansionStats]] = \
        field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)


class RasterPayload(BaseModel):
    width: int
    height: int
    bands: int
    band_names: list[str] | None = None
    nodata: float | None = None
    data_b64: str

    def decode(self, stage: str) -> BandRaster:
        if self.width * self.height > MAX_PIXELS:
            raise ServiceError(413, stage, f"raster exceeds {MAX_PIXELS} pixels")
        try:
            raw = base64.b64decode(self.data_b64)
            expected = self.width * self.height * self.bands * 4
            if len(raw) != expected:
                raise RasterError(f"payload size mismatch: expected {expected} bytes, "
                                  f"got {len(raw)}")
            data = np.frombuffer(raw, dtype="<f4").reshape(self.bands, self.height, self.width)
            return BandRaster(data.copy(), band_names=self.band_names, nodata=self.nodata)
        except (ValueError, RasterError) as e:
            raise ServiceError(400, stage, str(e)) from e


class SessionCreate(BaseModel):
    pre: RasterPayload | None = None
    post: RasterPayload | None = None
    pre_path: str | None = None
    post_path: str | None = None
    resample: str = "bilinear"


def _png_bytes(rgb: np.ndarray) -> bytes:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(rgb, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def _display_rgb(r: BandRaster, bands: tuple[int, int, int]) -> np.ndarray:
    out = np.empty((r.height, r.width, 3), dtype=np.uint8)
    for i, b in enumerate(bands):
        band = r.data[b].astype(np.float64)
        lo, hi = band.min(), band.max()
        scaled = np.full_like(band, 127.0) if hi <= lo else (band - lo) / (hi - lo) * 255.0
        out[:, :, i] = np.clip(scaled, 0, 255).astype(np.uint8)
    return out


def create_app(data_dir: Path | None = None) -> FastAPI:
    app = FastAPI(title="changeseg annotation service")
    sessions: dict[str, Session] = {}
    sessions_lock = threading.Lock()

    @app.exception_handler(ServiceError)
    async def _service_error(_request: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status,
                            content={"stage": exc.stage, "message": exc.message})

    def get_session(sid: str) -> Session:
        with sessions_lock:
            sess = sessions.get(sid)
        if sess is None:
            raise ServiceError(404, "session", f"unknown session {sid}")
        return sess

    def load_ref(rel_path: str, stage: str) -> BandRaster:
        if data_dir is None:
            raise ServiceError(400, stage, "server has no data directory; upload rasters inline")
        target = (data_dir / rel_path).resolve()
        if not str(target).startswith(str(data_dir.resolve())):
            raise ServiceError(400, stage, f"path {rel_path!r} escapes the data directory")
        try:
            return load_raster(target)
        except (OSError, RasterError) as e:
            raise ServiceError(400, stage, str(e)) from e

    def expansion_params(alpha: float, pc: int) -> ExpansionConfig:
        try:
            if not 0.0 < alpha < 1.0:
                raise ValueError(f"alpha must be in (0, 1), got {alpha}")
            if not 1 <= pc <= 8:
                raise ValueError(f"pc must be in [1, 8], got {pc}")
            return ExpansionConfig(k=pc, alpha=alpha)
        except ValueError as e:
            raise ServiceError(422, "expand", str(e)) from e

    def compute_expansion(sess: Session, cfg: ExpansionConfig) -> tuple[LabelMask, ExpansionStats]:
        if sess.seeds is None or len(sess.seeds) == 0:
            raise ServiceError(409, "expand", "no seeds drawn yet")
        key = (cfg.k, cfg.alpha)
        with sess.lock:
            if key in sess.expansion_cache:
                return sess.expansion_cache[key]
            if cfg.k not in sess.pca_cache:
                # PCA population is all pixels: independent of seeds, cache per k
                sess.pca_cache[cfg.k] = fit_pca(sess.stack, cfg)
            try:
                mask, stats = expand_labels(sess.stack, sess.seeds, cfg,
                                            pca=sess.pca_cache[cfg.k])
            except ValueError as e:
                raise ServiceError(422, "expand", str(e)) from e
            sess.expansion_cache[key] = (mask, stats)
            return mask, stats

    @app.post("/api/sessions")
    def create_session(body: SessionCreate):
        if body.pre is not None:
            pre = body.pre.decode("stack")
        elif body.pre_path:
            pre = load_ref(body.pre_path, "stack")
        else:
            raise ServiceError(400, "stack", "provide pre or pre_path")
        if body.post is not None:
            post = body.post.decode("stack")
        elif body.post_path:
            post = load_ref(body.post_path, "stack")
        else:
            raise ServiceError(400, "stack", "provide post or post_path")
        if pre.width * pre.height > MAX_PIXELS or post.width * post.height > MAX_PIXELS:
            raise ServiceError(413, "stack", f"scene exceeds {MAX_PIXELS} pixels")
        try:
            if (post.height, post.width) != (pre.height, pre.width):
                post = raster_mod.resample(post, pre.width, pre.height, method=body.resample)
            stacked = raster_mod.stack(pre, post)
        except (ValueError, RasterError) as e:
            raise ServiceError(400, "stack", str(e)) from e
        sid = uuid.uuid4().hex
        with sessions_lock:
            sessions[sid] = Session(id=sid, stack=stacked)
        return {"session_id": sid, "width": stacked.width, "height": stacked.height}

    @app.put("/api/sessions/{sid}/seeds")
    async def put_seeds(sid: str, request: Request):
        sess = get_session(sid)
        try:
            doc = await request.json()
        except Exception as e:  # malformed JSON body
            raise ServiceError(400, "seeds", f"invalid JSON body: {e}") from e
        try:
            seeds = seeds_from_geojson(doc, sess.stack.width, sess.stack.height)
        except ValueError as e:
            raise ServiceError(422, "seeds", str(e)) from e
        with sess.lock:
            sess.seeds = seeds
            sess.expansion_cache.clear()  # PCA cache survives: population ignores seeds
        return {"seed_pixels": len(seeds)}

    @app.get("/api/sessions/{sid}/expansion")
    def get_expansion(sid: str, alpha: float = 0.95, pc: int = 2):
        sess = get_session(sid)
        cfg = expansion_params(alpha, pc)
        mask, stats = compute_expansion(sess, cfg)
        return {
            "mask": {"width": mask.width, "height": mask.height, "runs": rle_encode(mask)},
            "stats": {"seed_count": stats.seed_count,
                      "expanded_count": stats.expanded_count,
                      "coverage": stats.coverage},
        }

    @app.get("/api/sessions/{sid}/preview.png")
    def preview(sid: str, layer: str = "post", alpha: float = 0.95, pc: int = 2):
        sess = get_session(sid)
        if layer not in PREVIEW_LAYERS:
            raise ServiceError(400, "preview", f"unknown layer {layer!r}; "
                                               f"expected one of {PREVIEW_LAYERS}")
        if layer == "pre":
            rgb = _display_rgb(sess.stack.raster, (0, 1, 2))
        elif layer == "post":
            rgb = _display_rgb(sess.stack.raster, (4, 5, 6))
        else:
            cfg = expansion_params(alpha, pc)
            mask, _ = compute_expansion(sess, cfg)
            if layer == "expansion":
                gray = (mask.data * 255).astype(np.uint8)
                rgb = np.stack([gray] * 3, axis=-1)
            else:  # overlay: post image with the mask alpha-blended at 50%
                rgb = _display_rgb(sess.stack.raster, (4, 5, 6)).astype(np.float64)
                on = mask.data.astype(bool)
                for ch in range(3):
                    rgb[:, :, ch][on] = 0.5 * rgb[:, :, ch][on] + 0.5 * OVERLAY_COLOR[ch]
                rgb = rgb.astype(np.uint8)
        return Response(content=_png_bytes(rgb), media_type="image/png")

    @app.post("/api/sessions/{sid}/export")
    def export(sid: str, alpha: float = 0.95, pc: int = 2):
        sess = get_session(sid)
        cfg = expansion_params(alpha, pc)
        mask, _ = compute_expansion(sess, cfg)
        r = mask.to_raster()
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
            zf.writestr(zipfile.ZipInfo("mask.json", date_time=_ZIP_EPOCH),
                        header_bytes(r, "mask.bin"))
            zf.writestr(zipfile.ZipInfo("mask.bin", date_time=_ZIP_EPOCH), payload_bytes(r))
        name = f"labels_{sid}_a{cfg.alpha:g}_pc{cfg.k}.zip"
        return Response(content=buf.getvalue(), media_type="application/zip",
                        headers={"Content-Disposition": f'attachment; filename="{name}"'})

    return app
