"""Checkpoint files: JSON manifest + a single little-endian float32/float64 blob.

The manifest pins tensor order, shapes and byte offsets, so save -> load
round trips are byte-exact. Writes go through a temp file + rename so a
crash never leaves a torn checkpoint.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .model import ViTConfig, ViTParams, param_shapes

FORMAT_VERSION = 1


def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix == ".json":
        p = p.with_suffix("")
    return p.with_suffix(".json"), p.with_suffix(".bin")


def save_checkpoint(path, cfg: ViTConfig, params: ViTParams,
                    extra: dict | None = None,
                    aux_tensors: dict[str, np.ndarray] | None = None) -> Path:
    """Write ``<stem>.json`` + ``<stem>.bin``; aux tensors (optimizer state)
    ride in the same blob after the parameters."""
    hdr_path, bin_path = _paths(path)
    dt = "<f4" if cfg.dtype == "f32" else "<f8"
    itemsize = 4 if cfg.dtype == "f32" else 8
    index = []
    chunks = []
    offset = 0
    items = list(params.tensors.items())
    if aux_tensors:
        items += [(f"aux.{k}", v) for k, v in aux_tensors.items()]
    for name, tensor in items:
        arr = np.ascontiguousarray(tensor, dtype=dt)
        nbytes = arr.size * itemsize
        index.append({"name": name, "shape": list(arr.shape), "offset": offset,
                      "nbytes": nbytes})
        chunks.append(arr.tobytes())
        offset += nbytes
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": cfg.to_json(),
        "extra": extra or {},
        "tensors": index,
        "payload": bin_path.name,
    }
    tmp_bin = bin_path.with_suffix(".bin.tmp")
    tmp_hdr = hdr_path.with_suffix(".json.tmp")
    tmp_bin.write_bytes(b"".join(chunks))
    tmp_hdr.write_bytes((json.dumps(manifest, indent=2) + "\n").encode())
    os.replace(tmp_bin, bin_path)
    os.replace(tmp_hdr, hdr_path)
    return hdr_path


def load_checkpoint(path) -> tuple[ViTConfig, ViTParams, dict, dict[str, np.ndarray]]:
    hdr_path, _ = _paths(path)
    if not hdr_path.exists():
        raise FileNotFoundError(f"missing checkpoint manifest {hdr_path}")
    manifest = json.loads(hdr_path.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {manifest.get('format_version')}")
    cfg = ViTConfig.from_json(manifest["config"])
    blob = (hdr_path.parent / manifest["payload"]).read_bytes()
    dt = "<f4" if cfg.dtype == "f32" else "<f8"
    tensors: dict[str, np.ndarray] = {}
    aux: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        arr = np.frombuffer(blob[start:start + nbytes], dtype=dt).reshape(entry["shape"]).copy()
        if entry["name"].startswith("aux."):
            aux[entry["name"][4:]] = arr
        else:
            tensors[entry["name"]] = arr
    expected = param_shapes(cfg)
    if list(tensors.keys()) != list(expected.keys()):
        raise ValueError("checkpoint tensor names do not match the config's parameter set")
    for name, shape in expected.items():
        if tuple(tensors[name].shape) != tuple(shape):
            raise ValueError(f"tensor {name} has shape {tensors[name].shape}, expected {shape}")
    return cfg, ViTParams(tensors), manifest.get("extra", {}), aux
