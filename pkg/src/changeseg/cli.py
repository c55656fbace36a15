"""Command-line pipeline: stack, expand, patches, train, infer, eval, diff, synth, serve.

Every subcommand is a deterministic wrapper over the library modules.
Errors exit nonzero with a stage-tagged message ("[expand] ...") and any
partially written outputs of the failed invocation are removed.
"""

from __future__ import annotations

import os

# Cap worker parallelism (BLAS thread pools) before numpy loads.
_threads = os.environ.get("CHANGESEG_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import metrics, patching, raster, synthdata, training
from .labelex import ExpansionConfig, expand_labels, seeds_from_geojson
from .raster import BandRaster, LabelMask, StackedInput, load_raster, save_raster
from .vitseg import ViTConfig, forward, init_params, load_checkpoint, save_checkpoint

BINARY_THRESHOLD = 0.5


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


class _Outputs:
    """Tracks files written by one invocation so failures leave no partial output."""

    def __init__(self):
        self.paths: list[Path] = []

    def raster(self, r: BandRaster, path) -> Path:
        hdr = save_raster(r, path)
        self.paths += [hdr, hdr.with_suffix(".bin")]
        return hdr

    def text(self, content: str, path) -> Path:
        p = Path(path)
        p.write_text(content)
        self.paths.append(p)
        return p

    def track(self, path) -> Path:
        p = Path(path)
        self.paths.append(p)
        return p

    def cleanup(self):
        for p in self.paths:
            try:
                p.unlink()
            except OSError:
                pass


def _json_dump(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _load_stack(path, stage: str) -> StackedInput:
    try:
        r = load_raster(path)
        return StackedInput(r)
    except (OSError, ValueError) as e:
        raise StageError(stage, f"{path}: {e}") from e


def _load_mask(path, stage: str) -> LabelMask:
    try:
        return LabelMask.from_raster(load_raster(path))
    except (OSError, ValueError) as e:
        raise StageError(stage, f"{path}: {e}") from e


# ---------------------------------------------------------------------------
# subcommands


def cmd_stack(args, out: _Outputs) -> int:
    try:
        pre = load_raster(args.pre)
    except (OSError, ValueError) as e:
        raise StageError("stack", f"{args.pre}: {e}") from e
    try:
        post = load_raster(args.post)
    except (OSError, ValueError) as e:
        raise StageError("stack", f"{args.post}: {e}") from e
    try:
        if (post.height, post.width) != (pre.height, pre.width):
            post = raster.resample(post, pre.width, pre.height, method=args.resample)
        stacked = raster.stack(pre, post)
    except ValueError as e:
        raise StageError("stack", str(e)) from e
    out.raster(stacked.raster, args.out)
    return 0


def cmd_expand(args, out: _Outputs) -> int:
    x = _load_stack(args.stack, "expand")
    try:
        seeds_doc = json.loads(Path(args.seeds).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise StageError("expand", f"{args.seeds}: {e}") from e
    try:
        seeds = seeds_from_geojson(seeds_doc, x.width, x.height)
        if len(seeds) == 0:
            raise ValueError("seed polygons cover no pixel centers")
        cfg = ExpansionConfig(k=args.pc, alpha=args.alpha, ridge=args.ridge)
        mask, stats = expand_labels(x, seeds, cfg)
    except ValueError as e:
        raise StageError("expand", str(e)) from e
    if stats.expanded_count == x.width * x.height:
        warnings.warn("[expand] expansion labeled every pixel; check alpha/seeds")
    out.raster(mask.to_raster(), args.out_mask)
    if args.out_stats:
        out.text(_json_dump(stats.to_json()), args.out_stats)
    return 0


def cmd_patches(args, out: _Outputs) -> int:
    x = _load_stack(args.stack, "patches")
    try:
        patches, grid = patching.extract_patches(x.raster, args.patch_h, args.patch_w,
                                                 pad_mode=args.pad_mode)
    except ValueError as e:
        raise StageError("patches", str(e)) from e
    info = grid.to_json()
    info["count"] = grid.count
    print(_json_dump(info), end="")
    return 0


_TRAIN_CONFIG_KEYS = {"stack", "labels", "out_dir", "normalize", "patch_h", "patch_w",
                      "pad_mode", "vit", "train"}


def _merge_cli_sets(cfg: dict, sets: list[str]) -> dict:
    # precedence: CLI --set > config file > defaults
    for item in sets:
        if "=" not in item:
            raise StageError("config", f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            pass  # keep raw string
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return cfg


def _train_setup(config_path, sets: list[str]):
    try:
        cfg = json.loads(Path(config_path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise StageError("config", f"{config_path}: {e}") from e
    cfg = _merge_cli_sets(cfg, sets or [])
    unknown = set(cfg) - _TRAIN_CONFIG_KEYS
    if unknown:
        raise StageError("config", f"unknown config keys: {sorted(unknown)}")
    for req in ("stack", "labels", "out_dir"):
        if req not in cfg:
            raise StageError("config", f"missing required config key {req!r}")
    base = Path(config_path).parent
    stack_path = (base / cfg["stack"]).resolve() if not Path(cfg["stack"]).is_absolute() else Path(cfg["stack"])
    labels_path = (base / cfg["labels"]).resolve() if not Path(cfg["labels"]).is_absolute() else Path(cfg["labels"])
    out_dir = Path(cfg["out_dir"])
    if not out_dir.is_absolute():
        out_dir = base / out_dir
    for p in (stack_path, labels_path):
        if not Path(p).with_suffix(".json").exists():
            raise StageError("config", f"referenced path does not exist: {p}")

    patch_h = int(cfg.get("patch_h", 32))
    patch_w = int(cfg.get("patch_w", 32))
    pad_mode = cfg.get("pad_mode", "reflect")
    normalize_mode = cfg.get("normalize", "none")

    vit_dict = dict(cfg.get("vit", {}))
    for dim_key, val in (("input_h", patch_h), ("input_w", patch_w)):
        if dim_key in vit_dict and vit_dict[dim_key] != val:
            raise StageError("config", f"vit.{dim_key}={vit_dict[dim_key]} conflicts with "
                                       f"patch size {val}")
        vit_dict[dim_key] = val
    vit_dict.setdefault("in_channels", 8)
    try:
        vcfg = ViTConfig.from_json(vit_dict)
        tcfg = training.TrainConfig.from_json(dict(cfg.get("train", {})))
    except (TypeError, ValueError) as e:
        raise StageError("config", str(e)) from e
    return stack_path, labels_path, out_dir, normalize_mode, patch_h, patch_w, pad_mode, vcfg, tcfg


def cmd_train(args, out: _Outputs) -> int:
    (stack_path, labels_path, out_dir, normalize_mode,
     patch_h, patch_w, pad_mode, vcfg, tcfg) = _train_setup(args.config, args.set)
    x = _load_stack(stack_path, "train")
    labels = _load_mask(labels_path, "train")
    if (labels.height, labels.width) != (x.height, x.width):
        raise StageError("train", f"label mask {labels.width}x{labels.height} does not match "
                                  f"stack {x.width}x{x.height}")
    stack_r = x.raster
    norm_stats = None
    if normalize_mode != "none":
        try:
            stack_r, norm_stats = raster.normalize(stack_r, mode=normalize_mode)
        except ValueError as e:
            raise StageError("train", str(e)) from e

    try:
        x_patches, grid = patching.extract_patches(stack_r, patch_h, patch_w, pad_mode=pad_mode)
        y_patches, _ = patching.extract_patches(labels.to_raster(), patch_h, patch_w,
                                                pad_mode=pad_mode)
    except ValueError as e:
        raise StageError("train", str(e)) from e
    px = np.stack([p.data for p in x_patches])
    py = np.stack([p.data[0] for p in y_patches])

    out_dir.mkdir(parents=True, exist_ok=True)
    params = init_params(vcfg)
    try:
        params, history = training.train(params, vcfg, px, py, tcfg,
                                         checkpoint_dir=out_dir,
                                         resume_from=args.resume)
    except (RuntimeError, ValueError) as e:
        raise StageError("train", str(e)) from e

    # stash inference-time context in the final checkpoint manifest
    extra = {"epoch": history.records[-1].epoch if history.records else 0,
             "stage": history.records[-1].stage if history.records else 1,
             "history": history.to_json(),
             "train_config": tcfg.to_json(),
             "patch": {"patch_h": patch_h, "patch_w": patch_w, "pad_mode": pad_mode},
             "normalize": norm_stats.to_json() if norm_stats else None}
    ckpt = save_checkpoint(out_dir / "model", vcfg, params, extra=extra)
    out.track(ckpt)
    out.track(ckpt.with_suffix(".bin"))
    out.text(history.to_jsonl(), out_dir / "history.jsonl")
    print(f"trained {history.records[-1].epoch if history.records else 0} epochs; "
          f"checkpoint {ckpt}")
    return 0


def _predict_scene(ckpt_path, x: StackedInput):
    try:
        vcfg, params, extra, _ = load_checkpoint(ckpt_path)
    except (OSError, ValueError) as e:
        raise StageError("infer", f"{ckpt_path}: {e}") from e
    stack_r = x.raster
    norm = extra.get("normalize")
    if norm:
        stack_r = raster.apply_normalization(stack_r, raster.BandStats.from_json(norm))
    patch_info = extra.get("patch") or {"patch_h": vcfg.input_h, "patch_w": vcfg.input_w,
                                        "pad_mode": "reflect"}
    patches, grid = patching.extract_patches(stack_r, patch_info["patch_h"],
                                             patch_info["patch_w"],
                                             pad_mode=patch_info["pad_mode"])
    prob_tiles = []
    batch = 16
    arrs = np.stack([p.data for p in patches])
    for s in range(0, len(arrs), batch):
        probs, _ = forward(params, vcfg, arrs[s:s + batch])
        prob_tiles.extend(BandRaster(pr[None].astype(np.float32)) for pr in probs)
    prob_map = patching.reassemble(prob_tiles, grid)
    return prob_map


def cmd_infer(args, out: _Outputs) -> int:
    x = _load_stack(args.stack, "infer")
    prob_map = _predict_scene(args.checkpoint, x)
    mask = LabelMask((prob_map.data[0] >= BINARY_THRESHOLD).astype(np.uint8))
    out.raster(BandRaster(prob_map.data, band_names=["probability"]), f"{args.out}_prob")
    out.raster(mask.to_raster(), f"{args.out}_mask")
    return 0


def cmd_eval(args, out: _Outputs) -> int:
    pred = _load_mask(args.pred, "eval")
    ref = _load_mask(args.ref, "eval")
    try:
        report = metrics.evaluate(pred, ref)
    except ValueError as e:
        raise StageError("eval", str(e)) from e
    text = _json_dump(report.to_json())
    if args.out:
        out.text(text, args.out)
    print(text, end="")
    return 0


def cmd_diff(args, out: _Outputs) -> int:
    pred = _load_mask(args.pred, "diff")
    ref = _load_mask(args.ref, "diff")
    try:
        metrics.difference_map_png(pred, ref, args.out)
    except ValueError as e:
        raise StageError("diff", str(e)) from e
    out.track(args.out)
    return 0


def cmd_synth(args, out: _Outputs) -> int:
    try:
        spec_doc = json.loads(Path(args.spec).read_text()) if args.spec else {}
        spec = synthdata.SceneSpec.from_json(spec_doc)
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as e:
        raise StageError("synth", f"invalid scene spec: {e}") from e
    try:
        pre, post, truth = synthdata.generate_scene(spec)
    except ValueError as e:
        raise StageError("synth", str(e)) from e
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out.raster(pre, out_dir / "pre")
    out.raster(post, out_dir / "post")
    out.raster(truth.to_raster(), out_dir / "truth")
    out.text(_json_dump(spec.to_json()), out_dir / "scene_spec.json")
    return 0


def cmd_serve(args, out: _Outputs) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(data_dir=Path(args.data_dir) if args.data_dir else None)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _alpha_arg(value: str) -> float:
    a = float(value)
    if not 0.0 < a < 1.0:
        raise argparse.ArgumentTypeError(f"alpha must be in (0, 1), got {a}")
    return a


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="changeseg",
                                     description="Weakly-supervised change segmentation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stack", help="resample + concatenate a pre/post pair into an 8-band stack")
    p.add_argument("pre")
    p.add_argument("post")
    p.add_argument("out")
    p.add_argument("--resample", choices=("nearest", "bilinear"), default="bilinear")
    p.set_defaults(fn=cmd_stack, stage="stack")

    p = sub.add_parser("expand", help="expand seed polygons into a dense label mask")
    p.add_argument("stack")
    p.add_argument("seeds", help="GeoJSON FeatureCollection of polygons in pixel coordinates")
    p.add_argument("out_mask")
    p.add_argument("--out-stats", dest="out_stats", default=None)
    p.add_argument("--alpha", type=_alpha_arg, default=0.95)
    p.add_argument("--pc", type=int, default=2)
    p.add_argument("--ridge", type=float, default=None)
    p.set_defaults(fn=cmd_expand, stage="expand")

    p = sub.add_parser("patches", help="report the patch grid for a stack")
    p.add_argument("stack")
    p.add_argument("--patch-h", dest="patch_h", type=int, default=256)
    p.add_argument("--patch-w", dest="patch_w", type=int, default=256)
    p.add_argument("--pad-mode", dest="pad_mode", choices=("reflect", "zero"), default="reflect")
    p.set_defaults(fn=cmd_patches, stage="patches")

    p = sub.add_parser("train", help="train a model from a JSON pipeline config")
    p.add_argument("config")
    p.add_argument("--set", action="append", default=[],
                   help="override a config key, e.g. --set train.max_epochs=10")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(fn=cmd_train, stage="train")

    p = sub.add_parser("infer", help="tile a stack, predict, reassemble probability + mask")
    p.add_argument("checkpoint")
    p.add_argument("stack")
    p.add_argument("out", help="output prefix; writes <out>_prob and <out>_mask rasters")
    p.set_defaults(fn=cmd_infer, stage="infer")

    p = sub.add_parser("eval", help="score a predicted mask against a reference mask")
    p.add_argument("pred")
    p.add_argument("ref")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_eval, stage="eval")

    p = sub.add_parser("diff", help="render a commission/omission difference map PNG")
    p.add_argument("pred")
    p.add_argument("ref")
    p.add_argument("out")
    p.set_defaults(fn=cmd_diff, stage="diff")

    p = sub.add_parser("synth", help="generate a synthetic scene fixture")
    p.add_argument("out_dir")
    p.add_argument("--spec", default=None, help="SceneSpec JSON file (defaults used if omitted)")
    p.set_defaults(fn=cmd_synth, stage="synth")

    p = sub.add_parser("serve", help="run the interactive annotation HTTP service")
    p.add_argument("--port", type=int, default=8787)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--data-dir", dest="data_dir", default=None,
                   help="directory raster refs in session requests resolve against")
    p.set_defaults(fn=cmd_serve, stage="serve")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = _Outputs()
    try:
        return args.fn(args, out)
    except StageError as e:
        out.cleanup()
        print(f"[{e.stage}] {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - last-resort stage tag
        out.cleanup()
        print(f"[{args.stage}] unexpected error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
