"""ViT encoder-decoder: patch embedding, pre-norm transformer blocks, and
three decoder heads producing a per-pixel affected-probability map.

Decoder variants:
  A - single 3x3 conv block on the token grid, bilinear upsample to input size
  B - four [2x nearest upsample, 3x3 conv, ReLU] stages halving channel width
      (requires patch_size 16 = 2^4), then a 1x1 conv head
  C - U-Net-style ladder over token grids cached at the configured skip blocks:
      upsample 2x per stage, concat the next-shallower grid (1x1-projected to
      matching channels), fuse with a 3x3 conv + ReLU; final nearest upsample
      to full resolution and a 1x1 conv head

Blocks are pre-norm with GELU MLPs; positional embeddings are learned and
sized to the training patch-token count, so inference patches must match the
configured input size. There is no CLS token. All math is plain numpy;
backward passes are exact reverse-mode and bit-deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ops

INIT_SD = 0.02
INIT_TRUNC = 2.0  # in units of sd


def default_skip_depths(depth: int) -> list[int]:
    """Evenly spaced block taps at fractions (1/6, 1/3, 2/3, 1) of the depth."""
    taps = {max(1, round(depth * f)) for f in (1 / 6, 1 / 3, 2 / 3, 1.0)}
    return sorted(taps)


@dataclass
class ViTConfig:
    in_channels: int = 8
    patch_size: int = 16
    embed_dim: int = 128
    depth: int = 6
    num_heads: int = 4
    mlp_ratio: int = 4
    decoder: str = "A"
    skip_depths: list[int] | None = None
    input_h: int = 256
    input_w: int = 256
    rng_seed: int = 0
    dtype: str = "f32"  # f64 exists to tighten gradient checks

    def __post_init__(self):
        if self.decoder not in ("A", "B", "C"):
            raise ValueError(f"unknown decoder {self.decoder!r}")
        if self.embed_dim % self.num_heads != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if self.input_h % self.patch_size or self.input_w % self.patch_size:
            raise ValueError(
                f"input {self.input_h}x{self.input_w} not divisible by patch_size {self.patch_size}")
        if self.decoder == "B" and self.patch_size != 16:
            raise ValueError("decoder B upsamples 2^4: patch_size must be 16")
        if self.skip_depths is None:
            self.skip_depths = default_skip_depths(self.depth)
        sk = list(self.skip_depths)
        if sk != sorted(sk) or len(set(sk)) != len(sk):
            raise ValueError(f"skip_depths must be sorted and unique, got {sk}")
        if sk and (sk[0] < 1 or sk[-1] > self.depth):
            raise ValueError(f"skip_depths {sk} outside [1, depth={self.depth}]")
        if self.decoder == "C":
            if not sk:
                raise ValueError("decoder C needs at least one skip block")
            ladder = 2 ** (len(sk) - 1)
            if self.patch_size % ladder:
                raise ValueError(
                    f"decoder C with {len(sk)} skips upsamples x{ladder} before the head; "
                    f"patch_size {self.patch_size} must be a multiple")
        if self.dtype not in ("f32", "f64"):
            raise ValueError(f"dtype must be f32 or f64, got {self.dtype!r}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "f32" else np.float64

    @property
    def grid_h(self) -> int:
        return self.input_h // self.patch_size

    @property
    def grid_w(self) -> int:
        return self.input_w // self.patch_size

    @property
    def tokens(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    def to_json(self) -> dict:
        return {
            "in_channels": self.in_channels, "patch_size": self.patch_size,
            "embed_dim": self.embed_dim, "depth": self.depth,
            "num_heads": self.num_heads, "mlp_ratio": self.mlp_ratio,
            "decoder": self.decoder, "skip_depths": list(self.skip_depths),
            "input_h": self.input_h, "input_w": self.input_w,
            "rng_seed": self.rng_seed, "dtype": self.dtype,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ViTConfig":
        return cls(**d)


@dataclass
class ViTParams:
    """All trainable tensors, keyed by canonical names in a stable order."""

    tensors: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors.keys())

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "ViTParams":
        return ViTParams({k: v.copy() for k, v in self.tensors.items()})


@dataclass
class ProbabilityMask:
    values: np.ndarray  # (h, w) in [0, 1]

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise ValueError(f"probability mask must be 2-d, got {self.values.shape}")
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise ValueError("probabilities outside [0, 1]")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def threshold(self, t: float = 0.5):
        from ..raster import LabelMask
        return LabelMask((self.values >= t).astype(np.uint8))


# ---------------------------------------------------------------------------
# shapes and init


def _decoder_b_widths(dim: int) -> list[int]:
    widths = [dim]
    for _ in range(4):
        widths.append(max(widths[-1] // 2, 1))
    return widths  # length 5: input + 4 stage outputs


def _decoder_c_plan(cfg: ViTConfig) -> list[tuple[int, int]]:
    """(in_channels, out_channels) per ladder stage, deepest tap first."""
    plan = []
    c = cfg.embed_dim
    for _ in range(len(cfg.skip_depths) - 1):
        out = max(c // 2, 4)
        plan.append((c, out))
        c = out
    return plan


def param_shapes(cfg: ViTConfig) -> dict[str, tuple[int, ...]]:
    d = cfg.embed_dim
    shapes: dict[str, tuple[int, ...]] = {
        "patch_embed.w": (d, cfg.in_channels * cfg.patch_size ** 2),
        "patch_embed.b": (d,),
        "pos_embed": (cfg.tokens, d),
    }
    for i in range(cfg.depth):
        p = f"blocks.{i}."
        shapes[p + "ln1.g"] = (d,)
        shapes[p + "ln1.b"] = (d,)
        for name in ("q", "k", "v", "o"):
            shapes[p + f"attn.w{name}"] = (d, d)
            shapes[p + f"attn.b{name}"] = (d,)
        shapes[p + "ln2.g"] = (d,)
        shapes[p + "ln2.b"] = (d,)
        hidden = cfg.mlp_ratio * d
        shapes[p + "mlp.w1"] = (hidden, d)
        shapes[p + "mlp.b1"] = (hidden,)
        shapes[p + "mlp.w2"] = (d, hidden)
        shapes[p + "mlp.b2"] = (d,)
    if cfg.decoder == "A":
        shapes["decoder.conv.w"] = (1, d, 3, 3)
        shapes["decoder.conv.b"] = (1,)
    elif cfg.decoder == "B":
        widths = _decoder_b_widths(d)
        for s in range(4):
            shapes[f"decoder.stage{s}.w"] = (widths[s + 1], widths[s], 3, 3)
            shapes[f"decoder.stage{s}.b"] = (widths[s + 1],)
        shapes["decoder.head.w"] = (1, widths[4])
        shapes["decoder.head.b"] = (1,)
    else:
        plan = _decoder_c_plan(cfg)
        for s, (cin, cout) in enumerate(plan):
            shapes[f"decoder.skip{s}.w"] = (cin, d)
            shapes[f"decoder.skip{s}.b"] = (cin,)
            shapes[f"decoder.fuse{s}.w"] = (cout, 2 * cin, 3, 3)
            shapes[f"decoder.fuse{s}.b"] = (cout,)
        last = plan[-1][1] if plan else d
        shapes["decoder.head.w"] = (1, last)
        shapes["decoder.head.b"] = (1,)
    return shapes


def param_count(cfg: ViTConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(cfg).values())


def _trunc_normal(rng: np.random.Generator, shape, dtype) -> np.ndarray:
    out = rng.normal(0.0, INIT_SD, size=shape)
    lim = INIT_TRUNC * INIT_SD
    bad = np.abs(out) > lim
    while bad.any():
        out[bad] = rng.normal(0.0, INIT_SD, size=int(bad.sum()))
        bad = np.abs(out) > lim
    return out.astype(dtype)


def init_params(cfg: ViTConfig) -> ViTParams:
    """Truncated-normal weights (sd 0.02, cut at 2 sd), zero biases/shifts,
    unit norm scales; fully determined by cfg.rng_seed."""
    rng = np.random.default_rng(cfg.rng_seed)
    dt = cfg.np_dtype
    tensors: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("b", "bq", "bk", "bv", "bo", "b1", "b2") or name.endswith("ln1.b") \
                or name.endswith("ln2.b"):
            tensors[name] = np.zeros(shape, dtype=dt)
        elif leaf == "g":
            tensors[name] = np.ones(shape, dtype=dt)
        else:
            tensors[name] = _trunc_normal(rng, shape, dt)
    return ViTParams(tensors)


# ---------------------------------------------------------------------------
# forward


def _to_tokens(x: np.ndarray, cfg: ViTConfig) -> np.ndarray:
    """(B, C, H, W) -> (B, N, C*ps*ps), tokens row-major over the patch grid."""
    b, c, h, w = x.shape
    ps = cfg.patch_size
    gh, gw = h // ps, w // ps
    t = x.reshape(b, c, gh, ps, gw, ps)
    t = t.transpose(0, 2, 4, 1, 3, 5)  # (B, gh, gw, C, ps, ps)
    return t.reshape(b, gh * gw, c * ps * ps)


def _grid(tokens: np.ndarray, cfg: ViTConfig) -> np.ndarray:
    """(B, N, D) -> (B, D, gh, gw)."""
    b = tokens.shape[0]
    return tokens.reshape(b, cfg.grid_h, cfg.grid_w, -1).transpose(0, 3, 1, 2)


def _grid_to_tokens_grad(dg: np.ndarray, cfg: ViTConfig) -> np.ndarray:
    b = dg.shape[0]
    return dg.transpose(0, 2, 3, 1).reshape(b, cfg.tokens, -1)


def _attention_fwd(x, p, prefix, cfg):
    b, n, d = x.shape
    h, dh = cfg.num_heads, cfg.head_dim
    scale = 1.0 / math.sqrt(dh)
    q, cq = ops.linear_fwd(x, p[prefix + "wq"], p[prefix + "bq"])
    k, ck = ops.linear_fwd(x, p[prefix + "wk"], p[prefix + "bk"])
    v, cv = ops.linear_fwd(x, p[prefix + "wv"], p[prefix + "bv"])
    qh = q.reshape(b, n, h, dh).transpose(0, 2, 1, 3)
    kh = k.reshape(b, n, h, dh).transpose(0, 2, 1, 3)
    vh = v.reshape(b, n, h, dh).transpose(0, 2, 1, 3)
    scores = (qh @ kh.transpose(0, 1, 3, 2)) * scale
    probs, cp = ops.softmax_fwd(scores)
    ctx = probs @ vh  # (b, h, n, dh)
    merged = ctx.transpose(0, 2, 1, 3).reshape(b, n, d)
    out, co = ops.linear_fwd(merged, p[prefix + "wo"], p[prefix + "bo"])
    cache = (cq, ck, cv, qh, kh, vh, cp, co, scale, (b, n, h, dh))
    return out, cache, probs


def _attention_bwd(cache, dout, prefix, grads):
    cq, ck, cv, qh, kh, vh, cp, co, scale, (b, n, h, dh) = cache
    dmerged, dwo, dbo = ops.linear_bwd(co, dout)
    grads[prefix + "wo"] += dwo
    grads[prefix + "bo"] += dbo
    dctx = dmerged.reshape(b, n, h, dh).transpose(0, 2, 1, 3)
    dprobs = dctx @ vh.transpose(0, 1, 3, 2)
    dvh = cp.transpose(0, 1, 3, 2) @ dctx
    dscores = ops.softmax_bwd(cp, dprobs)
    dqh = (dscores @ kh) * scale
    dkh = (dscores.transpose(0, 1, 3, 2) @ qh) * scale
    dq = dqh.transpose(0, 2, 1, 3).reshape(b, n, h * dh)
    dk = dkh.transpose(0, 2, 1, 3).reshape(b, n, h * dh)
    dv = dvh.transpose(0, 2, 1, 3).reshape(b, n, h * dh)
    dx_q, dwq, dbq = ops.linear_bwd(cq, dq)
    dx_k, dwk, dbk = ops.linear_bwd(ck, dk)
    dx_v, dwv, dbv = ops.linear_bwd(cv, dv)
    grads[prefix + "wq"] += dwq
    grads[prefix + "bq"] += dbq
    grads[prefix + "wk"] += dwk
    grads[prefix + "bk"] += dbk
    grads[prefix + "wv"] += dwv
    grads[prefix + "bv"] += dbv
    return dx_q + dx_k + dx_v


def _decode_a_fwd(tokens, p, cfg):
    grid = _grid(tokens, cfg)
    conv, c1 = ops.conv3x3_fwd(grid, p["decoder.conv.w"], p["decoder.conv.b"])
    logits, c2 = ops.upsample_bilinear_fwd(conv, cfg.patch_size)
    return logits, (c1, c2)


def _decode_a_bwd(cache, dlogits, p, cfg, grads):
    c1, c2 = cache
    dconv = ops.upsample_bilinear_bwd(c2, dlogits)
    dgrid, dw, db = ops.conv3x3_bwd(c1, dconv)
    grads["decoder.conv.w"] += dw
    grads["decoder.conv.b"] += db
    return _grid_to_tokens_grad(dgrid, cfg)


def _decode_b_fwd(tokens, p, cfg):
    f = _grid(tokens, cfg)
    caches = []
    for s in range(4):
        up, cu = ops.upsample_nearest_fwd(f, 2)
        conv, cc = ops.conv3x3_fwd(up, p[f"decoder.stage{s}.w"], p[f"decoder.stage{s}.b"])
        f, cr = ops.relu_fwd(conv)
        caches.append((cu, cc, cr))
    logits, ch = ops.conv1x1_fwd(f, p["decoder.head.w"], p["decoder.head.b"])
    return logits, (caches, ch)


def _decode_b_bwd(cache, dlogits, p, cfg, grads):
    caches, ch = cache
    df, dw, db = ops.conv1x1_bwd(ch, dlogits)
    grads["decoder.head.w"] += dw
    grads["decoder.head.b"] += db
    for s in range(3, -1, -1):
        cu, cc, cr = caches[s]
        dconv = ops.relu_bwd(cr, df)
        dup, dw, db = ops.conv3x3_bwd(cc, dconv)
        grads[f"decoder.stage{s}.w"] += dw
        grads[f"decoder.stage{s}.b"] += db
        df = ops.upsample_nearest_bwd(cu, dup)
    return _grid_to_tokens_grad(df, cfg)


def _decode_c_fwd(block_tokens, p, cfg):
    taps = cfg.skip_depths  # 1-based block indices
    plan = _decoder_c_plan(cfg)
    f = _grid(block_tokens[taps[-1] - 1], cfg)
    stages = []
    for s, (cin, cout) in enumerate(plan):
        tap = taps[len(taps) - 2 - s]
        up, cu = ops.upsample_nearest_fwd(f, 2)
        skip_grid = _grid(block_tokens[tap - 1], cfg)
        skip_up, csu = ops.upsample_nearest_fwd(skip_grid, 2 ** (s + 1))
        proj, cpj = ops.conv1x1_fwd(skip_up, p[f"decoder.skip{s}.w"], p[f"decoder.skip{s}.b"])
        cat = np.concatenate([up, proj], axis=1)
        fused, cf = ops.conv3x3_fwd(cat, p[f"decoder.fuse{s}.w"], p[f"decoder.fuse{s}.b"])
        f, cr = ops.relu_fwd(fused)
        stages.append((cu, csu, cpj, cf, cr, cin, tap))
    final_factor = cfg.patch_size // (2 ** len(plan))
    if final_factor > 1:
        full, cfin = ops.upsample_nearest_fwd(f, final_factor)
    else:
        full, cfin = f, None
    logits, ch = ops.conv1x1_fwd(full, p["decoder.head.w"], p["decoder.head.b"])
    return logits, (stages, cfin, ch, final_factor)


def _decode_c_bwd(cache, dlogits, p, cfg, grads, dtokens_blocks):
    stages, cfin, ch, final_factor = cache
    taps = cfg.skip_depths
    dfull, dw, db = ops.conv1x1_bwd(ch, dlogits)
    grads["decoder.head.w"] += dw
    grads["decoder.head.b"] += db
    df = ops.upsample_nearest_bwd(cfin, dfull) if final_factor > 1 else dfull
    for s in range(len(stages) - 1, -1, -1):
        cu, csu, cpj, cf, cr, cin, tap = stages[s]
        dfused = ops.relu_bwd(cr, df)
        dcat, dw, db = ops.conv3x3_bwd(cf, dfused)
        grads[f"decoder.fuse{s}.w"] += dw
        grads[f"decoder.fuse{s}.b"] += db
        dup, dproj = dcat[:, :cin], dcat[:, cin:]
        dskip_up, dw, db = ops.conv1x1_bwd(cpj, dproj)
        grads[f"decoder.skip{s}.w"] += dw
        grads[f"decoder.skip{s}.b"] += db
        dskip_grid = ops.upsample_nearest_bwd(csu, dskip_up)
        dtokens_blocks[tap - 1] += _grid_to_tokens_grad(dskip_grid, cfg)
        df = ops.upsample_nearest_bwd(cu, dup)
    dtokens_blocks[taps[-1] - 1] += _grid_to_tokens_grad(df, cfg)


def forward(params: ViTParams, cfg: ViTConfig, x: np.ndarray):
    """Probability map for one patch (C,H,W) or a batch (B,C,H,W).

    Returns (probs, cache); probs has the input's spatial dims (batched
    input gives (B,H,W)). The cache feeds backward() and holds every
    intermediate needed for exact gradients.
    """
    x = np.asarray(x, dtype=cfg.np_dtype)
    single = x.ndim == 3
    if single:
        x = x[None]
    b, c, h, w = x.shape
    if c != cfg.in_channels:
        raise ValueError(f"expected {cfg.in_channels} channels, got {c}")
    if (h, w) != (cfg.input_h, cfg.input_w):
        raise ValueError(
            f"input {h}x{w} does not match configured patch size {cfg.input_h}x{cfg.input_w}"
            " (positional embeddings are not interpolated)")
    p = params.tensors

    flat = _to_tokens(x, cfg)
    emb, c_embed = ops.linear_fwd(flat, p["patch_embed.w"], p["patch_embed.b"])
    tok = emb + p["pos_embed"]

    block_caches = []
    block_tokens = []  # output of each block, 0-based
    attn_probs = []
    for i in range(cfg.depth):
        pre = f"blocks.{i}."
        n1, c_ln1 = ops.layernorm_fwd(tok, p[pre + "ln1.g"], p[pre + "ln1.b"])
        att, c_att, probs_i = _attention_fwd(n1, p, pre + "attn.", cfg)
        tok = tok + att
        n2, c_ln2 = ops.layernorm_fwd(tok, p[pre + "ln2.g"], p[pre + "ln2.b"])
        h1, c_l1 = ops.linear_fwd(n2, p[pre + "mlp.w1"], p[pre + "mlp.b1"])
        g1, c_g = ops.gelu_fwd(h1)
        h2, c_l2 = ops.linear_fwd(g1, p[pre + "mlp.w2"], p[pre + "mlp.b2"])
        tok = tok + h2
        block_caches.append((c_ln1, c_att, c_ln2, c_l1, c_g, c_l2))
        block_tokens.append(tok)
        attn_probs.append(probs_i)

    if cfg.decoder == "A":
        logits, dec_cache = _decode_a_fwd(tok, p, cfg)
    elif cfg.decoder == "B":
        logits, dec_cache = _decode_b_fwd(tok, p, cfg)
    else:
        logits, dec_cache = _decode_c_fwd(block_tokens, p, cfg)

    probs, c_sig = ops.sigmoid_fwd(logits[:, 0])  # (B, H, W)
    cache = {
        "x_shape": x.shape,
        "embed": c_embed,
        "blocks": block_caches,
        "block_tokens": block_tokens,
        "decoder": dec_cache,
        "sigmoid": c_sig,
        "attn_probs": attn_probs,
        "single": single,
    }
    return (probs[0] if single else probs), cache


def backward(params: ViTParams, cfg: ViTConfig, cache: dict, dprob: np.ndarray) -> dict[str, np.ndarray]:
    """Exact parameter gradients given d(loss)/d(probability map)."""
    p = params.tensors
    dprob = np.asarray(dprob, dtype=cfg.np_dtype)
    if cache["single"]:
        dprob = dprob[None]
    if dprob.shape != cache["sigmoid"].shape:
        raise ValueError(f"gradient shape {dprob.shape} does not match forward cache "
                         f"{cache['sigmoid'].shape}")
    grads = {k: np.zeros_like(v) for k, v in p.items()}

    dlogits = ops.sigmoid_bwd(cache["sigmoid"], dprob)[:, None]  # (B,1,H,W)

    b = dlogits.shape[0]
    dtokens_blocks = [np.zeros((b, cfg.tokens, cfg.embed_dim), dtype=cfg.np_dtype)
                      for _ in range(cfg.depth)]
    if cfg.decoder == "A":
        dtokens_blocks[-1] += _decode_a_bwd(cache["decoder"], dlogits, p, cfg, grads)
    elif cfg.decoder == "B":
        dtokens_blocks[-1] += _decode_b_bwd(cache["decoder"], dlogits, p, cfg, grads)
    else:
        _decode_c_bwd(cache["decoder"], dlogits, p, cfg, grads, dtokens_blocks)

    dtok = np.zeros((b, cfg.tokens, cfg.embed_dim), dtype=cfg.np_dtype)
    for i in range(cfg.depth - 1, -1, -1):
        pre = f"blocks.{i}."
        dtok = dtok + dtokens_blocks[i]
        c_ln1, c_att, c_ln2, c_l1, c_g, c_l2 = cache["blocks"][i]
        # MLP sub-block
        dg1, dw2, db2 = ops.linear_bwd(c_l2, dtok)
        grads[pre + "mlp.w2"] += dw2
        grads[pre + "mlp.b2"] += db2
        dh1 = ops.gelu_bwd(c_g, dg1)
        dn2, dw1, db1 = ops.linear_bwd(c_l1, dh1)
        grads[pre + "mlp.w1"] += dw1
        grads[pre + "mlp.b1"] += db1
        dres, dg_ln2, db_ln2 = ops.layernorm_bwd(c_ln2, dn2)
        grads[pre + "ln2.g"] += dg_ln2
        grads[pre + "ln2.b"] += db_ln2
        dtok = dtok + dres
        # attention sub-block
        dn1 = _attention_bwd(c_att, dtok, pre + "attn.", grads)
        dres, dg_ln1, db_ln1 = ops.layernorm_bwd(c_ln1, dn1)
        grads[pre + "ln1.g"] += dg_ln1
        grads[pre + "ln1.b"] += db_ln1
        dtok = dtok + dres

    grads["pos_embed"] += dtok.sum(axis=0)
    _, dw, db = ops.linear_bwd(cache["embed"], dtok)
    grads["patch_embed.w"] += dw
    grads["patch_embed.b"] += db
    return grads
