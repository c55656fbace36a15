"""Mini-batch training with adaptive moment estimation and the two-stage
BCE -> IoU schedule driven by validation-loss plateau detection.

Stage semantics: ``two_stage`` optimizes BCE until the validation series
plateaus, then switches to the IoU loss and continues until max_epochs or
a second plateau. Single-stage losses stop on plateau or max_epochs.
Everything is seeded: the split and the per-epoch shuffles are pure
functions of (rng_seed, epoch), so checkpoint resume is bit-exact.

Two stage-2 details keep the IoU objective well-behaved on patch
datasets where many patches contain no positive labels:
  * optimizer moments reset at the stage switch (second-moment estimates
    calibrated to BCE gradient scales badly overshoot on the new
    objective), and
  * batches without a single positive reference pixel are skipped during
    the IoU stage: overlap against an empty reference measures nothing,
    and its only gradient direction is a uniform push toward an all-zero
    prediction. (If the whole training set lacks positives, nothing is
    skipped.)
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import losses
from .vitseg import ViTConfig, ViTParams, backward, forward, save_checkpoint, load_checkpoint

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

LOSS_MODES = ("bce", "bce_dice", "two_stage")


@dataclass
class TrainConfig:
    loss: str = "bce"
    learning_rate: float = 1e-4
    batch_size: int = 8
    max_epochs: int = 100
    plateau_rel_delta: float = 1e-3
    plateau_patience: int = 5
    val_fraction: float = 0.2
    rng_seed: int = 0
    checkpoint_every: int | None = None
    deterministic: bool = True  # reductions are serial numpy sums either way

    def __post_init__(self):
        if self.loss not in LOSS_MODES:
            raise ValueError(f"loss must be one of {LOSS_MODES}, got {self.loss!r}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.plateau_patience < 1:
            raise ValueError(f"plateau_patience must be >= 1, got {self.plateau_patience}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")

    def to_json(self) -> dict:
        return {
            "loss": self.loss, "learning_rate": self.learning_rate,
            "batch_size": self.batch_size, "max_epochs": self.max_epochs,
            "plateau_rel_delta": self.plateau_rel_delta,
            "plateau_patience": self.plateau_patience,
            "val_fraction": self.val_fraction, "rng_seed": self.rng_seed,
            "checkpoint_every": self.checkpoint_every,
            "deterministic": self.deterministic,
        }

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    stage: int
    train_loss: float
    val_loss: float
    wall_time: float

    def to_json(self) -> dict:
        return {"epoch": self.epoch, "stage": self.stage,
                "train_loss": self.train_loss, "val_loss": self.val_loss,
                "wall_time": self.wall_time}


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    stage_switch_epoch: int | None = None

    def val_series(self, stage: int | None = None) -> list[float]:
        return [r.val_loss for r in self.records if stage is None or r.stage == stage]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_json()) + "\n" for r in self.records)

    def save_jsonl(self, path):
        Path(path).write_text(self.to_jsonl())

    def to_json(self) -> dict:
        return {"records": [r.to_json() for r in self.records],
                "stage_switch_epoch": self.stage_switch_epoch}

    @classmethod
    def from_json(cls, d: dict) -> "TrainHistory":
        return cls(records=[EpochRecord(**r) for r in d["records"]],
                   stage_switch_epoch=d.get("stage_switch_epoch"))


def split_dataset(patches: np.ndarray, labels: np.ndarray, val_fraction: float,
                  seed: int) -> tuple[tuple[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]:
    """Deterministic seeded shuffle into disjoint, exhaustive train/val sets."""
    n = len(patches)
    if n < 2:
        raise ValueError(f"need at least 2 patches to split, got {n}")
    if len(labels) != n:
        raise ValueError(f"{n} patches but {len(labels)} labels")
    perm = np.random.default_rng(seed).permutation(n)
    n_val = int(np.clip(round(val_fraction * n), 1, n - 1))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    return (patches[train_idx], labels[train_idx]), (patches[val_idx], labels[val_idx])


def detect_plateau(val_losses, rel_delta: float, patience: int) -> bool:
    """True iff none of the last `patience` epochs beat the preceding
    best-so-far value by the relative margin rel_delta.

    Epoch i improves iff series[i] < best_before * (1 - rel_delta); an
    improvement of exactly rel_delta does not count. The first epoch has
    no preceding best and always counts as improving, so a plateau needs
    at least patience+1 epochs of history.
    """
    series = list(val_losses)
    if len(series) < patience + 1:
        return False
    for i in range(len(series) - patience, len(series)):
        best_before = min(series[:i])
        if series[i] < best_before * (1.0 - rel_delta):
            return False
    return True


def _loss_and_grad(mode: str, probs: np.ndarray, targets: np.ndarray):
    if mode == "bce":
        return losses.bce(probs, targets).scalar, losses.bce_grad(probs, targets)
    if mode == "bce_dice":
        return losses.bce_dice(probs, targets).scalar, losses.bce_dice_grad(probs, targets)
    if mode == "iou":
        return losses.iou_loss(probs, targets).scalar, losses.iou_grad(probs, targets)
    raise ValueError(f"unknown loss mode {mode!r}")


def _stage_loss_mode(tcfg: TrainConfig, stage: int) -> str:
    if tcfg.loss == "two_stage":
        return "bce" if stage == 1 else "iou"
    return tcfg.loss


def _eval_loss(params, cfg, patches, labels, mode: str, batch_size: int) -> float:
    total = 0.0
    n_px = 0
    for s in range(0, len(patches), batch_size):
        xb = patches[s:s + batch_size]
        yb = labels[s:s + batch_size]
        probs, _ = forward(params, cfg, xb)
        val, _ = _loss_and_grad(mode, probs, yb)
        total += val * probs.size
        n_px += probs.size
    return total / n_px


class _Adam:
    def __init__(self, params: ViTParams, lr: float):
        self.lr = lr
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}

    def step(self, params: ViTParams, grads: dict[str, np.ndarray]):
        self.t += 1
        b1c = 1.0 - ADAM_BETA1 ** self.t
        b2c = 1.0 - ADAM_BETA2 ** self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * (g * g)
            params.tensors[k] -= (self.lr * (m / b1c) /
                                  (np.sqrt(v / b2c) + ADAM_EPS)).astype(params.tensors[k].dtype)

    def aux_tensors(self) -> dict[str, np.ndarray]:
        out = {f"adam_m.{k}": v for k, v in self.m.items()}
        out.update({f"adam_v.{k}": v for k, v in self.v.items()})
        return out

    def load_aux(self, aux: dict[str, np.ndarray], t: int):
        self.t = t
        for k in self.m:
            self.m[k] = aux[f"adam_m.{k}"].astype(self.m[k].dtype)
            self.v[k] = aux[f"adam_v.{k}"].astype(self.v[k].dtype)


def train(params: ViTParams, cfg: ViTConfig, patches: np.ndarray, labels: np.ndarray,
          tcfg: TrainConfig, checkpoint_dir=None,
          resume_from=None) -> tuple[ViTParams, TrainHistory]:
    """Optimize in place over (patches, labels); returns params and history.

    patches: (M, C, H, W) float; labels: (M, H, W) binary. Validation
    patches never contribute gradients. Checkpoints (params + optimizer
    state + history) are written every `checkpoint_every` epochs plus a
    final one when a directory is given.
    """
    patches = np.asarray(patches, dtype=cfg.np_dtype)
    labels = np.asarray(labels, dtype=np.float64)
    (tx, ty), (vx, vy) = split_dataset(patches, labels, tcfg.val_fraction, tcfg.rng_seed)

    opt = _Adam(params, tcfg.learning_rate)
    history = TrainHistory()
    stage = 1
    start_epoch = 1
    if resume_from is not None:
        _, params, extra, aux = load_checkpoint(resume_from)
        opt = _Adam(params, tcfg.learning_rate)
        opt.load_aux(aux, extra["adam_t"])
        history = TrainHistory.from_json(extra["history"])
        stage = extra["stage"]
        start_epoch = extra["epoch"] + 1

    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    def write_checkpoint(name: str, epoch: int):
        if ckpt_dir is None:
            return
        extra = {"epoch": epoch, "stage": stage, "adam_t": opt.t,
                 "history": history.to_json(), "train_config": tcfg.to_json()}
        save_checkpoint(ckpt_dir / name, cfg, params, extra=extra,
                        aux_tensors=opt.aux_tensors())

    have_positives = bool(ty.sum() > 0)

    for epoch in range(start_epoch, tcfg.max_epochs + 1):
        t0 = time.monotonic()
        mode = _stage_loss_mode(tcfg, stage)
        order = np.random.default_rng((tcfg.rng_seed, epoch)).permutation(len(tx))
        total = 0.0
        n_px = 0
        for bi, s in enumerate(range(0, len(order), tcfg.batch_size)):
            idx = order[s:s + tcfg.batch_size]
            if mode == "iou" and have_positives and ty[idx].sum() == 0:
                continue  # IoU against an empty reference measures nothing
            probs, cache = forward(params, cfg, tx[idx])
            if not np.isfinite(probs).all():
                raise RuntimeError(f"non-finite predictions at epoch {epoch}, batch {bi}")
            try:
                val, grad = _loss_and_grad(mode, probs, ty[idx])
            except ValueError as e:
                raise RuntimeError(
                    f"non-finite {mode} loss at epoch {epoch}, batch {bi}: {e}") from e
            if not np.isfinite(val):
                raise RuntimeError(f"non-finite {mode} loss at epoch {epoch}, batch {bi}")
            grads = backward(params, cfg, cache, grad.reshape(probs.shape))
            opt.step(params, grads)
            total += val * probs.size
            n_px += probs.size
        train_loss = total / n_px
        try:
            val_loss = _eval_loss(params, cfg, vx, vy, mode, tcfg.batch_size)
        except ValueError as e:
            raise RuntimeError(f"non-finite validation loss at epoch {epoch}: {e}") from e
        if not np.isfinite(val_loss):
            raise RuntimeError(f"non-finite validation loss at epoch {epoch}")
        history.records.append(EpochRecord(
            epoch=epoch, stage=stage, train_loss=train_loss, val_loss=val_loss,
            wall_time=time.monotonic() - t0))

        if tcfg.checkpoint_every and epoch % tcfg.checkpoint_every == 0:
            write_checkpoint(f"checkpoint_epoch_{epoch:04d}", epoch)

        if detect_plateau(history.val_series(stage=stage),
                          tcfg.plateau_rel_delta, tcfg.plateau_patience):
            if tcfg.loss == "two_stage" and stage == 1:
                history.stage_switch_epoch = epoch
                stage = 2
                opt = _Adam(params, tcfg.learning_rate)  # fresh moments for the new objective
            else:
                break

    write_checkpoint("final", history.records[-1].epoch if history.records else 0)
    return params, history
