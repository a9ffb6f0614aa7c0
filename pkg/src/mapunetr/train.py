"""Training loop, CSV logging and model ↔ checkpoint conversion."""

from __future__ import annotations

import contextlib
import csv
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from threadpoolctl import threadpool_limits

from .checkpoint import Checkpoint, save_checkpoint
from .config import RunConfig
from .errors import ConfigError, DatasetError, ShapeError
from .metrics import dice_loss
from .model import MAPUNetR, ModelConfig, predict_mask
from .optim import lr_at, sgd_step
from .preprocess import AugmentConfig, NormStats, Sample, augment, normalize_zscore, resize_sample
from .rng import restore, state_bytes, stream

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "accuracy", "dice_coef", "loss", "lr", "val_acc", "val_dice_coef", "val_loss")


@dataclass
class EpochLog:
    epoch: int
    accuracy: float
    dice_coef: float
    loss: float
    lr: float
    val_acc: float
    val_dice_coef: float
    val_loss: float

    def csv_row(self) -> List[str]:
        def fmt(v: float) -> str:
            return "nan" if math.isnan(v) else f"{v:.8f}"

        return [str(self.epoch), fmt(self.accuracy), fmt(self.dice_coef), fmt(self.loss), repr(self.lr),
                fmt(self.val_acc), fmt(self.val_dice_coef), fmt(self.val_loss)]


@dataclass
class TrainResult:
    model: MAPUNetR
    logs: List[EpochLog]
    norm: NormStats
    train_samples: List[Sample]
    val_samples: List[Sample]
    best_epoch: int


def compute_threads(deterministic: bool) -> Optional[int]:
    if deterministic:
        return 1
    raw = os.environ.get("MAPUNETR_THREADS")
    if raw is None:
        return None
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"MAPUNETR_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError(f"MAPUNETR_THREADS must be >= 1, got {n}")
    return n


def thread_limit(deterministic: bool):
    n = compute_threads(deterministic)
    return threadpool_limits(limits=n) if n is not None else contextlib.nullcontext()


def conform(samples: Sequence[Sample], cfg: ModelConfig) -> List[Sample]:
    """Resize square inputs to the model's square extent; validate channels and labels."""
    H, W = cfg.image_size
    out = []
    for s in samples:
        if s.mask.shape != (H, W):
            if H != W:
                raise ShapeError(f"sample {s.id!r} is {s.mask.shape}, model expects {H}×{W}")
            s = resize_sample(s, H)
        if s.image.shape[-1] != cfg.in_channels:
            raise ShapeError(f"sample {s.id!r} has {s.image.shape[-1]} channels, model expects {cfg.in_channels}")
        s.check_classes(cfg.num_classes)
        out.append(s)
    return out


def prepare_image(image: np.ndarray, norm: NormStats, dtype=np.float32) -> np.ndarray:
    """z-score with the training statistics, computed in float64 then cast."""
    return normalize_zscore(image.astype(np.float64), norm).astype(dtype)


def split(samples: Sequence[Sample], val_fraction: float, seed: int) -> Tuple[List[Sample], List[Sample]]:
    """Seeded shuffle, then the first ⌊n·val_fraction⌉ samples form the validation split."""
    n = len(samples)
    n_val = int(round(n * val_fraction))
    if val_fraction > 0 and n_val == n:
        n_val = n - 1
    order = stream(seed, "split").permutation(n)
    val = [samples[i] for i in sorted(order[:n_val])]
    train = [samples[i] for i in sorted(order[n_val:])]
    return train, val


def _batch_stats(probs, masks: np.ndarray, smooth: float) -> Tuple[float, float, float]:
    """(loss, soft dice, pixel accuracy) of an already-computed batch."""
    loss = float(dice_loss(probs, masks, smooth).data)
    acc = float((predict_mask(probs) == masks).mean())
    return loss, 1.0 - loss, acc


def evaluate_split(model: MAPUNetR, images: np.ndarray, masks: np.ndarray, smooth: float,
                   batch_size: int) -> Tuple[float, float, float]:
    if len(images) == 0:
        return math.nan, math.nan, math.nan
    total = np.zeros(3)
    for start in range(0, len(images), batch_size):
        x, y = images[start:start + batch_size], masks[start:start + batch_size]
        probs, _ = model.forward(x, mode="infer")
        total += np.array(_batch_stats(probs, y, smooth)) * len(x)
    loss, dice, acc = total / len(images)
    return loss, dice, acc


def to_checkpoint(model: MAPUNetR, run: RunConfig, norm: NormStats, epoch: int,
                  rng: Optional[np.random.Generator] = None, seed: int = 0) -> Checkpoint:
    config = {"run": run.to_dict(), "norm": norm.to_dict(), "seed": seed}
    params = [(name, p.data.copy()) for name, p in model.named_parameters()]
    return Checkpoint(config, params, epoch, state_bytes(rng) if rng is not None else b"")


def from_checkpoint(ckpt: Checkpoint) -> Tuple[MAPUNetR, RunConfig, NormStats]:
    """Rebuild model, run config and normalization statistics; parameters are copied bitwise."""
    try:
        run = RunConfig.from_dict(ckpt.config["run"])
        norm_d = ckpt.config["norm"]
        norm = NormStats(norm_d["mean"], norm_d["std"], norm_d["eps"])
    except KeyError as exc:
        raise ConfigError(f"checkpoint config lacks {exc}") from exc
    stored = ckpt.param_dict()
    dtype = next(iter(stored.values())).dtype if stored else np.float32
    model = MAPUNetR(run.model, seed=int(ckpt.config.get("seed", 0)), dtype=dtype)
    names = [n for n, _ in model.named_parameters()]
    if sorted(names) != sorted(stored):
        missing = sorted(set(names) - set(stored))
        extra = sorted(set(stored) - set(names))
        raise ConfigError(f"checkpoint parameters do not match the model (missing {missing[:3]}, extra {extra[:3]})")
    for name, p in model.named_parameters():
        if stored[name].shape != p.shape:
            raise ConfigError(f"parameter {name}: checkpoint shape {stored[name].shape}, model {p.shape}")
    for name, p in model.named_parameters():
        p.data = stored[name].copy()
    return model, run, norm


def shuffle_rng(seed: int, blob: bytes = b"") -> np.random.Generator:
    return restore(blob) if blob else stream(seed, "shuffle")


def write_log(rows: Sequence[EpochLog], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for row in rows:
            writer.writerow(row.csv_row())


def read_log(path) -> List[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def train(run: RunConfig, samples: Sequence[Sample], out_dir=None, seed: int = 0,
          deterministic: bool = True, dtype=np.float32) -> TrainResult:
    """Mini-batch SGD on the dice loss with the step-decay schedule.

    Writes ``log.csv``, ``best.ckpt`` (highest validation soft dice, or
    training soft dice when there is no validation split) and
    ``final.ckpt`` to ``out_dir`` when given.
    """
    sched = run.schedule
    samples = list(samples)
    if not samples:
        raise DatasetError("training needs at least one sample")
    if len(samples) < sched.batch_size:
        raise ConfigError(f"dataset has {len(samples)} samples, fewer than one batch of {sched.batch_size}")
    samples = conform(samples, run.model)
    train_set, val_set = split(samples, run.val_fraction, seed)
    norm = NormStats.from_images([s.image for s in train_set])

    def prepared(subset):
        if not subset:
            H, W = run.model.image_size
            return np.zeros((0, H, W, run.model.in_channels), dtype=dtype), np.zeros((0, H, W), dtype=np.int64)
        x = np.stack([prepare_image(s.image, norm, dtype) for s in subset])
        return x, np.stack([s.mask for s in subset])

    x_train, y_train = prepared(train_set)
    x_val, y_val = prepared(val_set)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    model = MAPUNetR(run.model, seed=seed, dtype=dtype)
    params = model.parameters()
    order_rng = shuffle_rng(seed)
    aug_rng = stream(seed, "augment")
    aug_cfg = AugmentConfig(seed=seed) if run.augment else None
    logs: List[EpochLog] = []
    best = (-math.inf, -1)

    with thread_limit(deterministic):
        for epoch in range(sched.epochs):
            lr = lr_at(epoch, sched)
            order = order_rng.permutation(len(x_train))
            totals = np.zeros(3)
            for start in range(0, len(order), sched.batch_size):
                idx = order[start:start + sched.batch_size]
                xb, yb = x_train[idx], y_train[idx]
                if aug_cfg is not None:
                    pairs = [augment(Sample(x, y), aug_cfg, aug_rng) for x, y in zip(xb, yb)]
                    xb = np.stack([p.image for p in pairs]).astype(dtype)
                    yb = np.stack([p.mask for p in pairs])
                model.zero_grad()
                probs, _ = model.forward(xb, mode="train")
                loss = dice_loss(probs, yb, run.dice_smooth)
                loss.backward()
                sgd_step(params, lr, sched.momentum)
                batch_loss = float(loss.data)
                acc = float((predict_mask(probs) == yb).mean())
                totals += np.array([batch_loss, 1.0 - batch_loss, acc]) * len(idx)
            tr_loss, tr_dice, tr_acc = totals / len(order)
            v_loss, v_dice, v_acc = evaluate_split(model, x_val, y_val, run.dice_smooth, sched.batch_size)
            row = EpochLog(epoch, tr_acc, tr_dice, tr_loss, lr, v_acc, v_dice, v_loss)
            logs.append(row)
            logger.info("epoch %d lr=%g loss=%.4f dice=%.4f acc=%.4f val_dice=%.4f",
                        epoch, lr, tr_loss, tr_dice, tr_acc, v_dice)

            score = tr_dice if math.isnan(v_dice) else v_dice
            if out is not None:
                write_log(logs, out / "log.csv")
                if score > best[0]:
                    save_checkpoint(to_checkpoint(model, run, norm, epoch, order_rng, seed), out / "best.ckpt")
            if score > best[0]:
                best = (score, epoch)

    if out is not None:
        save_checkpoint(to_checkpoint(model, run, norm, sched.epochs - 1, order_rng, seed), out / "final.ckpt")
    return TrainResult(model, logs, norm, train_set, val_set, best[1])
