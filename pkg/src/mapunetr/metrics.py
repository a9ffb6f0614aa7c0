"""Dice loss and the five overlap/classification scores."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from .autograd import Tensor
from .errors import ConfigError, DatasetError, ShapeError
from .model import one_hot, predict_mask

METRIC_NAMES = ("dsc", "iou", "accuracy", "precision", "recall")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricsReport:
    dsc: float
    iou: float
    accuracy: float
    precision: float
    recall: float

    def as_dict(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        width = max(len(n) for n in METRIC_NAMES)
        return "\n".join(f"{name:<{width}}  {getattr(self, name):.6f}" for name in METRIC_NAMES)

    def line(self) -> str:
        return " ".join(f"{name}={getattr(self, name):.6f}" for name in METRIC_NAMES)


def _ratio(num: float, den: float) -> float:
    # 0/0 means both sets are empty: perfect agreement
    return 1.0 if den == 0 else num / den


def dice_loss(probs: Tensor, target: np.ndarray, smooth: float = 1.0) -> Tensor:
    """1 − (2Σp·g + s)/(Σp + Σg + s) on the foreground channel(s).

    ``probs`` is K×H×W or B×K×H×W.  For K > 2 the per-class losses over
    classes 1..K−1 are averaged; batches are averaged per sample.
    """
    if smooth <= 0:
        raise ConfigError(f"dice smooth must be > 0, got {smooth}")
    if probs.ndim == 3:
        probs = probs.reshape(1, *probs.shape)
        target = np.asarray(target)[None]
    B, K, H, W = probs.shape
    target = np.asarray(target)
    if target.shape != (B, H, W):
        raise ShapeError(f"target mask {target.shape} does not match probabilities {probs.shape}")
    g = one_hot(target, K, dtype=probs.dtype)[:, 1:]  # B×(K−1)×H×W
    p = probs[:, 1:]
    inter = (p * g).sum(axis=(2, 3))
    denom = p.sum(axis=(2, 3)) + g.sum(axis=(2, 3))
    score = (inter * 2.0 + smooth) / (denom + smooth)
    return 1.0 - score.mean()


def soft_dice(probs: Tensor, target: np.ndarray, smooth: float = 1.0) -> float:
    return 1.0 - dice_loss(Tensor(probs.data if isinstance(probs, Tensor) else probs), target, smooth).item()


def confusion(pred: np.ndarray, target: np.ndarray, positive: int = 1) -> ConfusionCounts:
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ in shape")
    p = pred == positive
    t = target == positive
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    tn = int(p.size - tp - fp - fn)
    return ConfusionCounts(tp, fp, tn, fn)


def metrics_from_confusion(c: ConfusionCounts) -> MetricsReport:
    return MetricsReport(
        dsc=_ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn),
        iou=_ratio(c.tp, c.tp + c.fp + c.fn),
        accuracy=_ratio(c.tp + c.tn, c.total),
        precision=_ratio(c.tp, c.tp + c.fp),
        recall=_ratio(c.tp, c.tp + c.fn),
    )


def dsc_union_denominator(c: ConfusionCounts) -> float:
    """2|P∩G| / |P∪G|, i.e. twice the IoU; ranges over [0, 2]."""
    return 2.0 * _ratio(c.tp, c.tp + c.fp + c.fn)


def mean_report(reports: Sequence[MetricsReport]) -> MetricsReport:
    if not reports:
        raise DatasetError("cannot average an empty list of reports")
    names = [f.name for f in fields(MetricsReport)]
    return MetricsReport(**{n: float(np.mean([getattr(r, n) for r in reports])) for n in names})


def sample_report(pred: np.ndarray, target: np.ndarray, num_classes: int = 2) -> MetricsReport:
    """Binary report for K=2; for K>2 the mean over foreground classes."""
    classes = range(1, num_classes)
    return mean_report([metrics_from_confusion(confusion(pred, target, k)) for k in classes])


def evaluate(model, samples, batch_size: int = 8, transform=None) -> MetricsReport:
    """Macro average of per-sample reports (forward → argmax → confusion)."""
    samples = list(samples)
    if not samples:
        raise DatasetError("evaluate() needs at least one sample")
    K = model.config.num_classes
    reports = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        images = np.stack([transform(s.image) if transform else s.image for s in chunk])
        probs, _ = model.forward(images, mode="infer")
        for pred, s in zip(predict_mask(probs), chunk):
            reports.append(sample_report(pred, s.mask, K))
    return mean_report(reports)
