"""Saliency maps from encoder attention.

Pipeline: head-averaged attention → per-token score (attention *received*,
i.e. column means) → patch grid → bilinear upsample → min-max to [0, 1].
``rollout`` aggregates all layers instead of reading a single one.

Colour ramp used by ``colorize`` (linear between stops, every channel
non-decreasing in the input value)::

    0.0 → (0.00, 0.00, 0.00)   black
    0.5 → (0.90, 0.30, 0.00)   warm orange
    1.0 → (1.00, 1.00, 0.80)   pale yellow
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .errors import ConfigError, ShapeError
from .model import AttentionRecord
from .preprocess import normalize_minmax, resize_bilinear

RAMP_STOPS = np.array([0.0, 0.5, 1.0])
RAMP_COLORS = np.array([
    [0.00, 0.00, 0.00],
    [0.90, 0.30, 0.00],
    [1.00, 1.00, 0.80],
])


@dataclass
class SaliencyMap:
    values: np.ndarray
    source: str


def _head_mean(rec: AttentionRecord) -> np.ndarray:
    w = np.asarray(rec.weights, dtype=np.float64)
    if w.ndim != 3 or w.shape[1] != w.shape[2]:
        raise ShapeError(f"attention record for layer {rec.layer} must be h×N×N, got {w.shape}")
    return w.mean(axis=0)


def head_mean_map(rec: AttentionRecord, received: bool = True) -> np.ndarray:
    """Per-token score: mean over heads of the column (or row) means."""
    A = _head_mean(rec)
    return A.mean(axis=0) if received else A.mean(axis=1)


def rollout_matrix(records: Sequence[AttentionRecord]) -> np.ndarray:
    """Product of row-normalized (Ā + I)/2 over layers, first layer rightmost."""
    if not records:
        raise ShapeError("rollout needs at least one attention record")
    N = _head_mean(records[0]).shape[0]
    M = np.eye(N)
    for rec in records:
        A = _head_mean(rec)
        if A.shape != (N, N):
            raise ShapeError(f"layer {rec.layer} has {A.shape[0]} tokens, expected {N}")
        A = (A + np.eye(N)) / 2
        A = A / A.sum(axis=1, keepdims=True)
        M = A @ M
    return M


def rollout(records: Sequence[AttentionRecord]) -> np.ndarray:
    return rollout_matrix(records).mean(axis=0)


def upsample_scores(scores: np.ndarray, image_hw: Tuple[int, int], P: int) -> np.ndarray:
    """Patch-grid scores → H×W by half-pixel bilinear interpolation (no normalization)."""
    H, W = image_hw
    if P < 1 or H % P or W % P:
        raise ShapeError(f"patch size {P} does not tile a {H}×{W} image")
    rows, cols = H // P, W // P
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if scores.size != rows * cols:
        raise ShapeError(f"{scores.size} scores do not match a {rows}×{cols} patch grid")
    return resize_bilinear(scores.reshape(rows, cols), H, W)


def to_heatmap(scores: np.ndarray, image_hw: Tuple[int, int], P: int, source: str = "single_layer") -> SaliencyMap:
    return SaliencyMap(normalize_minmax(upsample_scores(scores, image_hw, P)), source)


def colorize(values: np.ndarray) -> np.ndarray:
    """H×W values in [0, 1] → H×W×3 RGB via the documented ramp."""
    v = np.clip(values, 0.0, 1.0)
    return np.stack([np.interp(v, RAMP_STOPS, RAMP_COLORS[:, c]) for c in range(3)], axis=-1)


def overlay(smap: SaliencyMap, image: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """(1−alpha)·image + alpha·colorize(map); grayscale images are broadcast to RGB."""
    if not 0 <= alpha <= 1:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    if image.shape[:2] != smap.values.shape:
        raise ShapeError(f"map {smap.values.shape} and image {image.shape[:2]} extents differ")
    if alpha == 0:
        return image.copy()
    if image.ndim == 2:
        image = image[:, :, None]
    base = np.repeat(image, 3, axis=-1) if image.shape[-1] == 1 else image[..., :3]
    out = (1 - alpha) * base + alpha * colorize(smap.values)
    return np.clip(out, 0.0, 1.0)


def saliency(records: Sequence[AttentionRecord], image_hw: Tuple[int, int], P: int,
             method: str = "single", layer: int = -1) -> SaliencyMap:
    """Heat map for one image from its per-layer records."""
    if method == "rollout":
        return to_heatmap(rollout(records), image_hw, P, "rollout")
    if method != "single":
        raise ConfigError(f"method must be 'single' or 'rollout', got {method!r}")
    if not -len(records) <= layer < len(records):
        raise ConfigError(f"layer {layer} out of range 0..{len(records) - 1}")
    rec = records[layer]
    return to_heatmap(head_mean_map(rec), image_hw, P, f"single_layer:{rec.layer}")
