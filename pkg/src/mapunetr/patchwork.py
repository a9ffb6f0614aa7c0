"""Image ↔ patch-token conversion and token embedding."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ShapeError


@dataclass
class PatchSequence:
    """N×L token matrix; token t sits at grid cell (t // cols, t % cols)."""

    tokens: np.ndarray
    grid: Tuple[int, int]
    patch_size: int

    def __post_init__(self):
        rows, cols = self.grid
        if self.tokens.ndim != 2 or self.tokens.shape[0] != rows * cols:
            raise ShapeError(f"{self.tokens.shape[0] if self.tokens.ndim else 0} tokens do not fill a "
                             f"{rows}×{cols} grid")

    @property
    def n_patches(self) -> int:
        return self.tokens.shape[0]


def _check_divisible(H: int, W: int, P: int) -> None:
    if P < 1 or H % P or W % P:
        raise ShapeError(f"patch size P={P} must divide H={H} and W={W}")


def patchify_array(images: np.ndarray, P: int) -> np.ndarray:
    """B×H×W×C → B×N×(P·P·C), patches row-major, each flattened (row, col, channel)."""
    B, H, W, C = images.shape
    _check_divisible(H, W, P)
    rows, cols = H // P, W // P
    x = images.reshape(B, rows, P, cols, P, C).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(B, rows * cols, P * P * C)


def unpatchify_array(tokens: np.ndarray, H: int, W: int, P: int) -> np.ndarray:
    B, N, L = tokens.shape
    _check_divisible(H, W, P)
    rows, cols = H // P, W // P
    if N != rows * cols or L % (P * P):
        raise ShapeError(f"{N} tokens of length {L} cannot form a {H}×{W} image with P={P}")
    C = L // (P * P)
    x = tokens.reshape(B, rows, cols, P, P, C).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(B, H, W, C)


def patchify(image: np.ndarray, P: int) -> PatchSequence:
    if image.ndim == 2:
        image = image[:, :, None]
    H, W, _ = image.shape
    _check_divisible(H, W, P)
    tokens = patchify_array(image[None], P)[0]
    return PatchSequence(tokens, (H // P, W // P), P)


def unpatchify(seq: PatchSequence, H: int, W: int) -> np.ndarray:
    P = seq.patch_size
    consistent = H % P == 0 and W % P == 0 and (H // P, W // P) == tuple(seq.grid)
    if not consistent or H * W != seq.n_patches * P * P:
        raise ShapeError(f"sequence of {seq.n_patches} patches on grid {seq.grid} (P={P}) "
                         f"does not match a {H}×{W} image")
    return unpatchify_array(seq.tokens[None], H, W, P)[0]


def embed_tokens(tokens: Tensor, W_E: Tensor, pos: Tensor) -> Tensor:
    """tokens·W_E + pos for N×L (or B×N×L) tokens."""
    if tokens.shape[-1] != W_E.shape[0] or pos.shape != (tokens.shape[-2], W_E.shape[1]):
        raise ShapeError(f"embed_tokens: tokens {tokens.shape}, W_E {W_E.shape}, pos {pos.shape} disagree")
    return ag.matmul(tokens, W_E) + pos
