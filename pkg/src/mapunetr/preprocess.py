"""Resizing, cropping, augmentation and intensity normalization.

Images are H×W×C float arrays in [0, 1]; masks are H×W integer class maps.
Every spatial transform is applied to image and mask together: bilinear
sampling for the image, nearest-neighbour for the mask so that no new
labels appear.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import BoundsError, ConfigError, ShapeError
from .rng import stream

TRANSFORMS = ("center_crop", "random_rot90", "grid_distortion", "flip_h", "flip_v")


@dataclass
class Sample:
    image: np.ndarray
    mask: np.ndarray
    id: str = ""

    def __post_init__(self):
        if self.image.ndim == 2:
            self.image = self.image[:, :, None]
        if self.image.ndim != 3 or self.mask.ndim != 2:
            raise ShapeError(f"sample {self.id!r}: expected H×W×C image and H×W mask, "
                             f"got {self.image.shape} and {self.mask.shape}")
        if self.image.shape[:2] != self.mask.shape:
            raise ShapeError(f"sample {self.id!r}: image {self.image.shape[:2]} and mask "
                             f"{self.mask.shape} extents differ")

    @property
    def size(self) -> Tuple[int, int]:
        return self.mask.shape

    def check_classes(self, num_classes: int) -> None:
        if self.mask.size and (self.mask.min() < 0 or self.mask.max() >= num_classes):
            raise ShapeError(f"sample {self.id!r}: mask labels must lie in [0, {num_classes})")


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    eps: float = 1e-8

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        self.std = np.atleast_1d(np.asarray(self.std, dtype=np.float64))
        if np.any(self.std < 0):
            raise ConfigError("NormStats: std entries must be >= 0")
        if self.eps <= 0:
            raise ConfigError("NormStats: eps must be > 0")

    @classmethod
    def from_images(cls, images: Sequence[np.ndarray], eps: float = 1e-8) -> "NormStats":
        stacked = np.concatenate([im.reshape(-1, im.shape[-1]) for im in images], axis=0)
        return cls(stacked.mean(axis=0), stacked.std(axis=0), eps)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "eps": self.eps}


@dataclass
class AugmentConfig:
    transforms: List[str] = field(default_factory=lambda: ["random_rot90", "flip_h", "flip_v", "grid_distortion"])
    probabilities: Optional[List[float]] = None
    crop_size: Optional[Tuple[int, int]] = None
    n: int = 4
    d: float = 0.3
    seed: int = 0
    rot90_k: Optional[int] = None  # fixes k instead of drawing it

    def __post_init__(self):
        unknown = [t for t in self.transforms if t not in TRANSFORMS]
        if unknown:
            raise ConfigError(f"unknown transforms {unknown}; choose from {TRANSFORMS}")
        if self.probabilities is None:
            self.probabilities = [0.5] * len(self.transforms)
        if len(self.probabilities) != len(self.transforms):
            raise ConfigError("one probability per transform is required")
        if any(not 0 <= p <= 1 for p in self.probabilities):
            raise ConfigError(f"probabilities must lie in [0, 1], got {self.probabilities}")
        if "center_crop" in self.transforms and self.crop_size is None:
            raise ConfigError("center_crop requires crop_size")
        if self.n < 1:
            raise ConfigError(f"grid distortion needs n >= 1, got {self.n}")
        if not 0 <= self.d < 1:
            raise ConfigError(f"grid distortion magnitude must be in [0, 1), got {self.d}")
        if self.rot90_k is not None and self.rot90_k not in (0, 1, 2, 3):
            raise ConfigError(f"rot90_k must be in 0..3, got {self.rot90_k}")


# -- sampling helpers ----------------------------------------------------------

def _snap(coords: np.ndarray) -> np.ndarray:
    nearest = np.round(coords)
    return np.where(np.abs(coords - nearest) < 1e-9, nearest, coords)


def _bilinear_axes(arr: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample ``arr`` (H×W[×C]) on the separable grid ys × xs."""
    H, W = arr.shape[:2]
    ys = np.clip(_snap(ys), 0, H - 1)
    xs = np.clip(_snap(xs), 0, W - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    wy = (ys - y0).astype(arr.dtype)
    wx = (xs - x0).astype(arr.dtype)
    if arr.ndim == 3:
        wy = wy[:, None, None]
        wx = wx[None, :, None]
    else:
        wy = wy[:, None]
        wx = wx[None, :]
    top = arr[y0][:, x0] * (1 - wx) + arr[y0][:, x1] * wx
    bottom = arr[y1][:, x0] * (1 - wx) + arr[y1][:, x1] * wx
    out = top * (1 - wy) + bottom * wy
    # exact passthrough where both weights vanish
    exact = (wy == 0) & (wx == 0)
    return np.where(exact, arr[y0][:, x0], out)


def _nearest_axes(arr: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    H, W = arr.shape[:2]
    yi = np.clip(np.floor(_snap(ys) + 0.5).astype(int), 0, H - 1)
    xi = np.clip(np.floor(_snap(xs) + 0.5).astype(int), 0, W - 1)
    return arr[yi][:, xi]


def _half_pixel(n_in: int, n_out: int) -> np.ndarray:
    return (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5


def resize_bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centred bilinear resize of an H×W or H×W×C array."""
    H, W = arr.shape[:2]
    return _bilinear_axes(arr, _half_pixel(H, out_h), _half_pixel(W, out_w))


def resize_nearest(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    H, W = arr.shape[:2]
    yi = np.minimum(((np.arange(out_h) + 0.5) * H / out_h).astype(int), H - 1)
    xi = np.minimum(((np.arange(out_w) + 0.5) * W / out_w).astype(int), W - 1)
    return arr[yi][:, xi]


# -- sample transforms ---------------------------------------------------------

def resize_sample(s: Sample, R: int) -> Sample:
    if R < 1:
        raise ConfigError(f"resize target must be >= 1, got {R}")
    if s.mask.shape == (R, R):
        return replace(s, image=s.image.copy(), mask=s.mask.copy())
    return replace(s, image=resize_bilinear(s.image, R, R), mask=resize_nearest(s.mask, R, R))


def crop_center(s: Sample, h: int, w: int) -> Sample:
    H, W = s.mask.shape
    if h > H or w > W or h < 1 or w < 1:
        raise BoundsError(f"cannot crop {H}×{W} sample {s.id!r} to {h}×{w}")
    top, left = (H - h) // 2, (W - w) // 2
    return replace(s, image=s.image[top:top + h, left:left + w].copy(),
                   mask=s.mask[top:top + h, left:left + w].copy())


def rot90(s: Sample, k: int) -> Sample:
    """Counter-clockwise quarter turns: (i, j) → (n−1−j, i) per turn."""
    return replace(s, image=np.ascontiguousarray(np.rot90(s.image, k, axes=(0, 1))),
                   mask=np.ascontiguousarray(np.rot90(s.mask, k, axes=(0, 1))))


def flip(s: Sample, axis: str) -> Sample:
    if axis == "horizontal":
        ax = 1
    elif axis == "vertical":
        ax = 0
    else:
        raise ConfigError(f"flip axis must be 'horizontal' or 'vertical', got {axis!r}")
    return replace(s, image=np.ascontiguousarray(np.flip(s.image, ax)),
                   mask=np.ascontiguousarray(np.flip(s.mask, ax)))


def distortion_coords(length: int, n: int, d: float, rng: np.random.Generator) -> np.ndarray:
    """Source coordinate for every output pixel along one axis.

    The axis is cut into ``n`` equal cells; each cell's step is scaled by a
    factor from U[1−d, 1+d] and the cumulative steps are rescaled to span
    [0, length−1] again, so the map is monotone and endpoint-preserving.
    """
    steps = rng.uniform(1 - d, 1 + d, size=n)
    knots_src = np.concatenate([[0.0], np.cumsum(steps)])
    knots_src *= (length - 1) / knots_src[-1]
    knots_dst = np.linspace(0, length - 1, n + 1)
    return np.interp(np.arange(length, dtype=np.float64), knots_dst, knots_src)


def grid_distortion(s: Sample, n: int = 4, d: float = 0.3, seed: int = 0) -> Sample:
    if n < 1:
        raise ConfigError(f"grid distortion needs n >= 1, got {n}")
    if not 0 <= d < 1:
        raise ConfigError(f"grid distortion magnitude must be in [0, 1), got {d}")
    H, W = s.mask.shape
    rng = stream(seed, "distort")
    ys = distortion_coords(H, n, d, rng)
    xs = distortion_coords(W, n, d, rng)
    return replace(s, image=_bilinear_axes(s.image, ys, xs).astype(s.image.dtype, copy=False),
                   mask=_nearest_axes(s.mask, ys, xs))


def normalize_zscore(image: np.ndarray, stats: NormStats) -> np.ndarray:
    if stats.mean.size not in (1, image.shape[-1]) or stats.std.size != stats.mean.size:
        raise ShapeError(f"NormStats has {stats.mean.size} channels, image has {image.shape[-1]}")
    scale = np.maximum(stats.std, stats.eps)
    return ((image - stats.mean) / scale).astype(image.dtype, copy=False)


def denormalize_zscore(image: np.ndarray, stats: NormStats) -> np.ndarray:
    return image * np.maximum(stats.std, stats.eps) + stats.mean


def normalize_minmax(image: np.ndarray) -> np.ndarray:
    lo, hi = image.min(), image.max()
    if hi == lo:
        return np.zeros_like(image)
    return (image - lo) / (hi - lo)


def augment(s: Sample, cfg: AugmentConfig, rng: np.random.Generator) -> Sample:
    """Apply ``cfg.transforms`` in order, each firing with its probability.

    One uniform draw decides each transform; parameters (rotation k,
    distortion seed) are drawn only when it fires.
    """
    for name, p in zip(cfg.transforms, cfg.probabilities):
        if rng.random() >= p:
            continue
        if name == "center_crop":
            s = crop_center(s, *cfg.crop_size)
        elif name == "random_rot90":
            k = cfg.rot90_k if cfg.rot90_k is not None else int(rng.integers(0, 4))
            s = rot90(s, k)
        elif name == "grid_distortion":
            s = grid_distortion(s, cfg.n, cfg.d, int(rng.integers(0, 2**31 - 1)))
        elif name == "flip_h":
            s = flip(s, "horizontal")
        elif name == "flip_v":
            s = flip(s, "vertical")
    return s
