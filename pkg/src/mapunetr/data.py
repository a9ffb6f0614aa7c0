"""Synthetic datasets and the on-disk dataset directory format.

Layout::

    img_<id>.ppm    P6, 8-bit RGB
    mask_<id>.pgm   P5, 8-bit, pixel value = class index
    meta.json       {"num_classes": K, "count": n, "channels": C}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple

import numpy as np
from PIL import Image

from .errors import ConfigError, DatasetError, FormatError, PairingError
from .preprocess import Sample
from .rng import stream


@dataclass(frozen=True)
class ShapeSpec:
    kind: str  # "ellipse" or "rect"
    cy: float
    cx: float
    ry: float
    rx: float
    intensity: Tuple[float, float, float]

    def contains(self, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
        """Pixel-centre membership test."""
        dy = (yy - self.cy) / self.ry
        dx = (xx - self.cx) / self.rx
        if self.kind == "ellipse":
            return dy * dy + dx * dx <= 1.0
        return (np.abs(dy) <= 1.0) & (np.abs(dx) <= 1.0)


def quantize(image: np.ndarray) -> np.ndarray:
    return np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)


def dequantize(u8: np.ndarray) -> np.ndarray:
    return (u8.astype(np.float64) / 255.0).astype(np.float32)


def _draw_specs(rng: np.random.Generator, size: int) -> List[ShapeSpec]:
    specs = []
    for _ in range(int(rng.integers(1, 3))):
        kind = "ellipse" if rng.random() < 0.5 else "rect"
        ry = rng.uniform(0.08, 0.22) * size
        rx = rng.uniform(0.08, 0.22) * size
        cy = rng.uniform(ry, size - 1 - ry)
        cx = rng.uniform(rx, size - 1 - rx)
        tint = rng.uniform(0.6, 1.0, size=3)
        specs.append(ShapeSpec(kind, cy, cx, ry, rx, tuple(float(t) for t in tint)))
    return specs


def synth_specs(n: int, size: int, seed: int) -> List[List[ShapeSpec]]:
    """The shape parameters behind ``synth_dataset(n, size, seed)``."""
    return [_draw_specs(stream(seed, "synth", i), size) for i in range(n)]


def synth_dataset(n: int, size: int, seed: int, channels: int = 3) -> List[Sample]:
    """Dark textured backgrounds with 1–2 bright ellipses/rectangles; mask 1 on shapes."""
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    if size < 16:
        raise ConfigError(f"size must be >= 16, got {size}")
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    samples = []
    for i in range(n):
        rng = stream(seed, "synth", i)
        specs = _draw_specs(rng, size)
        base = rng.uniform(0.05, 0.2)
        texture = base + 0.05 * np.sin(xx * rng.uniform(0.2, 0.6) + rng.uniform(0, 6.3)) \
            * np.cos(yy * rng.uniform(0.2, 0.6))
        image = np.repeat(texture[:, :, None], channels, axis=2)
        image += rng.normal(0.0, 0.03, size=image.shape)
        mask = np.zeros((size, size), dtype=np.int64)
        for spec in specs:
            inside = spec.contains(yy, xx)
            mask[inside] = 1
            for c in range(channels):
                image[:, :, c][inside] = spec.intensity[c % 3] + rng.normal(0.0, 0.03, size=int(inside.sum()))
        samples.append(Sample(dequantize(quantize(image)), mask, f"{i:04d}"))
    return samples


# -- directory I/O -------------------------------------------------------------

def _read_netpbm(path: Path, magic: bytes) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head != magic:
        raise FormatError(f"{path.name}: expected {magic.decode()} header, found {head!r}")
    try:
        with Image.open(path) as im:
            im.load()
            return np.asarray(im)
    except Exception as exc:  # Pillow raises a zoo of types for truncated data
        raise FormatError(f"{path.name}: unreadable ({exc})") from exc


def save_dataset(samples: List[Sample], directory, num_classes: int = 2) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    channels = samples[0].image.shape[-1] if samples else 3
    for s in samples:
        rgb = s.image if s.image.shape[-1] == 3 else np.repeat(s.image[..., :1], 3, axis=-1)
        Image.fromarray(quantize(rgb), mode="RGB").save(d / f"img_{s.id}.ppm")
        Image.fromarray(s.mask.astype(np.uint8), mode="L").save(d / f"mask_{s.id}.pgm")
    meta = {"num_classes": int(num_classes), "count": len(samples), "channels": int(channels)}
    (d / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def load_meta(directory) -> dict:
    path = Path(directory) / "meta.json"
    if not path.exists():
        return {}
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc


def load_dataset(directory) -> List[Sample]:
    d = Path(directory)
    if not d.is_dir():
        raise DatasetError(f"dataset directory {d} does not exist")
    images = {p.name[4:-4]: p for p in d.glob("img_*.ppm")}
    masks = {p.name[5:-4]: p for p in d.glob("mask_*.pgm")}
    if not images and not masks:
        raise DatasetError(f"dataset directory {d} holds no img_*.ppm / mask_*.pgm pairs")
    for sid in sorted(images.keys() - masks.keys()):
        raise PairingError(f"image {sid!r} has no mask_{sid}.pgm")
    for sid in sorted(masks.keys() - images.keys()):
        raise PairingError(f"mask {sid!r} has no img_{sid}.ppm")
    meta = load_meta(d)
    channels = int(meta.get("channels", 3))
    samples = []
    for sid in sorted(images):
        rgb = _read_netpbm(images[sid], b"P6")
        mask = _read_netpbm(masks[sid], b"P5")
        if rgb.shape[:2] != mask.shape:
            raise FormatError(f"sample {sid!r}: image {rgb.shape[:2]} and mask {mask.shape} extents differ")
        image = dequantize(rgb[..., :channels] if channels < 3 else rgb)
        samples.append(Sample(image, mask.astype(np.int64), sid))
    if "count" in meta and meta["count"] != len(samples):
        raise FormatError(f"meta.json lists {meta['count']} samples, directory has {len(samples)}")
    return samples
