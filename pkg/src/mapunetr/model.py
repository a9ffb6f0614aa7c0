"""The MAPUNetR network: ViT encoder, skip-tapped deconvolution decoder.

Data layout: images enter as B×H×W×C (or a single H×W×C), tokens are
B×N×D, feature maps B×C×H×W, and the output is B×K×H×W class
probabilities.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, ShapeError
from .nn import BatchNorm2d, Conv2d, ConvTranspose2d, LayerNorm, Linear, Module, Parameter, uniform_init
from .patchwork import embed_tokens, patchify_array
from .rng import stream


@dataclass
class ModelConfig:
    image_size: Tuple[int, int] = (64, 64)
    in_channels: int = 3
    patch_size: int = 8
    embed_dim: int = 64
    num_heads: int = 4
    depth: int = 6
    mlp_ratio: float = 4.0
    skip_layers: List[int] = field(default_factory=lambda: [1, 3, 5])
    decoder_channels: List[int] = field(default_factory=lambda: [64, 32, 16])
    num_classes: int = 2

    def __post_init__(self):
        self.image_size = tuple(int(v) for v in self.image_size)
        self.skip_layers = [int(v) for v in self.skip_layers]
        self.decoder_channels = [int(v) for v in self.decoder_channels]
        H, W = self.image_size
        P = self.patch_size
        if P < 1 or H % P or W % P:
            raise ConfigError(f"patch_size {P} must divide image_size {self.image_size}")
        if self.embed_dim % self.num_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}")
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if any(b <= a for a, b in zip(self.skip_layers, self.skip_layers[1:])):
            raise ConfigError(f"skip_layers must be strictly increasing, got {self.skip_layers}")
        if any(not 0 <= s < self.depth for s in self.skip_layers):
            raise ConfigError(f"skip_layers must lie in [0, {self.depth}), got {self.skip_layers}")
        stages = int(round(math.log2(P))) if P > 1 else 0
        if 2 ** stages != P or len(self.decoder_channels) != stages:
            raise ConfigError(f"patch_size {P} needs log2(P) decoder stages of ×2 upsampling; "
                              f"got decoder_channels {self.decoder_channels}")
        if len(self.skip_layers) > stages:
            raise ConfigError(f"{len(self.skip_layers)} skip taps but only {stages} decoder stages")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")

    @property
    def grid(self) -> Tuple[int, int]:
        return self.image_size[0] // self.patch_size, self.image_size[1] // self.patch_size

    @property
    def n_tokens(self) -> int:
        rows, cols = self.grid
        return rows * cols

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    def to_dict(self) -> dict:
        d = asdict(self)
        d["image_size"] = list(self.image_size)
        return d


@dataclass
class AttentionRecord:
    """Post-softmax attention of one encoder block: h×N×N (or B×h×N×N)."""

    layer: int
    weights: np.ndarray

    def sample(self, i: int) -> "AttentionRecord":
        return AttentionRecord(self.layer, self.weights[i]) if self.weights.ndim == 4 else self


def msa(Z: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor, h: int) -> Tuple[Tensor, np.ndarray]:
    """Multi-head self-attention on B×N×D (or N×D) tokens.

    Returns the projected output and the attention weights (B×h×N×N).
    """
    squeeze = Z.ndim == 2
    if squeeze:
        Z = Z.reshape(1, *Z.shape)
    B, N, D = Z.shape
    if D % h:
        raise ConfigError(f"embed dim {D} is not divisible by {h} heads")
    dk = D // h

    def heads(t: Tensor) -> Tensor:
        return t.reshape(B, N, h, dk).transpose(0, 2, 1, 3)

    q, k, v = heads(Z @ wq), heads(Z @ wk), heads(Z @ wv)
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dk))
    att = ag.softmax(scores, axis=-1)
    ctx = (att @ v).transpose(0, 2, 1, 3).reshape(B, N, D)
    out = ctx @ wo
    weights = att.data.copy()
    if squeeze:
        return out.reshape(N, D), weights[0]
    return out, weights


class MultiHeadAttention(Module):
    def __init__(self, dim: int, heads: int, rng, dtype=np.float32):
        self.wq = Parameter(uniform_init(rng, (dim, dim), dim, dtype))
        self.wk = Parameter(uniform_init(rng, (dim, dim), dim, dtype))
        self.wv = Parameter(uniform_init(rng, (dim, dim), dim, dtype))
        self.wo = Parameter(uniform_init(rng, (dim, dim), dim, dtype))
        self.heads = heads

    def __call__(self, Z: Tensor):
        return msa(Z, self.wq, self.wk, self.wv, self.wo, self.heads)


class TransformerBlock(Module):
    """Pre-norm block: Z₁ = Z + MSA(LN(Z)); Z' = Z₁ + MLP(LN(Z₁))."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float, rng, dtype=np.float32):
        hidden = int(round(dim * mlp_ratio))
        self.norm1 = LayerNorm(dim, dtype)
        self.attn = MultiHeadAttention(dim, heads, rng, dtype)
        self.norm2 = LayerNorm(dim, dtype)
        self.fc1 = Linear(dim, hidden, rng, dtype)
        self.fc2 = Linear(hidden, dim, rng, dtype)

    def __call__(self, Z: Tensor) -> Tuple[Tensor, np.ndarray]:
        a, weights = self.attn(self.norm1(Z))
        Z1 = Z + a
        return Z1 + self.fc2(ag.gelu(self.fc1(self.norm2(Z1)))), weights


def tokens_to_grid(tokens: Tensor, grid: Tuple[int, int]) -> Tensor:
    """B×N×D (or N×D) tokens → B×D×rows×cols (or D×rows×cols) feature map."""
    rows, cols = grid
    squeeze = tokens.ndim == 2
    if squeeze:
        tokens = tokens.reshape(1, *tokens.shape)
    B, N, D = tokens.shape
    if N != rows * cols:
        raise ShapeError(f"{N} tokens cannot fill a {rows}×{cols} grid")
    fmap = tokens.transpose(0, 2, 1).reshape(B, D, rows, cols)
    return fmap.reshape(D, rows, cols) if squeeze else fmap


class ConvBNReLU(Module):
    def __init__(self, c_in: int, c_out: int, rng, dtype=np.float32):
        self.conv = Conv2d(c_in, c_out, 3, rng, dtype, padding=1)
        self.bn = BatchNorm2d(c_out, dtype)

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        return ag.relu(self.bn(self.conv(x), mode))


class DecoderStage(Module):
    """×2 deconvolution, optional skip concat, two 3×3 conv+BN+ReLU layers.

    ``skip_depth`` is the number of ×2 deconvolutions that bring the skip's
    token grid up to this stage's output resolution (0 means no skip).
    """

    def __init__(self, c_in: int, c_out: int, embed_dim: int, skip_depth: int, rng, dtype=np.float32):
        self.up = ConvTranspose2d(c_in, c_out, 2, rng, dtype, stride=2)
        self.skip_chain = [ConvTranspose2d(embed_dim if i == 0 else c_out, c_out, 2, rng, dtype, stride=2)
                           for i in range(skip_depth)]
        merged = 2 * c_out if skip_depth else c_out
        self.conv1 = ConvBNReLU(merged, c_out, rng, dtype)
        self.conv2 = ConvBNReLU(c_out, c_out, rng, dtype)

    def __call__(self, x: Tensor, skip: Optional[Tensor], mode: str) -> Tensor:
        x = self.up(x)
        if self.skip_chain:
            for deconv in self.skip_chain:
                skip = deconv(skip)
            if skip.shape[2:] != x.shape[2:]:
                raise ShapeError(f"skip map {skip.shape[2:]} does not match upsampled map {x.shape[2:]}")
            x = ag.concat([x, skip], axis=1)
        return self.conv2(self.conv1(x, mode), mode)


class MAPUNetR(Module):
    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = stream(seed, "init")
        cfg = config
        P, C, D = cfg.patch_size, cfg.in_channels, cfg.embed_dim
        self.patch_embed = Parameter(uniform_init(rng, (P * P * C, D), P * P * C, dtype))
        self.pos_embed = Parameter(rng.uniform(-0.02, 0.02, size=(cfg.n_tokens, D)).astype(dtype))
        self.blocks = [TransformerBlock(D, cfg.num_heads, cfg.mlp_ratio, rng, dtype) for _ in range(cfg.depth)]

        # deepest skip feeds the deepest stage; stage j upsamples j+1 times
        self.stage_skips = self.assign_skips(cfg)
        stages = []
        c_prev = D
        for j, c_out in enumerate(cfg.decoder_channels):
            skip_depth = j + 1 if self.stage_skips[j] is not None else 0
            stages.append(DecoderStage(c_prev, c_out, D, skip_depth, rng, dtype))
            c_prev = c_out
        self.stages = stages
        self.head = Conv2d(c_prev, cfg.num_classes, 1, rng, dtype)

    @staticmethod
    def assign_skips(cfg: ModelConfig) -> List[Optional[int]]:
        """Skip layer index consumed by each decoder stage (deep → shallow)."""
        order = list(reversed(cfg.skip_layers))
        return [order[j] if j < len(order) else None for j in range(len(cfg.decoder_channels))]

    # -- encoder -------------------------------------------------------------
    def _batch(self, images) -> Tuple[np.ndarray, bool]:
        arr = images.data if isinstance(images, Tensor) else np.asarray(images)
        squeeze = arr.ndim == 3
        if squeeze:
            arr = arr[None]
        H, W = self.config.image_size
        if arr.ndim != 4 or arr.shape[1:] != (H, W, self.config.in_channels):
            raise ShapeError(f"expected images of shape (B, {H}, {W}, {self.config.in_channels}), "
                             f"got {tuple(arr.shape)}")
        return arr.astype(self.dtype, copy=False), squeeze

    def embed(self, images) -> Tensor:
        arr, _ = self._batch(images)
        tokens = Tensor(patchify_array(arr, self.config.patch_size))
        return embed_tokens(tokens, self.patch_embed, self.pos_embed)

    def encode(self, images):
        """Return (bottleneck B×N×D, skips {layer: B×N×D}, attention records)."""
        z = self.embed(images)
        skips = {}
        records = []
        for i, block in enumerate(self.blocks):
            z, weights = block(z)
            records.append(AttentionRecord(i, weights))
            if i in self.config.skip_layers:
                skips[i] = z
        return z, skips, records

    # -- decoder -------------------------------------------------------------
    def decode(self, bottleneck: Tensor, skip_maps: dict, mode: str) -> Tensor:
        x = bottleneck
        for stage, layer in zip(self.stages, self.stage_skips):
            x = stage(x, skip_maps.get(layer) if layer is not None else None, mode)
        return self.head(x)

    def logits(self, images, mode: str = "infer"):
        if mode not in ("train", "infer"):
            raise ConfigError(f"mode must be 'train' or 'infer', got {mode!r}")
        bottleneck, skips, records = self.encode(images)
        grid = self.config.grid
        skip_maps = {layer: tokens_to_grid(t, grid) for layer, t in skips.items()}
        return self.decode(tokens_to_grid(bottleneck, grid), skip_maps, mode), records

    def forward(self, images, mode: str = "infer"):
        """Class probabilities (softmax over the class axis) and attention records."""
        _, squeeze = self._batch(images)
        logits, records = self.logits(images, mode)
        probs = ag.softmax(logits, axis=1)
        if squeeze:
            probs = probs.reshape(probs.shape[1:])
            records = [r.sample(0) for r in records]
        return probs, records

    __call__ = forward


def predict_mask(probs) -> np.ndarray:
    """Per-pixel argmax over the class axis (K×H×W or B×K×H×W); ties go to the lower class."""
    arr = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    return np.argmax(arr, axis=-3).astype(np.int64)


def one_hot(mask: np.ndarray, num_classes: int, dtype=np.float64) -> np.ndarray:
    """H×W (or B×H×W) labels → K×H×W (or B×K×H×W) indicator planes."""
    eye = np.eye(num_classes, dtype=dtype)[mask]
    return np.moveaxis(eye, -1, -3)
