"""Desk-scale stand-ins for the frozen segmentation foundation model.

Three components mirror the dataflow of a promptable segmenter: an image
encoder producing a token grid ``downscale`` times smaller than the input,
a mask encoder embedding (possibly soft) masks onto the same grid, and a
decoder mapping image + dense prompt embeddings to full-resolution mask
logits plus a predicted-IoU scalar. All three are small MLP/mixer networks;
the frozen/trainable split and every interface contract are what matter,
not capacity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass
class EncoderConfig:
    image_size: int = 64
    downscale: int = 16
    embed_dim: int = 64
    frozen: bool = True

    def __post_init__(self):
        if self.image_size % self.downscale != 0:
            raise ValueError(
                f"image_size {self.image_size} not divisible by downscale "
                f"{self.downscale}")

    @property
    def grid(self) -> int:
        return self.image_size // self.downscale

    @property
    def tokens(self) -> int:
        return self.grid * self.grid


@dataclass
class MaskPrediction:
    """Decoder output: pre-sigmoid mask logits and a predicted IoU."""

    logits: Tensor  # H x W
    iou_pred: Tensor  # scalar in (0, 1)

    def probs(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.logits.data))


def grid_to_tokens(x: Tensor) -> Tensor:
    """d x h x w -> (h*w) x d."""
    d, h, w = x.shape
    return T.transpose(T.reshape(x, (d, h * w)), (1, 0))


def tokens_to_grid(x: Tensor, h: int, w: int) -> Tensor:
    """(h*w) x d -> d x h x w."""
    n, d = x.shape
    if n != h * w:
        raise ShapeError(f"{n} tokens do not fill a {h}x{w} grid")
    return T.reshape(T.transpose(x, (1, 0)), (d, h, w))


class ImageEncoder:
    """Patchify + linear projection + 2 token-mixing blocks.

    ``call_count`` tallies forward passes so callers can assert each frame
    is encoded exactly once per sequence.
    """

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator,
                 activation: str = "gelu"):
        self.cfg = cfg
        ds = cfg.downscale
        self.proj = nn.Linear(rng, 3 * ds * ds, cfg.embed_dim)
        self.blocks = [nn.MixerBlock(rng, cfg.tokens, cfg.embed_dim, activation)
                       for _ in range(2)]
        self.call_count = 0

    def _patchify(self, frame: np.ndarray) -> np.ndarray:
        ds, g = self.cfg.downscale, self.cfg.grid
        # 3 x H x W -> (g*g) x (3*ds*ds), row-major over the patch grid
        x = frame.reshape(3, g, ds, g, ds)
        return x.transpose(1, 3, 0, 2, 4).reshape(g * g, 3 * ds * ds)

    def __call__(self, frame: Tensor) -> Tensor:
        s = self.cfg.image_size
        if frame.shape != (3, s, s):
            raise ShapeError(f"expected frame shape (3, {s}, {s}), got {frame.shape}")
        if frame.data.min() < -1e-9 or frame.data.max() > 1 + 1e-9:
            raise ValueError("frame pixel values must lie in [0, 1]")
        self.call_count += 1
        tokens = Tensor(self._patchify(frame.data))
        x = self.proj(tokens)
        for blk in self.blocks:
            x = blk(x)
        return tokens_to_grid(x, self.cfg.grid, self.cfg.grid)

    def named_params(self, prefix: str = "image_enc") -> dict[str, Tensor]:
        out = self.proj.named_params(f"{prefix}.proj")
        for i, blk in enumerate(self.blocks):
            out.update(blk.named_params(f"{prefix}.block{i}"))
        return out


class MaskEncoder:
    """Strided average-pool to the token grid + projection + 1 MLP block."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator,
                 activation: str = "gelu"):
        self.cfg = cfg
        self._pool = nn.pool_matrix(cfg.image_size, cfg.grid)
        self.proj = nn.Linear(rng, 1, cfg.embed_dim, std=1.0)
        self.block = nn.ResidualMlpBlock(rng, cfg.embed_dim, activation)

    def __call__(self, mask: Tensor) -> Tensor:
        s = self.cfg.image_size
        if mask.shape != (s, s):
            raise ShapeError(f"expected mask shape ({s}, {s}), got {mask.shape}")
        if mask.data.min() < -1e-9 or mask.data.max() > 1 + 1e-9:
            raise ValueError("mask values must lie in [0, 1]")
        g = self.cfg.grid
        pooled = nn.resample2d(mask, self._pool, self._pool)  # g x g
        tokens = T.reshape(pooled, (g * g, 1))
        x = self.block(self.proj(tokens))
        return tokens_to_grid(x, g, g)

    def named_params(self, prefix: str = "mask_enc") -> dict[str, Tensor]:
        out = self.proj.named_params(f"{prefix}.proj")
        out.update(self.block.named_params(f"{prefix}.block"))
        return out


class MaskDecoder:
    """Cross-token block + per-token logit head + bilinear upsample.

    The per-token head emits ``head_patch**2`` logits per token, giving an
    intermediate map ``head_patch`` times finer than the token grid before
    the bilinear resize to full resolution; a pooled linear head predicts
    the mask IoU through a sigmoid.
    """

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator,
                 activation: str = "gelu", head_patch: int = 4):
        if cfg.downscale % head_patch != 0:
            raise ValueError(
                f"head_patch {head_patch} must divide downscale {cfg.downscale}")
        self.cfg = cfg
        self.head_patch = head_patch
        self.block = nn.MixerBlock(rng, cfg.tokens, cfg.embed_dim, activation)
        self.head = nn.Linear(rng, cfg.embed_dim, head_patch * head_patch)
        self.iou_head = nn.Linear(rng, cfg.embed_dim, 1)
        mid = cfg.grid * head_patch
        self._up = nn.interp_matrix(mid, cfg.image_size)

    def __call__(self, image_emb: Tensor, dense_emb: Tensor) -> MaskPrediction:
        if image_emb.shape != dense_emb.shape:
            raise ShapeError(
                f"token grids differ: image {image_emb.shape} vs dense "
                f"{dense_emb.shape}")
        d, g, _ = image_emb.shape
        u = self.head_patch
        x = grid_to_tokens(T.add(image_emb, dense_emb))
        x = self.block(x)

        patches = self.head(x)  # (g*g) x u^2
        coarse = T.reshape(patches, (g, g, u, u))
        coarse = T.reshape(T.transpose(coarse, (0, 2, 1, 3)), (g * u, g * u))
        logits = nn.resample2d(coarse, self._up, self._up)

        pooled = T.reshape(_token_mean(x), (d,))
        iou = T.sigmoid(T.reshape(self.iou_head(pooled), ()))
        return MaskPrediction(logits=logits, iou_pred=iou)

    def named_params(self, prefix: str = "decoder") -> dict[str, Tensor]:
        out = self.block.named_params(f"{prefix}.block")
        out.update(self.head.named_params(f"{prefix}.head"))
        out.update(self.iou_head.named_params(f"{prefix}.iou_head"))
        return out


def _token_mean(x: Tensor) -> Tensor:
    """Mean over the token axis of a tokens x d tensor -> 1 x d."""
    n = x.shape[0]
    ones = Tensor(np.full((1, n), 1.0 / n))
    return T.matmul(ones, x)


class SegmenterStubs:
    """The three frozen-model stand-ins plus their shared config."""

    def __init__(self, cfg: EncoderConfig, seed: int, activation: str = "gelu",
                 head_patch: int = 4):
        rng = np.random.default_rng(np.random.PCG64(seed))
        self.cfg = cfg
        self.image_enc = ImageEncoder(cfg, rng, activation)
        self.mask_enc = MaskEncoder(cfg, rng, activation)
        self.decoder = MaskDecoder(cfg, rng, activation, head_patch)
        if cfg.frozen:
            self.set_frozen(True)

    def encode_image(self, frame: Tensor) -> Tensor:
        return self.image_enc(frame)

    def encode_mask(self, mask: Tensor) -> Tensor:
        return self.mask_enc(mask)

    def decode(self, image_emb: Tensor, dense_emb: Tensor) -> MaskPrediction:
        return self.decoder(image_emb, dense_emb)

    def named_params(self) -> dict[str, Tensor]:
        out = self.image_enc.named_params()
        out.update(self.mask_enc.named_params())
        out.update(self.decoder.named_params())
        return out

    def set_frozen(self, frozen: bool) -> None:
        self.cfg.frozen = frozen
        nn.set_frozen(self.named_params(), frozen)
