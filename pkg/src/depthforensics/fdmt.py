"""Patch-wise face depth estimation with a small ViT-style encoder.

An input image is cut into non-overlapping patches, linearly embedded with
learned position embeddings, run through a stack of pre-norm transformer
blocks, and regressed to one depth value per patch through a sigmoid so
predictions live in the [0, 1] target range. The final token features (after
the trunk's closing LayerNorm, before the regression head) are also exposed
as a spatial feature map for downstream fusion.
"""

from dataclasses import dataclass

import numpy as np

from .depth_gt import PatchGrid
from .exceptions import ContractViolation
from .nn import functional as F
from .nn.layers import LayerNorm, Linear, Mlp, Module, MultiHeadSelfAttention, Parameter, trunc_normal


@dataclass(frozen=True)
class FdmtConfig:
    image_size: int = 224
    patches_per_side: int = 14
    in_channels: int = 3
    embed_dim: int = 192
    blocks: int = 12
    heads: int = 8
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.blocks < 1:
            raise ContractViolation("need at least one transformer block")
        if self.embed_dim % self.heads != 0:
            raise ContractViolation(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}"
            )

    @property
    def grid(self):
        return PatchGrid(self.image_size, self.image_size, self.patches_per_side)

    @property
    def patch_count(self):
        return self.patches_per_side**2

    @property
    def patch_dim(self):
        g = self.grid
        return g.patch_h * g.patch_w * self.in_channels


def patchify(images, grid, channels=3):
    """Cut (B, H, W, C) images into (B, P, patch_h*patch_w*C) flat patches.

    Patches are ordered row-major; within a patch, pixels are row-major with
    channels last. The partition is lossless (see :func:`unpatchify`).
    """
    images = np.asarray(images)
    single = images.ndim == 3
    if single:
        images = images[None]
    b, h, w, c = images.shape
    if (h, w) != (grid.image_h, grid.image_w) or c != channels:
        raise ContractViolation(
            f"image shape {(h, w, c)} does not match grid "
            f"{(grid.image_h, grid.image_w, channels)}"
        )
    n, ph, pw = grid.patches_per_side, grid.patch_h, grid.patch_w
    patches = (
        images.reshape(b, n, ph, n, pw, c)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(b, n * n, ph * pw * c)
    )
    return patches[0] if single else patches


def unpatchify(patches, grid, channels=3):
    """Reassemble :func:`patchify` output back into images, bit-exactly."""
    patches = np.asarray(patches)
    single = patches.ndim == 2
    if single:
        patches = patches[None]
    b = patches.shape[0]
    n, ph, pw = grid.patches_per_side, grid.patch_h, grid.patch_w
    images = (
        patches.reshape(b, n, n, ph, pw, channels)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(b, grid.image_h, grid.image_w, channels)
    )
    return images[0] if single else images


class TransformerBlock(Module):
    """Pre-norm residual block: x + Attn(LN(x)), then + MLP(LN(.))."""

    def __init__(self, rng, dim, heads, mlp_ratio):
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(rng, dim, heads)
        self.ln2 = LayerNorm(dim)
        self.mlp = Mlp(rng, dim, int(dim * mlp_ratio), dim)

    def forward(self, x):
        n1, c_ln1 = self.ln1.forward(x)
        a, c_attn = self.attn.forward(n1)
        h = x + a
        n2, c_ln2 = self.ln2.forward(h)
        m, c_mlp = self.mlp.forward(n2)
        return h + m, (c_ln1, c_attn, c_ln2, c_mlp)

    def backward(self, dout, cache):
        c_ln1, c_attn, c_ln2, c_mlp = cache
        dn2 = self.mlp.backward(dout, c_mlp)
        dh = dout + self.ln2.backward(dn2, c_ln2)
        dn1 = self.attn.backward(dh, c_attn)
        return dh + self.ln1.backward(dn1, c_ln1)


class Fdmt(Module):
    """Face depth map transformer: image -> (patch depth vector, feature map)."""

    def __init__(self, config, rng):
        self.config = config
        self.embed = Linear(rng, config.patch_dim, config.embed_dim)
        self.pos = Parameter(trunc_normal(rng, (config.patch_count, config.embed_dim)))
        self.blocks = [
            TransformerBlock(rng, config.embed_dim, config.heads, config.mlp_ratio)
            for _ in range(config.blocks)
        ]
        self.norm = LayerNorm(config.embed_dim)
        self.head = Linear(rng, config.embed_dim, 1)

    def embed_patches(self, patches):
        """Linear projection plus learned position embedding."""
        tokens, cache = self.embed.forward(patches)
        return tokens + self.pos.value, cache

    def depth_head(self, tokens):
        """Per-token sigmoid regression; returns values in [0, 1]."""
        raw, cache = self.head.forward(tokens)
        pred = F.sigmoid(raw[..., 0])
        return pred, (cache, pred)

    def forward(self, images):
        """(B, H, W, C) images -> (depth (B, P), features (B, n, n, E), cache).

        A single (H, W, C) image is treated as a batch of one.
        """
        cfg = self.config
        images = np.asarray(images)
        if images.ndim == 3:
            images = images[None]
        patches = patchify(images, cfg.grid, cfg.in_channels)
        tokens, c_embed = self.embed_patches(patches)
        block_caches = []
        for block in self.blocks:
            tokens, c = block.forward(tokens)
            if not np.all(np.isfinite(tokens)):
                raise ContractViolation("non-finite activations inside transformer block")
            block_caches.append(c)
        feats, c_norm = self.norm.forward(tokens)
        depth, c_head = self.depth_head(feats)
        b = feats.shape[0]
        n = cfg.patches_per_side
        feature_map = feats.reshape(b, n, n, cfg.embed_dim)
        return depth, feature_map, (c_embed, block_caches, c_norm, c_head)

    def backward(self, d_depth, d_features, cache):
        """Backprop through the trunk; returns the gradient w.r.t. the images."""
        cfg = self.config
        c_embed, block_caches, c_norm, c_head = cache
        head_cache, pred = c_head
        draw = F.sigmoid_backward(d_depth, pred)[..., None]
        dfeats = self.head.backward(draw, head_cache)
        if d_features is not None:
            dfeats = dfeats + d_features.reshape(dfeats.shape)
        dtokens = self.norm.backward(dfeats, c_norm)
        for block, c in zip(reversed(self.blocks), reversed(block_caches)):
            dtokens = block.backward(dtokens, c)
        self.pos.grad += dtokens.sum(axis=0)
        dpatches = self.embed.backward(dtokens, c_embed)
        return unpatchify(dpatches, cfg.grid, cfg.in_channels)

    @staticmethod
    def attention_maps(cache):
        """Per-block attention tensors (B, heads, P, P) from a forward cache."""
        _, block_caches, _, _ = cache
        return [MultiHeadSelfAttention.attention_from_cache(c[1]) for c in block_caches]
