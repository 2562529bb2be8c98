"""Multi-head depth attention: enhance backbone features with depth features.

Depth features form the queries, RGB features the keys and values. Per head,
the query/key dot-product similarity is softmax-normalized (scaled by the
square root of a configurable width) and applied to the values as a standard
attention matrix product. Head outputs are concatenated, projected back to
the RGB channel count, and fused residually through a small MLP.

The similarity-times-value step is deliberately isolated in
:func:`scaled_depth_attention` so its arithmetic can be audited in one place.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ContractViolation
from .nn import functional as F
from .nn.layers import Linear, Mlp, Module
from .nn.resize import resize_bilinear, resize_bilinear_backward


def align_depth_features(f_d, out_hw):
    """Bilinearly resize (B, h, w, C) depth features to the backbone's grid.

    Corner-aligned; the identity (bit-exact) when the sizes already match.
    Returns (aligned, cache) for use with :func:`align_depth_features_backward`.
    """
    f_d = np.asarray(f_d)
    if f_d.ndim != 4:
        raise ContractViolation(f"expected (B, H, W, C) depth features, got {f_d.shape}")
    return resize_bilinear(f_d, out_hw)


def align_depth_features_backward(dout, cache):
    return resize_bilinear_backward(dout, cache)


def scaled_depth_attention(q, k, v, scale):
    """softmax(q @ k^T / sqrt(scale)) @ v over token sequences.

    q, k, v: (..., N, d) with matching widths for q and k.
    Returns (output, attention); attention rows sum to one.
    """
    if q.shape[-1] != k.shape[-1]:
        raise ContractViolation(f"query width {q.shape[-1]} != key width {k.shape[-1]}")
    scores = (q @ np.swapaxes(k, -1, -2)) / np.sqrt(scale)
    attn = F.softmax(scores, axis=-1)
    return attn @ v, attn


@dataclass(frozen=True)
class MdaConfig:
    rgb_channels: int
    depth_channels: int
    heads: int = 8
    head_width: int = 16
    mlp_hidden: int | None = None  # defaults to 4 * rgb_channels
    scale: str = "head_width"  # or "rgb_channels" (the literal paper reading)

    def __post_init__(self):
        if self.heads < 1 or self.head_width < 1:
            raise ContractViolation("heads and head_width must be positive")
        if self.scale not in ("head_width", "rgb_channels"):
            raise ContractViolation(f"unknown scale mode {self.scale!r}")

    @property
    def scale_value(self):
        return self.head_width if self.scale == "head_width" else self.rgb_channels

    @property
    def hidden(self):
        return self.mlp_hidden if self.mlp_hidden is not None else 4 * self.rgb_channels


class DepthAttentionHead(Module):
    """One attention head: depth-projected queries against RGB keys/values."""

    def __init__(self, rng, config):
        d = config.head_width
        self.scale_value = config.scale_value
        self.wd = Linear(rng, config.depth_channels, d)
        self.wr = Linear(rng, config.rgb_channels, d)
        self.wv = Linear(rng, config.rgb_channels, d)

    def forward(self, fd_tokens, frgb_tokens):
        q, c_wd = self.wd.forward(fd_tokens)
        k, c_wr = self.wr.forward(frgb_tokens)
        v, c_wv = self.wv.forward(frgb_tokens)
        out, attn = scaled_depth_attention(q, k, v, self.scale_value)
        return out, (c_wd, c_wr, c_wv, q, k, v, attn)

    def backward(self, dout, cache):
        c_wd, c_wr, c_wv, q, k, v, attn = cache
        dattn = dout @ np.swapaxes(v, -1, -2)
        dv = np.swapaxes(attn, -1, -2) @ dout
        dscores = F.softmax_backward(dattn, attn, axis=-1) / np.sqrt(self.scale_value)
        dq = dscores @ k
        dk = np.swapaxes(dscores, -1, -2) @ q
        dfd = self.wd.backward(dq, c_wd)
        dfrgb = self.wr.backward(dk, c_wr) + self.wv.backward(dv, c_wv)
        return dfd, dfrgb

    @staticmethod
    def attention_from_cache(cache):
        return cache[6]


class MultiHeadDepthAttention(Module):
    """Full fusion block: heads, concat, output projection, residual MLP fuse."""

    def __init__(self, config, rng):
        self.config = config
        self.heads = [DepthAttentionHead(rng, config) for _ in range(config.heads)]
        self.wo = Linear(rng, config.heads * config.head_width, config.rgb_channels)
        self.mlp = Mlp(rng, config.rgb_channels, config.hidden, config.rgb_channels)

    def fuse(self, f_rgb, f_prime):
        """F_en = F_rgb + MLP(F' + F_rgb); identity when the MLP output layer is zero."""
        if f_rgb.shape != f_prime.shape:
            raise ContractViolation(f"fuse shapes differ: {f_rgb.shape} vs {f_prime.shape}")
        s = f_prime + f_rgb
        m, c_mlp = self.mlp.forward(s)
        return f_rgb + m, c_mlp

    def fuse_backward(self, dout, c_mlp):
        ds = self.mlp.backward(dout, c_mlp)
        return dout + ds, ds  # (df_rgb, df_prime)

    def forward(self, f_d, f_rgb):
        """(B, H, W, Cd) depth features + (B, H, W, C) RGB features -> (B, H, W, C)."""
        f_d = np.asarray(f_d)
        f_rgb = np.asarray(f_rgb)
        if f_d.shape[:3] != f_rgb.shape[:3]:
            raise ContractViolation(
                f"depth {f_d.shape} and RGB {f_rgb.shape} features not spatially aligned"
            )
        b, h, w, c = f_rgb.shape
        fd_tok = f_d.reshape(b, h * w, f_d.shape[-1])
        frgb_tok = f_rgb.reshape(b, h * w, c)
        outs, head_caches = [], []
        for head in self.heads:
            out, cache = head.forward(fd_tok, frgb_tok)
            outs.append(out)
            head_caches.append(cache)
        concat = np.concatenate(outs, axis=-1)
        f_prime, c_wo = self.wo.forward(concat)
        f_en, c_mlp = self.fuse(frgb_tok, f_prime)
        return f_en.reshape(b, h, w, c), (head_caches, c_wo, c_mlp, f_d.shape)

    def backward(self, dout, cache):
        """Returns (df_d, df_rgb) with the forward's spatial shapes."""
        head_caches, c_wo, c_mlp, fd_shape = cache
        b, h, w, c = dout.shape
        dout_tok = dout.reshape(b, h * w, c)
        dfrgb_tok, df_prime = self.fuse_backward(dout_tok, c_mlp)
        dconcat = self.wo.backward(df_prime, c_wo)
        dfd_tok = 0.0
        width = self.config.head_width
        for i, (head, hc) in enumerate(zip(self.heads, head_caches)):
            dhead = dconcat[..., i * width : (i + 1) * width]
            dfd_i, dfrgb_i = head.backward(dhead, hc)
            dfd_tok = dfd_tok + dfd_i
            dfrgb_tok = dfrgb_tok + dfrgb_i
        return dfd_tok.reshape(fd_shape), dfrgb_tok.reshape(b, h, w, c)

    def attention_maps(self, cache):
        """(B, heads, N, N) attention stack from a forward cache."""
        head_caches = cache[0]
        return np.stack(
            [DepthAttentionHead.attention_from_cache(hc) for hc in head_caches], axis=1
        )
