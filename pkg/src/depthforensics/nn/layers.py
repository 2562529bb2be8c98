"""Minimal layer library with explicit forward caches and hand-written backprop.

Conventions:
  * every array is float64,
  * ``forward`` returns ``(output, cache)`` and never mutates module state,
    so inference is reentrant over shared weights,
  * ``backward(dout, cache)`` accumulates into ``Parameter.grad`` and returns
    the gradient w.r.t. the forward input (training is externally serialized).
"""

import numpy as np
from scipy.stats import truncnorm

from . import functional as F
from ..exceptions import ContractViolation


class Parameter:
    """A trainable tensor with its gradient accumulator."""

    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)


def trunc_normal(rng, shape, std=0.02):
    """Truncated normal init (cut at two standard deviations)."""
    return truncnorm.rvs(-2.0, 2.0, loc=0.0, scale=std, size=shape, random_state=rng)


class Module:
    """Base class providing recursive parameter discovery and state dicts."""

    def named_parameters(self, prefix=""):
        for name, attr in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(attr, Parameter):
                yield full, attr
            elif isinstance(attr, Module):
                yield from attr.named_parameters(prefix=full + ".")
            elif isinstance(attr, (list, tuple)):
                for i, item in enumerate(attr):
                    if isinstance(item, Module):
                        yield from item.named_parameters(prefix=f"{full}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{full}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad[...] = 0.0

    def state_dict(self):
        return {name: p.value.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise ContractViolation(
                f"state dict mismatch: missing={missing[:3]} extra={extra[:3]}"
            )
        for name, p in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.value.shape:
                raise ContractViolation(
                    f"shape mismatch for {name}: {value.shape} vs {p.value.shape}"
                )
            p.value = value.copy()
            p.grad = np.zeros_like(p.value)


class Linear(Module):
    """y = x @ W + b over the last axis."""

    def __init__(self, rng, in_dim, out_dim, std=0.02):
        self.weight = Parameter(trunc_normal(rng, (in_dim, out_dim), std=std))
        self.bias = Parameter(np.zeros(out_dim))

    def forward(self, x):
        return x @ self.weight.value + self.bias.value, x

    def backward(self, dout, cache):
        x = cache
        x2 = x.reshape(-1, x.shape[-1])
        d2 = dout.reshape(-1, dout.shape[-1])
        self.weight.grad += x2.T @ d2
        self.bias.grad += d2.sum(axis=0)
        return dout @ self.weight.value.T


class LayerNorm(Module):
    """Normalization over the last axis with learned scale and shift."""

    def __init__(self, dim, eps=1e-6):
        self.eps = eps
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))

    def forward(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = np.mean(xc * xc, axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = xc * inv
        return xhat * self.gamma.value + self.beta.value, (xhat, inv)

    def backward(self, dout, cache):
        xhat, inv = cache
        d2 = dout.reshape(-1, dout.shape[-1])
        x2 = xhat.reshape(-1, xhat.shape[-1])
        self.gamma.grad += (d2 * x2).sum(axis=0)
        self.beta.grad += d2.sum(axis=0)
        dxhat = dout * self.gamma.value
        mean_d = dxhat.mean(axis=-1, keepdims=True)
        mean_dx = np.mean(dxhat * xhat, axis=-1, keepdims=True)
        return inv * (dxhat - mean_d - xhat * mean_dx)


class Mlp(Module):
    """Two-layer perceptron with a GELU in between."""

    def __init__(self, rng, in_dim, hidden_dim, out_dim):
        self.fc1 = Linear(rng, in_dim, hidden_dim)
        self.fc2 = Linear(rng, hidden_dim, out_dim)

    def forward(self, x):
        h, c1 = self.fc1.forward(x)
        a = F.gelu(h)
        y, c2 = self.fc2.forward(a)
        return y, (c1, h, c2)

    def backward(self, dout, cache):
        c1, h, c2 = cache
        da = self.fc2.backward(dout, c2)
        dh = F.gelu_backward(da, h)
        return self.fc1.backward(dh, c1)


class MultiHeadSelfAttention(Module):
    """Standard scaled dot-product self-attention over token sequences."""

    def __init__(self, rng, dim, heads):
        if dim % heads != 0:
            raise ContractViolation(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = dim // heads
        self.scale = 1.0 / np.sqrt(self.head_dim)
        self.qkv = Linear(rng, dim, 3 * dim)
        self.proj = Linear(rng, dim, dim)

    def _split(self, x):
        b, p, _ = x.shape
        return x.reshape(b, p, self.heads, self.head_dim).transpose(0, 2, 1, 3)

    def forward(self, x):
        b, p, e = x.shape
        qkv, c_qkv = self.qkv.forward(x)
        q, k, v = (self._split(t) for t in np.split(qkv, 3, axis=-1))
        scores = (q @ k.swapaxes(-1, -2)) * self.scale
        attn = F.softmax(scores, axis=-1)
        ctx = attn @ v
        merged = ctx.transpose(0, 2, 1, 3).reshape(b, p, e)
        out, c_proj = self.proj.forward(merged)
        return out, (c_qkv, q, k, v, attn, c_proj)

    def backward(self, dout, cache):
        c_qkv, q, k, v, attn, c_proj = cache
        b, h, p, d = q.shape
        dmerged = self.proj.backward(dout, c_proj)
        dctx = dmerged.reshape(b, p, h, d).transpose(0, 2, 1, 3)
        dattn = dctx @ v.swapaxes(-1, -2)
        dv = attn.swapaxes(-1, -2) @ dctx
        dscores = F.softmax_backward(dattn, attn, axis=-1) * self.scale
        dq = dscores @ k
        dk = dscores.swapaxes(-1, -2) @ q
        dqkv = np.concatenate(
            [t.transpose(0, 2, 1, 3).reshape(b, p, h * d) for t in (dq, dk, dv)],
            axis=-1,
        )
        return self.qkv.backward(dqkv, c_qkv)

    @staticmethod
    def attention_from_cache(cache):
        """Attention tensor (B, heads, P, P) of the cached forward, for tests/viz."""
        return cache[4]


class Conv2d(Module):
    """3x3-style convolution on channels-last maps with 'same' padding."""

    def __init__(self, rng, in_channels, out_channels, ksize=3, stride=1):
        if ksize % 2 != 1:
            raise ContractViolation("only odd kernel sizes are supported")
        fan_in = ksize * ksize * in_channels
        std = np.sqrt(2.0 / fan_in)
        self.ksize = ksize
        self.stride = stride
        self.pad = ksize // 2
        self.weight = Parameter(trunc_normal(rng, (ksize, ksize, in_channels, out_channels), std=std))
        self.bias = Parameter(np.zeros(out_channels))

    def out_shape(self, h, w):
        s, k, p = self.stride, self.ksize, self.pad
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def forward(self, x):
        b, h, w, _ = x.shape
        s, k, p = self.stride, self.ksize, self.pad
        ho, wo = self.out_shape(h, w)
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        out = np.broadcast_to(self.bias.value, (b, ho, wo, self.bias.value.shape[0])).copy()
        for u in range(k):
            for v in range(k):
                xs = xp[:, u : u + s * ho : s, v : v + s * wo : s, :]
                out += xs @ self.weight.value[u, v]
        return out, (xp, (h, w))

    def backward(self, dout, cache):
        xp, (h, w) = cache
        s, k, p = self.stride, self.ksize, self.pad
        ho, wo = dout.shape[1], dout.shape[2]
        self.bias.grad += dout.sum(axis=(0, 1, 2))
        dxp = np.zeros_like(xp)
        for u in range(k):
            for v in range(k):
                xs = xp[:, u : u + s * ho : s, v : v + s * wo : s, :]
                self.weight.grad[u, v] += np.einsum("bhwc,bhwd->cd", xs, dout, optimize=True)
                dxp[:, u : u + s * ho : s, v : v + s * wo : s, :] += dout @ self.weight.value[u, v].T
        return dxp[:, p : p + h, p : p + w, :]


def global_avg_pool(x):
    """(B, H, W, C) -> (B, C) mean pooling; returns (out, cache)."""
    return x.mean(axis=(1, 2)), x.shape


def global_avg_pool_backward(dout, shape):
    b, h, w, c = shape
    return np.broadcast_to(dout[:, None, None, :] / (h * w), shape).copy()
