"""Small configurable CNN classifier with an exposed feature-injection point.

The network is an ordered list of conv+ReLU blocks. ``forward_front`` runs
blocks up to the injection index and returns the activations there (the RGB
feature map); ``forward_rear`` takes (possibly enhanced) features and runs
the remaining blocks, global average pooling, and the classifier head.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ContractViolation
from .nn import functional as F
from .nn.layers import Conv2d, Linear, Module, global_avg_pool, global_avg_pool_backward

DEFAULT_BLOCKS = ((16, 2), (32, 2), (64, 2), (64, 1), (128, 2), (128, 1))


@dataclass(frozen=True)
class BackboneConfig:
    blocks: tuple = DEFAULT_BLOCKS  # (out_channels, stride) per block
    injection_index: int = 3
    head_width: int = 64
    num_classes: int = 2
    in_channels: int = 3

    def __post_init__(self):
        if not self.blocks:
            raise ContractViolation("backbone needs at least one block")
        if not 0 < self.injection_index < len(self.blocks):
            raise ContractViolation(
                f"injection index {self.injection_index} outside (0, {len(self.blocks)})"
            )
        for ch, stride in self.blocks:
            if ch <= 0 or stride <= 0:
                raise ContractViolation(f"bad block spec ({ch}, {stride})")

    @property
    def injection_channels(self):
        return self.blocks[self.injection_index - 1][0]

    def injection_hw(self, image_size):
        """Spatial dims of the feature map at the injection point."""
        h = w = image_size
        for _, stride in self.blocks[: self.injection_index]:
            h = (h + 2 - 3) // stride + 1
            w = (w + 2 - 3) // stride + 1
        if h <= 0 or w <= 0:
            raise ContractViolation("feature map at injection has no spatial extent")
        return h, w


class ConvBackbone(Module):
    def __init__(self, config, rng):
        self.config = config
        self.convs = []
        cin = config.in_channels
        for ch, stride in config.blocks:
            self.convs.append(Conv2d(rng, cin, ch, ksize=3, stride=stride))
            cin = ch
        self.fc1 = Linear(rng, cin, config.head_width, std=np.sqrt(2.0 / cin))
        self.fc2 = Linear(rng, config.head_width, config.num_classes)

    def _run_blocks(self, x, start, stop):
        caches = []
        for conv in self.convs[start:stop]:
            pre, c_conv = conv.forward(x)
            x = F.relu(pre)
            caches.append((c_conv, pre))
        return x, caches

    def _run_blocks_backward(self, dout, caches, start, stop):
        for conv, (c_conv, pre) in zip(
            reversed(self.convs[start:stop]), reversed(caches)
        ):
            dout = conv.backward(F.relu_backward(dout, pre), c_conv)
        return dout

    def forward_front(self, images):
        """(B, H, W, 3) images -> feature map at the injection point."""
        images = np.asarray(images, dtype=np.float64)
        if images.ndim != 4 or images.shape[-1] != self.config.in_channels:
            raise ContractViolation(f"expected (B, H, W, {self.config.in_channels}) images")
        return self._run_blocks(images, 0, self.config.injection_index)

    def backward_front(self, dfeat, caches):
        return self._run_blocks_backward(dfeat, caches, 0, self.config.injection_index)

    def forward_rear(self, f_en):
        """Enhanced features -> class logits (B, num_classes)."""
        f_en = np.asarray(f_en)
        if f_en.ndim != 4 or f_en.shape[-1] != self.config.injection_channels:
            raise ContractViolation(
                f"rear expects (B, H, W, {self.config.injection_channels}), got {f_en.shape}"
            )
        x, block_caches = self._run_blocks(f_en, self.config.injection_index, len(self.convs))
        pooled, c_pool = global_avg_pool(x)
        h, c_fc1 = self.fc1.forward(pooled)
        a = F.relu(h)
        logits, c_fc2 = self.fc2.forward(a)
        return logits, (block_caches, c_pool, h, c_fc1, c_fc2)

    def backward_rear(self, dlogits, cache):
        block_caches, c_pool, h, c_fc1, c_fc2 = cache
        da = self.fc2.backward(dlogits, c_fc2)
        dpooled = self.fc1.backward(F.relu_backward(da, h), c_fc1)
        dx = global_avg_pool_backward(dpooled, c_pool)
        return self._run_blocks_backward(
            dx, block_caches, self.config.injection_index, len(self.convs)
        )
