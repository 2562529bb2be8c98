"""The full detection pipeline: backbone + depth estimator + fusion.

Fusion modes:
  * ``none``   - plain backbone (depth estimator optional, supervision only)
  * ``mda``    - multi-head depth attention over the depth feature map
  * ``concat`` - scalar predicted depth map concatenated and 1x1-projected
  * ``msa``    - multi-head self-attention on RGB features, no depth input
"""

from dataclasses import dataclass

import numpy as np

from .backbone import BackboneConfig, ConvBackbone
from .exceptions import ContractViolation
from .fdmt import Fdmt, FdmtConfig
from .mda import (
    MdaConfig,
    MultiHeadDepthAttention,
    align_depth_features,
    align_depth_features_backward,
)
from .nn import functional as F
from .nn.layers import Conv2d, Module

FUSION_MODES = ("none", "mda", "concat", "msa")


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 224
    backbone: BackboneConfig = BackboneConfig()
    fdmt: FdmtConfig | None = FdmtConfig()
    fusion: str = "mda"
    mda_heads: int = 8
    mda_head_width: int = 16
    mda_scale: str = "head_width"

    def __post_init__(self):
        if self.fusion not in FUSION_MODES:
            raise ContractViolation(f"unknown fusion mode {self.fusion!r}")
        if self.fusion in ("mda", "concat") and self.fdmt is None:
            raise ContractViolation(f"fusion {self.fusion!r} requires the depth estimator")
        if self.fdmt is not None and self.fdmt.image_size != self.image_size:
            raise ContractViolation(
                f"depth estimator image size {self.fdmt.image_size} != {self.image_size}"
            )
        self.backbone.injection_hw(self.image_size)  # raises if degenerate

    def to_dict(self):
        d = {
            "image_size": self.image_size,
            "backbone": {
                "blocks": [list(b) for b in self.backbone.blocks],
                "injection_index": self.backbone.injection_index,
                "head_width": self.backbone.head_width,
                "num_classes": self.backbone.num_classes,
                "in_channels": self.backbone.in_channels,
            },
            "fusion": self.fusion,
            "mda_heads": self.mda_heads,
            "mda_head_width": self.mda_head_width,
            "mda_scale": self.mda_scale,
            "fdmt": None,
        }
        if self.fdmt is not None:
            d["fdmt"] = {
                "image_size": self.fdmt.image_size,
                "patches_per_side": self.fdmt.patches_per_side,
                "in_channels": self.fdmt.in_channels,
                "embed_dim": self.fdmt.embed_dim,
                "blocks": self.fdmt.blocks,
                "heads": self.fdmt.heads,
                "mlp_ratio": self.fdmt.mlp_ratio,
            }
        return d

    @classmethod
    def from_dict(cls, d):
        backbone = BackboneConfig(
            blocks=tuple(tuple(b) for b in d["backbone"]["blocks"]),
            injection_index=d["backbone"]["injection_index"],
            head_width=d["backbone"]["head_width"],
            num_classes=d["backbone"]["num_classes"],
            in_channels=d["backbone"]["in_channels"],
        )
        fdmt = FdmtConfig(**d["fdmt"]) if d.get("fdmt") else None
        return cls(
            image_size=d["image_size"],
            backbone=backbone,
            fdmt=fdmt,
            fusion=d["fusion"],
            mda_heads=d["mda_heads"],
            mda_head_width=d["mda_head_width"],
            mda_scale=d["mda_scale"],
        )


class DetectionModel(Module):
    def __init__(self, config, rng):
        self.config = config
        self.backbone = ConvBackbone(config.backbone, rng)
        self.fdmt = Fdmt(config.fdmt, rng) if config.fdmt is not None else None
        c = config.backbone.injection_channels
        if config.fusion == "mda":
            mda_cfg = MdaConfig(
                rgb_channels=c,
                depth_channels=config.fdmt.embed_dim,
                heads=config.mda_heads,
                head_width=config.mda_head_width,
                scale=config.mda_scale,
            )
            self.mda = MultiHeadDepthAttention(mda_cfg, rng)
        elif config.fusion == "msa":
            mda_cfg = MdaConfig(
                rgb_channels=c,
                depth_channels=c,
                heads=config.mda_heads,
                head_width=config.mda_head_width,
                scale=config.mda_scale,
            )
            self.mda = MultiHeadDepthAttention(mda_cfg, rng)
        elif config.fusion == "concat":
            self.concat_proj = Conv2d(rng, c + 1, c, ksize=1)

    def forward(self, images):
        """Images -> (logits, depth_pred, cache); depth_pred is None without FDMT."""
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 3:
            images = images[None]
        fusion = self.config.fusion
        depth_pred = depth_feats = c_fdmt = None
        if self.fdmt is not None:
            depth_pred, depth_feats, c_fdmt = self.fdmt.forward(images)
        f_rgb, c_front = self.backbone.forward_front(images)
        hw = f_rgb.shape[1:3]
        c_fuse = None
        if fusion == "mda":
            aligned, c_align = align_depth_features(depth_feats, hw)
            f_en, c_mda = self.mda.forward(aligned, f_rgb)
            c_fuse = (c_align, c_mda)
        elif fusion == "msa":
            f_en, c_mda = self.mda.forward(f_rgb, f_rgb)
            c_fuse = c_mda
        elif fusion == "concat":
            n = self.config.fdmt.patches_per_side
            depth_map = depth_pred.reshape(-1, n, n, 1)
            aligned, c_align = align_depth_features(depth_map, hw)
            stacked = np.concatenate([f_rgb, aligned], axis=-1)
            f_en, c_proj = self.concat_proj.forward(stacked)
            c_fuse = (c_align, c_proj)
        else:
            f_en = f_rgb
        logits, c_rear = self.backbone.forward_rear(f_en)
        return logits, depth_pred, (c_fdmt, c_front, c_fuse, c_rear)

    def backward(self, dlogits, d_depth, cache):
        """Backprop; ``d_depth`` is the depth-loss gradient w.r.t. depth_pred."""
        c_fdmt, c_front, c_fuse, c_rear = cache
        fusion = self.config.fusion
        df_en = self.backbone.backward_rear(dlogits, c_rear)
        d_feats = None
        if fusion == "mda":
            c_align, c_mda = c_fuse
            d_aligned, df_rgb = self.mda.backward(df_en, c_mda)
            d_feats = align_depth_features_backward(d_aligned, c_align)
        elif fusion == "msa":
            dfd, dfrgb = self.mda.backward(df_en, c_fuse)
            df_rgb = dfd + dfrgb
        elif fusion == "concat":
            c_align, c_proj = c_fuse
            dstacked = self.concat_proj.backward(df_en, c_proj)
            c = self.config.backbone.injection_channels
            df_rgb = dstacked[..., :c]
            d_map = align_depth_features_backward(dstacked[..., c:], c_align)
            d_depth = (0.0 if d_depth is None else d_depth) + d_map.reshape(d_map.shape[0], -1)
        else:
            df_rgb = df_en
        dimages = self.backbone.backward_front(df_rgb, c_front)
        if self.fdmt is not None and (d_depth is not None or d_feats is not None):
            if d_depth is None:
                d_depth = np.zeros(dimages.shape[0] * self.config.fdmt.patch_count).reshape(
                    dimages.shape[0], -1
                )
            dimages = dimages + self.fdmt.backward(d_depth, d_feats, c_fdmt)
        return dimages

    def classify(self, images):
        """Probability of the fake class per image."""
        logits, _, _ = self.forward(images)
        return F.softmax(logits, axis=-1)[:, 1]

    def activations(self, images):
        """Inference pass that also surfaces the injection-point features.

        Returns a dict with logits, prob_fake, depth_pred (or None), and the
        feature maps before (f_rgb) and after (f_en) fusion.
        """
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 3:
            images = images[None]
        fusion = self.config.fusion
        depth_pred = depth_feats = None
        if self.fdmt is not None:
            depth_pred, depth_feats, _ = self.fdmt.forward(images)
        f_rgb, _ = self.backbone.forward_front(images)
        hw = f_rgb.shape[1:3]
        if fusion == "mda":
            aligned, _ = align_depth_features(depth_feats, hw)
            f_en, _ = self.mda.forward(aligned, f_rgb)
        elif fusion == "msa":
            f_en, _ = self.mda.forward(f_rgb, f_rgb)
        elif fusion == "concat":
            n = self.config.fdmt.patches_per_side
            aligned, _ = align_depth_features(depth_pred.reshape(-1, n, n, 1), hw)
            f_en, _ = self.concat_proj.forward(np.concatenate([f_rgb, aligned], axis=-1))
        else:
            f_en = f_rgb
        logits, _ = self.backbone.forward_rear(f_en)
        return {
            "logits": logits,
            "prob_fake": F.softmax(logits, axis=-1)[:, 1],
            "depth_pred": depth_pred,
            "f_rgb": f_rgb,
            "f_en": f_en,
        }
