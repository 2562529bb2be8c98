"""Depth-map-assisted face manipulation detection, desk scale.

Patch-wise face depth estimation (a small ViT regressing one depth value per
image patch), multi-head depth attention fusing depth features into a CNN
backbone, the composite training objective, and a synthetic-data harness for
verifying every mechanism end to end.
"""

from . import backbone, checkpoint, depth_gt, fdmt, harness, losses, mda, metrics, model, synth

__version__ = "0.1.0"

__all__ = [
    "backbone",
    "checkpoint",
    "depth_gt",
    "fdmt",
    "harness",
    "losses",
    "mda",
    "metrics",
    "model",
    "synth",
]
