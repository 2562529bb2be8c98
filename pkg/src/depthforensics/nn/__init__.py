from . import functional
from .layers import (
    Conv2d,
    LayerNorm,
    Linear,
    Mlp,
    Module,
    MultiHeadSelfAttention,
    Parameter,
    global_avg_pool,
    global_avg_pool_backward,
    trunc_normal,
)
from .optim import Adam
from .resize import resize_bilinear, resize_bilinear_backward

__all__ = [
    "Adam",
    "Conv2d",
    "LayerNorm",
    "Linear",
    "Mlp",
    "Module",
    "MultiHeadSelfAttention",
    "Parameter",
    "functional",
    "global_avg_pool",
    "global_avg_pool_backward",
    "resize_bilinear",
    "resize_bilinear_backward",
    "trunc_normal",
]
