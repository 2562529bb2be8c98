"""Corner-aligned bilinear resampling as an explicit (and differentiable) linear map."""

import numpy as np

from ..exceptions import ContractViolation


def _axis_weights(n_in, n_out):
    """(n_out, n_in) interpolation matrix; rows sum to 1, corners map exactly."""
    if n_in <= 0 or n_out <= 0:
        raise ContractViolation("resize target must have positive size")
    weights = np.zeros((n_out, n_in))
    if n_in == 1 or n_out == 1:
        # degenerate axes pin to the first sample
        weights[:, 0] = 1.0
        return weights
    src = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.clip(np.floor(src).astype(int), 0, n_in - 2)
    frac = src - lo
    weights[np.arange(n_out), lo] = 1.0 - frac
    weights[np.arange(n_out), lo + 1] += frac
    return weights


def resize_bilinear(x, out_hw):
    """Resize (B, H, W, C) maps to (B, *out_hw, C); returns (out, cache)."""
    rh = _axis_weights(x.shape[1], out_hw[0])
    rw = _axis_weights(x.shape[2], out_hw[1])
    out = np.einsum("hi,wj,bijc->bhwc", rh, rw, x, optimize=True)
    return out, (rh, rw)


def resize_bilinear_backward(dout, cache):
    rh, rw = cache
    return np.einsum("hi,wj,bhwc->bijc", rh, rw, dout, optimize=True)
