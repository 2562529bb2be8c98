"""Stateless tensor ops with matching backward passes.

All functions operate on float64 numpy arrays. Forward functions return the
output (plus whatever the backward needs); backward functions take the
upstream gradient and return the input gradient.
"""

import numpy as np
from scipy.special import erf, expit

SQRT_2 = np.sqrt(2.0)
INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def softmax(x, axis=-1):
    """Numerically stable softmax along ``axis``."""
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_backward(dout, y, axis=-1):
    """Gradient of softmax given its output ``y``."""
    inner = np.sum(dout * y, axis=axis, keepdims=True)
    return y * (dout - inner)


def gelu(x):
    """Exact (erf-based) GELU."""
    return 0.5 * x * (1.0 + erf(x / SQRT_2))


def gelu_backward(dout, x):
    cdf = 0.5 * (1.0 + erf(x / SQRT_2))
    pdf = INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return dout * (cdf + x * pdf)


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(dout, x):
    return dout * (x > 0.0)


def sigmoid(x):
    return expit(x)


def sigmoid_backward(dout, y):
    """Gradient of sigmoid given its output ``y``."""
    return dout * y * (1.0 - y)


def log_softmax(x, axis=-1):
    shifted = x - np.max(x, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def cross_entropy_with_logits(logits, labels):
    """Mean cross-entropy over the batch.

    logits: (B, K), labels: (B,) integer class ids.
    Returns (loss, dlogits); dlogits already includes the 1/B factor.
    """
    n = logits.shape[0]
    logp = log_softmax(logits, axis=-1)
    loss = -np.mean(logp[np.arange(n), labels])
    probs = np.exp(logp)
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits
