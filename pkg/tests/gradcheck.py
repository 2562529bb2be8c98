"""Central finite-difference utilities shared by the gradient tests.

Checks are run at a randomized operating point (weights ~ N(0, 0.3)) so no
path sits in a degenerate near-zero-gradient regime where finite differences
are pure roundoff noise. Agreement is measured per parameter tensor as

    ||g_fd - g_analytic|| / max(||g_fd||, ||g_analytic||)

which flags any systematic backprop error while staying well-conditioned.
"""

import numpy as np


def randomize_params(module, seed, std=0.3):
    rng = np.random.default_rng(seed)
    for _, p in module.named_parameters():
        p.value = rng.normal(0.0, std, p.value.shape)


def fd_gradient(values, loss_fn, h=1e-5):
    """Full central-difference gradient of ``loss_fn`` w.r.t. ``values`` (in place)."""
    flat = values.ravel()
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        lp = loss_fn()
        flat[i] = orig - h
        lm = loss_fn()
        flat[i] = orig
        grad[i] = (lp - lm) / (2.0 * h)
    return grad.reshape(values.shape)


def norm_rel_err(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def max_param_rel_err(module, loss_fn, h=1e-5):
    """Worst per-tensor relative error between FD and accumulated gradients.

    The module must already hold accumulated ``grad`` values for the same
    loss. Returns (worst_error, parameter_name).
    """
    worst, worst_name = 0.0, None
    for name, p in module.named_parameters():
        fd = fd_gradient(p.value, loss_fn, h=h)
        err = norm_rel_err(fd, p.grad)
        if err > worst:
            worst, worst_name = err, name
    return worst, worst_name
