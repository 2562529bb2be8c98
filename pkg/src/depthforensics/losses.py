"""Depth-supervision loss terms and the weighted total objective.

The structural term compares predicted and target patch-depth grids through
global statistics (single window over the whole grid): means, population
variances, and covariance. The patch term is the literal double sum over
samples and patches of the per-patch L2 norm, which for scalar patch values
is the absolute difference.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ContractViolation

# standard SSIM constants for a unit dynamic range
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.7
    beta: float = 0.7

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ContractViolation("loss weights must be non-negative")


def _ssim_terms(a, b, c1, c2):
    mu_a, mu_b = a.mean(), b.mean()
    var_a = np.mean(a * a) - mu_a**2
    var_b = np.mean(b * b) - mu_b**2
    cov = np.mean(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return mu_a, mu_b, var_a, var_b, cov, num, den


def ssim(a, b, c1=SSIM_C1, c2=SSIM_C2):
    """Structural similarity of two signals via their global statistics."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractViolation(f"ssim inputs differ in shape: {a.shape} vs {b.shape}")
    if c1 <= 0 or c2 <= 0:
        raise ContractViolation("ssim constants must be strictly positive")
    *_, num, den = _ssim_terms(a, b, c1, c2)
    return num / den


def ssim_loss(a, b, c1=SSIM_C1, c2=SSIM_C2):
    """1 - ssim; zero iff the signals are structurally identical."""
    return 1.0 - ssim(a, b, c1, c2)


def ssim_loss_and_grad(a, b, c1=SSIM_C1, c2=SSIM_C2):
    """(loss, dloss/da) for signal ``a`` against fixed reference ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractViolation(f"ssim inputs differ in shape: {a.shape} vs {b.shape}")
    mu_a, mu_b, _, _, _, num, den = _ssim_terms(a, b, c1, c2)
    s = num / den
    big_a = 2.0 * mu_a * mu_b + c1
    big_b = num / big_a  # 2*cov + c2
    big_c = mu_a**2 + mu_b**2 + c1
    big_d = den / big_c  # var_a + var_b + c2
    n = a.size
    ds_da = (2.0 / n) * (
        (mu_b * big_b + big_a * (b - mu_b)) / (big_c * big_d)
        - s * (mu_a / big_c + (a - mu_a) / big_d)
    )
    return 1.0 - s, -ds_da


def batch_ssim_loss(pred, target, c1=SSIM_C1, c2=SSIM_C2):
    """Per-sample ssim loss averaged over the batch; returns (loss, dpred)."""
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if pred.shape != target.shape:
        raise ContractViolation(f"batch shapes differ: {pred.shape} vs {target.shape}")
    m = pred.shape[0]
    total = 0.0
    grad = np.empty_like(pred)
    for i in range(m):
        loss_i, grad_i = ssim_loss_and_grad(pred[i], target[i], c1, c2)
        total += loss_i
        grad[i] = grad_i
    return total / m, grad / m


def patch_mse(pred, target):
    """Sum over samples and patches of |pred - target| (literal objective)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ContractViolation(f"patch loss shapes differ: {pred.shape} vs {target.shape}")
    return float(np.abs(pred - target).sum())


def patch_mse_and_grad(pred, target):
    """(loss, dloss/dpred); subgradient 0 where pred == target."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ContractViolation(f"patch loss shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.abs(diff).sum()), np.sign(diff)


def total_loss(l_c, l_ssim, l_patch, weights=LossWeights()):
    """l_c + alpha * l_ssim + beta * l_patch."""
    terms = np.array([l_c, l_ssim, l_patch], dtype=np.float64)
    if not np.all(np.isfinite(terms)):
        raise ContractViolation(f"non-finite loss terms: {terms}")
    return float(l_c + weights.alpha * l_ssim + weights.beta * l_patch)
