"""Vectorized numpy implementation of the pairwise contrastive kernel.

Used when the compiled extension is unavailable or ``KMCL_PURE_PYTHON`` is set.
Both implementations share the contract of :func:`contrastive_terms`.
"""
from __future__ import annotations

import math

import numpy as np

_LOG2 = math.log(2.0)


def contrastive_terms(mu, var, labels, tau, dim_weight, use_scale):
    """Jaccard-weighted kernel contrastive loss and its gradient.

    Parameters
    ----------
    mu, var : ndarray, shape (N, K, D)
        Per-sample, per-class kernel means and variances. Isotropic kernels
        use ``D = 1`` with ``dim_weight`` set to the feature dimension.
    labels : ndarray, shape (N, K)
        Multi-hot labels.
    tau : float
        Temperature.
    dim_weight : float
        Multiplier on the per-dimension log-similarity.
    use_scale : bool
        Include the generalized-variance scale factor (Bhattacharyya). When
        false only the Mahalanobis exponential term remains.

    Returns
    -------
    loss : float
    grad_mu, grad_var : ndarray, shape (N, K, D)
    """
    mu = np.asarray(mu, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    N = mu.shape[0]

    delta = mu[:, None] - mu[None, :]            # (N, N, K, D)
    s = var[:, None] + var[None, :]
    log_rho = -0.25 * dim_weight * np.sum(delta * delta / s, axis=-1)
    if use_scale:
        log_var = np.log(var)
        scale = np.log(s) - _LOG2 - 0.5 * (log_var[:, None] + log_var[None, :])
        log_rho = log_rho - 0.5 * dim_weight * np.sum(scale, axis=-1)
    rho = np.exp(log_rho)                          # (N, N, K)
    z = rho / tau

    eye = np.eye(N, dtype=bool)
    z_masked = np.where(eye[:, :, None], -np.inf, z)
    z_max = np.max(z_masked, axis=1, keepdims=True)
    e = np.exp(z_masked - z_max)
    denom = np.sum(e, axis=1, keepdims=True)
    lse = (np.log(denom) + z_max)[:, 0]            # (N, K)
    soft = e / denom                               # (N, N, K), zero on the diagonal

    shared = y[:, None, :] * y[None, :, :]         # (N, N, K)
    inter = shared.sum(axis=-1)
    sizes = y.sum(axis=-1)
    positive = (inter > 0) & ~eye
    union = sizes[:, None] + sizes[None, :] - inter
    jac = np.where(positive, inter / np.where(union > 0, union, 1.0), 0.0)
    count = positive.sum(axis=1)
    coef = np.where(count > 0, 1.0 / np.maximum(count, 1), 0.0)
    weight = (jac * coef[:, None])[:, :, None] * shared * positive[:, :, None]

    loss = -np.sum(weight * (z - lse[:, None, :])) / N

    class_mass = weight.sum(axis=1)                # (N, K)
    grad_z = -(weight - class_mass[:, None, :] * soft) / N
    g = grad_z * rho / tau                         # dL/dlog_rho, (N, N, K)
    g = (g + g.transpose(1, 0, 2))[..., None]

    grad_mu = np.sum(g * (-0.5 * dim_weight * delta / s), axis=1)
    dvar = 0.25 * dim_weight * delta * delta / (s * s)
    if use_scale:
        dvar = dvar - 0.5 * dim_weight * (1.0 / s - 0.5 / var[:, None])
    grad_var = np.sum(g * dvar, axis=1)
    return float(loss), grad_mu, grad_var
