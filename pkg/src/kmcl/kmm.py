"""Kernel Mixture Module: feature vector -> per-class (pi, mu, var)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .similarity import KernelSpec

ELU_ALPHA = 1.0
VAR_EPS = 1e-7
# ELU's infimum is -alpha, so variances stay >= VAR_OFFSET - alpha + eps
VAR_OFFSET = 2.0


@dataclass
class KmmWeights:
    """Fully connected head weights.

    Isotropic: ``W_mu``/``W_var`` are ``(K, M)`` and ``b_mu``/``b_var`` are ``(K,)``.
    Anisotropic: ``W_mu``/``W_var`` are ``(K, M, M)`` blocks and the biases ``(K, M)``.
    ``W_pi``/``b_pi`` are always ``(K, M)``/``(K,)``.
    """

    W_pi: np.ndarray
    b_pi: np.ndarray
    W_mu: np.ndarray
    b_mu: np.ndarray
    W_var: np.ndarray
    b_var: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.W_pi.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.W_pi.shape[1]

    @property
    def anisotropic(self) -> bool:
        return self.W_mu.ndim == 3


def kmm_shapes(n_classes: int, feature_dim: int, anisotropic: bool = False) -> dict[str, tuple[int, ...]]:
    K, M = n_classes, feature_dim
    head = (K, M, M) if anisotropic else (K, M)
    bias = (K, M) if anisotropic else (K,)
    return {
        "W_pi": (K, M),
        "b_pi": (K,),
        "W_mu": head,
        "b_mu": bias,
        "W_var": head,
        "b_var": bias,
    }


def init_kmm_weights(
    n_classes: int, feature_dim: int, rng: np.random.Generator, anisotropic: bool = False
) -> KmmWeights:
    """pi/mu weights ~ U(0, 0.1), variance weights constant 1, biases 0."""
    shapes = kmm_shapes(n_classes, feature_dim, anisotropic)
    return KmmWeights(
        W_pi=rng.uniform(0.0, 0.1, size=shapes["W_pi"]),
        b_pi=np.zeros(shapes["b_pi"]),
        W_mu=rng.uniform(0.0, 0.1, size=shapes["W_mu"]),
        b_mu=np.zeros(shapes["b_mu"]),
        W_var=np.ones(shapes["W_var"]),
        b_var=np.zeros(shapes["b_var"]),
    )


def kmm_forward(f: np.ndarray, w: KmmWeights) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Raw activations ``a = W f + b`` for the pi, mu and variance heads.

    ``f`` may be a single feature vector ``(M,)`` or a batch ``(N, M)``.
    """
    f = np.asarray(f, dtype=np.float64)
    if f.shape[-1] != w.feature_dim or f.ndim not in (1, 2):
        raise ValueError(f"feature shape {f.shape} does not match KMM input dim {w.feature_dim}")
    a_pi = f @ w.W_pi.T + w.b_pi
    if w.anisotropic:
        a_mu = np.einsum("kjl,...l->...kj", w.W_mu, f) + w.b_mu
        a_var = np.einsum("kjl,...l->...kj", w.W_var, f) + w.b_var
    else:
        a_mu = f @ w.W_mu.T + w.b_mu
        a_var = f @ w.W_var.T + w.b_var
    return a_pi, a_mu, a_var


def sigmoid(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def elu(a: np.ndarray, alpha: float = ELU_ALPHA) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return np.where(a > 0, a, alpha * np.expm1(np.minimum(a, 0.0)))


def elu_grad(a: np.ndarray, alpha: float = ELU_ALPHA) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return np.where(a > 0, 1.0, alpha * np.exp(np.minimum(a, 0.0)))


@dataclass
class KernelParams:
    """Mixture parameters for one sample (leading axis absent) or a batch.

    ``pi`` has shape ``(..., K)``; ``mu``/``var`` are ``(..., K)`` for the
    isotropic configuration or ``(..., K, M)`` for the anisotropic one.
    """

    pi: np.ndarray
    mu: np.ndarray
    var: np.ndarray

    @property
    def anisotropic(self) -> bool:
        return self.mu.ndim == self.pi.ndim + 1

    @property
    def n_classes(self) -> int:
        return self.pi.shape[-1]

    def sample(self, n: int) -> "KernelParams":
        return KernelParams(self.pi[n], self.mu[n], self.var[n])


def kmm_activate(
    a_pi: np.ndarray, a_mu: np.ndarray, a_var: np.ndarray, eps: float = VAR_EPS, alpha: float = ELU_ALPHA
) -> KernelParams:
    """sigmoid for pi, identity for mu, ``ELU(a) + 2 + eps`` for the variance."""
    return KernelParams(
        pi=sigmoid(a_pi),
        mu=np.array(a_mu, dtype=np.float64),
        var=elu(a_var, alpha) + VAR_OFFSET + eps,
    )


def log_kernel_values(f: np.ndarray, params: KernelParams) -> np.ndarray:
    """``log g_k(f)`` for every class, shape ``(..., K)``."""
    f = np.asarray(f, dtype=np.float64)
    if params.anisotropic:
        diff = f[..., None, :] - params.mu
        return -0.5 * np.sum(diff * diff / params.var, axis=-1)
    diff = f[..., None, :] - params.mu[..., :, None]
    return -0.5 * np.sum(diff * diff, axis=-1) / params.var


def mixture_density(f: np.ndarray, params: KernelParams, subset: Iterable[int]) -> float:
    """``sum_{k in subset} pi_k g_k(f)`` for a single sample. Empty subset gives 0."""
    idx = np.fromiter(subset, dtype=np.intp)
    if idx.size == 0:
        return 0.0
    if params.pi.ndim != 1:
        raise ValueError("mixture_density expects parameters of a single sample")
    g = np.exp(log_kernel_values(f, params))
    return float(np.sum(params.pi[idx] * g[idx]))


def params_to_kernelspec(params: KernelParams, k: int, dim: int | None = None) -> KernelSpec:
    """Class ``k`` component of a single sample as a standalone :class:`KernelSpec`."""
    if params.pi.ndim != 1:
        raise ValueError("params_to_kernelspec expects parameters of a single sample")
    K = params.n_classes
    if not 0 <= k < K:
        raise IndexError(f"class index {k} out of range for K={K}")
    if params.anisotropic:
        return KernelSpec.diagonal(params.mu[k], params.var[k])
    if dim is None:
        raise ValueError("dim (feature dimension M) is required for isotropic parameters")
    return KernelSpec.isotropic(float(params.mu[k]), float(params.var[k]), dim)
