"""Reconstruction, asymmetric classification and kernel contrastive losses.

Every loss has a value-only entry point and a ``*_with_grad`` companion that
also returns the gradient with respect to the KMM outputs (``pi``, ``mu``,
``var``) and, for the reconstruction loss, the features ``f``. The chain
through the KMM and encoder lives in :mod:`kmcl.grad`.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .kmm import KernelParams, log_kernel_values
from .similarity import SimilarityKind

log = logging.getLogger(__name__)

PI_MIN = 1e-7


@dataclass(frozen=True)
class LossConfig:
    """Weights and internals of the composed objective.

    Defaults are the published settings: ASL weight 0.1, contrastive weight
    0.3, gamma+ 0, gamma- 4, margin 0.05, temperature 0.2.
    """

    lambda_asl: float = 0.1
    lambda_kmcl: float = 0.3
    gamma_plus: float = 0.0
    gamma_minus: float = 4.0
    margin: float = 0.05
    tau: float = 0.2
    pi_min: float = PI_MIN
    similarity: SimilarityKind = SimilarityKind.BHATTACHARYYA_ISOTROPIC

    def __post_init__(self) -> None:
        object.__setattr__(self, "similarity", SimilarityKind.parse(self.similarity))
        checks = [
            ("lambda_asl", self.lambda_asl >= 0, ">= 0"),
            ("lambda_kmcl", self.lambda_kmcl >= 0, ">= 0"),
            ("gamma_plus", self.gamma_plus >= 0, ">= 0"),
            ("gamma_minus", self.gamma_minus >= 0, ">= 0"),
            ("margin", 0 <= self.margin < 1, "in [0, 1)"),
            ("tau", self.tau > 0, "> 0"),
            ("pi_min", 0 < self.pi_min < 0.5, "in (0, 0.5)"),
        ]
        for name, ok, rule in checks:
            if not ok:
                raise ValueError(f"LossConfig.{name} must be {rule}, got {getattr(self, name)}")
        if self.similarity is SimilarityKind.BHATTACHARYYA_FULL:
            raise ValueError("LossConfig.similarity: full-covariance kernels are not produced by the KMM")


def as_labels(y, n_classes: int | None = None) -> np.ndarray:
    """Validate a multi-hot label vector or matrix and return it as float64."""
    arr = np.asarray(y)
    if n_classes is not None and arr.shape[-1] != n_classes:
        raise ValueError(f"label vector has {arr.shape[-1]} entries, expected {n_classes}")
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError("labels must be binary (0/1)")
    return arr.astype(np.float64)


@dataclass
class BatchView:
    """Features ``(N, M)``, batched kernel parameters and labels ``(N, K)``."""

    features: np.ndarray
    params: KernelParams
    labels: np.ndarray

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = as_labels(self.labels)
        N, K = self.labels.shape
        if self.features.shape[0] != N or self.params.pi.shape != (N, K):
            raise ValueError(
                f"inconsistent batch: features {self.features.shape}, pi {self.params.pi.shape}, "
                f"labels {self.labels.shape}"
            )
        M = self.features.shape[1]
        expect = (N, K, M) if self.params.anisotropic else (N, K)
        if self.params.mu.shape != expect or self.params.var.shape != expect:
            raise ValueError(f"mu/var shapes {self.params.mu.shape}/{self.params.var.shape}, expected {expect}")

    @property
    def size(self) -> int:
        return self.labels.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclass
class ParamGrads:
    """Gradient of a loss with respect to the KMM outputs and the features."""

    pi: np.ndarray
    mu: np.ndarray
    var: np.ndarray
    features: np.ndarray

    @classmethod
    def zeros_like(cls, batch: BatchView) -> "ParamGrads":
        p = batch.params
        return cls(np.zeros_like(p.pi), np.zeros_like(p.mu), np.zeros_like(p.var), np.zeros_like(batch.features))

    def add_scaled(self, other: "ParamGrads", scale: float) -> None:
        self.pi += scale * other.pi
        self.mu += scale * other.mu
        self.var += scale * other.var
        self.features += scale * other.features


@dataclass
class LossBreakdown:
    total: float
    rec: float
    asl: float
    kmcl: float
    rec_samples: int = 0
    kmcl_anchors: int = 0
    flags: list[str] = field(default_factory=list)


# -- reconstruction ---------------------------------------------------------

def _logsumexp(x: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise masked log-sum-exp and the matching softmax."""
    xm = np.where(mask, x, -np.inf)
    top = np.max(xm, axis=-1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(mask, np.exp(xm - top), 0.0)
    tot = e.sum(axis=-1, keepdims=True)
    safe = np.where(tot > 0, tot, 1.0)
    return (np.log(safe) + top)[..., 0], e / safe


def reconstruction_loss_with_grad(batch: BatchView, pi_min: float = PI_MIN) -> tuple[float, ParamGrads, int]:
    p = batch.params
    y = batch.labels.astype(bool)
    valid = y.any(axis=1)
    grads = ParamGrads.zeros_like(batch)
    n_valid = int(valid.sum())
    if n_valid == 0:
        return 0.0, grads, 0

    pi_c = np.maximum(p.pi, pi_min)
    score = np.log(pi_c) + log_kernel_values(batch.features, p)
    everything = np.ones_like(y)
    lse_all, soft_all = _logsumexp(score, everything)
    lse_pos, soft_pos = _logsumexp(score, y)
    per_sample = np.where(valid, lse_all - lse_pos, 0.0)
    value = float(per_sample.sum() / n_valid)

    d_score = np.where(valid[:, None], soft_all - soft_pos, 0.0) / n_valid
    grads.pi = np.where(p.pi > pi_min, d_score / pi_c, 0.0)
    f = batch.features
    if p.anisotropic:
        diff = f[:, None, :] - p.mu                         # (N, K, M)
        grads.features = -np.einsum("nk,nkm->nm", d_score, diff / p.var)
        grads.mu = d_score[..., None] * diff / p.var
        grads.var = d_score[..., None] * 0.5 * diff * diff / (p.var * p.var)
    else:
        diff = f[:, None, :] - p.mu[:, :, None]             # (N, K, M)
        grads.features = -np.einsum("nk,nkm->nm", d_score / p.var, diff)
        grads.mu = d_score * diff.sum(axis=-1) / p.var
        grads.var = d_score * 0.5 * np.sum(diff * diff, axis=-1) / (p.var * p.var)
    return value, grads, n_valid


def reconstruction_loss(batch: BatchView, pi_min: float = PI_MIN) -> float:
    """Mean of ``-log(G_S / G_Y)`` over samples with at least one positive label.

    Computed in log space: ``log G = logsumexp(log pi_k + log g_k)``. Samples
    without positives are skipped; if none remain the loss is 0.
    """
    value, _, n_valid = reconstruction_loss_with_grad(batch, pi_min)
    if n_valid == 0:
        log.debug("reconstruction loss: no sample in the batch has a positive label")
    return value


# -- asymmetric classification ----------------------------------------------

def asl_loss_with_grad(batch: BatchView, cfg: LossConfig) -> tuple[float, ParamGrads]:
    p = batch.params
    y = batch.labels
    N = batch.size
    lo, hi = cfg.pi_min, 1.0 - cfg.pi_min
    pi = np.clip(p.pi, lo, hi)
    inside = (p.pi > lo) & (p.pi < hi)

    gp, gm = cfg.gamma_plus, cfg.gamma_minus
    one_minus = 1.0 - pi
    log_pi = np.log(pi)
    loss_pos = -(one_minus ** gp) * log_pi
    if gp == 0:
        d_pos = -1.0 / pi
    else:
        d_pos = gp * one_minus ** (gp - 1.0) * log_pi - one_minus ** gp / pi

    shifted = np.maximum(pi - cfg.margin, 0.0)
    active = pi > cfg.margin
    log_rest = np.log1p(-shifted)
    loss_neg = -(shifted ** gm) * log_rest
    if gm == 0:
        d_shift = 1.0 / (1.0 - shifted)
    else:
        safe = np.where(active, shifted, 1.0)
        d_shift = np.where(active, -gm * safe ** (gm - 1.0) * log_rest + safe ** gm / (1.0 - shifted), 0.0)
    d_neg = np.where(active, d_shift, 0.0)

    value = float(np.sum(y * loss_pos + (1.0 - y) * loss_neg) / N)
    grads = ParamGrads.zeros_like(batch)
    grads.pi = np.where(inside, (y * d_pos + (1.0 - y) * d_neg) / N, 0.0)
    return value, grads


def asl_loss(batch: BatchView, cfg: LossConfig) -> float:
    """Asymmetric loss, summed over classes and averaged over samples.

    ``pi`` is clamped to ``[pi_min, 1 - pi_min]``. Negatives use the
    margin-shifted probability ``max(pi - m, 0)``.
    """
    return asl_loss_with_grad(batch, cfg)[0]


# -- contrastive --------------------------------------------------------------

def jaccard(y_a, y_b) -> float:
    """Intersection over union of two multi-hot vectors; 0 when both are empty."""
    a = as_labels(y_a)
    b = as_labels(y_b, a.shape[-1])
    inter = float(a @ b)
    union = float(a @ a + b @ b) - inter
    return inter / union if union > 0 else 0.0


def positive_set(labels, n: int) -> tuple[list[int], dict[int, list[int]]]:
    """Batch members sharing a label with anchor ``n`` and their shared classes."""
    y = as_labels(labels)
    N = y.shape[0]
    if not 0 <= n < N:
        raise IndexError(f"anchor {n} out of range for batch of {N}")
    members = [m for m in range(N) if m != n and float(y[n] @ y[m]) != 0.0]
    shared = {m: [int(k) for k in np.flatnonzero(y[n] * y[m])] for m in members}
    return members, shared


def _contrastive_inputs(batch: BatchView, kind: SimilarityKind) -> tuple[np.ndarray, np.ndarray, float, bool]:
    p = batch.params
    use_scale = kind in (SimilarityKind.BHATTACHARYYA_ISOTROPIC, SimilarityKind.BHATTACHARYYA_DIAGONAL)
    if p.anisotropic:
        if kind in (SimilarityKind.BHATTACHARYYA_ISOTROPIC, SimilarityKind.GAUSSIAN):
            raise ValueError(f"{kind.value} similarity needs isotropic kernel parameters")
        return p.mu, p.var, 1.0, use_scale
    # isotropic: one broadcast dimension weighted by M
    return p.mu[..., None], p.var[..., None], float(batch.feature_dim), use_scale


def kmcl_loss_with_grad(batch: BatchView, cfg: LossConfig) -> tuple[float, ParamGrads]:
    if batch.size < 2:
        raise ValueError(f"contrastive loss needs at least 2 samples, got {batch.size}")
    mu, var, weight, use_scale = _contrastive_inputs(batch, cfg.similarity)
    value, g_mu, g_var = kernels.contrastive_terms(
        np.ascontiguousarray(mu), np.ascontiguousarray(var), batch.labels, cfg.tau, weight, use_scale
    )
    grads = ParamGrads.zeros_like(batch)
    if batch.params.anisotropic:
        grads.mu, grads.var = g_mu, g_var
    else:
        grads.mu, grads.var = g_mu[..., 0], g_var[..., 0]
    return value, grads


def kmcl_loss(batch: BatchView, cfg: LossConfig) -> float:
    """Jaccard-weighted kernel contrastive loss over the batch.

    For each anchor, every batch member sharing a label is a positive; each
    shared class contributes ``log softmax`` of the kernel similarity over all
    other batch members. Anchors without positives contribute 0.
    """
    return kmcl_loss_with_grad(batch, cfg)[0]


# -- composition ---------------------------------------------------------------

TERMS = ("total", "rec", "asl", "kmcl")


def total_loss_with_grad(batch: BatchView, cfg: LossConfig, term: str = "total") -> tuple[LossBreakdown, ParamGrads]:
    """Composed loss and the gradient of ``term`` (one component or the total)."""
    if term not in TERMS:
        raise ValueError(f"term must be one of {TERMS}, got {term!r}")
    rec, g_rec, n_rec = reconstruction_loss_with_grad(batch, cfg.pi_min)
    asl, g_asl = asl_loss_with_grad(batch, cfg)
    kmcl, g_kmcl = kmcl_loss_with_grad(batch, cfg)
    y = batch.labels
    anchors = int(np.sum(((y @ y.T) > 0).sum(axis=1) - (y.sum(axis=1) > 0) > 0))
    flags = []
    if n_rec == 0:
        flags.append("rec_empty")
    if anchors == 0:
        flags.append("kmcl_empty")
    out = LossBreakdown(
        total=rec + cfg.lambda_asl * asl + cfg.lambda_kmcl * kmcl,
        rec=rec, asl=asl, kmcl=kmcl, rec_samples=n_rec, kmcl_anchors=anchors, flags=flags,
    )
    grads = ParamGrads.zeros_like(batch)
    weights = {
        "total": (1.0, cfg.lambda_asl, cfg.lambda_kmcl),
        "rec": (1.0, 0.0, 0.0),
        "asl": (0.0, 1.0, 0.0),
        "kmcl": (0.0, 0.0, 1.0),
    }[term]
    for scale, g in zip(weights, (g_rec, g_asl, g_kmcl)):
        if scale:
            grads.add_scaled(g, scale)
    return out, grads


def total_loss(batch: BatchView, cfg: LossConfig) -> LossBreakdown:
    """``L_rec + lambda_asl * L_asl + lambda_kmcl * L_kmcl`` with the per-term values."""
    return total_loss_with_grad(batch, cfg)[0]
