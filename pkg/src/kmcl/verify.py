"""Seeded verification suites behind the ``sim-verify`` and ``grad-check`` commands."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .encoder import EncoderConfig
from .grad import FiniteDiffResult, ModelConfig, finite_diff_check, init_params
from .losses import LossConfig
from .similarity import (
    KernelSpec,
    bhattacharyya_diagonal,
    bhattacharyya_full,
    bhattacharyya_isotropic,
    gaussian_similarity,
    mahalanobis_similarity,
    quadrature_oracle,
)

SIM_TOLERANCE = 1e-6
GRAD_TOLERANCE = 1e-4
MEAN_RANGE = (-3.0, 3.0)
VAR_RANGE = (0.25, 4.0)


@dataclass
class OracleRow:
    kind: str
    dim: int
    params: str
    closed_form: float
    oracle: float

    @property
    def rel_err(self) -> float:
        return abs(self.closed_form - self.oracle) / abs(self.oracle)


def random_spd(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Covariance with eigenvalues in ``VAR_RANGE`` and a random orientation."""
    eig = rng.uniform(*VAR_RANGE, size=dim)
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    q = q * np.sign(np.diag(r))
    return (q * eig) @ q.T


def _describe(p: KernelSpec, q: KernelSpec) -> str:
    def arr(a) -> str:
        return "[" + " ".join(f"{v:.6g}" for v in np.ravel(a)) + "]"
    return f"mu_p={arr(p.mean)} cov_p={arr(p.cov)} mu_q={arr(q.mean)} cov_q={arr(q.cov)}"


def _wrong_exponent_full(p: KernelSpec, q: KernelSpec) -> float:
    # negative control: determinant exponents 1/2 instead of 1/4
    ld_p = np.linalg.slogdet(p.cov_matrix())[1]
    ld_q = np.linalg.slogdet(q.cov_matrix())[1]
    return bhattacharyya_full(p, q) * math.exp(0.25 * (ld_p + ld_q))


def kernel_pairs(rng: np.random.Generator, dim: int) -> list[tuple[str, KernelSpec, KernelSpec]]:
    """One random pair per closed form, each satisfying that form's validity constraints."""
    lo, hi = MEAN_RANGE
    mean = lambda: rng.uniform(lo, hi, size=dim)  # noqa: E731
    var = lambda size=None: rng.uniform(*VAR_RANGE, size=size)  # noqa: E731
    shared_full = random_spd(rng, dim)
    shared_iso = var()
    return [
        ("bhattacharyya_full", KernelSpec.full(mean(), random_spd(rng, dim)),
         KernelSpec.full(mean(), random_spd(rng, dim))),
        ("bhattacharyya_diagonal", KernelSpec.diagonal(mean(), var(dim)), KernelSpec.diagonal(mean(), var(dim))),
        ("bhattacharyya_isotropic", KernelSpec.isotropic(rng.uniform(lo, hi), var(), dim),
         KernelSpec.isotropic(rng.uniform(lo, hi), var(), dim)),
        ("mahalanobis", KernelSpec.full(mean(), shared_full), KernelSpec.full(mean(), shared_full)),
        ("gaussian", KernelSpec.isotropic(mean(), shared_iso, dim), KernelSpec.isotropic(mean(), shared_iso, dim)),
    ]


_CLOSED = {
    "bhattacharyya_full": bhattacharyya_full,
    "bhattacharyya_diagonal": bhattacharyya_diagonal,
    "bhattacharyya_isotropic": bhattacharyya_isotropic,
    "mahalanobis": mahalanobis_similarity,
    "gaussian": gaussian_similarity,
}


def oracle_suite(draws_1d: int = 50, draws_2d: int = 20, seed: int = 0, points: int | None = None,
                 inject_wrong_exponent: bool = False) -> list[OracleRow]:
    """Closed form vs quadrature for every similarity kind over seeded random draws.

    Each draw contributes one row per kind; ``points=None`` uses the oracle's
    per-dimension default grid.
    """
    rng = np.random.default_rng([seed, 1])
    rows = []
    for dim, draws in ((1, draws_1d), (2, draws_2d)):
        for _ in range(draws):
            for kind, p, q in kernel_pairs(rng, dim):
                closed = _CLOSED[kind](p, q)
                if inject_wrong_exponent and kind == "bhattacharyya_full":
                    closed = _wrong_exponent_full(p, q)
                rows.append(OracleRow(kind, dim, _describe(p, q), closed, quadrature_oracle(p, q, points=points)))
    return rows


@dataclass
class GradProblem:
    model: ModelConfig
    x: np.ndarray
    y: np.ndarray
    loss: LossConfig


def grad_problem(seed: int = 0, n_classes: int = 3, batch: int = 3, hidden: int = 4,
                 loss: LossConfig | None = None, input_dim: int = 5) -> GradProblem:
    """Small random model and batch whose labels give every anchor a positive partner."""
    loss = loss or LossConfig()
    rng = np.random.default_rng([seed, 2])
    model = ModelConfig(n_classes, EncoderConfig((input_dim, hidden, hidden)), loss.similarity.anisotropic)
    x = rng.normal(size=(batch, input_dim))
    y = (rng.random((batch, n_classes)) < 0.5).astype(np.int8)
    y[:, 0] = 1  # shared class: KMCL has positives for every anchor
    return GradProblem(model, x, y, loss)


def run_grad_check(problem: GradProblem, seed: int = 0, h: float = 1e-5, corrupt: bool = False,
                   term: str = "total") -> FiniteDiffResult:
    """Finite-difference check at a generic point (weights jittered off their structured init).

    ``corrupt`` perturbs one analytic coordinate as a negative control.
    """
    from .grad import backward

    rng = np.random.default_rng([seed, 3])
    params = init_params(problem.model, rng)
    params.data += rng.normal(0.0, 0.1, size=params.size)
    _, analytic = backward(params, problem.model, problem.x, problem.y, problem.loss, term)
    if corrupt:
        i = int(np.argmax(np.abs(analytic)))
        analytic[i] *= 1.01
    return finite_diff_check(params, problem.model, problem.x, problem.y, problem.loss, h=h,
                             analytic=analytic, term=term)
