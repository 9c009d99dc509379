"""Acceptance gate: each test checks one criterion at its stated tolerance and
records a PASS/FAIL line (collected in the terminal summary)."""
import time

import numpy as np
import pytest
from oracles import auc_brute, ap_brute, bce, kmcl_brute

from kmcl.cli import main
from kmcl.data import SynthConfig, generate
from kmcl.kmm import KernelParams
from kmcl.losses import BatchView, LossConfig, asl_loss, kmcl_loss, reconstruction_loss
from kmcl.metrics import auc, average_precision
from kmcl.similarity import (
    KernelSpec,
    SimilarityKind,
    bhattacharyya_diagonal,
    bhattacharyya_full,
    bhattacharyya_isotropic,
    gaussian_similarity,
    mahalanobis_similarity,
)
from kmcl.trainer import TrainConfig, train
from kmcl.verify import GRAD_TOLERANCE, SIM_TOLERANCE, grad_problem, oracle_suite, random_spd, run_grad_check

CONTRASTIVE_KINDS = [k.value for k in SimilarityKind if k is not SimilarityKind.BHATTACHARYYA_FULL]


def test_c01_similarity_oracle_suite(report):
    t0 = time.perf_counter()
    rows = oracle_suite(draws_1d=50, draws_2d=20, seed=0)
    elapsed = time.perf_counter() - t0
    worst = max(r.rel_err for r in rows)
    n1 = sum(r.dim == 1 for r in rows) // 5
    n2 = sum(r.dim == 2 for r in rows) // 5
    ok = worst <= SIM_TOLERANCE and n1 >= 50 and n2 >= 20 and elapsed < 30
    report(1, ok, f"{len(rows)} closed-form/quadrature pairs ({n1} 1D, {n2} 2D draws per kind), "
                  f"max rel err {worst:.2e}, {elapsed:.1f} s")
    assert ok


def test_c02_reduction_identities(report):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst = 0.0

    def rel(a, b):
        return abs(a - b) / max(abs(a), abs(b), 1e-300)

    for _ in range(1000):
        dim = int(rng.integers(1, 6))
        mp, mq = rng.uniform(-3, 3, dim), rng.uniform(-3, 3, dim)
        vp, vq = rng.uniform(0.25, 4, dim), rng.uniform(0.25, 4, dim)
        # full -> diagonal
        p, q = KernelSpec.diagonal(mp, vp), KernelSpec.diagonal(mq, vq)
        worst = max(worst, rel(bhattacharyya_full(p.as_full(), q.as_full()), bhattacharyya_diagonal(p, q)))
        # diagonal -> isotropic
        sp, sq, a, b = vp[0], vq[0], float(mp[0]), float(mq[0])
        iso = bhattacharyya_isotropic(KernelSpec.isotropic(a, sp, dim), KernelSpec.isotropic(b, sq, dim))
        diag = bhattacharyya_diagonal(KernelSpec.diagonal([a] * dim, [sp] * dim),
                                      KernelSpec.diagonal([b] * dim, [sq] * dim))
        worst = max(worst, rel(iso, diag))
        # homoscedastic -> Mahalanobis
        cov = random_spd(rng, dim)
        fp, fq = KernelSpec.full(mp, cov), KernelSpec.full(mq, cov)
        worst = max(worst, rel(bhattacharyya_full(fp, fq), mahalanobis_similarity(fp, fq)))
        # Mahalanobis -> Gaussian
        gp, gq = KernelSpec.isotropic(mp, sp, dim), KernelSpec.isotropic(mq, sp, dim)
        worst = max(worst, rel(mahalanobis_similarity(gp.as_full(), gq.as_full()), gaussian_similarity(gp, gq)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed < 5
    report(2, ok, f"1000 draws over both reduction chains, max rel diff {worst:.2e}, {elapsed:.2f} s")
    assert ok


def random_batch(rng, N, K, M, anisotropic, positive_rate=0.6):
    shape = (N, K, M) if anisotropic else (N, K)
    params = KernelParams(rng.uniform(0.05, 0.95, (N, K)), rng.normal(0, 1, shape), rng.uniform(1.0, 3.0, shape))
    labels = (rng.random((N, K)) < positive_rate).astype(np.int8)
    return BatchView(rng.normal(size=(N, M)), params, labels)


def test_c03_contrastive_brute_force(report):
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(100):
        kind = CONTRASTIVE_KINDS[i % len(CONTRASTIVE_KINDS)]
        aniso = SimilarityKind.parse(kind).anisotropic
        N, K, M = int(rng.integers(2, 7)), int(rng.integers(1, 5)), int(rng.integers(1, 9))
        b = random_batch(rng, N, K, M, aniso)
        cfg = LossConfig(similarity=kind)
        expect = kmcl_brute(b.labels, b.params.mu, b.params.var, M, kind, cfg.tau)
        worst = max(worst, abs(kmcl_loss(b, cfg) - expect) / max(1.0, abs(expect)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed < 10
    report(3, ok, f"100 batches (N<=6, K<=4, M<=8, all similarity kinds), max diff {worst:.2e}, {elapsed:.2f} s")
    assert ok


def test_c04_asl_collapses_to_bce(report):
    rng = np.random.default_rng(4)
    cfg = LossConfig(gamma_plus=0, gamma_minus=0, margin=0)
    worst = 0.0
    for _ in range(1000):
        b = random_batch(rng, int(rng.integers(1, 9)), int(rng.integers(1, 7)), 2, False, 0.5)
        expect = bce(b.params.pi, b.labels)
        worst = max(worst, abs(asl_loss(b, cfg) - expect) / max(1.0, expect))
    ok = worst <= 1e-12
    report(4, ok, f"1000 random batches, max diff vs hand-coded BCE {worst:.2e}")
    assert ok


def test_c05_gradient_check(report):
    t0 = time.perf_counter()
    res = run_grad_check(grad_problem(seed=0, n_classes=3, batch=3, hidden=4), seed=0, h=1e-5)
    elapsed = time.perf_counter() - t0
    ok = res.max_rel_err <= GRAD_TOLERANCE and elapsed < 60
    report(5, ok, f"{len(res.names)} coordinates, max rel err {res.max_rel_err:.2e} at {res.worst_name}, "
                  f"{elapsed:.2f} s")
    assert ok


def test_c06_reconstruction_loss_nonnegative(report):
    rng = np.random.default_rng(6)
    violations, lowest = 0, np.inf
    for _ in range(10_000):
        N, K, M = int(rng.integers(1, 6)), int(rng.integers(1, 6)), int(rng.integers(1, 7))
        aniso = bool(rng.integers(2))
        shape = (N, K, M) if aniso else (N, K)
        params = KernelParams(rng.uniform(1e-6, 1 - 1e-6, (N, K)), rng.normal(0, 3, shape),
                              np.exp(rng.uniform(-4, 4, shape)))
        labels = (rng.random((N, K)) < rng.uniform(0.1, 0.9)).astype(np.int8)
        value = reconstruction_loss(BatchView(rng.normal(0, 5, (N, M)), params, labels))
        lowest = min(lowest, value)
        violations += value < 0
    ok = violations == 0
    report(6, ok, f"10000 draws, {violations} negative values, minimum {lowest:.3g}")
    assert ok


def test_c07_default_task_converges(report):
    t0 = time.perf_counter()
    res = train(generate(SynthConfig()), TrainConfig())
    elapsed = time.perf_counter() - t0
    curve = [r["test_mAP"] for r in res.curves]
    best_epoch = next((i + 1 for i, v in enumerate(curve) if v >= 0.95), None)
    ok = best_epoch is not None and len(curve) <= 30 and elapsed < 180
    report(7, ok, f"test mAP {curve[-1]:.4f} after {len(curve)} epochs "
                  f"(>= 0.95 first at epoch {best_epoch}), {elapsed:.1f} s")
    assert ok


@pytest.mark.slow
@pytest.mark.xfail(reason="ordering not reproduced at desk scale; see README, 'Known result'", strict=False)
def test_c08_ablation_ordering(report):
    kinds = ["bhattacharyya_diagonal", "bhattacharyya_isotropic", "mahalanobis", "gaussian"]
    held, rows = 0, []
    for seed in range(10):
        ds = generate(SynthConfig(class_noise=tuple(np.linspace(0.0, 3.0, 8)), seed=seed))
        m = {k: train(ds, TrainConfig(seed=seed, loss=LossConfig(similarity=k))).curves[-1]["test_mAP"]
             for k in kinds}
        held += m[kinds[0]] >= m[kinds[1]] >= max(m[kinds[2]], m[kinds[3]])
        rows.append(m)
    means = {k: float(np.mean([r[k] for r in rows])) for k in kinds}
    ok = held >= 7
    report(8, ok, f"ordering held in {held}/10 seeds; mean test mAP " +
           ", ".join(f"{k} {v:.4f}" for k, v in means.items()))
    assert ok


def test_c09_training_is_bit_deterministic(report, tmp_path):
    for d in ("a", "b"):
        assert main(["train", "--seed", "3", "--out", str(tmp_path / d)]) == 0
    same = {name: (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
            for name in ("checkpoint.txt", "curves.csv")}
    ok = all(same.values())
    report(9, ok, "checkpoint and curves byte-identical across two runs" if ok else f"differs: {same}")
    assert ok


def test_c10_metric_oracles(report):
    rng = np.random.default_rng(10)
    worst_ap = worst_auc = 0.0
    for i in range(1000):
        n = int(rng.integers(2, 60))
        scores = rng.integers(0, 6, n) / 5.0 if i % 2 else rng.random(n)
        truths = (rng.random(n) < rng.uniform(0.1, 0.9)).astype(int)
        pos, neg = rng.choice(n, 2, replace=False)
        truths[pos], truths[neg] = 1, 0
        worst_ap = max(worst_ap, abs(average_precision(scores, truths) - ap_brute(list(scores), list(truths))))
        worst_auc = max(worst_auc, abs(auc(scores, truths) - auc_brute(list(scores), list(truths))))
    ok = worst_ap <= 1e-12 and worst_auc <= 1e-12
    report(10, ok, f"1000 columns (half with ties), max diff AP {worst_ap:.2e}, AUC {worst_auc:.2e}")
    assert ok
