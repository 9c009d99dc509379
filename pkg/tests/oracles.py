"""Independent reference implementations: plain loops, no shared code with the package
beyond the pairwise similarity functions the contrastive loss is defined through."""
import math

import numpy as np

from kmcl.similarity import (
    KernelSpec,
    bhattacharyya_diagonal,
    bhattacharyya_isotropic,
    gaussian_similarity,
    mahalanobis_similarity,
)


def pair_similarity(kind, mu_a, var_a, mu_b, var_b, dim):
    """Similarity between two class kernels as the contrastive loss defines it.

    Mahalanobis/Gaussian use the pair's averaged covariance as the shared one.
    """
    if kind == "bhattacharyya_isotropic":
        return bhattacharyya_isotropic(KernelSpec.isotropic(mu_a, var_a, dim), KernelSpec.isotropic(mu_b, var_b, dim))
    if kind == "gaussian":
        return gaussian_similarity(KernelSpec.isotropic(mu_a, var_a, dim), KernelSpec.isotropic(mu_b, var_b, dim),
                                   var=0.5 * (var_a + var_b))
    a, b = KernelSpec.diagonal(mu_a, var_a), KernelSpec.diagonal(mu_b, var_b)
    if kind == "bhattacharyya_diagonal":
        return bhattacharyya_diagonal(a, b)
    if kind == "mahalanobis":
        return mahalanobis_similarity(a, b, cov=0.5 * (np.asarray(var_a) + np.asarray(var_b)))
    raise ValueError(kind)


def kmcl_brute(labels, mu, var, dim, kind, tau):
    """Triple-sum contrastive loss evaluated one term at a time."""
    y = np.asarray(labels)
    N, K = y.shape
    total = 0.0
    for n in range(N):
        A = [m for m in range(N) if m != n and any(y[n, k] and y[m, k] for k in range(K))]
        if not A:
            continue
        anchor = 0.0
        for m in A:
            inter = sum(1 for k in range(K) if y[n, k] and y[m, k])
            union = sum(1 for k in range(K) if y[n, k] or y[m, k])
            J = inter / union
            inner = 0.0
            for k in range(K):
                if not (y[n, k] and y[m, k]):
                    continue
                num = math.exp(pair_similarity(kind, mu[n][k], var[n][k], mu[m][k], var[m][k], dim) / tau)
                den = sum(math.exp(pair_similarity(kind, mu[n][k], var[n][k], mu[i][k], var[i][k], dim) / tau)
                          for i in range(N) if i != n)
                inner += math.log(num / den)
            anchor += J * inner
        total += -anchor / len(A)
    return total / N


def bce(pi, y):
    total = 0.0
    for row_p, row_y in zip(pi, y):
        for p, t in zip(row_p, row_y):
            total += -math.log(p) if t else -math.log(1.0 - p)
    return total / len(pi)


def rec_brute(f, pi, mu, var, y):
    """Mean of -log(G_S / G_Y) over samples with a positive label, densities summed directly."""
    vals = []
    for n in range(len(y)):
        S = [k for k in range(len(y[n])) if y[n][k]]
        if not S:
            continue

        def g(k):
            d = np.asarray(f[n]) - np.asarray(mu[n][k])
            return pi[n][k] * math.exp(-0.5 * float(np.sum(d * d / np.asarray(var[n][k]))))

        vals.append(-math.log(sum(g(k) for k in S) / sum(g(k) for k in range(len(y[n])))))
    return sum(vals) / len(vals) if vals else 0.0


def ap_brute(scores, truths):
    """Precision at each positive's rank, walking the stable descending order by hand."""
    idx = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits, precisions = 0, []
    for rank, i in enumerate(idx, start=1):
        if truths[i]:
            hits += 1
            precisions.append(hits / rank)
    return sum(precisions) / len(precisions)


def auc_brute(scores, truths):
    pos = [s for s, t in zip(scores, truths) if t]
    neg = [s for s, t in zip(scores, truths) if not t]
    wins = 0.0
    for a in pos:
        for b in neg:
            wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (len(pos) * len(neg))
