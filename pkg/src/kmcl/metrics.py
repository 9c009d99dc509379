"""Multilabel evaluation: mAP, overall/per-class P/R/F1, top-k variants, AUC."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class PredictionSet:
    scores: np.ndarray
    truths: np.ndarray

    def __post_init__(self) -> None:
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.truths = np.asarray(self.truths)
        if self.scores.shape != self.truths.shape or self.scores.ndim != 2:
            raise ValueError(f"scores {self.scores.shape} and truths {self.truths.shape} must be matching N x K")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")
        if not np.all((self.truths == 0) | (self.truths == 1)):
            raise ValueError("truths must be binary")
        self.truths = self.truths.astype(np.int8)


def average_precision(scores, truths) -> float:
    """Non-interpolated AP: mean precision at the rank of each positive.

    Ranking is by descending score; ties keep the original order. Returns NaN
    for a column with no positives.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truths = np.asarray(truths).astype(bool)
    n_pos = int(truths.sum())
    if n_pos == 0:
        return float("nan")
    order = np.argsort(-scores, kind="stable")
    hits = truths[order]
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, n_pos + 1) / ranks))


def auc(scores, truths) -> float:
    """Mann-Whitney AUC with ties counted as one half. NaN if a class is absent."""
    scores = np.asarray(scores, dtype=np.float64)
    truths = np.asarray(truths).astype(bool)
    n_pos = int(truths.sum())
    n_neg = truths.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = _average_ranks(scores)
    return float((ranks[truths].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    sorted_x = x[order]
    ranks = np.empty(x.size)
    starts = np.flatnonzero(np.r_[True, sorted_x[1:] != sorted_x[:-1]])
    ends = np.r_[starts[1:], x.size]
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = 0.5 * (s + 1 + e)
    return ranks


def mean_average_precision(pred: PredictionSet) -> tuple[float, np.ndarray]:
    """mAP over classes with at least one positive, plus the per-class APs."""
    aps = np.array([average_precision(pred.scores[:, k], pred.truths[:, k]) for k in range(pred.scores.shape[1])])
    valid = ~np.isnan(aps)
    return (float(aps[valid].mean()) if valid.any() else float("nan")), aps


def _ratio(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def _harmonic(p: float, r: float) -> float:
    return 2.0 * p * r / (p + r) if p + r > 0 else 0.0


def _six_metrics(predicted: np.ndarray, truths: np.ndarray) -> dict[str, float]:
    t = truths.astype(bool)
    tp = np.sum(predicted & t, axis=0)
    fp = np.sum(predicted & ~t, axis=0)
    fn = np.sum(~predicted & t, axis=0)
    OP = float(_ratio(tp.sum(), tp.sum() + fp.sum()))
    OR = float(_ratio(tp.sum(), tp.sum() + fn.sum()))
    CP = float(np.mean(_ratio(tp, tp + fp)))
    CR = float(np.mean(_ratio(tp, tp + fn)))
    return {"OP": OP, "OR": OR, "OF1": _harmonic(OP, OR), "CP": CP, "CR": CR, "CF1": _harmonic(CP, CR)}


def overall_and_perclass(pred: PredictionSet, threshold: float = 0.5) -> dict[str, float]:
    """OP/OR/OF1 pooled over all decisions, CP/CR averaged over classes, CF1."""
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    return _six_metrics(pred.scores >= threshold, pred.truths)


def topk_mask(scores: np.ndarray, k: int) -> np.ndarray:
    """Boolean mask of the ``k`` highest scores per row (stable on ties)."""
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    mask = np.zeros(scores.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=1)
    return mask


def topk_metrics(pred: PredictionSet, k: int = 3, threshold: float = 0.5) -> dict[str, float]:
    """Six metrics when each sample predicts only its top-``k`` classes above threshold."""
    K = pred.scores.shape[1]
    if not 1 <= k <= K:
        raise ValueError(f"k must be in [1, {K}], got {k}")
    predicted = topk_mask(pred.scores, k) & (pred.scores >= threshold)
    return _six_metrics(predicted, pred.truths)


def evaluate(pred: PredictionSet, threshold: float = 0.5, k: int = 3) -> list[tuple[str, str, float]]:
    """Full metric table as ``(metric, class, value)`` rows."""
    rows: list[tuple[str, str, float]] = []
    mAP, aps = mean_average_precision(pred)
    rows.append(("mAP", "overall", mAP))
    for name, value in overall_and_perclass(pred, threshold).items():
        rows.append((name, "overall", value))
    for name, value in topk_metrics(pred, min(k, pred.scores.shape[1]), threshold).items():
        rows.append((f"top{k}_{name}", "overall", value))
    for c, ap in enumerate(aps):
        rows.append(("AP", str(c), ap))
    for c in range(pred.scores.shape[1]):
        rows.append(("AUC", str(c), auc(pred.scores[:, c], pred.truths[:, c])))
    return rows
