"""Ranking and calibration metrics for edge recovery."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import DegenerateInput, DegenerateLabels


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean rank of their group."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _check_binary(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    pos = int(np.sum(labels == 1))
    neg = int(np.sum(labels == 0))
    if pos + neg != labels.size:
        raise ValueError("labels must be 0/1")
    if pos == 0 or neg == 0:
        raise DegenerateLabels("labels must contain both classes")
    return labels.astype(bool)


def auc(scores, labels) -> float:
    """Rank-based (Mann-Whitney) area under the ROC curve with midrank ties."""
    scores = np.asarray(scores, dtype=np.float64)
    mask = _check_binary(labels)
    ranks = _midranks(scores)
    n_pos = int(mask.sum())
    n_neg = mask.size - n_pos
    u = ranks[mask].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def precision_at_fraction(scores, labels, fraction: float) -> float:
    """Fraction of true edges among the top round(fraction * N) scores.

    Ties are broken by the fixed index order of the score vector, so the
    result is deterministic.  k is floored at 1.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    scores = np.asarray(scores, dtype=np.float64)
    mask = _check_binary(labels)
    k = max(1, int(np.floor(fraction * scores.size + 0.5)))
    top = np.argsort(-scores, kind="stable")[:k]
    return float(mask[top].mean())


def calibration_error(probs, labels, bins: int = 10) -> float:
    """Count-weighted binned discrepancy between probabilities and outcomes.

    CE = sum_b (n_b / N) * |mean prob in bin b - positive rate in bin b|;
    empty bins are skipped.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.shape != labels.shape:
        raise ValueError("probs and labels must have equal shape")
    if probs.size == 0:
        raise ValueError("empty input")
    if np.min(probs) < 0.0 or np.max(probs) > 1.0:
        raise ValueError("probabilities must lie in [0, 1]")
    idx = np.minimum((probs * bins).astype(np.int64), bins - 1)
    ce = 0.0
    n = probs.size
    for b in range(bins):
        sel = idx == b
        n_b = int(sel.sum())
        if n_b == 0:
            continue
        ce += (n_b / n) * abs(probs[sel].mean() - labels[sel].mean())
    return float(ce)


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc**2).sum() * (yc**2).sum())
    if denom <= 0.0:
        raise DegenerateInput("constant vector in correlation")
    return float((xc * yc).sum() / denom)


def spearman_stability(score_vectors: Sequence) -> float:
    """Mean Spearman rank correlation over all unordered vector pairs."""
    vecs = [np.asarray(v, dtype=np.float64) for v in score_vectors]
    if len(vecs) < 2:
        raise ValueError("need at least two score vectors")
    length = vecs[0].size
    for v in vecs:
        if v.size != length:
            raise ValueError("score vectors must have equal length")
        if np.all(v == v[0]):
            raise DegenerateInput("constant score vector")
    ranked = [_midranks(v) for v in vecs]
    corrs = []
    for a in range(len(ranked)):
        for b in range(a + 1, len(ranked)):
            corrs.append(pearson(ranked[a], ranked[b]))
    return float(np.mean(corrs))
