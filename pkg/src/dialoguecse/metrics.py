"""Ranking and correlation metrics: Okapi BM25, MAP/MRR, Spearman's rho."""

from __future__ import annotations

import math
from collections import Counter
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConstantInputError


def bm25_scores(
    query: Sequence[str],
    docs: Sequence[Sequence[str]],
    k1: float = 1.2,
    b: float = 0.75,
) -> np.ndarray:
    """Okapi BM25 score of every document against a tokenized query.

    idf(t) = ln((N - df + 0.5) / (df + 0.5) + 1); repeated query terms
    contribute once per occurrence.
    """
    if not docs:
        raise ValueError("bm25_scores: document list is empty")
    if k1 <= 0:
        raise ValueError(f"bm25_scores: k1 must be > 0, got {k1}")
    if not 0 <= b <= 1:
        raise ValueError(f"bm25_scores: b must be in [0, 1], got {b}")
    n_docs = len(docs)
    freqs = [Counter(d) for d in docs]
    lengths = np.array([len(d) for d in docs], dtype=np.float64)
    avgdl = float(lengths.mean())
    df: Counter[str] = Counter()
    for f in freqs:
        df.update(f.keys())
    scores = np.zeros(n_docs, dtype=np.float64)
    for term in query:
        d_f = df.get(term, 0)
        if d_f == 0:
            continue
        idf = math.log((n_docs - d_f + 0.5) / (d_f + 0.5) + 1.0)
        for i, f in enumerate(freqs):
            tf = f.get(term, 0)
            if tf == 0:
                continue
            denom = tf + k1 * (1.0 - b + b * lengths[i] / avgdl)
            scores[i] += idf * tf * (k1 + 1.0) / denom
    return scores


class RankingMetrics(NamedTuple):
    map: float
    mrr: float
    excluded: int  # rankings dropped for having no positive


def map_mrr(rankings: Sequence[Sequence[int]]) -> RankingMetrics:
    """Mean average precision and mean reciprocal rank over label lists.

    Each ranking is the 0/1 relevance labels in ranked order (callers
    resolve score ties by stable input order before calling).  Rankings
    without a single positive are excluded and counted.
    """
    ap_sum = 0.0
    rr_sum = 0.0
    used = 0
    excluded = 0
    for labels in rankings:
        hits = 0
        precisions = []
        first = None
        for rank, label in enumerate(labels, start=1):
            if label:
                hits += 1
                precisions.append(hits / rank)
                if first is None:
                    first = rank
        if hits == 0:
            excluded += 1
            continue
        ap_sum += sum(precisions) / hits
        rr_sum += 1.0 / first
        used += 1
    if used == 0:
        raise ValueError("map_mrr: no ranking contained a positive label")
    return RankingMetrics(map=ap_sum / used, mrr=rr_sum / used, excluded=excluded)


def rankdata(values: Sequence[float]) -> np.ndarray:
    """1-based fractional ranks; tied values share their average rank."""
    a = np.asarray(values, dtype=np.float64).reshape(-1)
    order = np.argsort(a, kind="stable")
    ranks = np.empty(a.size, dtype=np.float64)
    i = 0
    while i < a.size:
        j = i
        while j + 1 < a.size and a[order[j + 1]] == a[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Spearman's rho: Pearson correlation of fractional ranks."""
    x = np.asarray(xs, dtype=np.float64).reshape(-1)
    y = np.asarray(ys, dtype=np.float64).reshape(-1)
    if x.size != y.size:
        raise ValueError(f"spearman: lengths differ, {x.size} vs {y.size}")
    if x.size < 2:
        raise ValueError("spearman: need at least two observations")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise ConstantInputError("spearman: correlation undefined for constant input")
    rx = rankdata(x) - (x.size + 1) / 2.0
    ry = rankdata(y) - (y.size + 1) / 2.0
    denom = math.sqrt(float(np.dot(rx, rx)) * float(np.dot(ry, ry)))
    return float(np.dot(rx, ry) / denom)
