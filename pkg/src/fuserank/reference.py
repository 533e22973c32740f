"""Naive reference implementations used as independent oracles.

Everything here is deliberately written with plain loops and sorts, separate
from the engine code paths, so the two routes can be checked against each
other (by the test suite and by the ``selftest`` subcommand). Do not
"optimize" these by delegating to the engine.
"""

from __future__ import annotations

import math

import numpy as np


def naive_top_k(ids, rows: np.ndarray, q: np.ndarray, k: int) -> list[tuple[str, float]]:
    """Score every doc in an explicit loop, sort all of them, take k."""
    scored = []
    for i in range(len(ids)):
        scored.append((ids[i], float(np.add.reduce(rows[i] * q))))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[:k]


def naive_search(query_ids, query_rows, doc_ids, doc_rows, k: int):
    """Double-loop retrieval: per query, per doc. Returns
    {query_id: [(doc_id, rank, score), ...]}."""
    results = {}
    for qi in range(len(query_ids)):
        ranked = naive_top_k(doc_ids, doc_rows, query_rows[qi], k)
        results[query_ids[qi]] = [
            (doc_id, rank, score) for rank, (doc_id, score) in enumerate(ranked, start=1)
        ]
    return results


def _gain(grade: int, exponential: bool) -> float:
    return float(2**grade - 1) if exponential else float(grade)


def naive_ndcg(ranked_ids, grades: dict[str, int], k=None, exponential: bool = True) -> float:
    ranked = list(ranked_ids)
    if k is not None:
        ranked = ranked[:k]
    dcg = 0.0
    rank = 0
    for doc_id in ranked:
        rank += 1
        g = grades.get(doc_id, 0)
        if g > 0:
            dcg += _gain(g, exponential) / math.log2(rank + 1)
    ideal = sorted((g for g in grades.values() if g > 0), reverse=True)
    if k is not None:
        ideal = ideal[:k]
    idcg = 0.0
    for rank, g in enumerate(ideal, start=1):
        idcg += _gain(g, exponential) / math.log2(rank + 1)
    return dcg / idcg if idcg > 0 else 0.0


def naive_average_precision(ranked_ids, grades: dict[str, int]) -> float:
    relevant = {d for d, g in grades.items() if g > 0}
    if not relevant:
        return 0.0
    hits = 0
    acc = 0.0
    for rank, doc_id in enumerate(ranked_ids, start=1):
        if doc_id in relevant:
            hits += 1
            acc += hits / rank
    return acc / len(relevant)


def naive_reciprocal_rank(ranked_ids, grades: dict[str, int]) -> float:
    for rank, doc_id in enumerate(ranked_ids, start=1):
        if grades.get(doc_id, 0) > 0:
            return 1.0 / rank
    return 0.0


def naive_recall_at_k(ranked_ids, grades: dict[str, int], k: int) -> float:
    relevant = {d for d, g in grades.items() if g > 0}
    if not relevant:
        return 0.0
    found = 0
    for doc_id in list(ranked_ids)[:k]:
        if doc_id in relevant:
            found += 1
    return found / len(relevant)


def naive_all_metrics(ranked_ids, grades: dict[str, int], ndcg_cutoff: int, recall_cutoff: int,
                      exponential: bool = True) -> dict[str, float]:
    """The five-metric vector in engine column order."""
    return {
        f"nDCG@{ndcg_cutoff}": naive_ndcg(ranked_ids, grades, ndcg_cutoff, exponential),
        "AP": naive_average_precision(ranked_ids, grades),
        "nDCG": naive_ndcg(ranked_ids, grades, None, exponential),
        "RR": naive_reciprocal_rank(ranked_ids, grades),
        f"R@{recall_cutoff}": naive_recall_at_k(ranked_ids, grades, recall_cutoff),
    }


def finite_difference_grads(loss_fn, adapters, enabled, step: float = 1e-6):
    """Central finite differences of ``loss_fn()`` w.r.t. every adapter entry.

    ``loss_fn`` must read the adapter matrices in place. Returns
    {modality: (grad_a, grad_b)} shaped like the analytic gradients.
    """
    grads = {}
    for modality in enabled:
        adapter = adapters.adapters[modality]
        out = []
        for matrix in (adapter.matrix_a, adapter.matrix_b):
            grad = np.zeros_like(matrix)
            it = np.nditer(matrix, flags=["multi_index"])
            while not it.finished:
                idx = it.multi_index
                original = matrix[idx]
                matrix[idx] = original + step
                plus = loss_fn()
                matrix[idx] = original - step
                minus = loss_fn()
                matrix[idx] = original
                grad[idx] = (plus - minus) / (2.0 * step)
                it.iternext()
            out.append(grad)
        grads[modality] = (out[0], out[1])
    return grads
