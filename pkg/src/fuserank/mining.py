"""Hard-negative mining over a dense index and InfoNCE triplet construction.

Negatives are taken hardest-first: the top-ranked retrieved docs that are not
positively judged. Unjudged docs count as negatives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import EmbeddingMatrix, Qrels
from .errors import NoEmbedding, NoPositive
from .search import SearchIndex, top_k
from .seeding import derive_seed


@dataclass(frozen=True)
class MiningConfig:
    depth: int = 50
    negatives_per_query: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.depth < 1 or self.negatives_per_query < 1:
            raise ValueError("depth and negatives_per_query must be positive")
        if self.negatives_per_query > self.depth:
            raise ValueError("negatives_per_query must not exceed depth")


@dataclass(frozen=True)
class TrainingInstance:
    query_id: str
    positive_id: str
    negative_ids: tuple[str, ...]

    def __post_init__(self):
        ids = (self.query_id, self.positive_id, *self.negative_ids)
        if len(set(self.negative_ids) | {self.positive_id}) != len(self.negative_ids) + 1:
            raise ValueError(f"instance for {self.query_id} has repeated doc ids: {ids}")


def mine_hard_negatives(
    query_id: str,
    queries: EmbeddingMatrix,
    index: SearchIndex,
    qrels: Qrels,
    cfg: MiningConfig,
) -> list[str]:
    """Top ``cfg.depth`` retrieved docs with the query's positives removed.

    The pool keeps retrieval (descending-score) order. An empty pool is a
    valid outcome, not an error.
    """
    if query_id not in queries:
        raise NoEmbedding(f"query {query_id} has no embedding row")
    if not qrels.positives(query_id):
        raise NoPositive(f"query {query_id} has no positive document")
    positives = set(qrels.positives(query_id))
    ranking = top_k(queries.row(query_id), index, cfg.depth)
    return [doc_id for doc_id, _ in ranking if doc_id not in positives]


def mine_pools(
    queries: EmbeddingMatrix,
    index: SearchIndex,
    qrels: Qrels,
    cfg: MiningConfig,
) -> dict[str, list[str]]:
    """Mine a negative pool for every judged query that has a positive.

    Queries without an embedding row or without positives are skipped here;
    callers that need hard failures use mine_hard_negatives directly.
    """
    pools: dict[str, list[str]] = {}
    for query_id in sorted(qrels.judgments):
        if query_id not in queries or not qrels.positives(query_id):
            continue
        pools[query_id] = mine_hard_negatives(query_id, queries, index, qrels, cfg)
    return pools


def build_triplets(
    qrels: Qrels,
    pools: dict[str, list[str]],
    cfg: MiningConfig,
    corpus_ids,
) -> tuple[list[TrainingInstance], int]:
    """One instance per (query, positive) pair with the first N pool negatives.

    Short pools are topped up by seeded uniform sampling from the corpus,
    excluding the query's positives and already-chosen negatives. Queries
    whose negatives cannot be filled at all are skipped and counted.
    Iteration order is sorted, so output is a pure function of the inputs.
    """
    rng = np.random.default_rng(derive_seed(cfg.seed, "mine.fill"))
    corpus_sorted = sorted(corpus_ids)
    instances: list[TrainingInstance] = []
    skipped = 0
    for query_id in sorted(pools):
        positives = set(qrels.positives(query_id))
        negatives = list(pools[query_id][: cfg.negatives_per_query])
        if len(negatives) < cfg.negatives_per_query:
            candidates = [d for d in corpus_sorted if d not in positives and d not in set(negatives)]
            needed = cfg.negatives_per_query - len(negatives)
            if len(candidates) >= needed:
                picks = rng.choice(len(candidates), size=needed, replace=False)
                negatives.extend(candidates[int(i)] for i in sorted(picks))
        if len(negatives) < cfg.negatives_per_query:
            skipped += 1
            continue
        for positive_id in qrels.positives(query_id):
            instances.append(
                TrainingInstance(
                    query_id=query_id,
                    positive_id=positive_id,
                    negative_ids=tuple(negatives),
                )
            )
    return instances, skipped
