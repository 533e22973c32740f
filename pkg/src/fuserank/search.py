"""Exact top-k dense retrieval over unit-normalized embedding matrices.

Scores are computed with elementwise multiply + numpy pairwise-sum reduction
rather than BLAS so that per-query results are bit-identical regardless of
batching, thread count, or corpus row order. Index rows are stored sorted by
doc id, which makes a stable sort on descending score realize the
(score desc, id asc) tie-break for free.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import EmbeddingMatrix, Modality, RunEntry, RunFile
from .errors import DimMismatch, EmptyIndex

Ranking = list[tuple[str, float]]


@dataclass
class SearchIndex:
    """Immutable corpus-side index; rows are unit vectors in ascending-id order."""

    ids: tuple[str, ...]
    rows: np.ndarray
    modality: Modality | None = None

    @classmethod
    def from_matrix(cls, matrix: EmbeddingMatrix) -> "SearchIndex":
        order = sorted(range(len(matrix.ids)), key=lambda i: matrix.ids[i])
        ids = tuple(matrix.ids[i] for i in order)
        rows = np.ascontiguousarray(matrix.rows[order])
        return cls(ids=ids, rows=rows, modality=matrix.modality)

    @property
    def dim(self) -> int:
        return int(self.rows.shape[1])

    def __len__(self) -> int:
        return len(self.ids)


def similarity(q: np.ndarray, d: np.ndarray) -> float:
    """Cosine similarity of two unit vectors via their dot product."""
    q = np.asarray(q, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if q.shape != d.shape:
        raise DimMismatch(f"vector dims differ: {q.shape} vs {d.shape}")
    return float(np.add.reduce(q * d))


def _scores(index: SearchIndex, q: np.ndarray) -> np.ndarray:
    # pairwise-sum reduction: bit-identical to per-row np.add.reduce(row * q)
    return np.add.reduce(index.rows * q, axis=1)


def _top_order(scores: np.ndarray, k: int) -> np.ndarray:
    return np.argsort(-scores, kind="stable")[:k]


def top_k(q: np.ndarray, index: SearchIndex, k: int) -> Ranking:
    """The k most similar docs under (score desc, doc_id asc); all docs if k > n."""
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    if len(index) == 0:
        raise EmptyIndex("index has no documents")
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (index.dim,):
        raise DimMismatch(f"query dim {q.shape} vs index dim {index.dim}")
    scores = _scores(index, q)
    return [(index.ids[i], float(scores[i])) for i in _top_order(scores, k)]


def batch_search(
    queries: EmbeddingMatrix,
    index: SearchIndex,
    k: int,
    tag: str,
    threads: int = 1,
) -> RunFile:
    """Run top_k for every query row and emit 1-based ranked run entries.

    Queries keep their input row order; results are merged in that order, so
    output is identical for any thread count.
    """
    if queries.dim != index.dim:
        raise DimMismatch(f"query dim {queries.dim} vs index dim {index.dim}")
    if len(index) == 0:
        raise EmptyIndex("index has no documents")

    def one(qi: int) -> list[RunEntry]:
        scores = _scores(index, queries.rows[qi])
        qid = queries.ids[qi]
        return [
            RunEntry(qid, index.ids[j], rank, float(scores[j]), tag)
            for rank, j in enumerate(_top_order(scores, k), start=1)
        ]

    n = len(queries)
    if threads > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_query = list(pool.map(one, range(n)))
    else:
        per_query = [one(qi) for qi in range(n)]

    entries: list[RunEntry] = []
    for group in per_query:
        entries.extend(group)
    return RunFile(entries=entries)
