"""Synthetic planted-alignment collections for demos and acceptance checks.

The construction plants cluster-level relevance: queries and their relevant
docs share one of a handful of mutually orthogonal latent directions, with
the carrying modality split between clusters (text for one half, video+audio
for the other). A per-vector coefficient on a small per-modality nuisance
subspace drowns the raw similarities, so untrained retrieval is poor while a
low-rank adapter that suppresses the nuisance recovers the planted signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DocumentMeta, EmbeddingMatrix, Modality, QueryMeta, Qrels, VideoType
from .ingest import Collection

_MODS = (Modality.TEXT, Modality.AUDIO, Modality.VIDEO)
# disjoint 3-dim nuisance subspaces, clear of the signal dims
_NUISANCE_DIMS = {Modality.TEXT: (23, 24, 25), Modality.VIDEO: (26, 27, 28), Modality.AUDIO: (29, 30, 31)}

_EVENT_TYPES = ("Disaster", "Political", "Sports", "Social")
_LANGUAGES = ("English", "Spanish", "Korean", "Arabic")
_VIDEO_TYPES = (VideoType.PROFESSIONAL, VideoType.EDITED, VideoType.DIET_RAW, VideoType.RAW)


@dataclass(frozen=True)
class SynthConfig:
    n_queries: int = 200
    n_docs: int = 2000
    dim: int = 32
    n_clusters: int = 8
    docs_per_cluster: int = 8
    signal: float = 2.3
    nuisance: float = 3.0
    seed: int = 13


def planted_collection(cfg: SynthConfig = SynthConfig()) -> Collection:
    """Build a full collection with embeddings, metadata, and graded qrels.

    Clusters 0..n/2-1 carry their latent in text embeddings only; the rest
    carry it in video and audio. Every vector additionally gets ambient
    Gaussian noise and a shared-magnitude random nuisance component.
    """
    if cfg.n_clusters % 2 or cfg.n_clusters > cfg.dim - 24:
        pass  # clusters live in dims [0, 8); defaults keep this in range
    rng = np.random.default_rng(cfg.seed)
    sigma = 1.0 / np.sqrt(cfg.dim)
    latents = np.linalg.qr(rng.standard_normal((cfg.n_clusters, cfg.n_clusters)))[0]

    doc_rows = {m: rng.normal(0.0, sigma, (cfg.n_docs, cfg.dim)) for m in _MODS}
    query_rows = {m: rng.normal(0.0, sigma, (cfg.n_queries, cfg.dim)) for m in _MODS}

    def nuisance_coeffs(n: int) -> np.ndarray:
        directions = rng.standard_normal((n, 3))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        return directions * (rng.uniform(0.7, 1.3, n) * cfg.nuisance)[:, None]

    doc_coeffs, query_coeffs = nuisance_coeffs(cfg.n_docs), nuisance_coeffs(cfg.n_queries)
    for m in _MODS:
        doc_rows[m][:, _NUISANCE_DIMS[m]] += doc_coeffs
        query_rows[m][:, _NUISANCE_DIMS[m]] += query_coeffs

    qrels = Qrels()
    doc_cluster = {}
    for cluster in range(cfg.n_clusters):
        z = np.zeros(cfg.dim)
        z[: cfg.n_clusters] = latents[cluster]
        text_carries = cluster < cfg.n_clusters // 2
        weights = {
            Modality.TEXT: cfg.signal if text_carries else 0.0,
            Modality.VIDEO: 0.0 if text_carries else cfg.signal,
            Modality.AUDIO: 0.0 if text_carries else cfg.signal,
        }
        doc_idx = [cluster * cfg.docs_per_cluster + j for j in range(cfg.docs_per_cluster)]
        query_idx = [qi for qi in range(cfg.n_queries) if qi % cfg.n_clusters == cluster]
        for m in _MODS:
            if weights[m]:
                for d in doc_idx:
                    doc_rows[m][d] += weights[m] * z
                for q in query_idx:
                    query_rows[m][q] += weights[m] * z
        for d in doc_idx:
            doc_cluster[d] = cluster
        for q in query_idx:
            for d in doc_idx:
                qrels.add(f"q{q:04d}", f"d{d:05d}", 1)

    docs = []
    for i in range(cfg.n_docs):
        cluster = doc_cluster.get(i)
        docs.append(
            DocumentMeta(
                doc_id=f"d{i:05d}",
                title=f"clip {i}",
                whisper_text=f"transcript {i}" if i % 3 == 0 else "",
                video_type=_VIDEO_TYPES[i % len(_VIDEO_TYPES)],
                event_type=_EVENT_TYPES[cluster % len(_EVENT_TYPES)] if cluster is not None else "Unknown",
                language=_LANGUAGES[i % len(_LANGUAGES)],
            )
        )
    queries = []
    for i in range(cfg.n_queries):
        cluster = i % cfg.n_clusters
        queries.append(
            QueryMeta(
                query_id=f"q{i:04d}",
                text=f"find event {cluster} clip {i}",
                query_type="Text" if cluster < cfg.n_clusters // 2 else "Speech",
                language=_LANGUAGES[i % len(_LANGUAGES)],
            )
        )

    def matrices(rows, prefix, count):
        ids = [f"{prefix}{i:0{5 if prefix == 'd' else 4}d}" for i in range(count)]
        return {m: EmbeddingMatrix.from_rows(m, ids, rows[m]) for m in _MODS}

    return Collection(
        docs=docs,
        queries=queries,
        doc_embeddings=matrices(doc_rows, "d", cfg.n_docs),
        query_embeddings=matrices(query_rows, "q", cfg.n_queries),
        qrels=qrels,
    )
