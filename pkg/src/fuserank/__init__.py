"""Multimodal dense retrieval at desk scale.

Pipeline stages: ingest and validate collections of per-modality embeddings,
mine hard negatives with exact dense retrieval, train low-rank residual
adapters with an InfoNCE triplet loss, fuse modalities under configurable
masks, and evaluate runs with the standard TREC metric suite.
"""

from .core import (
    DocumentMeta,
    EmbeddingMatrix,
    Modality,
    ModalityMask,
    QueryMeta,
    Qrels,
    RunEntry,
    RunFile,
    VideoType,
    assemble_document_text,
    normalize_rows,
)
from .fusion import Adapter, AdapterSet, FusionConfig, adapter_forward, fuse, info_nce_loss, train
from .ingest import Collection, FramePlan, plan_frame_samples, validate_collection
from .metrics import MetricConfig, evaluate_run
from .mining import MiningConfig, TrainingInstance, build_triplets, mine_hard_negatives
from .search import SearchIndex, batch_search, similarity, top_k

__version__ = "0.1.0"

__all__ = [
    "Adapter",
    "AdapterSet",
    "Collection",
    "DocumentMeta",
    "EmbeddingMatrix",
    "FramePlan",
    "FusionConfig",
    "MetricConfig",
    "MiningConfig",
    "Modality",
    "ModalityMask",
    "QueryMeta",
    "Qrels",
    "RunEntry",
    "RunFile",
    "SearchIndex",
    "TrainingInstance",
    "VideoType",
    "adapter_forward",
    "assemble_document_text",
    "batch_search",
    "build_triplets",
    "evaluate_run",
    "fuse",
    "info_nce_loss",
    "mine_hard_negatives",
    "normalize_rows",
    "plan_frame_samples",
    "similarity",
    "top_k",
    "train",
    "validate_collection",
]
