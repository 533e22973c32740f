"""Collection loading and validation, plus uniform frame-sampling plans."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .core import DocumentMeta, EmbeddingMatrix, Modality, ModalityMask, QueryMeta, Qrels
from .errors import FormatError, InvalidCount
from . import formats


@dataclass
class Collection:
    docs: list[DocumentMeta]
    queries: list[QueryMeta]
    doc_embeddings: dict[Modality, EmbeddingMatrix]
    query_embeddings: dict[Modality, EmbeddingMatrix]
    qrels: Qrels

    def doc_ids(self) -> tuple[str, ...]:
        return tuple(d.doc_id for d in self.docs)

    def query_ids(self) -> tuple[str, ...]:
        return tuple(q.query_id for q in self.queries)


@dataclass(frozen=True)
class FramePlan:
    total_frames: int
    sample_count: int
    indices: tuple[int, ...]


def plan_frame_samples(total_frames: int, sample_count: int = 24) -> FramePlan:
    """Pick ``sample_count`` frame indices spread uniformly over the clip.

    Endpoints are included: index i is round(i * (total-1) / (count-1)) with
    half rounding up, computed in exact integer arithmetic. A single sample
    takes the middle frame. Short clips repeat indices rather than erroring.
    """
    if total_frames < 1 or sample_count < 1:
        raise InvalidCount(f"total_frames={total_frames}, sample_count={sample_count}")
    if sample_count == 1:
        indices = ((total_frames - 1) // 2,)
    else:
        span, steps = total_frames - 1, sample_count - 1
        indices = tuple((2 * i * span + steps) // (2 * steps) for i in range(sample_count))
    return FramePlan(total_frames=total_frames, sample_count=sample_count, indices=indices)


def frame_plan_to_json(doc_id: str, plan: FramePlan) -> str:
    return json.dumps(
        {"doc_id": doc_id, "total_frames": plan.total_frames, "indices": list(plan.indices)},
        ensure_ascii=False,
    )


@dataclass(frozen=True)
class Finding:
    kind: str
    detail: str

    def __str__(self) -> str:
        return f"{self.kind}: {self.detail}"


@dataclass
class ValidationReport:
    findings: list[Finding] = field(default_factory=list)

    def add(self, kind: str, detail: str) -> None:
        self.findings.append(Finding(kind, detail))

    @property
    def accepted(self) -> bool:
        return not self.findings

    def __str__(self) -> str:
        if self.accepted:
            return "collection OK"
        return "\n".join(str(f) for f in self.findings)


def validate_collection(collection: Collection, mask: ModalityMask) -> ValidationReport:
    """Read-only consistency pass; all findings are reported, nothing is repaired.

    The collection is accepted iff the report is empty for the mask-enabled
    modalities: no duplicate ids, no dangling qrels references, and an
    embedding row for every doc and query in every enabled modality.
    """
    report = ValidationReport()

    doc_ids = [d.doc_id for d in collection.docs]
    query_ids = [q.query_id for q in collection.queries]
    doc_set, query_set = set(doc_ids), set(query_ids)
    for ids, seen, kind in ((doc_ids, set(), "DuplicateDocId"), (query_ids, set(), "DuplicateQueryId")):
        for i in ids:
            if i in seen:
                report.add(kind, i)
            seen.add(i)

    for qid in sorted(collection.qrels.judgments):
        if qid not in query_set:
            report.add("DanglingQrelQuery", qid)
        for doc_id in sorted(collection.qrels.judgments[qid]):
            if doc_id not in doc_set:
                report.add("DanglingQrel", doc_id)

    for modality in mask.enabled():
        for side, matrices, ids in (
            ("doc", collection.doc_embeddings, doc_ids),
            ("query", collection.query_embeddings, query_ids),
        ):
            matrix = matrices.get(modality)
            if matrix is None:
                report.add("MissingEmbedding", f"{side} matrix for modality {modality.value}")
                continue
            for i in ids:
                if i not in matrix:
                    report.add("MissingEmbedding", f"{side} {i} has no {modality.value} row")

    dims = {m.dim for m in collection.doc_embeddings.values()} | {
        m.dim for m in collection.query_embeddings.values()
    }
    if len(dims) > 1:
        report.add("DimMismatch", f"embedding dims differ: {sorted(dims)}")

    return report


# ------------------------------------------------------------ directory layout

DOCS_FILE = "docs.jsonl"
QUERIES_FILE = "queries.jsonl"
QRELS_FILE = "qrels.txt"
FRAMES_FILE = "frames.jsonl"


def _emb_name(side: str, modality: Modality) -> str:
    return f"{side}_{modality.value}.emb"


def save_collection(directory: str | Path, collection: Collection) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    formats.write_docs(directory / DOCS_FILE, collection.docs)
    formats.write_queries(directory / QUERIES_FILE, collection.queries)
    formats.write_qrels(directory / QRELS_FILE, collection.qrels)
    for modality, matrix in collection.doc_embeddings.items():
        formats.write_embeddings(directory / _emb_name("doc", modality), matrix)
    for modality, matrix in collection.query_embeddings.items():
        formats.write_embeddings(directory / _emb_name("query", modality), matrix)


def load_collection(directory: str | Path) -> Collection:
    directory = Path(directory)
    if not (directory / DOCS_FILE).exists():
        raise FormatError(f"{directory} does not look like a collection (missing {DOCS_FILE})")
    doc_embeddings: dict[Modality, EmbeddingMatrix] = {}
    query_embeddings: dict[Modality, EmbeddingMatrix] = {}
    for modality in Modality:
        doc_path = directory / _emb_name("doc", modality)
        if doc_path.exists():
            doc_embeddings[modality] = formats.read_embeddings(doc_path)
        query_path = directory / _emb_name("query", modality)
        if query_path.exists():
            query_embeddings[modality] = formats.read_embeddings(query_path)
    return Collection(
        docs=formats.read_docs(directory / DOCS_FILE),
        queries=formats.read_queries(directory / QUERIES_FILE),
        doc_embeddings=doc_embeddings,
        query_embeddings=query_embeddings,
        qrels=formats.read_qrels(directory / QRELS_FILE),
    )


def write_frame_manifest(path: str | Path, frame_counts: dict[str, int], sample_count: int = 24) -> None:
    """Emit one frame plan per document as JSON lines."""
    lines = []
    for doc_id in frame_counts:
        plan = plan_frame_samples(frame_counts[doc_id], sample_count)
        lines.append(frame_plan_to_json(doc_id, plan) + "\n")
    Path(path).write_text("".join(lines), encoding="utf-8")
