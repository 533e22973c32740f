"""On-disk formats: JSONL metadata, TREC qrels and run files, binary embeddings.

Every writer emits canonical bytes (fixed key order, fixed number formatting)
so that serialize -> parse -> serialize is byte-stable.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .core import (
    NORM_TOL,
    DocumentMeta,
    EmbeddingMatrix,
    Modality,
    QueryMeta,
    Qrels,
    RunEntry,
    RunFile,
    VideoType,
)
from .errors import FormatError

EMBEDDING_MAGIC = b"FUSE1"
ADAPTER_MAGIC = b"ADPT1"

_MODALITY_BYTE = {Modality.TEXT: 0, Modality.AUDIO: 1, Modality.VIDEO: 2}
_BYTE_MODALITY = {v: k for k, v in _MODALITY_BYTE.items()}


# ---------------------------------------------------------------- metadata

def doc_to_json(meta: DocumentMeta) -> str:
    record = {
        "doc_id": meta.doc_id,
        "title": meta.title,
        "caption": meta.caption,
        "description": meta.description,
        "whisper_text": meta.whisper_text,
        "video_type": meta.video_type.value,
        "event_type": meta.event_type,
        "language": meta.language,
    }
    return json.dumps(record, ensure_ascii=False)


def doc_from_json(line: str) -> DocumentMeta:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise FormatError(f"bad document JSON: {exc}") from exc
    if "doc_id" not in record:
        raise FormatError("document record missing doc_id")
    return DocumentMeta(
        doc_id=record["doc_id"],
        title=record.get("title", ""),
        caption=record.get("caption", ""),
        description=record.get("description", ""),
        whisper_text=record.get("whisper_text", ""),
        video_type=VideoType.parse(record.get("video_type", "Unknown")),
        event_type=record.get("event_type", "Unknown"),
        language=record.get("language", "Unknown"),
    )


def query_to_json(meta: QueryMeta) -> str:
    record = {
        "query_id": meta.query_id,
        "text": meta.text,
        "query_type": meta.query_type,
        "language": meta.language,
    }
    return json.dumps(record, ensure_ascii=False)


def query_from_json(line: str) -> QueryMeta:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise FormatError(f"bad query JSON: {exc}") from exc
    if "query_id" not in record:
        raise FormatError("query record missing query_id")
    return QueryMeta(
        query_id=record["query_id"],
        text=record.get("text", ""),
        query_type=record.get("query_type", "Unknown"),
        language=record.get("language", "Unknown"),
    )


def write_docs(path: str | Path, docs) -> None:
    Path(path).write_text("".join(doc_to_json(d) + "\n" for d in docs), encoding="utf-8")


def read_docs(path: str | Path) -> list[DocumentMeta]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(doc_from_json(line))
    return out


def write_queries(path: str | Path, queries) -> None:
    Path(path).write_text("".join(query_to_json(q) + "\n" for q in queries), encoding="utf-8")


def read_queries(path: str | Path) -> list[QueryMeta]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(query_from_json(line))
    return out


# ---------------------------------------------------------------- qrels

def qrels_to_text(qrels: Qrels) -> str:
    """TREC-style lines ``query_id 0 doc_id grade``, sorted for byte stability."""
    lines = []
    for qid in sorted(qrels.judgments):
        for doc_id in sorted(qrels.judgments[qid]):
            lines.append(f"{qid} 0 {doc_id} {qrels.judgments[qid][doc_id]}\n")
    return "".join(lines)


def qrels_from_text(text: str) -> Qrels:
    qrels = Qrels()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4:
            raise FormatError(f"qrels line {lineno}: expected 4 fields, got {len(parts)}")
        qid, _, doc_id, grade_s = parts
        try:
            grade = int(grade_s)
        except ValueError as exc:
            raise FormatError(f"qrels line {lineno}: bad grade {grade_s!r}") from exc
        if grade < 0:
            raise FormatError(f"qrels line {lineno}: negative grade")
        qrels.add(qid, doc_id, grade)
    return qrels


def write_qrels(path: str | Path, qrels: Qrels) -> None:
    Path(path).write_text(qrels_to_text(qrels), encoding="utf-8")


def read_qrels(path: str | Path) -> Qrels:
    return qrels_from_text(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------- run files

def run_to_text(run: RunFile) -> str:
    """TREC submission lines ``query_id Q0 doc_id rank score tag``, score at 6 dp."""
    return "".join(
        f"{e.query_id} Q0 {e.doc_id} {e.rank} {e.score:.6f} {e.tag}\n" for e in run.entries
    )


def run_from_text(text: str) -> RunFile:
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 6:
            raise FormatError(f"run line {lineno}: expected 6 fields, got {len(parts)}")
        qid, _, doc_id, rank_s, score_s, tag = parts
        try:
            entries.append(RunEntry(qid, doc_id, int(rank_s), float(score_s), tag))
        except ValueError as exc:
            raise FormatError(f"run line {lineno}: {exc}") from exc
    return RunFile(entries=entries)


def write_run(path: str | Path, run: RunFile) -> None:
    Path(path).write_text(run_to_text(run), encoding="utf-8")


def read_run(path: str | Path) -> RunFile:
    return run_from_text(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------- embeddings

def write_embeddings(path: str | Path, matrix: EmbeddingMatrix) -> None:
    """Binary header (magic, modality byte, u32 dim, u64 count) + LE f64 payload.

    Row ids go to a ``<path>.ids`` sidecar, one id per line in row order.
    """
    path = Path(path)
    n, dim = matrix.rows.shape
    with open(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        fh.write(struct.pack("<BIQ", _MODALITY_BYTE[matrix.modality], dim, n))
        fh.write(np.ascontiguousarray(matrix.rows, dtype="<f8").tobytes())
    Path(str(path) + ".ids").write_text("".join(i + "\n" for i in matrix.ids), encoding="utf-8")


def read_embeddings(path: str | Path, normalize: bool = True) -> EmbeddingMatrix:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:5] != EMBEDDING_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:5]!r}")
    try:
        mod_byte, dim, count = struct.unpack_from("<BIQ", blob, 5)
    except struct.error as exc:
        raise FormatError(f"{path}: truncated header") from exc
    if mod_byte not in _BYTE_MODALITY:
        raise FormatError(f"{path}: unknown modality byte {mod_byte}")
    header = 5 + struct.calcsize("<BIQ")
    expected = count * dim * 8
    if len(blob) - header != expected:
        raise FormatError(f"{path}: payload is {len(blob) - header} bytes, expected {expected}")
    rows = np.frombuffer(blob, dtype="<f8", offset=header).reshape(count, dim).astype(np.float64)
    ids_path = Path(str(path) + ".ids")
    if not ids_path.exists():
        raise FormatError(f"missing id sidecar {ids_path}")
    ids = [ln for ln in ids_path.read_text(encoding="utf-8").splitlines() if ln]
    if len(ids) != count:
        raise FormatError(f"{ids_path}: {len(ids)} ids for {count} rows")
    if normalize and count:
        # skip renormalization when the payload is already unit rows, so
        # serialize -> parse -> serialize is byte-stable
        norms = np.linalg.norm(rows, axis=1)
        normalize = bool(np.any(np.abs(norms - 1.0) > NORM_TOL))
    return EmbeddingMatrix.from_rows(_BYTE_MODALITY[mod_byte], ids, rows, normalize=normalize)


# ---------------------------------------------------------------- triplets

def triplets_to_text(triplets) -> str:
    lines = []
    for t in triplets:
        record = {
            "query_id": t.query_id,
            "positive_id": t.positive_id,
            "negative_ids": list(t.negative_ids),
        }
        lines.append(json.dumps(record, ensure_ascii=False) + "\n")
    return "".join(lines)


def triplets_from_text(text: str):
    from .mining import TrainingInstance

    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            out.append(
                TrainingInstance(
                    query_id=record["query_id"],
                    positive_id=record["positive_id"],
                    negative_ids=tuple(record["negative_ids"]),
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"triplets line {lineno}: {exc}") from exc
    return out


def write_triplets(path: str | Path, triplets) -> None:
    Path(path).write_text(triplets_to_text(triplets), encoding="utf-8")


def read_triplets(path: str | Path):
    return triplets_from_text(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------- adapters

def write_adapters(path: str | Path, adapter_set) -> None:
    """Magic, adapter count, then per adapter: modality byte, u32 dim/rank,
    f64 alpha, A payload (rank x dim), B payload (dim x rank), all LE f64."""
    adapters = adapter_set.in_order()
    with open(path, "wb") as fh:
        fh.write(ADAPTER_MAGIC)
        fh.write(struct.pack("<B", len(adapters)))
        for ad in adapters:
            rank, dim = ad.matrix_a.shape
            fh.write(struct.pack("<BIId", _MODALITY_BYTE[ad.modality], dim, rank, ad.alpha))
            fh.write(np.ascontiguousarray(ad.matrix_a, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(ad.matrix_b, dtype="<f8").tobytes())


def read_adapters(path: str | Path):
    from .fusion import Adapter, AdapterSet

    blob = Path(path).read_bytes()
    if blob[:5] != ADAPTER_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:5]!r}")
    offset = 5
    try:
        (count,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        adapters = {}
        for _ in range(count):
            mod_byte, dim, rank, alpha = struct.unpack_from("<BIId", blob, offset)
            offset += struct.calcsize("<BIId")
            if mod_byte not in _BYTE_MODALITY:
                raise FormatError(f"{path}: unknown modality byte {mod_byte}")
            a_size, b_size = rank * dim * 8, dim * rank * 8
            matrix_a = np.frombuffer(blob, dtype="<f8", count=rank * dim, offset=offset).reshape(rank, dim)
            offset += a_size
            matrix_b = np.frombuffer(blob, dtype="<f8", count=dim * rank, offset=offset).reshape(dim, rank)
            offset += b_size
            modality = _BYTE_MODALITY[mod_byte]
            adapters[modality] = Adapter(
                modality=modality,
                alpha=alpha,
                matrix_a=matrix_a.astype(np.float64),
                matrix_b=matrix_b.astype(np.float64),
            )
    except (struct.error, ValueError) as exc:
        raise FormatError(f"{path}: truncated adapter file") from exc
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes")
    return AdapterSet(adapters=adapters)
