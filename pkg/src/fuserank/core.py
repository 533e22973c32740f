"""Core domain types: metadata records, embedding matrices, qrels, run files.

All embedding math is 64-bit; rows are unit-normalized at load time so a dot
product is a cosine similarity everywhere downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import MalformedRun, ZeroVector

NORM_TOL = 1e-9


class Modality(str, Enum):
    TEXT = "text"
    AUDIO = "audio"
    VIDEO = "video"


# Canonical iteration order for masks, fusion means, and serialization.
MODALITY_ORDER = (Modality.TEXT, Modality.AUDIO, Modality.VIDEO)


class VideoType(str, Enum):
    PROFESSIONAL = "Professional"
    EDITED = "Edited"
    DIET_RAW = "DietRaw"
    RAW = "Raw"
    UNKNOWN = "Unknown"

    @classmethod
    def parse(cls, label: str) -> "VideoType":
        """Map unrecognized labels to UNKNOWN so partial metadata still evaluates."""
        try:
            return cls(label)
        except ValueError:
            return cls.UNKNOWN


def _check_id(value: str, what: str) -> str:
    if not value:
        raise ValueError(f"{what} must be non-empty")
    if any(ch.isspace() for ch in value):
        raise ValueError(f"{what} must not contain whitespace: {value!r}")
    return value


@dataclass(frozen=True)
class DocumentMeta:
    doc_id: str
    title: str = ""
    caption: str = ""
    description: str = ""
    whisper_text: str = ""
    video_type: VideoType = VideoType.UNKNOWN
    event_type: str = "Unknown"
    language: str = "Unknown"

    def __post_init__(self):
        _check_id(self.doc_id, "doc_id")


@dataclass(frozen=True)
class QueryMeta:
    query_id: str
    text: str
    query_type: str = "Unknown"
    language: str = "Unknown"

    def __post_init__(self):
        _check_id(self.query_id, "query_id")
        if not self.text:
            raise ValueError(f"query {self.query_id} has empty text")


@dataclass(frozen=True)
class ModalityMask:
    text: bool = True
    audio: bool = False
    video: bool = False

    def __post_init__(self):
        if not (self.text or self.audio or self.video):
            raise ValueError("at least one modality must be enabled")

    def enabled(self) -> tuple[Modality, ...]:
        flags = {Modality.TEXT: self.text, Modality.AUDIO: self.audio, Modality.VIDEO: self.video}
        return tuple(m for m in MODALITY_ORDER if flags[m])

    def __contains__(self, modality: Modality) -> bool:
        return modality in self.enabled()

    @classmethod
    def parse(cls, spec: str) -> "ModalityMask":
        """Parse a comma-separated list such as ``text,audio,video``."""
        names = [p.strip().lower() for p in spec.split(",") if p.strip()]
        unknown = [n for n in names if n not in ("text", "audio", "video")]
        if unknown:
            raise ValueError(f"unknown modality names: {unknown}")
        return cls(text="text" in names, audio="audio" in names, video="video" in names)

    def spec(self) -> str:
        return ",".join(m.value for m in self.enabled())


def assemble_document_text(meta: DocumentMeta) -> str:
    """Concatenate title, caption, description, and ASR text in that order.

    Empty fields are skipped; non-empty fields are joined with single newlines.
    """
    parts = [meta.title, meta.caption, meta.description, meta.whisper_text]
    return "\n".join(p for p in parts if p)


def normalize_rows(rows: np.ndarray) -> np.ndarray:
    """Return a copy of ``rows`` with every row scaled to unit L2 norm.

    Raises ZeroVector (with the offending row index) if any row is all zeros.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {rows.shape}")
    norms = np.linalg.norm(rows, axis=1)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise ZeroVector(row=int(bad[0]))
    return rows / norms[:, None]


@dataclass
class EmbeddingMatrix:
    """Unit-normalized dense vectors for one modality with an id-to-row map."""

    modality: Modality
    ids: tuple[str, ...]
    rows: np.ndarray
    id_index: dict[str, int] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        if len(self.ids) != self.rows.shape[0]:
            raise ValueError("id list and row count disagree")
        if not self.id_index:
            self.id_index = {doc_id: i for i, doc_id in enumerate(self.ids)}
        if len(self.id_index) != len(self.ids):
            raise ValueError("duplicate ids in embedding matrix")

    @classmethod
    def from_rows(cls, modality: Modality, ids, rows: np.ndarray, normalize: bool = True) -> "EmbeddingMatrix":
        ids = tuple(_check_id(i, "embedding id") for i in ids)
        rows = np.asarray(rows, dtype=np.float64)
        if normalize:
            rows = normalize_rows(rows)
        return cls(modality=modality, ids=ids, rows=rows)

    @property
    def dim(self) -> int:
        return int(self.rows.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, vec_id: str) -> bool:
        return vec_id in self.id_index

    def row(self, vec_id: str) -> np.ndarray:
        return self.rows[self.id_index[vec_id]]


@dataclass
class Qrels:
    """Graded relevance judgments: query_id -> doc_id -> grade >= 0."""

    judgments: dict[str, dict[str, int]] = field(default_factory=dict)

    def __post_init__(self):
        for qid, docs in self.judgments.items():
            for doc_id, grade in docs.items():
                if not isinstance(grade, int) or grade < 0:
                    raise ValueError(f"grade for ({qid}, {doc_id}) must be a non-negative integer")

    def add(self, query_id: str, doc_id: str, grade: int) -> None:
        if grade < 0:
            raise ValueError("grade must be >= 0")
        self.judgments.setdefault(query_id, {})[doc_id] = grade

    def grade(self, query_id: str, doc_id: str) -> int:
        return self.judgments.get(query_id, {}).get(doc_id, 0)

    def positives(self, query_id: str) -> tuple[str, ...]:
        docs = self.judgments.get(query_id, {})
        return tuple(sorted(d for d, g in docs.items() if g > 0))

    def query_ids(self) -> tuple[str, ...]:
        return tuple(self.judgments)

    def doc_ids(self) -> set[str]:
        out: set[str] = set()
        for docs in self.judgments.values():
            out.update(docs)
        return out

    def for_query(self, query_id: str) -> dict[str, int]:
        return dict(self.judgments.get(query_id, {}))

    def __eq__(self, other) -> bool:
        return isinstance(other, Qrels) and self.judgments == other.judgments


@dataclass(frozen=True)
class RunEntry:
    query_id: str
    doc_id: str
    rank: int
    score: float
    tag: str


@dataclass
class RunFile:
    """Ranked retrieval results, grouped per query in insertion order."""

    entries: list[RunEntry] = field(default_factory=list)

    def by_query(self) -> dict[str, list[RunEntry]]:
        """Entries grouped per query and ordered by rank, whatever the line order."""
        grouped: dict[str, list[RunEntry]] = {}
        for entry in self.entries:
            grouped.setdefault(entry.query_id, []).append(entry)
        for group in grouped.values():
            group.sort(key=lambda e: e.rank)
        return grouped

    def validate(self) -> None:
        """Check rank contiguity, score monotonicity, and pair uniqueness."""
        seen: set[tuple[str, str]] = set()
        for qid, group in self.by_query().items():
            prev_score = None
            for i, entry in enumerate(group, start=1):
                if entry.rank != i:
                    raise MalformedRun(f"query {qid}: rank {entry.rank} at position {i}")
                if prev_score is not None and entry.score > prev_score:
                    raise MalformedRun(f"query {qid}: score increases at rank {entry.rank}")
                prev_score = entry.score
                key = (qid, entry.doc_id)
                if key in seen:
                    raise MalformedRun(f"duplicate (query, doc) pair: {key}")
                seen.add(key)

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, RunFile) and self.entries == other.entries
