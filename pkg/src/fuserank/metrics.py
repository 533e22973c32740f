"""TREC-style ranking metrics: nDCG@k, AP, full nDCG, RR, R@k.

Defaults follow trec_eval conventions: exponential gain 2^grade - 1 with a
1/log2(rank+1) discount, unjudged docs treated as grade 0, AP and recall
binarized at grade > 0, and queries without relevant docs excluded from the
aggregate (and counted).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from .core import Qrels, RunFile
from .errors import NoRelevant


class Gain(str, Enum):
    LINEAR = "linear"
    EXPONENTIAL = "exponential"


@dataclass(frozen=True)
class MetricConfig:
    ndcg_cutoff: int = 10
    recall_cutoff: int = 10
    gain: Gain = Gain.EXPONENTIAL

    def __post_init__(self):
        if self.ndcg_cutoff < 1 or self.recall_cutoff < 1:
            raise ValueError("cutoffs must be >= 1")

    def metric_names(self) -> tuple[str, ...]:
        """Fixed display/column order: nDCG@k, AP, nDCG, RR, R@k."""
        return (f"nDCG@{self.ndcg_cutoff}", "AP", "nDCG", "RR", f"R@{self.recall_cutoff}")


def _gain(grade: int, gain: Gain) -> float:
    if gain is Gain.EXPONENTIAL:
        return float(2**grade - 1)
    return float(grade)


def _relevant(grades: dict[str, int]) -> list[str]:
    return [d for d, g in grades.items() if g > 0]


def ndcg_at_k(
    ranked_ids,
    grades: dict[str, int],
    k: int | None,
    cfg: MetricConfig = MetricConfig(),
) -> float:
    """DCG@k / IDCG@k. ``k=None`` scores the whole ranking against the full
    ideal ranking of every judged relevant doc."""
    relevant = _relevant(grades)
    if not relevant:
        raise NoRelevant("query has no relevant document")
    if k is not None:
        ranked_ids = list(ranked_ids)[:k]
    dcg = 0.0
    for rank, doc_id in enumerate(ranked_ids, start=1):
        grade = grades.get(doc_id, 0)
        if grade > 0:
            dcg += _gain(grade, cfg.gain) / math.log2(rank + 1)
    ideal_grades = sorted((grades[d] for d in relevant), reverse=True)
    if k is not None:
        ideal_grades = ideal_grades[:k]
    idcg = sum(_gain(g, cfg.gain) / math.log2(rank + 1) for rank, g in enumerate(ideal_grades, start=1))
    return dcg / idcg


def average_precision(ranked_ids, grades: dict[str, int]) -> float:
    """Mean of precision at each relevant hit, over all relevant docs."""
    relevant = set(_relevant(grades))
    if not relevant:
        raise NoRelevant("query has no relevant document")
    hits = 0
    total = 0.0
    for rank, doc_id in enumerate(ranked_ids, start=1):
        if doc_id in relevant:
            hits += 1
            total += hits / rank
    return total / len(relevant)


def reciprocal_rank(ranked_ids, grades: dict[str, int]) -> float:
    if not _relevant(grades):
        raise NoRelevant("query has no relevant document")
    for rank, doc_id in enumerate(ranked_ids, start=1):
        if grades.get(doc_id, 0) > 0:
            return 1.0 / rank
    return 0.0


def recall_at_k(ranked_ids, grades: dict[str, int], k: int) -> float:
    relevant = set(_relevant(grades))
    if not relevant:
        raise NoRelevant("query has no relevant document")
    retrieved = set(list(ranked_ids)[:k])
    return len(relevant & retrieved) / len(relevant)


@dataclass
class EvalResult:
    per_query: dict[str, dict[str, float]]
    aggregates: dict[str, float]
    evaluated: int
    skipped_no_relevant: int
    missing_from_run: int
    unjudged_queries: int
    config: MetricConfig = field(default_factory=MetricConfig)


def evaluate_run(run: RunFile, qrels: Qrels, cfg: MetricConfig = MetricConfig()) -> EvalResult:
    """Score all five metrics per query and average over evaluable queries.

    A query is evaluable iff it has at least one relevant doc in qrels; such
    queries missing from the run score 0 on every metric. Run-only (unjudged)
    queries are ignored but counted. Raises MalformedRun via run.validate().
    """
    run.validate()
    grouped = run.by_query()
    names = cfg.metric_names()
    per_query: dict[str, dict[str, float]] = {}
    skipped = 0
    missing = 0
    for query_id in qrels.judgments:
        grades = qrels.for_query(query_id)
        if not _relevant(grades):
            skipped += 1
            continue
        if query_id not in grouped:
            missing += 1
            per_query[query_id] = {name: 0.0 for name in names}
            continue
        ranked = [e.doc_id for e in grouped[query_id]]
        per_query[query_id] = {
            names[0]: ndcg_at_k(ranked, grades, cfg.ndcg_cutoff, cfg),
            names[1]: average_precision(ranked, grades),
            names[2]: ndcg_at_k(ranked, grades, None, cfg),
            names[3]: reciprocal_rank(ranked, grades),
            names[4]: recall_at_k(ranked, grades, cfg.recall_cutoff),
        }
    aggregates = {
        name: (math.fsum(scores[name] for scores in per_query.values()) / len(per_query)) if per_query else 0.0
        for name in names
    }
    return EvalResult(
        per_query=per_query,
        aggregates=aggregates,
        evaluated=len(per_query),
        skipped_no_relevant=skipped,
        missing_from_run=missing,
        unjudged_queries=sum(1 for qid in grouped if qid not in qrels.judgments),
        config=cfg,
    )


@dataclass(frozen=True)
class BreakdownRow:
    dimension: str
    label: str
    mean: float
    count: int


def breakdown(
    per_query: dict[str, dict[str, float]],
    categories: dict[str, dict[str, str]],
    metric: str,
    label_order: dict[str, list[str]] | None = None,
) -> list[BreakdownRow]:
    """Mean of one metric per (dimension, label) over the categorized queries.

    Labels follow the declared order when given, otherwise sorted with
    Unknown last. Queries absent from ``categories`` raise KeyError: every
    evaluated query must be categorized (Unknown is fine).
    """
    dims: dict[str, dict[str, list[float]]] = {}
    for query_id, scores in per_query.items():
        for dimension, label in categories[query_id].items():
            dims.setdefault(dimension, {}).setdefault(label, []).append(scores[metric])

    rows: list[BreakdownRow] = []
    for dimension in sorted(dims):
        labels = list(dims[dimension])
        if label_order and dimension in label_order:
            declared = [l for l in label_order[dimension] if l in dims[dimension]]
            declared += sorted(l for l in labels if l not in set(declared))
            labels = declared
        else:
            labels = sorted(labels, key=lambda l: (l == "Unknown", l))
        for label in labels:
            values = dims[dimension][label]
            rows.append(
                BreakdownRow(
                    dimension=dimension,
                    label=label,
                    mean=math.fsum(values) / len(values),
                    count=len(values),
                )
            )
    return rows
