"""Experiment grids across modality-mask configurations, rendered to markdown/CSV.

Each grid row fuses the collection under one inference mask (with optional
trained adapters), searches, evaluates, and breaks scores down by query and
document categories. Rendering is deterministic: same grid, same bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .core import ModalityMask, VideoType
from .errors import FormatError
from .fusion import AdapterSet, fuse_embeddings
from .ingest import Collection
from .metrics import BreakdownRow, MetricConfig, breakdown, evaluate_run
from .search import SearchIndex, batch_search

BREAKDOWN_DIMENSIONS = ("Language", "Query Type", "Video Type", "Event Type")

_LABEL_ORDER = {"Video Type": [v.value for v in VideoType]}


@dataclass(frozen=True)
class GridConfig:
    label: str
    train_mask: ModalityMask
    infer_mask: ModalityMask
    adapters: AdapterSet | None = None


@dataclass
class GridRow:
    label: str
    train_mask: ModalityMask
    infer_mask: ModalityMask
    aggregates: dict[str, float]
    breakdown_rows: list[BreakdownRow]
    evaluated: int


@dataclass
class ExperimentGrid:
    metric_names: tuple[str, ...]
    rows: list[GridRow] = field(default_factory=list)


def derive_query_categories(collection: Collection) -> dict[str, dict[str, str]]:
    """Query-side labels, plus doc-side labels inherited from the best
    relevant doc (highest grade, ties by doc id; Unknown when none)."""
    doc_by_id = {d.doc_id: d for d in collection.docs}
    categories: dict[str, dict[str, str]] = {}
    for query in collection.queries:
        grades = collection.qrels.for_query(query.query_id)
        best = None
        for doc_id in sorted(grades):
            if grades[doc_id] > 0 and doc_id in doc_by_id:
                if best is None or grades[doc_id] > grades[best]:
                    best = doc_id
        doc = doc_by_id.get(best) if best else None
        categories[query.query_id] = {
            "Language": query.language,
            "Query Type": query.query_type,
            "Video Type": doc.video_type.value if doc else VideoType.UNKNOWN.value,
            "Event Type": doc.event_type if doc else "Unknown",
        }
    return categories


def run_grid(
    collection: Collection,
    configs: list[GridConfig],
    k: int = 10,
    metric_cfg: MetricConfig = MetricConfig(),
    threads: int = 1,
) -> ExperimentGrid:
    """Fuse, search, evaluate, and break down every configuration."""
    categories = derive_query_categories(collection)
    primary = metric_cfg.metric_names()[0]
    grid = ExperimentGrid(metric_names=metric_cfg.metric_names())
    labels = set()
    for config in configs:
        if config.label in labels:
            raise ValueError(f"duplicate grid label {config.label!r}")
        labels.add(config.label)
        run = fused_search(collection, config.infer_mask, config.adapters, k, config.label, threads)
        result = evaluate_run(run, collection.qrels, metric_cfg)
        rows = breakdown(result.per_query, categories, primary, label_order=_LABEL_ORDER)
        grid.rows.append(
            GridRow(
                label=config.label,
                train_mask=config.train_mask,
                infer_mask=config.infer_mask,
                aggregates=result.aggregates,
                breakdown_rows=rows,
                evaluated=result.evaluated,
            )
        )
    return grid


def fused_search(
    collection: Collection,
    infer_mask: ModalityMask,
    adapters: AdapterSet | None,
    k: int,
    tag: str,
    threads: int = 1,
):
    """Fuse doc and query embeddings under one mask and run retrieval."""
    doc_fused = fuse_embeddings(collection.doc_embeddings, infer_mask, adapters)
    query_fused = fuse_embeddings(collection.query_embeddings, infer_mask, adapters)
    index = SearchIndex.from_matrix(doc_fused)
    return batch_search(query_fused, index, k, tag, threads=threads)


# ------------------------------------------------------------------ rendering

def render_markdown(grid: ExperimentGrid) -> str:
    """Overall table (one row per config) plus one breakdown table per dimension."""
    if not grid.rows:
        raise ValueError("cannot render an empty grid")
    out = ["# Experiment grid", "", "## Overall", ""]
    header = ["config", "train", "infer", *grid.metric_names]
    out.append("| " + " | ".join(header) + " |")
    out.append("|" + "---|" * len(header))
    for row in grid.rows:
        cells = [row.label, row.train_mask.spec(), row.infer_mask.spec()]
        cells += [f"{row.aggregates[name]:.3f}" for name in grid.metric_names]
        out.append("| " + " | ".join(cells) + " |")
    out.append("")

    primary = grid.metric_names[0]
    for dimension in BREAKDOWN_DIMENSIONS:
        labels: list[str] = []
        for row in grid.rows:
            for b in row.breakdown_rows:
                if b.dimension == dimension and b.label not in labels:
                    labels.append(b.label)
        if not labels:
            continue
        out += [f"## {dimension} ({primary})", ""]
        header = [dimension.lower(), *[row.label for row in grid.rows]]
        out.append("| " + " | ".join(header) + " |")
        out.append("|" + "---|" * len(header))
        for label in labels:
            cells = [label]
            for row in grid.rows:
                value = next(
                    (b.mean for b in row.breakdown_rows if b.dimension == dimension and b.label == label),
                    None,
                )
                cells.append("-" if value is None else f"{value:.3f}")
            out.append("| " + " | ".join(cells) + " |")
        out.append("")
    return "\n".join(out)


def render_csv(grid: ExperimentGrid) -> str:
    """Long-form rows; ``value`` is display precision, ``value_full`` is repr-exact.

    Mask cells join modalities with ``+`` so the format stays comma-safe.
    """
    if not grid.rows:
        raise ValueError("cannot render an empty grid")
    lines = ["config,train_mask,infer_mask,section,dimension,label,metric,value,value_full"]
    for row in grid.rows:
        base = f"{row.label},{row.train_mask.spec().replace(',', '+')},{row.infer_mask.spec().replace(',', '+')}"
        for name in grid.metric_names:
            value = row.aggregates[name]
            lines.append(f"{base},overall,,,{name},{value:.3f},{value!r}")
        for b in row.breakdown_rows:
            lines.append(
                f"{base},breakdown,{b.dimension},{b.label},{grid.metric_names[0]},{b.mean:.3f},{b.mean!r}"
            )
    return "\n".join(lines) + "\n"


def parse_csv(text: str) -> dict[str, dict[str, float]]:
    """Recover full-precision aggregates per config label from render_csv output."""
    lines = text.strip().splitlines()
    if not lines or not lines[0].startswith("config,"):
        raise FormatError("not a grid CSV")
    out: dict[str, dict[str, float]] = {}
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != 9:
            raise FormatError(f"bad grid CSV line: {line!r}")
        label, _, _, section, _, _, metric, _, value_full = parts
        if section == "overall":
            out.setdefault(label, {})[metric] = float(value_full)
    return out


# ------------------------------------------------------------------ grid spec files

def load_grid_spec(path: str | Path):
    """Parse the JSON grid description consumed by the report subcommand.

    Schema: {"collection": dir, "k": int?, "gain": "exponential"|"linear"?,
    "ndcg_cutoff": int?, "recall_cutoff": int?, "configs": [{"label", "train_mask",
    "infer_mask", "adapters": path|null}]}. Relative paths resolve against the
    spec file's directory.
    """
    from .metrics import Gain

    path = Path(path)
    try:
        spec = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if "collection" not in spec or "configs" not in spec:
        raise FormatError(f"{path}: grid spec needs 'collection' and 'configs'")
    base = path.parent
    collection_dir = base / spec["collection"] if not Path(spec["collection"]).is_absolute() else Path(spec["collection"])
    metric_cfg = MetricConfig(
        ndcg_cutoff=spec.get("ndcg_cutoff", 10),
        recall_cutoff=spec.get("recall_cutoff", 10),
        gain=Gain(spec.get("gain", "exponential")),
    )
    configs = []
    for entry in spec["configs"]:
        try:
            adapters_path = entry.get("adapters")
            configs.append(
                {
                    "label": entry["label"],
                    "train_mask": ModalityMask.parse(entry["train_mask"]),
                    "infer_mask": ModalityMask.parse(entry["infer_mask"]),
                    "adapters_path": (base / adapters_path if adapters_path and not Path(adapters_path).is_absolute() else adapters_path),
                }
            )
        except (KeyError, ValueError) as exc:
            raise FormatError(f"{path}: bad config entry {entry!r}: {exc}") from exc
    return collection_dir, spec.get("k", 10), metric_cfg, configs
