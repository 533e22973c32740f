"""Command-line pipeline: ingest, search, mine, train, eval, report, selftest.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numeric
failure. Every subcommand is a pure function of its inputs, the config, and
the seed; reruns produce byte-identical output files. FUSERANK_LOG controls
log verbosity on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import formats
from .core import Modality, ModalityMask
from .errors import FuseRankError, NonFiniteLoss
from .fusion import FusionConfig, train
from .ingest import (
    Collection,
    load_collection,
    save_collection,
    validate_collection,
    write_frame_manifest,
)
from .metrics import Gain, MetricConfig, evaluate_run
from .mining import MiningConfig, build_triplets, mine_pools
from .report import GridConfig, load_grid_spec, render_csv, render_markdown, run_grid
from .search import SearchIndex, batch_search
from .seeding import derive_seed

log = logging.getLogger("fuserank")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; the contract here is 1
    def error(self, message):
        raise UsageError(message)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="global seed; components derive their own (default 0)")
    parser.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker threads for batch retrieval (default: available cores)")
    parser.add_argument("--config", type=str, default=None, help="key=value config file; flags take precedence")


def build_parser() -> _Parser:
    parser = _Parser(prog="fuserank", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("ingest", parents=[], help="load, validate, and pack a collection directory")
    p.add_argument("--docs", required=True, help="document metadata JSONL")
    p.add_argument("--queries", required=True, help="query metadata JSONL")
    p.add_argument("--qrels", required=True, help="TREC qrels file")
    p.add_argument("--emb", action="append", default=[], metavar="MOD=PATH",
                   help="document embedding binary per modality (repeatable)")
    p.add_argument("--query-emb", action="append", default=[], metavar="MOD=PATH",
                   help="query embedding binary per modality (repeatable)")
    p.add_argument("--frame-counts", default=None,
                   help="optional 'doc_id total_frames' lines; emits a frame-plan manifest")
    p.add_argument("--sample-count", type=int, default=24, help="frames per plan (default 24)")
    p.add_argument("--out", required=True, help="output collection directory")
    _add_common(p)

    p = sub.add_parser("search", help="exact top-k retrieval, writes a TREC run file")
    p.add_argument("--index", required=True, help="collection directory")
    p.add_argument("--queries", required=True, help="query embedding binary (.ids sidecar alongside)")
    p.add_argument("--modality", default="text", choices=[m.value for m in Modality],
                   help="document matrix to search (default text)")
    p.add_argument("--k", type=int, default=10, help="results per query (default 10)")
    p.add_argument("--tag", default="fuserank", help="run tag (default fuserank)")
    p.add_argument("--out", required=True, help="output run file")
    _add_common(p)

    p = sub.add_parser("mine", help="hard-negative mining into training triplets")
    p.add_argument("--index", required=True, help="collection directory")
    p.add_argument("--qrels", required=True, help="TREC qrels file")
    p.add_argument("--modality", default="text", choices=[m.value for m in Modality],
                   help="mining retriever modality (default text)")
    p.add_argument("--depth", type=int, default=50, help="retrieval depth (default 50)")
    p.add_argument("--negs", type=int, default=3, help="negatives per instance (default 3)")
    p.add_argument("--out", required=True, help="output triplets JSONL")
    _add_common(p)

    p = sub.add_parser("train", help="InfoNCE adapter training over mined triplets")
    p.add_argument("--collection", required=True, help="collection directory")
    p.add_argument("--triplets", required=True, help="triplets JSONL from mine")
    p.add_argument("--train-mask", default="text,audio,video", help="modalities to train (default all)")
    p.add_argument("--tau", type=float, default=0.05, help="InfoNCE temperature (default 0.05)")
    p.add_argument("--lr", type=float, default=0.01, help="SGD learning rate (default 0.01)")
    p.add_argument("--epochs", type=int, default=5, help="training epochs (default 5)")
    p.add_argument("--batch-size", type=int, default=16, help="mini-batch size (default 16)")
    p.add_argument("--rank", type=int, default=8, help="adapter rank (default 8)")
    p.add_argument("--alpha", type=float, default=1.0, help="residual scale (default 1.0)")
    p.add_argument("--out", required=True, help="output adapters binary")
    _add_common(p)

    p = sub.add_parser("eval", help="score a run file against qrels")
    p.add_argument("--run", required=True, help="TREC run file")
    p.add_argument("--qrels", required=True, help="TREC qrels file")
    p.add_argument("--cutoff", type=int, default=10, help="nDCG and recall cutoff (default 10)")
    p.add_argument("--gain", default="exponential", choices=[g.value for g in Gain],
                   help="nDCG gain function (default exponential: 2^grade - 1)")
    p.add_argument("--out", required=True, help="per-query scores, JSON lines")
    _add_common(p)

    p = sub.add_parser("report", help="run an experiment grid and render markdown + CSV")
    p.add_argument("--grid", required=True, help="grid spec JSON")
    p.add_argument("--out", required=True, help="output markdown")
    p.add_argument("--csv", required=True, help="output CSV")
    _add_common(p)

    p = sub.add_parser("selftest", help="gradient, metric, retrieval, and frame-plan oracle checks")
    _add_common(p)

    return parser


def _parse_emb_args(pairs: list[str]) -> dict[Modality, Path]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise UsageError(f"expected MOD=PATH, got {pair!r}")
        name, path = pair.split("=", 1)
        try:
            modality = Modality(name.strip().lower())
        except ValueError:
            raise UsageError(f"unknown modality {name!r}")
        out[modality] = Path(path)
    return out


def _apply_config_file(args: argparse.Namespace, parser_defaults: dict) -> None:
    """key=value file; only fills values the command line left at default."""
    if not args.config:
        return
    path = Path(args.config)
    if not path.exists():
        raise FuseRankError(f"config file not found: {path}")
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FuseRankError(f"{path}:{lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            continue
        if getattr(args, dest) == parser_defaults.get(dest):
            current = parser_defaults.get(dest)
            if isinstance(current, bool):
                setattr(args, dest, value.lower() in ("1", "true", "yes"))
            elif isinstance(current, int):
                setattr(args, dest, int(value))
            elif isinstance(current, float):
                setattr(args, dest, float(value))
            else:
                setattr(args, dest, value)


# ------------------------------------------------------------------ subcommands

def _cmd_ingest(args) -> int:
    doc_embs = _parse_emb_args(args.emb)
    query_embs = _parse_emb_args(args.query_emb)
    collection = Collection(
        docs=formats.read_docs(args.docs),
        queries=formats.read_queries(args.queries),
        doc_embeddings={m: formats.read_embeddings(p) for m, p in doc_embs.items()},
        query_embeddings={m: formats.read_embeddings(p) for m, p in query_embs.items()},
        qrels=formats.read_qrels(args.qrels),
    )
    mask_mods = sorted(doc_embs, key=lambda m: m.value)
    mask = ModalityMask(
        text=Modality.TEXT in doc_embs,
        audio=Modality.AUDIO in doc_embs,
        video=Modality.VIDEO in doc_embs,
    ) if doc_embs else ModalityMask(text=True)
    report = validate_collection(collection, mask)
    if not report.accepted:
        print(report, file=sys.stderr)
        return EXIT_DATA
    out_dir = Path(args.out)
    save_collection(out_dir, collection)
    if args.frame_counts:
        counts = {}
        for lineno, line in enumerate(Path(args.frame_counts).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 2:
                raise FuseRankError(f"{args.frame_counts}:{lineno}: expected 'doc_id total_frames'")
            counts[parts[0]] = int(parts[1])
        write_frame_manifest(out_dir / "frames.jsonl", counts, args.sample_count)
    log.info("ingested %d docs, %d queries into %s (modalities: %s)",
             len(collection.docs), len(collection.queries), out_dir,
             ",".join(m.value for m in mask_mods))
    return EXIT_OK


def _cmd_search(args) -> int:
    collection_dir = Path(args.index)
    modality = Modality(args.modality)
    index_path = collection_dir / f"doc_{modality.value}.emb"
    if not index_path.exists():
        raise FuseRankError(f"no {modality.value} document embeddings in {collection_dir}")
    index = SearchIndex.from_matrix(formats.read_embeddings(index_path))
    queries = formats.read_embeddings(args.queries)
    run = batch_search(queries, index, args.k, args.tag, threads=args.threads)
    formats.write_run(args.out, run)
    log.info("wrote %d run entries to %s", len(run), args.out)
    return EXIT_OK


def _cmd_mine(args) -> int:
    collection_dir = Path(args.index)
    modality = Modality(args.modality)
    doc_path = collection_dir / f"doc_{modality.value}.emb"
    query_path = collection_dir / f"query_{modality.value}.emb"
    for p in (doc_path, query_path):
        if not p.exists():
            raise FuseRankError(f"missing embeddings: {p}")
    index = SearchIndex.from_matrix(formats.read_embeddings(doc_path))
    queries = formats.read_embeddings(query_path)
    qrels = formats.read_qrels(args.qrels)
    cfg = MiningConfig(depth=args.depth, negatives_per_query=args.negs,
                       seed=derive_seed(args.seed, "mine"))
    pools = mine_pools(queries, index, qrels, cfg)
    triplets, skipped = build_triplets(qrels, pools, cfg, index.ids)
    formats.write_triplets(args.out, triplets)
    log.info("mined %d triplets (%d queries skipped) into %s", len(triplets), skipped, args.out)
    return EXIT_OK


def _cmd_train(args) -> int:
    collection = load_collection(args.collection)
    triplets = formats.read_triplets(args.triplets)
    mask = ModalityMask.parse(args.train_mask)
    cfg = FusionConfig(
        train_mask=mask,
        infer_mask=mask,
        tau=args.tau,
        rank=args.rank,
        alpha=args.alpha,
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=derive_seed(args.seed, "train"),
    )
    adapters, stats = train(collection, triplets, cfg)
    formats.write_adapters(args.out, adapters)
    for es in stats.epochs:
        print(f"epoch {es.epoch}: loss={es.mean_loss:.6f} grad_norm={es.mean_grad_norm:.6f} "
              f"({es.wall_time:.2f}s)", file=sys.stderr)
    log.info("wrote adapters to %s", args.out)
    return EXIT_OK


def _cmd_eval(args) -> int:
    run = formats.read_run(args.run)
    qrels = formats.read_qrels(args.qrels)
    run_queries = {e.query_id for e in run.entries}
    overlap = run_queries & set(qrels.judgments)
    if qrels.judgments and not overlap:
        missing = sorted(qrels.judgments)[:10]
        print(f"run and qrels share no queries; qrels references e.g. {missing}", file=sys.stderr)
        return EXIT_DATA
    cfg = MetricConfig(ndcg_cutoff=args.cutoff, recall_cutoff=args.cutoff, gain=Gain(args.gain))
    result = evaluate_run(run, qrels, cfg)
    lines = []
    for query_id in sorted(result.per_query):
        record = {"query_id": query_id}
        record.update({k: result.per_query[query_id][k] for k in cfg.metric_names()})
        lines.append(json.dumps(record, ensure_ascii=False) + "\n")
    Path(args.out).write_text("".join(lines), encoding="utf-8")
    header = "  ".join(f"{name:>10s}" for name in cfg.metric_names())
    values = "  ".join(f"{result.aggregates[name]:>10.4f}" for name in cfg.metric_names())
    print(header)
    print(values)
    print(f"evaluated={result.evaluated} no_relevant={result.skipped_no_relevant} "
          f"missing_from_run={result.missing_from_run} unjudged={result.unjudged_queries}")
    return EXIT_OK


def _cmd_report(args) -> int:
    collection_dir, k, metric_cfg, entries = load_grid_spec(args.grid)
    collection = load_collection(collection_dir)
    configs = []
    for entry in entries:
        adapters = formats.read_adapters(entry["adapters_path"]) if entry["adapters_path"] else None
        configs.append(
            GridConfig(
                label=entry["label"],
                train_mask=entry["train_mask"],
                infer_mask=entry["infer_mask"],
                adapters=adapters,
            )
        )
    grid = run_grid(collection, configs, k=k, metric_cfg=metric_cfg, threads=args.threads)
    Path(args.out).write_text(render_markdown(grid), encoding="utf-8")
    Path(args.csv).write_text(render_csv(grid), encoding="utf-8")
    log.info("wrote %s and %s", args.out, args.csv)
    return EXIT_OK


def _cmd_selftest(args) -> int:
    from . import selftest

    failures = selftest.run_all(seed=args.seed)
    if failures:
        for f in failures:
            print(f"selftest FAIL: {f}", file=sys.stderr)
        return EXIT_NUMERIC
    print("selftest OK")
    return EXIT_OK


_COMMANDS = {
    "ingest": _cmd_ingest,
    "search": _cmd_search,
    "mine": _cmd_mine,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "report": _cmd_report,
    "selftest": _cmd_selftest,
}


def main(argv=None) -> int:
    logging.basicConfig(
        level=getattr(logging, os.environ.get("FUSERANK_LOG", "WARNING").upper(), logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        defaults = {a.dest: a.default for sp in parser._subparsers._group_actions
                    for a in sp.choices[args.command]._actions}
        _apply_config_file(args, defaults)
        np_err = np.seterr(all="raise", under="ignore")
        try:
            return _COMMANDS[args.command](args)
        finally:
            np.seterr(**np_err)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteLoss as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FuseRankError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
