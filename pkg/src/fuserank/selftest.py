"""Built-in numeric sanity checks backing the ``selftest`` subcommand.

Each check compares an engine code path against the naive reference route or
a closed-form fixture; failures are returned as strings, not raised.
"""

from __future__ import annotations

import numpy as np

from .core import EmbeddingMatrix, Modality, ModalityMask, Qrels, RunEntry, RunFile
from .fusion import AdapterSet, info_nce_grad, info_nce_loss
from .ingest import plan_frame_samples
from .metrics import MetricConfig, evaluate_run
from .mining import MiningConfig, build_triplets, mine_pools
from . import reference
from .search import SearchIndex, batch_search
from .seeding import derive_seed

GRAD_REL_TOL = 1e-5
METRIC_TOL = 1e-9
# relative error floor: below this magnitude finite differences are noise-bound
GRAD_FLOOR = 1e-3


def check_gradients(seed: int, instances: int = 30) -> list[str]:
    rng = np.random.default_rng(derive_seed(seed, "selftest.grad"))
    failures = []
    for i in range(instances):
        dim = int(rng.integers(4, 17))
        rank = int(rng.integers(1, 5))
        tau = 0.05 if i % 2 == 0 else 1.0
        n_mods = int(rng.integers(1, 4))
        mods = [Modality.TEXT, Modality.AUDIO, Modality.VIDEO][:n_mods]
        mask = ModalityMask(
            text=Modality.TEXT in mods, audio=Modality.AUDIO in mods, video=Modality.VIDEO in mods
        )
        adapters = AdapterSet(adapters={})
        from .fusion import Adapter

        for m in mods:
            adapters.adapters[m] = Adapter(
                modality=m,
                alpha=float(rng.uniform(0.5, 1.5)),
                matrix_a=rng.normal(0, 0.4, (rank, dim)),
                matrix_b=rng.normal(0, 0.4, (dim, rank)),
            )

        def unit():
            v = rng.standard_normal(dim)
            return v / np.linalg.norm(v)

        query = {m: unit() for m in mods}
        pos = {m: unit() for m in mods}
        negs = [{m: unit() for m in mods} for _ in range(int(rng.integers(1, 4)))]

        _, analytic = info_nce_grad(query, pos, negs, adapters, mask, tau)
        fd = reference.finite_difference_grads(
            lambda: info_nce_grad(query, pos, negs, adapters, mask, tau)[0], adapters, mods
        )
        for m in mods:
            for a_grad, f_grad in zip(analytic[m], fd[m]):
                denom = np.maximum(np.maximum(np.abs(a_grad), np.abs(f_grad)), GRAD_FLOOR)
                err = float(np.max(np.abs(a_grad - f_grad) / denom))
                if err >= GRAD_REL_TOL:
                    failures.append(f"gradient check instance {i} ({m.value}): rel err {err:.2e}")
    return failures


def check_metrics(seed: int, instances: int = 50) -> list[str]:
    from .metrics import Gain

    rng = np.random.default_rng(derive_seed(seed, "selftest.metrics"))
    failures = []
    for i in range(instances):
        run, qrels, cfg = random_eval_instance(rng, max_queries=20, max_docs=100)
        result = evaluate_run(run, qrels, cfg)
        grouped = run.by_query()
        for query_id, scores in result.per_query.items():
            ranked = [e.doc_id for e in grouped.get(query_id, [])]
            naive = reference.naive_all_metrics(
                ranked, qrels.for_query(query_id), cfg.ndcg_cutoff, cfg.recall_cutoff,
                exponential=cfg.gain is Gain.EXPONENTIAL,
            )
            for name, value in naive.items():
                if abs(scores[name] - value) > METRIC_TOL:
                    failures.append(
                        f"metrics instance {i} query {query_id} {name}: {scores[name]} vs naive {value}"
                    )
    return failures


def random_eval_instance(rng, max_queries: int = 50, max_docs: int = 500):
    """A random (run, qrels, cfg) triple with grades 0-3 and partial coverage."""
    from .metrics import Gain

    n_queries = int(rng.integers(1, max_queries + 1))
    n_docs = int(rng.integers(2, max_docs + 1))
    doc_ids = [f"d{j}" for j in range(n_docs)]
    qrels = Qrels()
    entries = []
    for qi in range(n_queries):
        qid = f"q{qi}"
        judged = rng.choice(n_docs, size=min(n_docs, int(rng.integers(1, 12))), replace=False)
        for j in judged:
            qrels.add(qid, doc_ids[int(j)], int(rng.integers(0, 4)))
        if rng.random() < 0.1:
            continue  # query missing from the run
        depth = int(rng.integers(1, min(n_docs, 40) + 1))
        retrieved = rng.choice(n_docs, size=depth, replace=False)
        scores = np.sort(rng.random(depth))[::-1]
        for rank, (j, score) in enumerate(zip(retrieved, scores), start=1):
            entries.append(RunEntry(qid, doc_ids[int(j)], rank, float(score), "selftest"))
    cfg = MetricConfig(
        ndcg_cutoff=int(rng.integers(1, 15)),
        recall_cutoff=int(rng.integers(1, 15)),
        gain=Gain.EXPONENTIAL if rng.random() < 0.5 else Gain.LINEAR,
    )
    return RunFile(entries=entries), qrels, cfg


def check_search(seed: int, instances: int = 5) -> list[str]:
    rng = np.random.default_rng(derive_seed(seed, "selftest.search"))
    failures = []
    for i in range(instances):
        n_docs = int(rng.integers(5, 200))
        n_queries = int(rng.integers(1, 20))
        dim = int(rng.integers(2, 17))
        k = int(rng.integers(1, n_docs + 5))
        doc_ids = [f"d{j:04d}" for j in rng.permutation(n_docs)]
        docs = EmbeddingMatrix.from_rows(Modality.TEXT, doc_ids, rng.standard_normal((n_docs, dim)))
        queries = EmbeddingMatrix.from_rows(
            Modality.TEXT, [f"q{j}" for j in range(n_queries)], rng.standard_normal((n_queries, dim))
        )
        index = SearchIndex.from_matrix(docs)
        run = batch_search(queries, index, k, "selftest")
        naive = reference.naive_search(queries.ids, queries.rows, index.ids, index.rows, k)
        got = {
            qid: [(e.doc_id, e.rank, e.score) for e in group]
            for qid, group in run.by_query().items()
        }
        if got != naive:
            failures.append(f"search instance {i}: engine and naive oracle disagree")
    return failures


def check_frame_plans() -> list[str]:
    failures = []
    fixtures = [
        (24, 24, tuple(range(24))),
        (47, 24, tuple(range(0, 47, 2))),
        (1, 24, (0,) * 24),
    ]
    for total, count, expected in fixtures:
        got = plan_frame_samples(total, count).indices
        if got != expected:
            failures.append(f"frame plan ({total}, {count}): {got[:5]}... != expected")
    return failures


def check_mining(seed: int) -> list[str]:
    rng = np.random.default_rng(derive_seed(seed, "selftest.mine"))
    failures = []
    n_docs, n_queries, dim = 60, 10, 8
    doc_ids = [f"d{j:03d}" for j in range(n_docs)]
    docs = EmbeddingMatrix.from_rows(Modality.TEXT, doc_ids, rng.standard_normal((n_docs, dim)))
    queries = EmbeddingMatrix.from_rows(
        Modality.TEXT, [f"q{j}" for j in range(n_queries)], rng.standard_normal((n_queries, dim))
    )
    qrels = Qrels()
    for qi in range(n_queries):
        for j in rng.choice(n_docs, size=3, replace=False):
            qrels.add(f"q{qi}", doc_ids[int(j)], int(rng.integers(0, 3)))
        qrels.add(f"q{qi}", doc_ids[int(rng.integers(0, n_docs))], 1)
    index = SearchIndex.from_matrix(docs)
    cfg = MiningConfig(depth=20, negatives_per_query=3, seed=derive_seed(seed, "selftest.mine.fill"))
    pools = mine_pools(queries, index, qrels, cfg)
    triplets, _ = build_triplets(qrels, pools, cfg, index.ids)
    for t in triplets:
        for neg in t.negative_ids:
            if qrels.grade(t.query_id, neg) > 0:
                failures.append(f"mining: relevant doc {neg} mined as negative for {t.query_id}")
    return failures


def run_all(seed: int = 0) -> list[str]:
    failures = []
    failures += check_frame_plans()
    failures += check_metrics(seed)
    failures += check_search(seed)
    failures += check_mining(seed)
    failures += check_gradients(seed)
    # loss fixture: full symmetry collapses to ln(1 + n_negs)
    v = np.zeros(4)
    v[0] = 1.0
    sym = abs(info_nce_loss(v, v.copy(), [v.copy()] * 3, tau=0.7) - float(np.log(4.0)))
    if sym > 1e-12:
        failures.append(f"loss symmetry fixture off by {sym:.2e}")
    return failures
