import numpy as np
import pytest

from fuserank import formats, reference
from fuserank.core import EmbeddingMatrix, Modality
from fuserank.errors import DimMismatch, EmptyIndex
from fuserank.search import SearchIndex, batch_search, similarity, top_k


def make_matrix(ids, rows, modality=Modality.TEXT):
    return EmbeddingMatrix.from_rows(modality, ids, np.asarray(rows, dtype=float))


class TestSimilarity:
    def test_identical_vectors(self):
        v = np.array([0.6, 0.8])
        assert similarity(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal(self):
        assert similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_hand_dot_product(self):
        assert similarity(np.array([0.6, 0.8]), np.array([0.8, 0.6])) == pytest.approx(0.96, abs=1e-12)

    def test_dim_mismatch(self):
        with pytest.raises(DimMismatch):
            similarity(np.array([1.0, 0.0]), np.array([1.0, 0.0, 0.0]))


class TestTopK:
    def test_exact_match_first(self):
        matrix = make_matrix(["d1", "d2", "d3"], [[1, 0], [0, 1], [0.6, 0.8]])
        index = SearchIndex.from_matrix(matrix)
        ranking = top_k(matrix.row("d3"), index, 1)
        assert ranking[0][0] == "d3"
        assert ranking[0][1] == pytest.approx(1.0, abs=1e-12)

    def test_tie_break_by_id_ascending(self):
        matrix = make_matrix(["b", "a", "c"], [[1, 0], [1, 0], [0, 1]])
        index = SearchIndex.from_matrix(matrix)
        ranking = top_k(np.array([1.0, 0.0]), index, 3)
        assert [doc for doc, _ in ranking] == ["a", "b", "c"]
        assert ranking[0][1] == ranking[1][1]

    def test_k_larger_than_corpus(self):
        matrix = make_matrix(["d1", "d2", "d3", "d4"], np.eye(4))
        index = SearchIndex.from_matrix(matrix)
        assert len(top_k(np.ones(4) / 2.0, index, 10)) == 4

    def test_empty_index(self):
        index = SearchIndex(ids=(), rows=np.zeros((0, 3)))
        with pytest.raises(EmptyIndex):
            top_k(np.array([1.0, 0.0, 0.0]), index, 5)

    def test_dim_mismatch(self):
        index = SearchIndex.from_matrix(make_matrix(["d1"], [[1, 0]]))
        with pytest.raises(DimMismatch):
            top_k(np.array([1.0, 0.0, 0.0]), index, 1)

    def test_scores_strictly_sorted_under_tiebreak_order(self):
        rng = np.random.default_rng(0)
        matrix = make_matrix([f"d{i}" for i in range(30)], rng.standard_normal((30, 6)))
        index = SearchIndex.from_matrix(matrix)
        q = rng.standard_normal(6)
        q /= np.linalg.norm(q)
        ranking = top_k(q, index, 30)
        for (d1, s1), (d2, s2) in zip(ranking, ranking[1:]):
            assert s1 > s2 or (s1 == s2 and d1 < d2)


class TestBatchSearch:
    def test_single_pair_line(self):
        docs = make_matrix(["d1"], [[1, 0]])
        queries = make_matrix(["q1"], [[1, 0]])
        run = batch_search(queries, SearchIndex.from_matrix(docs), 1, "tag")
        assert len(run) == 1
        entry = run.entries[0]
        assert (entry.query_id, entry.doc_id, entry.rank, entry.tag) == ("q1", "d1", 1, "tag")
        assert formats.run_to_text(run) == "q1 Q0 d1 1 1.000000 tag\n"

    def test_corpus_row_order_invariance(self):
        rng = np.random.default_rng(1)
        rows = rng.standard_normal((40, 5))
        ids = [f"d{i:02d}" for i in range(40)]
        queries = make_matrix([f"q{i}" for i in range(7)], rng.standard_normal((7, 5)))
        run_a = batch_search(queries, SearchIndex.from_matrix(make_matrix(ids, rows)), 10, "t")
        perm = rng.permutation(40)
        run_b = batch_search(
            queries,
            SearchIndex.from_matrix(make_matrix([ids[i] for i in perm], rows[perm])),
            10,
            "t",
        )
        assert formats.run_to_text(run_a) == formats.run_to_text(run_b)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            n, nq, dim = int(rng.integers(3, 120)), int(rng.integers(1, 15)), int(rng.integers(2, 9))
            k = int(rng.integers(1, n + 3))
            docs = make_matrix([f"d{i:03d}" for i in rng.permutation(n)], rng.standard_normal((n, dim)))
            queries = make_matrix([f"q{i}" for i in range(nq)], rng.standard_normal((nq, dim)))
            index = SearchIndex.from_matrix(docs)
            run = batch_search(queries, index, k, "t")
            naive = reference.naive_search(queries.ids, queries.rows, index.ids, index.rows, k)
            got = {qid: [(e.doc_id, e.rank, e.score) for e in grp] for qid, grp in run.by_query().items()}
            assert got == naive

    def test_thread_count_does_not_change_output(self):
        rng = np.random.default_rng(3)
        docs = make_matrix([f"d{i:03d}" for i in range(200)], rng.standard_normal((200, 8)))
        queries = make_matrix([f"q{i}" for i in range(23)], rng.standard_normal((23, 8)))
        index = SearchIndex.from_matrix(docs)
        single = batch_search(queries, index, 10, "t", threads=1)
        multi = batch_search(queries, index, 10, "t", threads=4)
        assert single == multi
