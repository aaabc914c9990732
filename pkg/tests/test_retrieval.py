import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import APPEAL, EASE, TABLE7_QUERY, TABLE7_RULES, TABLE8_QUERY, TABLE8_RULES
from oracles import ref_bm25_scores, ref_dot, ref_embed, ref_rank, ref_tokens
from rulerag.kg import Fact, build_corpus
from rulerag.matching import LexicalEmbedder
from rulerag.retrieval import (DenseIndex, RetrievedDoc, SparseIndex, concat_query_rule, load_index,
                               mean_recall, recall_at_k, retrieve_topk, rule_guided_retrieve,
                               save_index)
from rulerag.rules import Rule


def corpus_of(texts):
    # the object slot carries the whole text so recall sees it either way
    return build_corpus([Fact(f"s{i}", "r", t) for i, t in enumerate(texts)])


def test_three_doc_statistics():
    docs = corpus_of(["a b c", "a b", "d"])
    idx = SparseIndex(docs)
    assert idx.doc_count == 3
    assert idx.avg_doc_length == np.mean([len(ref_tokens(d.text)) for d in docs])
    assert "zzz" not in idx.postings
    assert [p[0] for p in idx.postings["a"]] == sorted(p[0] for p in idx.postings["a"])


def test_absent_term_contributes_zero():
    idx = SparseIndex(corpus_of(["apple pie", "banana"]))
    assert idx.bm25_score(["cherry"], 0) == 0.0
    assert idx.bm25_score(["apple", "cherry"], 0) == idx.bm25_score(["apple"], 0)


def test_single_doc_self_query_matches_reference():
    docs = corpus_of(["the quick brown fox"])
    idx = SparseIndex(docs)
    ref = ref_bm25_scores([docs[0].text], docs[0].text)[0]
    assert idx.scores(docs[0].text)[0] == pytest.approx(ref, abs=1e-9)


def test_toy_ranking_matches_reference():
    texts = ["cat sat on mat", "dog sat on log", "cat and dog"]
    docs = corpus_of(texts)
    idx = SparseIndex(docs, 0.9, 0.4)
    ref = ref_bm25_scores([d.text for d in docs], "cat dog")
    assert [h.doc_id for h in idx.search("cat dog", 3)] == ref_rank(ref, 3)


def test_k_larger_than_corpus_ranks_everything():
    idx = SparseIndex(corpus_of(["a", "b", "c"]))
    assert sorted(h.doc_id for h in idx.search("a", 50)) == [0, 1, 2]


def test_equal_scores_break_by_doc_id():
    idx = SparseIndex(corpus_of(["same words", "same words", "other"]))
    assert [h.doc_id for h in idx.search("same", 2)] == [0, 1]


def test_case_study_rule_three_ranks_appeal_above_consult(table7_corpus):
    idx = SparseIndex(table7_corpus)
    text = concat_query_rule(TABLE7_QUERY, TABLE7_RULES[2].text)
    hits = [table7_corpus[h.doc_id] for h in retrieve_topk(idx, text, 10)]
    ref = ref_rank(ref_bm25_scores([d.text for d in table7_corpus], text), 10)
    assert [h.doc_id for h in hits] == ref
    ranks = {d.doc_id: i for i, d in enumerate(hits)}
    appeal = [ranks[d.doc_id] for d in hits if d.source.relation == APPEAL]
    consult = [ranks.get(d.doc_id, 99) for d in table7_corpus if d.source.relation == "Consult"]
    assert appeal and max(appeal) < min(consult)


def test_case_study_rule_guided_set(table7_corpus):
    idx = SparseIndex(table7_corpus)
    dq = rule_guided_retrieve(TABLE7_QUERY, TABLE7_RULES, idx, 10)
    facts = [table7_corpus[h.doc_id].source for h in dq]
    assert any(f.relation == EASE and f.object == "Citizen (Nigeria)" for f in facts)
    assert any(f.relation == APPEAL and f.object == "Citizen (Nigeria)" for f in facts)
    assert recall_at_k(dq, table7_corpus, ["Citizen (Nigeria)"], 10) == 1
    # the Rule Three block alone also surfaces Citizen (Nigeria) appeal documents
    block = rule_guided_retrieve(TABLE7_QUERY, TABLE7_RULES[2:], idx, 10)
    assert any(table7_corpus[h.doc_id].source.relation == APPEAL
               and table7_corpus[h.doc_id].source.object == "Citizen (Nigeria)" for h in block)


def test_concat_query_rule():
    assert concat_query_rule("q?", "") == "q?"
    joined = concat_query_rule(TABLE8_QUERY, TABLE8_RULES[1].text)
    assert joined == TABLE8_QUERY + " " + TABLE8_RULES[1].text
    assert joined.count("?  ") == 0 and len(joined) == len(TABLE8_QUERY) + 1 + len(TABLE8_RULES[1].text)


def test_disjoint_rule_blocks_attain_union_bound():
    texts = [f"alpha doc{i}" for i in range(15)] + [f"beta doc{i}" for i in range(15)]
    idx = SparseIndex(corpus_of(texts))
    dq = rule_guided_retrieve("q", ["alpha", "beta"], idx, 10)
    assert len(dq) == 20
    assert all(h.via_rule == "alpha" for h in dq[:10])
    assert all("alpha" in texts[h.doc_id] for h in dq[:10])


def test_identical_rules_dedup_to_k():
    idx = SparseIndex(corpus_of([f"alpha {i}" for i in range(30)]))
    assert len(rule_guided_retrieve("q", ["alpha", "alpha"], idx, 10)) == 10


def test_recall_examples():
    docs = build_corpus([Fact("CJ", "Accuse", "Citizen (Nigeria)")])
    assert recall_at_k([RetrievedDoc(0, 1.0)], docs, ["Citizen (Nigeria)"], 10) == 1
    assert recall_at_k([RetrievedDoc(0, 1.0)], docs, ["Citizen (Nigeria)"], 0) == 0
    assert mean_recall([1, 0, 1, 1]) == 0.75


def test_dense_self_and_orthogonal():
    docs = corpus_of(["abcdef", "uvwxyz"])
    idx = DenseIndex(docs, LexicalEmbedder())
    assert idx.dense_score(docs[0].text, 0) == pytest.approx(1.0, abs=1e-9)
    emb = LexicalEmbedder(dim=1 << 20)
    assert float(emb.embed("aaa") @ emb.embed("zzz")) == 0.0


def test_dense_matches_reference_dot():
    rng = random.Random(3)
    docs = corpus_of(["".join(rng.choice("abcde ") for _ in range(20)) for _ in range(5)])
    idx = DenseIndex(docs, LexicalEmbedder())
    q = "abc dea"
    for d in docs:
        assert idx.dense_score(q, d.doc_id) == pytest.approx(
            ref_dot(ref_embed(q), ref_embed(d.text)), abs=1e-9)


def test_dense_vectors_unit_norm_and_frozen():
    idx = DenseIndex(corpus_of(["a b", "c d", "e"]), LexicalEmbedder(256))
    assert idx.doc_vectors.shape == (3, 256)
    assert np.allclose(np.linalg.norm(idx.doc_vectors, axis=1), 1.0, atol=1e-9)
    with pytest.raises(ValueError):
        idx.doc_vectors[0, 0] = 2.0


@pytest.mark.parametrize("dense", [False, True])
def test_index_round_trip(tmp_path, table7_corpus, dense):
    idx = DenseIndex(table7_corpus, LexicalEmbedder(512)) if dense else SparseIndex(table7_corpus, 1.2, 0.7)
    save_index(idx, tmp_path / "x.idx")
    again = load_index(tmp_path / "x.idx")
    assert type(again) is type(idx)
    assert [h for h in again.search(TABLE7_QUERY, 5)] == [h for h in idx.search(TABLE7_QUERY, 5)]


def test_load_index_rejects_other_files(tmp_path):
    (tmp_path / "x").write_text("hello\n{}\n")
    with pytest.raises(ValueError, match="not an index"):
        load_index(tmp_path / "x")


def test_k_must_be_positive():
    with pytest.raises(ValueError):
        retrieve_topk(SparseIndex(corpus_of(["a"])), "a", 0)


_vocab = ["red", "green", "blue", "cyan", "teal", "gold", "gray", "pink"]
_doc = st.lists(st.sampled_from(_vocab), min_size=1, max_size=8).map(" ".join)


@settings(max_examples=60, deadline=None)
@given(st.lists(_doc, min_size=1, max_size=25), _doc, st.integers(1, 30))
def test_bm25_equals_reference_property(texts, query, k):
    docs = corpus_of(texts)
    idx = SparseIndex(docs)
    ref = ref_bm25_scores([d.text for d in docs], query)
    assert [h.doc_id for h in idx.search(query, k)] == ref_rank(ref, k)
    hits = idx.search(query, k)
    assert all(a.score >= b.score for a, b in zip(hits, hits[1:]))


@settings(max_examples=60, deadline=None)
@given(st.lists(_doc, min_size=2, max_size=25), _doc, st.lists(_doc, min_size=1, max_size=3))
def test_recall_monotone_and_dedup_keep_first(texts, query, rules):
    docs = corpus_of(texts)
    idx = SparseIndex(docs)
    dq = rule_guided_retrieve(query, rules, idx, 3)
    gold = [texts[0]]
    curve = [recall_at_k(dq, docs, gold, k) for k in range(0, len(dq) + 2)]
    assert curve == sorted(curve)
    ids = [h.doc_id for h in dq]
    assert len(ids) == len(set(ids))
    for h in dq:
        first = next(r for r in rules
                     if h.doc_id in [x.doc_id for x in idx.search(concat_query_rule(query, r), 3)])
        assert h.via_rule == first


@settings(max_examples=40, deadline=None)
@given(st.lists(_doc, min_size=1, max_size=15), _doc)
def test_empty_rule_equals_plain_retrieval(texts, query):
    idx = SparseIndex(corpus_of(texts))
    plain = retrieve_topk(idx, query, 5)
    via_empty = rule_guided_retrieve(query, [""], idx, 5)
    assert [(h.doc_id, h.score) for h in via_empty] == [(h.doc_id, h.score) for h in plain]
    assert rule_guided_retrieve(query, [], idx, 5) == plain


@settings(max_examples=40, deadline=None)
@given(_doc, _doc)
def test_dense_score_symmetric(a, b):
    emb = LexicalEmbedder(512)
    idx_a = DenseIndex(corpus_of([a]), emb)
    idx_b = DenseIndex(corpus_of([b]), emb)
    ta, tb = idx_a.docs[0].text, idx_b.docs[0].text
    assert idx_b.dense_score(ta, 0) == pytest.approx(idx_a.dense_score(tb, 0), abs=1e-9)
