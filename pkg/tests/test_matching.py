import json

import httpx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import TABLE7_QUERY, TABLE7_RULES, TABLE8_QUERY, TABLE8_RULES, TABLE9_RULES
from oracles import ref_dot, ref_embed
from rulerag.matching import (DEFAULT_N_MAX, SENTENCE_ENCODER_THETA, HttpEmbedder, LexicalEmbedder,
                              RuleMatcher, UnembeddableText, match_rules)
from rulerag.rules import Rule

EMB = LexicalEmbedder()


def test_embed_unit_norm_and_self_similarity():
    v = EMB.embed("abc")
    assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-9)
    assert float(v @ v) == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("a, b", [
    ("abc", "xyz"),
    (TABLE7_QUERY, TABLE7_RULES[2].text),
    (TABLE8_QUERY, TABLE8_RULES[1].text),
    ("Héllo   Wörld", "hello world"),
    ("ab", "abc"),
])
def test_embed_matches_reference_hashing(a, b):
    assert float(EMB.embed(a) @ EMB.embed(b)) == pytest.approx(ref_dot(ref_embed(a), ref_embed(b)),
                                                               abs=1e-9)


def test_blank_text_is_unembeddable():
    with pytest.raises(UnembeddableText):
        EMB.embed("   ")


def test_default_configuration_caps_at_three():
    assert DEFAULT_N_MAX == 3
    bank = TABLE7_RULES + TABLE8_RULES + TABLE9_RULES
    got = match_rules(TABLE8_QUERY, bank, theta=SENTENCE_ENCODER_THETA)
    assert len(got) <= 3 and all(m.similarity >= 0.7 for m in got)
    got = match_rules(TABLE8_QUERY, bank)
    assert len(got) == 3


def test_query_equal_to_rule_text_comes_first():
    bank = TABLE7_RULES + TABLE8_RULES
    (top, *_) = match_rules(bank[3].text, bank, theta=0.99)
    assert top.rule == bank[3]
    assert top.similarity == pytest.approx(1.0, abs=1e-9)


def test_all_below_threshold_is_empty():
    bank = [Rule(f"zz{i}q", f"yy{i}w", 1, 1.0) for i in range(10)]
    assert match_rules("completely unrelated text", bank, theta=0.99) == []


def test_case_study_queries_pick_their_own_rules():
    bank = TABLE7_RULES + TABLE8_RULES
    assert {m.rule for m in match_rules(TABLE7_QUERY, bank)} == set(TABLE7_RULES)
    assert [m.rule for m in match_rules(TABLE8_QUERY, bank)][:2] == [TABLE8_RULES[1], TABLE8_RULES[0]]
    fewshot = {
        "Time 2014-12-01 what does Adams Oshiomhole Make an appeal or request ?": TABLE9_RULES[0:3],
        "Time 2014-12-01 what does Adams Oshiomhole Praise or endorse ?": TABLE9_RULES[3:6],
        "Time 2014-12-01 what does Alexis Tsipras Make statement ?": TABLE9_RULES[6:9],
    }
    for q, rules in fewshot.items():
        assert {m.rule for m in match_rules(q, TABLE9_RULES)} == set(rules)


def test_rule_table_is_read_only():
    m = RuleMatcher(TABLE7_RULES)
    with pytest.raises(ValueError):
        m._table[0, 0] = 1.0


def test_http_embedder_posts_and_normalizes():
    seen = {}

    def handler(request):
        seen["body"] = json.loads(request.content)
        seen["auth"] = request.headers.get("authorization")
        return httpx.Response(200, json={"data": [{"index": 1, "embedding": [0.0, 3.0]},
                                                  {"index": 0, "embedding": [4.0, 0.0]}]})

    emb = HttpEmbedder("http://svc/v1/", "enc", 2, api_key="k", transport=httpx.MockTransport(handler))
    out = emb.embed_many(["a", "b"])
    assert seen["body"] == {"model": "enc", "input": ["a", "b"]}
    assert seen["auth"] == "Bearer k"
    assert np.allclose(out, [[1.0, 0.0], [0.0, 1.0]])


def test_http_embedder_dimension_mismatch():
    t = httpx.MockTransport(lambda r: httpx.Response(200, json={"data": [{"embedding": [1.0]}]}))
    with pytest.raises(ValueError, match="embeddings"):
        HttpEmbedder("http://svc", "m", 2, transport=t).embed("x")


_words = st.text("abcdefg ", min_size=1, max_size=12).filter(lambda s: s.strip())
_bank = st.lists(st.builds(lambda b, h: Rule(b.strip(), h.strip(), 1, 1.0), _words, _words),
                 min_size=0, max_size=12, unique_by=lambda r: r.key)


@settings(max_examples=80, deadline=None)
@given(_bank, _words, st.floats(-0.2, 1.0), st.floats(-0.2, 1.0), st.integers(1, 5),
       st.integers(1, 5))
def test_matching_monotone_properties(bank, query, t1, t2, n1, n2):
    emb = LexicalEmbedder(dim=64)
    lo_t, hi_t = sorted((t1, t2))
    lo_n, hi_n = sorted((n1, n2))
    base = match_rules(query, bank, lo_n, lo_t, emb)
    assert len(base) <= lo_n
    assert all(m.similarity >= lo_t for m in base)
    sims = [m.similarity for m in base]
    assert sims == sorted(sims, reverse=True)
    assert len(match_rules(query, bank, lo_n, hi_t, emb)) <= len(base)
    assert len(match_rules(query, bank, hi_n, lo_t, emb)) >= len(base)
    assert match_rules(query, bank, lo_n, lo_t, emb) == base


@settings(max_examples=60, deadline=None)
@given(st.text(min_size=1, max_size=40).filter(lambda s: s.strip()))
def test_embed_norm_property(text):
    assert np.linalg.norm(EMB.embed(text)) == pytest.approx(1.0, abs=1e-9)
