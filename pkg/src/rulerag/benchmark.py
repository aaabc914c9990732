"""Benchmark construction: test queries, retriever/generator fine-tuning sets,
and rule-bank splits."""

from __future__ import annotations

import datetime as dt
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from rulerag.generation import FtGenRecord, PromptSpec, render_prompt
from rulerag.jsonl import dumps, iter_jsonl, write_jsonl
from rulerag.kg import Document, Fact, build_corpus
from rulerag.matching import RuleMatcher
from rulerag.retrieval import SparseIndex, rule_guided_retrieve
from rulerag.rules import Rule, save_rules
from rulerag.training import FtPair, save_pairs

log = logging.getLogger(__name__)

SPLITS = ("test", "ft_retriever", "ft_generator")


@dataclass(frozen=True)
class QueryRecord:
    query_text: str
    subject: str
    relation: str
    timestamp: dt.date | None
    gold_answers: tuple[str, ...]
    split: str = "test"

    def __post_init__(self):
        if not self.gold_answers:
            raise ValueError("gold_answers must be non-empty")
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")

    def to_record(self) -> dict:
        return {
            "query_text": self.query_text, "subject": self.subject, "relation": self.relation,
            "timestamp": self.timestamp.isoformat() if self.timestamp else None,
            "gold_answers": list(self.gold_answers), "split": self.split,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "QueryRecord":
        ts = rec.get("timestamp")
        return cls(rec["query_text"], rec["subject"], rec["relation"],
                   dt.date.fromisoformat(ts) if ts else None,
                   tuple(rec["gold_answers"]), rec.get("split", "test"))


def render_query(subject: str, relation: str, timestamp: dt.date | None) -> str:
    if timestamp is not None:
        return f"Time {timestamp.isoformat()} what does {subject} {relation} ?"
    return f"what does {subject} {relation} ?"


def query_from_fact(fact: Fact, split: str = "test") -> QueryRecord:
    return QueryRecord(render_query(fact.subject, fact.relation, fact.timestamp),
                       fact.subject, fact.relation, fact.timestamp, (fact.object,), split)


def save_queries(queries: Sequence[QueryRecord], path) -> Path:
    return write_jsonl(path, (q.to_record() for q in queries))


def load_queries(path) -> list[QueryRecord]:
    return [QueryRecord.from_record(rec) for _, rec in iter_jsonl(path)]


@dataclass
class TestSetReport:
    popular: int = 0
    long_tail: int = 0
    shortfall: int = 0
    degenerate: bool = False


def build_test_set(test_facts: Sequence[Fact], train_facts: Sequence[Fact], target_size: int,
                   popularity_quantile: float = 0.5, seed: int = 0
                   ) -> tuple[list[QueryRecord], TestSetReport]:
    """Balanced sample of popular and long-tail test queries.

    Popularity is subject frequency in the training facts; test facts above
    the quantile cut are popular, the rest long-tail. Output keeps input order.
    """
    if target_size > len(test_facts):
        raise ValueError(f"target_size {target_size} exceeds {len(test_facts)} test facts")
    freq = Counter(f.subject for f in train_facts)
    pop = np.array([freq[f.subject] for f in test_facts], dtype=float)
    rng = np.random.default_rng(seed)
    report = TestSetReport()
    if len(pop) == 0 or target_size == 0:
        return [], report
    cut = np.quantile(pop, popularity_quantile)
    popular = np.nonzero(pop > cut)[0]
    tail = np.nonzero(pop <= cut)[0]
    if len(popular) == 0 or len(tail) == 0:
        report.degenerate = True
        chosen = rng.choice(len(test_facts), size=target_size, replace=False)
    else:
        want_pop = (target_size + 1) // 2
        want_tail = target_size - want_pop
        take_pop = min(want_pop, len(popular))
        take_tail = min(want_tail, len(tail))
        report.shortfall = (want_pop - take_pop) + (want_tail - take_tail)
        if report.shortfall:
            log.warning("test set is %d queries short of %d", report.shortfall, target_size)
        chosen = np.concatenate([rng.choice(popular, size=take_pop, replace=False),
                                 rng.choice(tail, size=take_tail, replace=False)])
        report.popular, report.long_tail = take_pop, take_tail
    return [query_from_fact(test_facts[i]) for i in sorted(int(c) for c in chosen)], report


def split_valid(valid_facts: Sequence[Fact], seed: int = 0) -> tuple[list[Fact], list[Fact]]:
    order = np.random.default_rng(seed).permutation(len(valid_facts))
    half = (len(order) + 1) // 2
    return ([valid_facts[i] for i in sorted(order[:half])],
            [valid_facts[i] for i in sorted(order[half:])])


def split_rule_banks(rules: Sequence[Rule], parts: int, seed: int = 0) -> list[list[Rule]]:
    if parts < 1:
        raise ValueError("parts must be >= 1")
    size = len(rules) // parts
    dropped = len(rules) - size * parts
    if dropped:
        log.warning("dropping %d rule(s) so that %d banks have equal size", dropped, parts)
    order = np.random.default_rng(seed).permutation(len(rules))
    return [[rules[i] for i in sorted(order[p * size : (p + 1) * size])] for p in range(parts)]


class CorpusLookup:
    """Corpus documents keyed by (subject, relation)."""

    def __init__(self, docs: Sequence[Document]):
        self.by_subject_relation: dict[tuple[str, str], list[Document]] = defaultdict(list)
        for d in docs:
            self.by_subject_relation[(d.source.subject, d.source.relation)].append(d)

    def oracles(self, subject: str, body_relation: str, before: dt.date | None) -> list[int]:
        return [d.doc_id for d in self.by_subject_relation.get((subject, body_relation), ())
                if before is None or (d.source.timestamp is not None and d.source.timestamp < before)]


@dataclass
class RetrieverFtReport:
    facts: int = 0
    pairs: int = 0
    no_rule: int = 0
    dropped: int = 0


def build_retriever_ft(valid_facts: Sequence[Fact], rules: Sequence[Rule], corpus: Sequence[Document],
                       matcher: RuleMatcher | None = None) -> tuple[list[FtPair], RetrieverFtReport]:
    """Training pairs ((query, rule), oracle documents).

    Eligible rules are the matched rules (or the whole bank without a matcher)
    whose head is the fact's relation. Oracles share the query subject, carry
    the rule body relation and, for temporal facts, predate the query.
    """
    lookup = CorpusLookup(corpus)
    report = RetrieverFtReport(facts=len(valid_facts))
    pairs = []
    for fact in valid_facts:
        q = query_from_fact(fact, split="ft_retriever")
        cands = [m.rule for m in matcher.match(q.query_text)] if matcher else list(rules)
        cands = [r for r in cands if r.head_relation == fact.relation]
        if not cands:
            report.no_rule += 1
            continue
        for rule in cands:
            oracle = lookup.oracles(fact.subject, rule.body_relation, fact.timestamp)
            if not oracle:
                report.dropped += 1
                continue
            pairs.append(FtPair(q.query_text, rule, tuple(oracle)))
    report.pairs = len(pairs)
    return pairs, report


def build_generator_ft(valid_facts: Sequence[Fact], matcher: RuleMatcher, index, k: int = 10
                       ) -> list[FtGenRecord]:
    """One rendered instruction per fact, rules included when any matched."""
    out = []
    for fact in valid_facts:
        q = query_from_fact(fact, split="ft_generator")
        rules = [m.rule for m in matcher.match(q.query_text)]
        hits = rule_guided_retrieve(q.query_text, rules, index, k)
        spec = PromptSpec(q.query_text, tuple(index.docs[h.doc_id].text for h in hits),
                          tuple(r.text for r in rules), temporal=fact.timestamp is not None)
        out.append(FtGenRecord(render_prompt(spec), fact.object))
    return out


def leakage(test_facts: Sequence[Fact], corpus: Sequence[Document]) -> int:
    """Number of test facts that also appear as a corpus document."""
    seen = {d.source for d in corpus}
    return sum(1 for f in test_facts if f in seen)


@dataclass
class BenchmarkPaths:
    root: Path
    corpus: Path = field(init=False)
    rules: Path = field(init=False)
    queries: Path = field(init=False)
    ft_retriever: Path = field(init=False)
    ft_generator: Path = field(init=False)
    report: Path = field(init=False)

    def __post_init__(self):
        self.root = Path(self.root)
        self.corpus = self.root / "corpus.jsonl"
        self.rules = self.root / "rules.jsonl"
        self.queries = self.root / "queries.jsonl"
        self.ft_retriever = self.root / "ft_retriever.jsonl"
        self.ft_generator = self.root / "ft_generator.jsonl"
        self.report = self.root / "build_report.json"


def build_benchmark(train: Sequence[Fact], valid: Sequence[Fact], test: Sequence[Fact],
                    rules: Sequence[Rule], out_dir, seed: int = 0, test_size: int | None = None,
                    matcher: RuleMatcher | None = None, k: int = 10,
                    k1: float = 0.9, b: float = 0.4) -> dict:
    """Write corpus, rule bank, test queries, F_R and F_G under ``out_dir``."""
    paths = BenchmarkPaths(out_dir)
    corpus = build_corpus(train, paths.corpus)
    leaked = leakage(test, corpus)
    if leaked:
        raise ValueError(f"{leaked} test fact(s) also appear in the training corpus")
    save_rules(rules, paths.rules)
    matcher = matcher or RuleMatcher(rules)
    queries, ts_report = build_test_set(test, train, len(test) if test_size is None else test_size,
                                        seed=seed)
    save_queries(queries, paths.queries)
    part1, part2 = split_valid(valid, seed)
    pairs, fr_report = build_retriever_ft(part1, rules, corpus, matcher)
    save_pairs(pairs, paths.ft_retriever)
    fg = build_generator_ft(part2, matcher, SparseIndex(corpus, k1, b), k) if corpus else []
    write_jsonl(paths.ft_generator, ({"prompt": r.prompt, "answer": r.answer} for r in fg))
    report = {
        "corpus_docs": len(corpus), "rules": len(rules), "test_queries": len(queries),
        "test_set": ts_report.__dict__, "ft_retriever": fr_report.__dict__,
        "ft_generator": len(fg), "valid_split": [len(part1), len(part2)],
        "leakage": leaked, "seed": seed,
    }
    paths.report.write_text(dumps(report) + "\n", encoding="utf-8")
    return report


def load_report(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
