"""QA metrics, pipeline variants, experiment runs and the rule-generalization grid."""

from __future__ import annotations

import logging
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from rulerag.benchmark import QueryRecord, render_query
from rulerag.errors import ConfigError
from rulerag.generation import PromptSpec, mock_rule_follower, render_fewshot, render_prompt
from rulerag.jsonl import iter_jsonl, write_jsonl
from rulerag.kg import Document
from rulerag.matching import RuleMatcher
from rulerag.retrieval import DenseIndex, RetrievedDoc, recall_at_k, rule_guided_retrieve
from rulerag.rules import Rule
from rulerag.training import FtPair, TrainConfig, train

log = logging.getLogger(__name__)

# -- metrics ------------------------------------------------------------------

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = set(string.punctuation)


def normalize_answer(text: str) -> list[str]:
    text = text.lower()
    text = "".join(ch for ch in text if ch not in _PUNCT)
    text = _ARTICLES.sub(" ", text)
    return text.split()


def exact_match(prediction: str, gold_answers: Sequence[str]) -> int:
    pred = normalize_answer(prediction)
    return int(any(pred == normalize_answer(g) for g in gold_answers))


def _f1(pred: list[str], gold: list[str]) -> float:
    if not pred or not gold:
        return float(pred == gold)
    same = sum((Counter(pred) & Counter(gold)).values())
    if same == 0:
        return 0.0
    p, r = same / len(pred), same / len(gold)
    return 2 * p * r / (p + r)


def token_f1(prediction: str, gold_answers: Sequence[str]) -> float:
    pred = normalize_answer(prediction)
    return max(_f1(pred, normalize_answer(g)) for g in gold_answers)


# -- reports ------------------------------------------------------------------


@dataclass
class QueryResult:
    query_id: int
    prediction: str
    em: int
    token_f1: float
    recall: dict[int, int]


@dataclass
class EvalReport:
    label: str
    records: list[QueryResult]
    k_list: tuple[int, ...]
    config: dict = field(default_factory=dict)

    @property
    def aggregates(self) -> dict[str, float]:
        n = len(self.records)
        if n == 0:
            return {"EM": 0.0, "T-F1": 0.0, **{f"R@{k}": 0.0 for k in self.k_list}}
        agg = {
            "EM": 100.0 * sum(r.em for r in self.records) / n,
            "T-F1": 100.0 * sum(r.token_f1 for r in self.records) / n,
        }
        for k in self.k_list:
            agg[f"R@{k}"] = 100.0 * sum(r.recall[k] for r in self.records) / n
        return agg

    def save(self, path) -> Path:
        lines = [{"type": "query", "query_id": r.query_id, "prediction": r.prediction, "em": r.em,
                  "token_f1": r.token_f1, "recall": {str(k): v for k, v in r.recall.items()}}
                 for r in self.records]
        lines.append({"type": "aggregate", "label": self.label, "k_list": list(self.k_list),
                      "aggregates": self.aggregates, "config": self.config})
        return write_jsonl(path, lines)

    @classmethod
    def load(cls, path) -> "EvalReport":
        records, tail = [], None
        for _, rec in iter_jsonl(path):
            if rec["type"] == "query":
                records.append(QueryResult(rec["query_id"], rec["prediction"], rec["em"],
                                           rec["token_f1"], {int(k): v for k, v in rec["recall"].items()}))
            else:
                tail = rec
        if tail is None:
            raise ValueError(f"{path}: no aggregate block")
        return cls(tail["label"], records, tuple(tail["k_list"]), tail["config"])


def evaluate_run(predictions: Sequence[str], queries: Sequence[QueryRecord],
                 traces: Sequence[Sequence[RetrievedDoc]], docs: Sequence[Document],
                 k_list: Sequence[int] = (1, 5, 10), label: str = "run",
                 config: dict | None = None) -> EvalReport:
    if not (len(predictions) == len(queries) == len(traces)):
        raise ValueError(f"count mismatch: {len(predictions)} predictions, "
                         f"{len(queries)} queries, {len(traces)} traces")
    records = []
    for i, (pred, q, trace) in enumerate(zip(predictions, queries, traces)):
        records.append(QueryResult(
            i, pred, exact_match(pred, q.gold_answers), token_f1(pred, q.gold_answers),
            {k: recall_at_k(trace, docs, q.gold_answers, k) for k in k_list},
        ))
    return EvalReport(label, records, tuple(k_list), dict(config or {}))


def retriever_label(config: dict) -> str:
    """E.g. "bm25/untrained" or "dense/rgft"."""
    base = config.get("retriever", "")
    regime = VARIANTS[config["variant"]].retriever if config.get("variant") in VARIANTS else ""
    return "/".join(x for x in (base, regime) if x)


def summary_table(reports: Sequence[EvalReport]) -> str:
    ks = sorted({k for r in reports for k in r.k_list})
    head = ["Variant", "Retriever", "Generator", *[f"R@{k}" for k in ks], "EM", "T-F1"]
    rows = []
    for rep in reports:
        agg = rep.aggregates
        rows.append([rep.label, retriever_label(rep.config),
                     str(rep.config.get("generator", "")),
                     *[f"{agg.get(f'R@{k}', float('nan')):.1f}" for k in ks],
                     f"{agg['EM']:.1f}", f"{agg['T-F1']:.1f}"])
    widths = [max(len(x) for x in col) for col in zip(head, *rows)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    out = [fmt.format(*head), fmt.format(*("-" * w for w in widths))]
    out += [fmt.format(*r) for r in rows]
    return "\n".join(out)


# -- variants -----------------------------------------------------------------


@dataclass(frozen=True)
class Variant:
    name: str
    retriever: str  # untrained | rgft | ssft
    rules_at_retrieval: bool
    rules_in_prompt: bool
    description: str = ""


VARIANTS = {v.name: v for v in [
    Variant("standard-rag", "untrained", False, False, "Standard RAG"),
    Variant("rulerag-icl-retrieval", "untrained", True, False, "RG-retriever + generator"),
    Variant("rulerag-icl", "untrained", True, True, "RG-retriever + RG-generator"),
    Variant("rulerag-ft", "rgft", True, True, "RGFT-retriever + RGFT-generator"),
    Variant("ssft-retriever", "ssft", False, True, "SSFT-retriever + RGFT-generator"),
    Variant("ssft-generator", "rgft", True, False, "RGFT-retriever + SSFT-generator"),
    Variant("ssft-both", "ssft", False, False, "SSFT-retriever + SSFT-generator"),
    Variant("rgft-retriever-only", "rgft", True, False, "RGFT-retriever + generator"),
    Variant("rgft-generator-only", "untrained", True, True, "retriever + RGFT-generator"),
]}


def resolve_variant(name: str, base: str = "dense", rules_at_retrieval: bool | None = None,
                    rules_in_prompt: bool | None = None) -> Variant:
    """Look up a variant and check explicit switches against it.

    Rule usage at inference follows the variant's training regime, so a
    switch that contradicts it is a configuration error.
    """
    if name not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}")
    v = VARIANTS[name]
    if v.retriever != "untrained" and base != "dense":
        raise ConfigError(f"--variant {name} trains a dense retriever; conflicts with --retriever {base}")
    if rules_at_retrieval is not None and rules_at_retrieval != v.rules_at_retrieval:
        raise ConfigError(f"--rules-at-retrieval={rules_at_retrieval} conflicts with --variant {name}")
    if rules_in_prompt is not None and rules_in_prompt != v.rules_in_prompt:
        raise ConfigError(f"--rules-in-prompt={rules_in_prompt} conflicts with --variant {name}")
    return v


# -- pipeline -----------------------------------------------------------------


@dataclass
class Pipeline:
    """Matcher + retriever + generator wired for one variant."""

    docs: Sequence[Document]
    index: object
    matcher: RuleMatcher | None
    variant: Variant
    k: int = 10
    generator: object = None  # None selects the mock rule-follower
    exemplars: Sequence[PromptSpec] | None = None

    def rules_for(self, query: QueryRecord) -> list[Rule]:
        if self.matcher is None or not (self.variant.rules_at_retrieval or self.variant.rules_in_prompt):
            return []
        return [m.rule for m in self.matcher.match(query.query_text)]

    def retrieve(self, query: QueryRecord) -> tuple[list[Rule], list[RetrievedDoc]]:
        rules = self.rules_for(query)
        used = rules if self.variant.rules_at_retrieval else []
        return rules, rule_guided_retrieve(query.query_text, used, self.index, self.k)

    def prompt(self, query: QueryRecord, rules: Sequence[Rule], hits: Sequence[RetrievedDoc]) -> str:
        spec = PromptSpec(query.query_text, tuple(self.docs[h.doc_id].text for h in hits),
                          tuple(r.text for r in rules) if self.variant.rules_in_prompt else (),
                          temporal=query.timestamp is not None)
        if self.exemplars:
            return render_fewshot(self.exemplars, spec)
        return render_prompt(spec)

    def run(self, queries: Sequence[QueryRecord]) -> tuple[list[str], list[list[RetrievedDoc]]]:
        traces, prompts, answers = [], [], []
        for q in queries:
            rules, hits = self.retrieve(q)
            traces.append(hits)
            if self.generator is None:
                shown = rules if self.variant.rules_in_prompt else []
                answers.append(mock_rule_follower(q, [self.docs[h.doc_id] for h in hits], shown))
            else:
                prompts.append(self.prompt(q, rules, hits))
        if self.generator is not None:
            if hasattr(self.generator, "generate_many"):
                answers = self.generator.generate_many(prompts)
            else:
                answers = [self.generator.generate(p) for p in prompts]
        return answers, traces


def train_for_variant(variant: Variant, pairs: Sequence[FtPair], dense: DenseIndex,
                      config: TrainConfig) -> DenseIndex:
    """Query-side index for the variant's retriever regime."""
    if variant.retriever == "untrained":
        return dense
    use = list(pairs) if variant.retriever == "rgft" else [p.without_rule() for p in pairs]
    result = train(use, dense.doc_vectors, dense.embedder, config)
    return dense.with_query_encoder(result.encoder)


def run_experiment(variant: Variant, queries: Sequence[QueryRecord], docs: Sequence[Document],
                   index, matcher: RuleMatcher | None, k: int = 10, k_list: Sequence[int] = (1, 5, 10),
                   generator=None, exemplars=None, config: dict | None = None) -> EvalReport:
    if (variant.rules_at_retrieval or variant.rules_in_prompt) and matcher is None:
        raise ConfigError(f"--variant {variant.name} needs a rule bank (--rules)")
    pipe = Pipeline(docs, index, matcher, variant, k, generator, exemplars)
    answers, traces = pipe.run(queries)
    snap = {"variant": variant.name, "k": k, "generator": "mock" if generator is None else "http"}
    snap.update(config or {})
    return evaluate_run(answers, queries, traces, docs, k_list, variant.name, snap)


# -- rule generalization ------------------------------------------------------


@dataclass
class GeneralizationResult:
    recall: np.ndarray  # [i, j]: trained on bank i, tested on bank j
    em: np.ndarray
    baseline_recall: np.ndarray  # [j]: Standard RAG on bank j's queries
    baseline_em: np.ndarray
    k: int

    @property
    def recall_delta(self) -> np.ndarray:
        return self.recall - self.baseline_recall[None, :]

    @property
    def em_delta(self) -> np.ndarray:
        return self.em - self.baseline_em[None, :]

    def to_dict(self) -> dict:
        return {"k": self.k, "recall": self.recall.tolist(), "em": self.em.tolist(),
                "baseline_recall": self.baseline_recall.tolist(),
                "baseline_em": self.baseline_em.tolist(),
                "recall_delta": self.recall_delta.tolist(), "em_delta": self.em_delta.tolist()}


def generalization_experiment(banks: Sequence[Sequence[Rule]], queries: Sequence[QueryRecord],
                              pairs: Sequence[FtPair], dense: DenseIndex,
                              train_config: TrainConfig, k: int = 5,
                              n_max: int = 3, theta: float | None = None,
                              matcher_embedder=None) -> GeneralizationResult:
    """Train on pairs of bank i, test with matching limited to bank j.

    Bank j's test queries are those whose relation is the head of one of its
    rules; the baseline is Standard RAG (plain query, untrained) on them.
    """
    keys = [{r.key for r in bank} for bank in banks]
    for a in range(len(banks)):
        for b in range(a + 1, len(banks)):
            if keys[a] & keys[b]:
                raise ValueError(f"rule banks {a} and {b} overlap")
    kw = {"n_max": n_max} if theta is None else {"n_max": n_max, "theta": theta}
    docs = dense.docs
    n = len(banks)
    recall, em = np.zeros((n, n)), np.zeros((n, n))
    base_r, base_em = np.zeros(n), np.zeros(n)
    subsets = []
    for bank in banks:
        heads = {r.head_relation for r in bank}
        subsets.append([q for q in queries if q.relation in heads])
    for j, qs in enumerate(subsets):
        rep = run_experiment(VARIANTS["standard-rag"], qs, docs, dense, None, k, (k,))
        base_r[j], base_em[j] = rep.aggregates[f"R@{k}"], rep.aggregates["EM"]
    for i, bank in enumerate(banks):
        mine = [p for p in pairs if p.rule is not None and p.rule.key in keys[i]]
        if not mine:
            raise ValueError(f"no training pairs for rule bank {i}")
        trained = dense.with_query_encoder(
            train(mine, dense.doc_vectors, dense.embedder, train_config).encoder)
        for j, qs in enumerate(subsets):
            matcher = RuleMatcher(banks[j], matcher_embedder, **kw)
            rep = run_experiment(VARIANTS["rulerag-ft"], qs, docs, trained, matcher, k, (k,))
            recall[i, j], em[i, j] = rep.aggregates[f"R@{k}"], rep.aggregates["EM"]
    return GeneralizationResult(recall, em, base_r, base_em, k)


def exemplars_from_corpus(docs: Sequence[Document], index, matcher: RuleMatcher | None,
                          k: int = 10, seed: int = 0, with_rules: bool = True) -> list[PromptSpec]:
    """Three filled-in cases for the 3-shot prompt, drawn from corpus facts.

    Each case re-asks a corpus fact as a query, retrieves for it the same way
    the final query will be treated, and shows the fact's object as the answer.
    """
    import random

    if len(docs) < 3:
        raise ValueError(f"need at least 3 corpus documents for exemplars, have {len(docs)}")
    picked = random.Random(seed).sample(range(len(docs)), 3)
    out = []
    for i in picked:
        fact = docs[i].source
        q = render_query(fact.subject, fact.relation, fact.timestamp)
        rules = [m.rule for m in matcher.match(q)] if matcher is not None else []
        hits = rule_guided_retrieve(q, rules if with_rules else [], index, k)
        out.append(PromptSpec(q, tuple(docs[h.doc_id].text for h in hits),
                              tuple(r.text for r in rules) if with_rules else (),
                              temporal=fact.timestamp is not None, answer=fact.object))
    return out
