"""Synthetic temporal KGs with planted rules.

Every query subject gets one *supporting* fact under a rule body relation
(answer-bearing, dated before the query) and a handful of *distractor* facts
under the query's own head relation with other objects. Head relation names
are built from a small shared vocabulary, body names from rare words, so a
plain query is lexically pulled towards distractors while the rule text
points at the supporting fact.
"""

from __future__ import annotations

import datetime as dt
import itertools
import random
from dataclasses import dataclass
from pathlib import Path

from rulerag.kg import Fact
from rulerag.rules import Rule, textualize

_ONSETS = "b c d f g h k l m n p r s t v z br dr gr kl pl st tr".split()
_VOWELS = "a e i o u ai ou".split()
_CODAS = ["", "", "n", "r", "s", "l", "m"]

HEAD_FIRST = ["make", "express", "engage", "host", "issue", "sign"]
HEAD_SECOND = ["statement", "appeal", "visit", "accord", "protest", "comment"]

ROLES = [
    "Other Authorities / Officials",
    "Member of Legislative (Govt)",
    "Head of Government",
]

QUERY_DAY = dt.date(2014, 12, 1)
FIRST_DAY = dt.date(2014, 1, 1)


class _Words:
    def __init__(self, rng: random.Random):
        self.rng = rng
        self.used: set[str] = set(HEAD_FIRST) | set(HEAD_SECOND)

    def word(self, syllables: int = 3) -> str:
        for attempt in range(10_000):
            if attempt and attempt % 500 == 0:
                syllables += 1
            w = "".join(self.rng.choice(_ONSETS) + self.rng.choice(_VOWELS) + self.rng.choice(_CODAS)
                        for _ in range(syllables))
            if w not in self.used:
                self.used.add(w)
                return w
        raise RuntimeError("word space exhausted")

    def name(self) -> str:
        return f"{self.word(2).capitalize()} {self.word(3).capitalize()}"

    def actor(self, roles: int) -> str:
        """ICEWS-style actor: shared role words plus a short unique tag."""
        role = self.rng.choice(ROLES[:roles])
        return f"{role} ({self.word(1).capitalize()})"


@dataclass
class SyntheticKG:
    train: list[Fact]
    valid: list[Fact]
    test: list[Fact]
    rules: list[Rule]  # planted body -> head pairs (support/confidence are placeholders)


def make_synthetic_kg(n_rules: int = 8, n_test: int = 200, n_valid: int = 1000,
                      support_per_rule: int = 200, distractors: int = 10, actors: int = 0,
                      seed: int = 0) -> SyntheticKG:
    rng = random.Random(seed)
    words = _Words(rng)
    heads = list(itertools.product(HEAD_FIRST, HEAD_SECOND))
    if n_rules > len(heads):
        raise ValueError(f"at most {len(heads)} planted rules")
    rng.shuffle(heads)
    planted = [(f"{words.word()} {words.word()}", f"{a} {b}") for a, b in heads[:n_rules]]

    def day(lo: int = 0, hi: int = 300) -> dt.date:
        return FIRST_DAY + dt.timedelta(days=rng.randrange(lo, hi))

    train: list[Fact] = []
    for body, head in planted:
        for _ in range(support_per_rule):
            s = words.actor(actors) if actors else words.name()
            o = words.name()
            t = day(0, 250)
            train.append(Fact(s, body, o, t))
            train.append(Fact(s, head, o, t + dt.timedelta(days=rng.randrange(1, 60))))

    def query_fact(i: int) -> Fact:
        body, head = planted[i % n_rules]
        s = words.actor(actors) if actors else words.name()
        gold = words.name()
        train.append(Fact(s, body, gold, day()))
        for _ in range(distractors):
            train.append(Fact(s, head, words.name(), day()))
        return Fact(s, head, gold, QUERY_DAY + dt.timedelta(days=rng.randrange(0, 28)))

    test = [query_fact(i) for i in range(n_test)]
    valid = [query_fact(i) for i in range(n_valid)]
    rng.shuffle(train)
    rules = [Rule(b, h, 1, 1.0, textualize(b, h)) for b, h in planted]
    return SyntheticKG(train, valid, test, rules)


@dataclass
class RetrieverTask:
    corpus: list
    pairs: list  # training pairs
    eval_pairs: list  # held-out pairs over the same corpus
    rules: list[Rule]


def make_retriever_task(n_pairs: int = 500, n_eval: int = 200, seed: int = 0) -> RetrieverTask:
    """Planted dense-retrieval task for the contrastive trainer.

    One rule, no distractors; subjects are actors sharing two role prefixes so
    that under untrained embeddings other subjects' supporting documents
    crowd out the right one. Those competitors are exactly the other pairs'
    oracles, i.e. the in-batch negatives.
    """
    from rulerag.benchmark import build_retriever_ft
    from rulerag.kg import build_corpus

    kg = make_synthetic_kg(n_rules=1, n_test=0, n_valid=n_pairs + n_eval, support_per_rule=0,
                           distractors=0, actors=2, seed=seed)
    corpus = build_corpus(kg.train)
    pairs, _ = build_retriever_ft(kg.valid, kg.rules, corpus)
    return RetrieverTask(corpus, pairs[:n_pairs], pairs[n_pairs:], kg.rules)


def actor_kg(n_rules: int = 8, n_test: int = 200, n_valid: int = 1000, seed: int = 0) -> SyntheticKG:
    """The dense-training preset: actor subjects, no distractors, planted rules only."""
    return make_synthetic_kg(n_rules=n_rules, n_test=n_test, n_valid=n_valid, support_per_rule=0,
                             distractors=0, actors=2, seed=seed)


def write_splits(kg: SyntheticKG, out_dir) -> dict[str, Path]:
    """Write train/valid/test fact files and the planted rule bank."""
    from rulerag.kg import write_kg
    from rulerag.rules import save_rules

    out_dir = Path(out_dir)
    paths = {name: write_kg(out_dir / f"{name}.tsv", getattr(kg, name))
             for name in ("train", "valid", "test")}
    paths["rules"] = save_rules(kg.rules, out_dir / "planted_rules.jsonl")
    return paths
