"""Mining, textualizing and persisting single-hop rules.

A rule states that a body relation between two entities leads to a head
relation between the same two entities, e.g.::

    [Entity1, born in, Entity2] leads to [Entity1, has nationality, Entity2].
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

from rulerag.errors import ConfigError
from rulerag.jsonl import iter_jsonl, write_jsonl
from rulerag.kg import Fact

log = logging.getLogger(__name__)

DEFAULT_MIN_SUPPORT = 3
DEFAULT_MIN_CONFIDENCE = 0.5


def textualize(body_relation: str, head_relation: str) -> str:
    if not body_relation or not head_relation:
        raise ValueError("rule relations must be non-empty")
    return (
        f"[Entity1, {body_relation}, Entity2] leads to "
        f"[Entity1, {head_relation}, Entity2]."
    )


@dataclass(frozen=True)
class Rule:
    body_relation: str
    head_relation: str
    support: int
    confidence: float
    text: str = ""

    def __post_init__(self):
        if not self.text:
            object.__setattr__(self, "text", textualize(self.body_relation, self.head_relation))

    @property
    def key(self) -> tuple[str, str]:
        return (self.body_relation, self.head_relation)


def _sort_key(rule: Rule):
    return (-rule.confidence, -rule.support, rule.body_relation, rule.head_relation)


def mine_rules(
    facts: Sequence[Fact],
    min_support: int = DEFAULT_MIN_SUPPORT,
    min_confidence: float = DEFAULT_MIN_CONFIDENCE,
    temporal: bool = False,
) -> list[Rule]:
    """Mine ``body -> head`` rules over shared (subject, object) pairs.

    Support counts distinct entity pairs carrying both relations; with
    ``temporal`` at least one body occurrence must be strictly earlier than
    some head occurrence. Confidence divides support by the number of
    distinct pairs carrying the body relation.
    """
    if not 0 < min_confidence <= 1:
        raise ConfigError(f"min_confidence must be in (0, 1], got {min_confidence}")
    if min_support < 1:
        raise ConfigError(f"min_support must be >= 1, got {min_support}")

    # pair -> relation -> (earliest, latest) occurrence
    spans: dict[tuple[str, str], dict[str, list]] = defaultdict(dict)
    for f in facts:
        if temporal and f.timestamp is None:
            raise ValueError(f"temporal mining needs timestamps: {f}")
        rels = spans[(f.subject, f.object)]
        t = f.timestamp
        if f.relation not in rels:
            rels[f.relation] = [t, t]
        elif temporal:
            span = rels[f.relation]
            span[0] = min(span[0], t)
            span[1] = max(span[1], t)

    body_count: dict[str, int] = defaultdict(int)
    support: dict[tuple[str, str], int] = defaultdict(int)
    for rels in spans.values():
        for r1, (first_body, _) in rels.items():
            body_count[r1] += 1
            for r2, (_, last_head) in rels.items():
                if temporal and not first_body < last_head:
                    continue
                support[(r1, r2)] += 1

    rules = []
    for (r1, r2), n in support.items():
        conf = n / body_count[r1]
        if n >= min_support and conf >= min_confidence:
            rules.append(Rule(r1, r2, n, conf))
    rules.sort(key=_sort_key)
    return rules


_FIELDS = ("body_relation", "head_relation", "support", "confidence", "text")


def save_rules(rules: Iterable[Rule], path: str | Path) -> Path:
    return write_jsonl(path, (asdict(r) for r in rules))


def load_rules(path: str | Path) -> list[Rule]:
    rules = []
    seen = set()
    for idx, rec in iter_jsonl(path):
        missing = [k for k in _FIELDS if k not in rec]
        if missing:
            raise ValueError(f"{path}: rule record {idx} missing {', '.join(missing)}")
        rule = Rule(
            str(rec["body_relation"]), str(rec["head_relation"]),
            int(rec["support"]), float(rec["confidence"]), str(rec["text"]),
        )
        if rule.text != textualize(rule.body_relation, rule.head_relation):
            raise ValueError(f"{path}: rule record {idx} text does not match its relations")
        if rule.key in seen:
            raise ValueError(f"{path}: rule record {idx} duplicates {rule.key}")
        seen.add(rule.key)
        rules.append(rule)
    return rules
