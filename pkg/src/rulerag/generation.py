"""Instruction prompts, generators, and generator fine-tuning files."""

from __future__ import annotations

import logging
import os
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

from rulerag.errors import ConfigError
from rulerag.jsonl import write_jsonl
from rulerag.kg import Document

log = logging.getLogger(__name__)

NUMERALS = ("One", "Two", "Three", "Four", "Five", "Six", "Seven", "Eight", "Nine", "Ten")

TEMPORAL_INSTRUCT = (
    '# Instruct: For the query in the form of "Time {time} what does {subject} {relation} ?", '
    "we provide a collection of text consisting of multiple documents in the form of "
    '"Time {time} {subject} {relation} {object}." Your response should directly generate '
    "the missing {object}."
)
STATIC_INSTRUCT = (
    '# Instruct: For the query in the form of "what does {subject} {relation} ?", '
    "we provide a collection of text consisting of multiple documents in the form of "
    '"{subject} {relation} {object}." Your response should directly generate '
    "the missing {object}."
)
FEWSHOT_HEADER = "Answer the Final Query by referring to the three cases below."


@dataclass(frozen=True)
class PromptSpec:
    query_text: str
    docs: tuple[str, ...] = ()
    rules: tuple[str, ...] = ()
    temporal: bool = True
    answer: str | None = None
    # trailing word of the rules lead-in; some prompt variants say "Question"
    rules_target: str = "Query"


def render_prompt(spec: PromptSpec) -> str:
    """Zero-shot prompt: Instruct, Retrieved documents, Rules, Query, Answer.

    The Rules block is left out when there are no rules. A filled answer is
    written with a closing period, an empty one leaves the slot open.
    """
    if len(spec.rules) > len(NUMERALS):
        raise ConfigError(f"at most {len(NUMERALS)} rules can be rendered, got {len(spec.rules)}")
    lines = [TEMPORAL_INSTRUCT if spec.temporal else STATIC_INSTRUCT]
    lines.append(" ".join(["# Retrieved documents: Documents related to the Query.", *spec.docs]))
    if spec.rules:
        parts = [f"# Rules: Use the following {NUMERALS[len(spec.rules) - 1]} rules "
                 f"to answer the given {spec.rules_target}."]
        parts += [f"Rule {NUMERALS[i]}: {r}" for i, r in enumerate(spec.rules)]
        lines.append(" ".join(parts))
    lines.append(f"# Query: {spec.query_text}")
    lines.append(f"# Answer: {spec.answer}." if spec.answer else "# Answer: ")
    return "\n".join(lines)


def render_fewshot(exemplars: Sequence[PromptSpec], final: PromptSpec) -> str:
    if len(exemplars) != 3:
        raise ValueError(f"three-shot prompts need exactly 3 exemplars, got {len(exemplars)}")
    blocks = [FEWSHOT_HEADER]
    for i, ex in enumerate(exemplars, start=1):
        blocks.append(f"Case {i}:\n{render_prompt(ex)}")
    blocks.append(f"Final Query:\n{render_prompt(final)}")
    return "\n\n".join(blocks)


def pick_exemplars(pool: Sequence[PromptSpec], seed: int) -> list[PromptSpec]:
    """Seeded choice of the three fixed demonstration cases."""
    if len(pool) < 3:
        raise ValueError("need at least 3 candidate exemplars")
    return [pool[i] for i in sorted(random.Random(seed).sample(range(len(pool)), 3))]


class Generator(Protocol):
    def generate(self, prompt: str) -> str: ...


# -- mock -------------------------------------------------------------------


def mock_rule_follower(query, docs: Sequence[Document], rules) -> str:
    """Answer by following the first rule that has supporting evidence.

    For each rule in order, candidates are retrieved documents about the query
    subject under the rule's body relation (dated strictly before the query
    when timestamps exist). The latest candidate wins, lowest doc_id on ties.
    """
    for rule in rules:
        best = None
        for d in docs:
            f = d.source
            if f.subject != query.subject or f.relation != rule.body_relation:
                continue
            if query.timestamp is not None:
                if f.timestamp is None or not f.timestamp < query.timestamp:
                    continue
            if best is None or (f.timestamp, -d.doc_id) > (best.source.timestamp, -best.doc_id):
                best = d
        if best is not None:
            return best.source.object
    return ""


# -- http -------------------------------------------------------------------


class GenerationError(RuntimeError):
    pass


class AuthError(GenerationError):
    pass


class GenerationTimeout(GenerationError):
    pass


class MalformedResponse(GenerationError):
    pass


@dataclass
class HttpConfig:
    base_url: str = "http://localhost:8000/v1"
    model: str = "gpt-3.5-turbo"
    max_tokens: int = 64
    timeout: float = 60.0
    retries: int = 3
    backoff: float = 1.0
    concurrency: int = 4
    fail_fast: bool = True


@dataclass
class HttpGenerator:
    """Chat-completions client with temperature pinned to 0."""

    config: HttpConfig = field(default_factory=HttpConfig)
    api_key: str | None = None
    transport: object = None
    sleep: object = time.sleep

    def __post_init__(self):
        import httpx

        key = self.api_key if self.api_key is not None else os.environ.get("RULERAG_API_KEY")
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._client = httpx.Client(timeout=self.config.timeout, headers=headers,
                                    transport=self.transport)

    def request_body(self, prompt: str) -> dict:
        return {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
            "max_tokens": self.config.max_tokens,
        }

    def generate(self, prompt: str) -> str:
        import httpx

        url = self.config.base_url.rstrip("/") + "/chat/completions"
        delay = self.config.backoff
        for attempt in range(self.config.retries + 1):
            last = attempt == self.config.retries
            try:
                resp = self._client.post(url, json=self.request_body(prompt))
            except httpx.TimeoutException as exc:
                if last:
                    raise GenerationTimeout(f"timed out after {attempt + 1} attempt(s)") from exc
            except httpx.TransportError as exc:
                if last:
                    raise GenerationError(f"transport failure: {exc}") from exc
            else:
                if resp.status_code in (401, 403):
                    raise AuthError(f"authentication failed ({resp.status_code})")
                if resp.status_code == 429 or resp.status_code >= 500:
                    if last:
                        raise GenerationError(f"gave up after HTTP {resp.status_code}")
                elif resp.status_code >= 400:
                    raise GenerationError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                else:
                    try:
                        return resp.json()["choices"][0]["message"]["content"].strip()
                    except (ValueError, KeyError, IndexError, TypeError, AttributeError) as exc:
                        raise MalformedResponse(f"unexpected response body: {resp.text[:200]}") from exc
            log.warning("generation attempt %d failed, retrying in %.1fs", attempt + 1, delay)
            self.sleep(delay)
            delay *= 2
        raise AssertionError("unreachable")

    def generate_many(self, prompts: Sequence[str]) -> list[str]:
        """Bounded concurrent requests; results come back in prompt order."""

        def one(p):
            try:
                return self.generate(p)
            except GenerationError:
                if self.config.fail_fast:
                    raise
                log.exception("recording empty answer")
                return ""

        with ThreadPoolExecutor(max_workers=max(1, self.config.concurrency)) as pool:
            return list(pool.map(one, prompts))


# -- fine-tuning data ---------------------------------------------------------


@dataclass(frozen=True)
class FtGenRecord:
    prompt: str
    answer: str


def emit_rgft_dataset(records: Sequence[FtGenRecord], sample_n: int, seed: int,
                      path: str | Path) -> Path:
    """Write a seeded sample of ``{prompt, answer}`` lines for instruction tuning."""
    if sample_n > len(records):
        log.warning("asked for %d samples, only %d records; using all", sample_n, len(records))
        sample_n = len(records)
    picked = random.Random(seed).sample(range(len(records)), sample_n)
    return write_jsonl(path, ({"prompt": records[i].prompt, "answer": records[i].answer}
                              for i in picked))
