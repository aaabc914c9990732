"""Query-to-rule matching over unit-norm text embeddings."""

from __future__ import annotations

import os
import zlib
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from rulerag.rules import Rule

DEFAULT_N_MAX = 3
# calibrated for LexicalEmbedder; sentence encoders behind HttpEmbedder use 0.7
DEFAULT_THETA = 0.07
SENTENCE_ENCODER_THETA = 0.7


class UnembeddableText(ValueError):
    pass


class Embedder(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...

    def embed_many(self, texts: Sequence[str]) -> np.ndarray: ...

    def config(self) -> dict: ...


class LexicalEmbedder:
    """Hashed character n-gram counts, L2-normalized.

    Text is lowercased and whitespace-collapsed; each n-gram is bucketed by
    ``crc32(utf8) % dim``. Texts shorter than ``n`` form a single gram.
    """

    def __init__(self, dim: int = 4096, ngram: int = 3):
        if dim < 1 or ngram < 1:
            raise ValueError("dim and ngram must be positive")
        self.dim = dim
        self.ngram = ngram

    def grams(self, text: str) -> list[str]:
        t = " ".join(text.lower().split())
        if not t:
            return []
        if len(t) <= self.ngram:
            return [t]
        return [t[i : i + self.ngram] for i in range(len(t) - self.ngram + 1)]

    def counts(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim)
        for g in self.grams(text):
            v[zlib.crc32(g.encode("utf-8")) % self.dim] += 1.0
        return v

    def embed(self, text: str) -> np.ndarray:
        v = self.counts(text)
        norm = np.linalg.norm(v)
        if norm == 0:
            raise UnembeddableText(f"no n-grams in {text!r}")
        return v / norm

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        out = np.empty((len(texts), self.dim))
        for i, t in enumerate(texts):
            out[i] = self.embed(t)
        return out

    def config(self) -> dict:
        return {"kind": "lexical", "dim": self.dim, "ngram": self.ngram}

    def __eq__(self, other):
        return isinstance(other, LexicalEmbedder) and self.config() == other.config()


class HttpEmbedder:
    """Client for an embeddings endpoint taking ``{model, input: [str]}``.

    The response is read in the OpenAI shape (``{"data": [{"embedding": ...}]}``);
    vectors are re-normalized locally.
    """

    def __init__(self, base_url: str, model: str, dim: int, api_key: str | None = None,
                 timeout: float = 30.0, transport=None):
        import httpx

        self.dim = dim
        self.model = model
        self.base_url = base_url.rstrip("/")
        key = api_key if api_key is not None else os.environ.get("RULERAG_API_KEY")
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        for t in texts:
            if not t.strip():
                raise UnembeddableText(f"empty text {t!r}")
        resp = self._client.post(f"{self.base_url}/embeddings",
                                 json={"model": self.model, "input": list(texts)})
        resp.raise_for_status()
        data = sorted(resp.json()["data"], key=lambda d: d.get("index", 0))
        vecs = np.asarray([d["embedding"] for d in data], dtype=float)
        if vecs.shape != (len(texts), self.dim):
            raise ValueError(f"expected {len(texts)}x{self.dim} embeddings, got {vecs.shape}")
        return vecs / np.linalg.norm(vecs, axis=1, keepdims=True)

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]

    def config(self) -> dict:
        return {"kind": "http", "dim": self.dim, "model": self.model, "base_url": self.base_url}


def embedder_from_config(cfg: dict) -> Embedder:
    if cfg.get("kind", "lexical") == "lexical":
        return LexicalEmbedder(dim=int(cfg.get("dim", 4096)), ngram=int(cfg.get("ngram", 3)))
    return HttpEmbedder(cfg["base_url"], cfg["model"], int(cfg["dim"]))


@dataclass(frozen=True)
class RuleMatch:
    rule: Rule
    similarity: float


class RuleMatcher:
    """Rule bank with its embeddings computed once up front."""

    def __init__(self, rules: Sequence[Rule], embedder: Embedder | None = None,
                 n_max: int = DEFAULT_N_MAX, theta: float = DEFAULT_THETA):
        if n_max < 1:
            raise ValueError("n_max must be >= 1")
        if not -1.0 <= theta <= 1.0:
            raise ValueError("theta must lie in [-1, 1]")
        self.rules = list(rules)
        self.embedder = embedder or LexicalEmbedder()
        self.n_max = n_max
        self.theta = theta
        if self.rules:
            self._table = self.embedder.embed_many([r.text for r in self.rules])
            self._table.flags.writeable = False
        else:
            self._table = np.zeros((0, self.embedder.dim))

    def match(self, query_text: str) -> list[RuleMatch]:
        if not self.rules:
            return []
        sims = self._table @ self.embedder.embed(query_text)
        keep = [i for i in range(len(self.rules)) if sims[i] >= self.theta]
        keep.sort(key=lambda i: (-sims[i], -self.rules[i].confidence, self.rules[i].text))
        return [RuleMatch(self.rules[i], float(sims[i])) for i in keep[: self.n_max]]


def match_rules(query_text: str, rules: Sequence[Rule], n_max: int = DEFAULT_N_MAX,
                theta: float = DEFAULT_THETA, embedder: Embedder | None = None) -> list[RuleMatch]:
    return RuleMatcher(rules, embedder, n_max, theta).match(query_text)
